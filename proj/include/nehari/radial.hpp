#pragma once

// Radially symmetric functions on {a < |x| < b} in the plane, discretized by
// P1 elements in r with area element 2 pi r dr.

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "nehari/discretization.hpp"
#include "nehari/errors.hpp"

namespace nehari {

/// Uniform P1 space on [a, b]; the node at b is pinned, and the node at a
/// too when a > 0 (the ball has a free center).
inline Discretization radialSpace(double a, double b, int elements) {
  if (!(b > a) || a < 0.0 || elements < 2) fail(ErrorClass::InfeasibleGeometry, "radial interval must satisfy 0 <= a < b");
  static constexpr std::array<double, 4> gx = {-0.86113631159405258, -0.33998104358485626, 0.33998104358485626,
                                               0.86113631159405258};
  static constexpr std::array<double, 4> gw = {0.34785484513745386, 0.65214515486254614, 0.65214515486254614,
                                               0.34785484513745386};
  const double twoPi = 2.0 * std::numbers::pi;
  Discretization d;
  d.nodeCount = elements + 1;
  d.dim = 1;
  d.pinned.assign(d.nodeCount, 0);
  d.pinned[elements] = 1;
  if (a > 0.0) d.pinned[0] = 1;
  const double dr = (b - a) / elements;
  auto node = [&](int i) { return i == elements ? b : a + i * dr; };
  std::vector<Eigen::Triplet<double>> gt, it;
  d.cellMeasure.resize(elements);
  for (int e = 0; e < elements; ++e) {
    const double r0 = node(e), r1 = node(e + 1), len = r1 - r0;
    d.cellMeasure[e] = std::numbers::pi * (r1 * r1 - r0 * r0);
    gt.emplace_back(e, e, -1.0 / len);
    gt.emplace_back(e, e + 1, 1.0 / len);
    for (int q = 0; q < 4; ++q) {
      const double xi = 0.5 * (gx[q] + 1.0);
      const double r = r0 + xi * len;
      const int row = static_cast<int>(d.quadWeight.size());
      it.emplace_back(row, e, 1.0 - xi);
      it.emplace_back(row, e + 1, xi);
      d.quadWeight.push_back(twoPi * r * 0.5 * len * gw[q]);
    }
  }
  d.grad.resize(elements, d.nodeCount);
  d.grad.setFromTriplets(gt.begin(), gt.end());
  d.interp.resize(static_cast<int>(d.quadWeight.size()), d.nodeCount);
  d.interp.setFromTriplets(it.begin(), it.end());
  d.coords.resize(d.nodeCount);
  for (int i = 0; i < d.nodeCount; ++i) d.coords[i] = {node(i), 0.0};
  d.finalize();
  return d;
}

}  // namespace nehari
