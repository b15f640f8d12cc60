#pragma once

// Two-point rearrangement (polarization) and foliated Schwarz
// symmetrization of P1 fields, acting on point samples of the zero
// extension.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <numbers>
#include <vector>

#include "nehari/errors.hpp"
#include "nehari/femcore.hpp"
#include "nehari/geometry.hpp"

namespace nehari {

struct Hyperplane {
  Vec2 anchor{};
  Vec2 normal{1.0, 0.0};  ///< unit a; the half space is <a, x - anchor> > 0

  static Hyperplane through(Vec2 anchor, Vec2 direction) {
    const double n = norm(direction);
    if (!(n > 0.0) || !std::isfinite(n)) fail(ErrorClass::DomainError, "hyperplane normal must be nonzero");
    return {anchor, direction * (1.0 / n)};
  }

  void validate() const {
    if (std::abs(norm(normal) - 1.0) > 1e-12) fail(ErrorClass::DomainError, "hyperplane normal is not a unit vector");
  }

  double side(Vec2 x) const { return dot(normal, x - anchor); }
  bool inSigma(Vec2 x) const { return side(x) > 0.0; }
  Vec2 reflect(Vec2 x) const { return x - normal * (2.0 * side(x)); }
};

/// V = min(u, u o rho) on the half space, max off it.
inline ScalarField polarize(const ScalarField& u, const Hyperplane& plane) {
  plane.validate();
  const Mesh& m = u.mesh();
  const PointLocator loc(m);
  Vector v(m.nodeCount());
  for (int i = 0; i < m.nodeCount(); ++i) {
    const Vec2 x = m.nodes[i];
    const double a = u[i];
    const double b = loc.evaluate(u.values(), plane.reflect(x));
    v[i] = plane.inSigma(x) ? std::min(a, b) : std::max(a, b);
  }
  return ScalarField(u.spacePtr(), std::move(v));
}

/// True when every mesh node in the half space reflects into the domain,
/// the containment under which polarization preserves the energy terms.
inline bool polarizationAdmissible(const Mesh& m, const Hyperplane& plane) {
  const double tol = 1e-10 * std::max(1.0, m.domain ? m.domain->outerRadius : 1.0);
  for (const Vec2& x : m.nodes) {
    if (!plane.inSigma(x)) continue;
    const Vec2 y = plane.reflect(x);
    if (m.domain) {
      const DomainSpec& d = *m.domain;
      if (norm(y - d.center) > d.outerRadius + tol) return false;
      if (d.isAnnulus() && norm(y - d.innerCenter()) < d.innerRadius - tol) return false;
    }
  }
  return true;
}

/// Polar sampling grid; 0 picks a resolution four times finer than the mesh.
struct SchwarzOptions {
  int nr = 0;
  int ntheta = 0;
};

struct FoliatedSchwarzResult {
  ScalarField field;
  std::vector<double> radii;
  /// rings[k][j]: rearranged value at angular distance (j + 1/2) pi / ntheta
  /// from the pole on the circle of radius radii[k].
  std::vector<std::vector<double>> rings;
  int ntheta = 0;
};

/// Symmetric-decreasing rearrangement in the angle about `pole` on every
/// circle concentric with the domain.
inline FoliatedSchwarzResult foliatedSchwarzDetailed(const ScalarField& u, Vec2 pole = {-1.0, 0.0},
                                                     SchwarzOptions opt = {}) {
  const Mesh& m = u.mesh();
  if (!m.domain) fail(ErrorClass::UnsupportedDomain, "foliated Schwarz needs a mesh with a domain description");
  const DomainSpec& d = *m.domain;
  if (d.isAnnulus() && d.displacement != 0.0)
    fail(ErrorClass::UnsupportedDomain, "foliated Schwarz needs a ball or a concentric annulus");
  if (opt.nr < 0 || opt.ntheta < 0 || opt.ntheta == 1) fail(ErrorClass::ConfigError, "polar grid too small");
  const double pn = norm(pole);
  if (!(pn > 0.0)) fail(ErrorClass::DomainError, "pole direction must be nonzero");
  pole = pole * (1.0 / pn);
  const double phi0 = std::atan2(pole.y, pole.x);
  const double r0 = d.isAnnulus() ? d.innerRadius : 0.0;
  const double r1 = d.outerRadius;
  const double hm = m.maxEdgeLength();
  if (opt.nr == 0) opt.nr = std::max(8, static_cast<int>(std::ceil(4.0 * (r1 - r0) / hm)));
  if (opt.ntheta == 0) opt.ntheta = std::max(16, static_cast<int>(std::ceil(8.0 * std::numbers::pi * r1 / hm)));
  const int n = opt.ntheta;

  FoliatedSchwarzResult res;
  res.ntheta = n;
  res.radii.resize(opt.nr + 1);
  res.rings.resize(opt.nr + 1);
  const PointLocator loc(m);
  for (int k = 0; k <= opt.nr; ++k) {
    const double r = r0 + (r1 - r0) * k / opt.nr;
    res.radii[k] = r;
    std::vector<double> ring(n);
    for (int j = 0; j < n; ++j) {
      const double th = phi0 + 2.0 * std::numbers::pi * (j + 0.5) / n;
      ring[j] = loc.evaluate(u.values(), d.center + Vec2{r * std::cos(th), r * std::sin(th)});
    }
    std::sort(ring.begin(), ring.end(), std::greater<>());
    res.rings[k] = std::move(ring);
  }

  auto ringValue = [&](int k, double dist) {
    const double pos = dist / std::numbers::pi * n - 0.5;
    if (pos <= 0.0) return res.rings[k].front();
    if (pos >= n - 1) return res.rings[k].back();
    const int j = static_cast<int>(pos);
    const double w = pos - j;
    return (1.0 - w) * res.rings[k][j] + w * res.rings[k][j + 1];
  };
  Vector v(m.nodeCount());
  for (int i = 0; i < m.nodeCount(); ++i) {
    const Vec2 x = m.nodes[i] - d.center;
    const double r = std::clamp(norm(x), r0, r1);
    const double dist = r > 0.0 ? std::abs(std::remainder(std::atan2(x.y, x.x) - phi0, 2.0 * std::numbers::pi)) : 0.0;
    const double pos = (r - r0) / (r1 - r0) * opt.nr;
    const int k = std::min(static_cast<int>(pos), opt.nr - 1);
    const double w = pos - k;
    v[i] = (1.0 - w) * ringValue(k, dist) + w * ringValue(k + 1, dist);
  }
  res.field = ScalarField(u.spacePtr(), std::move(v));
  return res;
}

inline ScalarField foliatedSchwarz(const ScalarField& u, Vec2 pole = {-1.0, 0.0}, SchwarzOptions opt = {}) {
  return foliatedSchwarzDetailed(u, pole, opt).field;
}

struct AsymmetrySample {
  double epsilon = 0.0;
  double innerAsymmetry = 0.0;  ///< on the circle of radius R0 + eps about the inner center
  double outerAsymmetry = 0.0;  ///< on the circle of radius R1 - eps about the outer center
};

struct ReflectionDiagnostics {
  std::vector<AsymmetrySample> samples;
  bool admissible = true;  ///< see polarizationAdmissible
};

inline std::vector<double> defaultEpsilonGrid(const DomainSpec& d) {
  const double gap = d.outerRadius - d.innerRadius;
  return {0.02 * gap, 0.05 * gap, 0.1 * gap, 0.2 * gap};
}

/// max |u(x) - u(rho x)| over sampled points of shells near both boundaries.
inline ReflectionDiagnostics reflectionDiagnostics(const ScalarField& u, const Hyperplane& plane,
                                                   std::vector<double> epsilons = {}, int samples = 720) {
  plane.validate();
  const Mesh& m = u.mesh();
  if (!m.domain) fail(ErrorClass::UnsupportedDomain, "reflection diagnostics need a mesh with a domain description");
  const DomainSpec& d = *m.domain;
  if (epsilons.empty()) epsilons = defaultEpsilonGrid(d);
  const PointLocator loc(m);
  auto shell = [&](Vec2 c, double r) {
    double worst = 0.0;
    for (int j = 0; j < samples; ++j) {
      const double th = 2.0 * std::numbers::pi * j / samples;
      const Vec2 x = c + Vec2{r * std::cos(th), r * std::sin(th)};
      worst = std::max(worst, std::abs(loc.evaluate(u.values(), x) - loc.evaluate(u.values(), plane.reflect(x))));
    }
    return worst;
  };
  ReflectionDiagnostics out;
  out.admissible = polarizationAdmissible(m, plane);
  for (double eps : epsilons) {
    AsymmetrySample s;
    s.epsilon = eps;
    s.innerAsymmetry = shell(d.innerCenter(), d.innerRadius + eps);
    s.outerAsymmetry = shell(d.center, d.outerRadius - eps);
    out.samples.push_back(s);
  }
  return out;
}

/// Rows of `epsilon,max_asymmetry` (inner shells), 17 significant digits.
inline void writeAsymmetryCsv(std::ostream& os, const ReflectionDiagnostics& diag) {
  os << "epsilon,max_asymmetry\n" << std::setprecision(17);
  for (const auto& s : diag.samples) os << s.epsilon << ',' << s.innerAsymmetry << '\n';
}

}  // namespace nehari
