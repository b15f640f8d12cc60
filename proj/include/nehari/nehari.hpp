#pragma once

// Nehari scaling u -> alpha(u) u and the nodal split.

#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nehari/discretization.hpp"
#include "nehari/errors.hpp"
#include "nehari/femcore.hpp"
#include "nehari/nonlinearity.hpp"

namespace nehari {

struct FiberSample {
  double alpha = 0.0;
  double Q = 0.0;
  double Qprime = 0.0;
};

struct NehariProjection {
  double alpha = 1.0;
  double projectedEnergy = 0.0;
  double residualAtAlpha = 0.0;  ///< Nehari residual of alpha u
  double gradTerm = 0.0;         ///< int |grad u|^p of the input
  std::optional<std::vector<FiberSample>> profileSamples;
};

/// The fibering map Q(alpha) = E[alpha u] of a field known through its
/// gradient term and its quadrature samples.
struct Fiber {
  double A = 0.0;  ///< int |grad u|^p
  std::span<const double> values;
  std::span<const double> weights;
  const NonlinearitySpec* nl = nullptr;

  double Q(double a) const {
    return std::pow(a, nl->p) * A / nl->p -
           integrateSamples(values, weights, [&](double s) { return nl->F(a * s); });
  }
  double Qprime(double a) const {
    return std::pow(a, nl->p - 1.0) * A -
           integrateSamples(values, weights, [&](double s) { return s * nl->f(a * s); });
  }
  /// Q'(a) / a^{p-1}, decreasing in a under the structural assumptions.
  double scaledSlope(double a) const { return Qprime(a) / std::pow(a, nl->p - 1.0); }
  /// d/da of the scaled slope (for the Newton polish).
  double scaledSlopeDerivative(double a) const {
    const double p = nl->p;
    return -integrateSamples(values, weights, [&](double s) {
      if (s == 0.0) return 0.0;
      const double as = a * s;
      return (s * s * nl->fprime(as) * a - (p - 1.0) * s * nl->f(as)) / std::pow(a, p);
    });
  }
};

inline NehariProjection nehariScale(const Fiber& fb) {
  const NonlinearitySpec& nl = *fb.nl;
  if (!(fb.A > 0.0)) fail(ErrorClass::ZeroField, "nehariScale of a field with zero gradient term");
  requireFinite(fb.A, "gradient term");
  NehariProjection r;
  r.gradTerm = fb.A;
  double alpha;
  if (nl.isPowerPrototype()) {
    const double Lq = integrateSamples(fb.values, fb.weights, [&](double s) { return std::pow(std::abs(s), nl.q); });
    if (!(Lq > 0.0)) fail(ErrorClass::BracketFailure, "field vanishes at every quadrature point");
    alpha = std::pow(fb.A / Lq, 1.0 / (nl.q - nl.p));
  } else {
    constexpr double lo = 1e-8, hi = 1e8;
    double a = 1.0, b = 1.0;
    double ka = fb.scaledSlope(1.0);
    if (ka == 0.0) {
      alpha = 1.0;
    } else {
      if (ka > 0.0) {
        b = a;
        while (fb.scaledSlope(b) > 0.0) {
          a = b;
          b *= 2.0;
          if (b > hi) fail(ErrorClass::BracketFailure, "no sign change of Q' below alpha = 1e8");
        }
      } else {
        a = b;
        while (fb.scaledSlope(a) < 0.0) {
          b = a;
          a *= 0.5;
          if (a < lo) fail(ErrorClass::BracketFailure, "no sign change of Q' above alpha = 1e-8");
        }
      }
      // scaledSlope(a) > 0 >= scaledSlope(b)
      while (b - a > 1e-12 * b) {
        const double m = 0.5 * (a + b);
        if (fb.scaledSlope(m) > 0.0) a = m;
        else b = m;
      }
      alpha = 0.5 * (a + b);
      for (int k = 0; k < 3; ++k) {
        const double d = fb.scaledSlopeDerivative(alpha);
        if (!(d < 0.0)) break;
        const double next = alpha - fb.scaledSlope(alpha) / d;
        if (!(next > 0.0) || std::abs(next - alpha) > 1e-6 * alpha) break;
        alpha = next;
      }
    }
  }
  requireFinite(alpha, "Nehari scale");
  r.alpha = alpha;
  r.projectedEnergy = fb.Q(alpha);
  r.residualAtAlpha = alpha * fb.Qprime(alpha);
  return r;
}

inline Fiber makeFiber(const Discretization& d, const Vector& quadVals, double A, const NonlinearitySpec& nl) {
  return Fiber{A, quadVals, d.quadWeight, &nl};
}

inline NehariProjection nehariScale(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  const Vector v = quadValues(d, u);
  return nehariScale(makeFiber(d, v, gradientTerm(d, u, nl.p), nl));
}

inline NehariProjection nehariScale(const ScalarField& u, const NonlinearitySpec& nl) {
  return nehariScale(u.disc(), u.values(), nl);
}

inline std::vector<FiberSample> fiberingProfile(const Discretization& d, const Vector& u, const NonlinearitySpec& nl,
                                                const std::vector<double>& alphaGrid) {
  const Vector v = quadValues(d, u);
  const Fiber fb = makeFiber(d, v, gradientTerm(d, u, nl.p), nl);
  std::vector<FiberSample> out;
  out.reserve(alphaGrid.size());
  for (double a : alphaGrid) out.push_back({a, fb.Q(a), fb.Qprime(a)});
  return out;
}

inline std::vector<FiberSample> fiberingProfile(const ScalarField& u, const NonlinearitySpec& nl,
                                                const std::vector<double>& alphaGrid) {
  return fiberingProfile(u.disc(), u.values(), nl, alphaGrid);
}

// ---------------------------------------------------------------------------
// Nodal split

struct NodalProjection {
  double alphaPlus = 1.0;
  double alphaMinus = 1.0;
  double energyPlus = 0.0;   ///< E[alpha+ u+]
  double energyMinus = 0.0;  ///< E[-alpha- u-]
  double energy = 0.0;       ///< energyPlus + energyMinus
  Vector projected;          ///< alpha+ u+ - alpha- u-
};

/// u+ and -u- at nodal values.
inline std::pair<Vector, Vector> nodalParts(const Vector& u) {
  Vector pos(u.size(), 0.0), neg(u.size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] > 0.0) pos[i] = u[i];
    else if (u[i] < 0.0) neg[i] = u[i];
  }
  return {pos, neg};
}

inline NodalProjection nodalProject(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  auto [pos, neg] = nodalParts(u);
  const bool hasPos = std::any_of(pos.begin(), pos.end(), [](double x) { return x != 0.0; });
  const bool hasNeg = std::any_of(neg.begin(), neg.end(), [](double x) { return x != 0.0; });
  if (!hasPos || !hasNeg) fail(ErrorClass::NotNodal, "field has a vanishing nodal part");
  const NehariProjection pp = nehariScale(d, pos, nl);
  const NehariProjection pm = nehariScale(d, neg, nl);
  NodalProjection r;
  r.alphaPlus = pp.alpha;
  r.alphaMinus = pm.alpha;
  r.energyPlus = pp.projectedEnergy;
  r.energyMinus = pm.projectedEnergy;
  r.energy = r.energyPlus + r.energyMinus;
  r.projected.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) r.projected[i] = pp.alpha * pos[i] + pm.alpha * neg[i];
  return r;
}

inline NodalProjection nodalProject(const ScalarField& u, const NonlinearitySpec& nl) {
  return nodalProject(u.disc(), u.values(), nl);
}

}  // namespace nehari
