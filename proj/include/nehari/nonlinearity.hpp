#pragma once

// The nonlinearity f together with its primitive F and derivative f'.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "nehari/errors.hpp"

namespace nehari {

enum class NonlinearityKind { PowerPrototype, PowerSum, Custom };

/// One term c |s|^{e-2} s of a PowerSum; its primitive is c |s|^e / e.
struct PowerTerm {
  double coefficient = 1.0;
  double exponent = 2.0;
};

struct FTriple {
  double f = 0.0;
  double F = 0.0;
  double fprime = 0.0;  ///< NaN when not requested (s = 0)
};

struct NonlinearitySpec {
  NonlinearityKind kind = NonlinearityKind::PowerPrototype;
  double p = 2.0;
  /// growth exponent (the exponent itself for PowerPrototype)
  double q = 4.0;
  /// Ambrosetti-Rabinowitz constant used by the (A4) check.
  double theta = 0.0;
  double s0 = 0.0;
  std::vector<PowerTerm> terms;
  std::function<double(double)> customF;
  std::function<double(double)> customPrimitive;
  std::function<double(double)> customDerivative;
  bool customDerivativeAtZero = false;

  static NonlinearitySpec power(double p, double q) {
    NonlinearitySpec nl;
    nl.kind = NonlinearityKind::PowerPrototype;
    nl.p = p;
    nl.q = q;
    nl.theta = q;
    return nl;
  }

  static NonlinearitySpec powerSum(double p, std::vector<PowerTerm> terms) {
    NonlinearitySpec nl;
    nl.kind = NonlinearityKind::PowerSum;
    nl.p = p;
    nl.terms = std::move(terms);
    double qmax = p, qmin = std::numeric_limits<double>::infinity();
    for (const auto& t : nl.terms) {
      qmax = std::max(qmax, t.exponent);
      qmin = std::min(qmin, t.exponent);
    }
    nl.q = qmax;
    nl.theta = qmin;
    return nl;
  }

  static NonlinearitySpec custom(double p, double q, std::function<double(double)> f,
                                 std::function<double(double)> F, std::function<double(double)> fp,
                                 double theta = 0.0, double s0 = 0.0) {
    NonlinearitySpec nl;
    nl.kind = NonlinearityKind::Custom;
    nl.p = p;
    nl.q = q;
    nl.theta = theta;
    nl.s0 = s0;
    nl.customF = std::move(f);
    nl.customPrimitive = std::move(F);
    nl.customDerivative = std::move(fp);
    return nl;
  }

  bool isPowerPrototype() const { return kind == NonlinearityKind::PowerPrototype; }

  double f(double s) const {
    switch (kind) {
      case NonlinearityKind::PowerPrototype: return signedPower(s, q - 1.0);
      case NonlinearityKind::PowerSum: {
        double v = 0.0;
        for (const auto& t : terms) v += t.coefficient * signedPower(s, t.exponent - 1.0);
        return v;
      }
      case NonlinearityKind::Custom: return customF(s);
    }
    return 0.0;
  }

  double F(double s) const {
    switch (kind) {
      case NonlinearityKind::PowerPrototype: return std::pow(std::abs(s), q) / q;
      case NonlinearityKind::PowerSum: {
        double v = 0.0;
        for (const auto& t : terms) v += t.coefficient * std::pow(std::abs(s), t.exponent) / t.exponent;
        return v;
      }
      case NonlinearityKind::Custom: return customPrimitive(s);
    }
    return 0.0;
  }

  /// f'(s). Power kinds extend continuously to s = 0 when every exponent
  /// exceeds 2; otherwise s = 0 is a DomainError.
  double fprime(double s) const {
    if (s == 0.0) {
      switch (kind) {
        case NonlinearityKind::PowerPrototype:
          if (q > 2.0) return 0.0;
          if (q == 2.0) return 1.0;
          break;
        case NonlinearityKind::PowerSum: {
          bool ok = true;
          double v = 0.0;
          for (const auto& t : terms) {
            if (t.exponent > 2.0) continue;
            if (t.exponent == 2.0) v += t.coefficient;
            else ok = false;
          }
          if (ok) return v;
          break;
        }
        case NonlinearityKind::Custom:
          if (customDerivativeAtZero) return customDerivative(0.0);
          break;
      }
      fail(ErrorClass::DomainError, "f'(0) requested without a continuous extension");
    }
    switch (kind) {
      case NonlinearityKind::PowerPrototype: return (q - 1.0) * std::pow(std::abs(s), q - 2.0);
      case NonlinearityKind::PowerSum: {
        double v = 0.0;
        for (const auto& t : terms)
          v += t.coefficient * (t.exponent - 1.0) * std::pow(std::abs(s), t.exponent - 2.0);
        return v;
      }
      case NonlinearityKind::Custom: return customDerivative(s);
    }
    return 0.0;
  }

  /// s f(s)
  double sf(double s) const { return s * f(s); }

  static double signedPower(double s, double e) {
    if (s == 0.0) return 0.0;
    return std::copysign(std::pow(std::abs(s), e), s);
  }
};

/// (f(s), F(s), f'(s)); f' is NaN at s = 0.
inline FTriple evalTriple(const NonlinearitySpec& nl, double s) {
  FTriple t;
  t.f = nl.f(s);
  t.F = nl.F(s);
  t.fprime = s == 0.0 ? std::numeric_limits<double>::quiet_NaN() : nl.fprime(s);
  return t;
}

struct AssumptionSample {
  double s = 0.0;
  bool a3 = false;      ///< f'(s) > (p-1) f(s)/s > 0
  double a3Margin = 0.0;  ///< f'(s) - (p-1) f(s)/s
  bool a4 = true;       ///< theta F(s) <= s f(s) (vacuous for |s| <= s0)
  bool a2 = false;      ///< |s f'(s)|, |f(s)| <= C (|s|^{q-1} + 1)
  bool oddSign = false; ///< sign f(s) = sign s
};

struct AssumptionReport {
  std::vector<AssumptionSample> samples;
  double growthConstant = 0.0;  ///< fitted C of the growth bound
  bool a2 = true;
  bool a3 = true;
  bool a4 = true;
  bool allPass() const { return a2 && a3 && a4; }
};

/// Log-spaced grid of both signs spanning 10^-3 .. 10.
inline std::vector<double> defaultAssumptionGrid(int perDecade = 8) {
  std::vector<double> g;
  const int decades = 4;
  for (int k = 0; k <= decades * perDecade; ++k) {
    const double v = std::pow(10.0, -3.0 + static_cast<double>(k) / perDecade);
    g.push_back(v);
    g.push_back(-v);
  }
  std::sort(g.begin(), g.end());
  return g;
}

/// Pointwise checks of (A2)-(A4). Report only; never throws for failing
/// samples. The lambda_p smallness part of (A3) depends on the domain and is
/// checked by the solvers.
inline AssumptionReport checkAssumptions(const NonlinearitySpec& nl,
                                         const std::vector<double>& grid = defaultAssumptionGrid()) {
  AssumptionReport rep;
  double C = 0.0;
  for (double s : grid) {
    if (s == 0.0) continue;
    const double denom = std::pow(std::abs(s), nl.q - 1.0) + 1.0;
    C = std::max(C, std::max(std::abs(s * nl.fprime(s)), std::abs(nl.f(s))) / denom);
  }
  // the fitted constant is the smallest one valid on the grid; the growth
  // test then checks it stays bounded (it always holds with equality on
  // the grid, so flag only non-finite values)
  rep.growthConstant = C;
  for (double s : grid) {
    if (s == 0.0) continue;
    AssumptionSample a;
    a.s = s;
    const double f = nl.f(s);
    const double fp = nl.fprime(s);
    const double ratio = (nl.p - 1.0) * f / s;
    a.a3Margin = fp - ratio;
    a.a3 = fp > ratio && ratio > 0.0;
    const double denom = std::pow(std::abs(s), nl.q - 1.0) + 1.0;
    a.a2 = std::isfinite(C) && std::max(std::abs(s * fp), std::abs(f)) <= C * denom * (1.0 + 1e-12);
    if (std::abs(s) > nl.s0 && nl.theta > 0.0) {
      const double F = nl.F(s);
      a.a4 = nl.theta > nl.p && 0.0 < nl.theta * F && nl.theta * F <= s * f * (1.0 + 1e-12);
    }
    a.oddSign = (f > 0.0) == (s > 0.0) && f != 0.0;
    rep.a2 = rep.a2 && a.a2;
    rep.a3 = rep.a3 && a.a3;
    rep.a4 = rep.a4 && a.a4;
    rep.samples.push_back(a);
  }
  return rep;
}

}  // namespace nehari
