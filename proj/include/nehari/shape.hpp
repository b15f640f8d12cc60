#pragma once

// Shape derivatives of the least-energy levels along Phi_t(x) = x + t R(x)
// and displacement sweeps over eccentric annuli.

#include <cmath>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include "nehari/errors.hpp"
#include "nehari/femcore.hpp"
#include "nehari/geometry.hpp"
#include "nehari/nehari.hpp"
#include "nehari/solvers.hpp"

namespace nehari {

struct ShapeDerivativeResult {
  double formulaValue = 0.0;  ///< boundary-integral evaluation
  double fdValue = 0.0;       ///< Richardson-extrapolated central difference
  double relMismatch = 0.0;   ///< |formula - fd| / max(|fd|, floor)
  double floor = 0.0;         ///< 1e-2 * fluxScale
  double fluxScale = 0.0;     ///< |c| oint |du/dn|^p |<R,n>| with the formula's coefficient c
  PerturbationKind fieldKind = PerturbationKind::Translation;
  double tStep = 0.0;
};

/// Recovered per-edge normal derivative of a computed minimizer. Rayleigh
/// minimizers (int |u|^q = 1) satisfy -Delta_p u = A |u|^{q-2} u with A the
/// gradient term.
inline Vector rayleighFlux(const SolveReport& report, FluxRecovery recovery = FluxRecovery::Variational) {
  if (report.kind != LevelKind::Lambda && report.kind != LevelKind::RayleighQ)
    fail(ErrorClass::ConfigError, "rayleighFlux needs a Rayleigh or eigenvalue report");
  const ScalarField u = report.minimizer();
  const double q = report.kind == LevelKind::Lambda ? report.p : report.q;
  const Discretization& d = u.disc();
  const double A = gradientTerm(d, u.values(), report.p) / lebesgueTerm(d, u.values(), q);
  return edgeFlux(u, report.p, recovery,
                  [A, q](double s) { return A * NonlinearitySpec::signedPower(s, q - 1.0); });
}

inline Vector reportFlux(const SolveReport& report, const NonlinearitySpec& nl,
                         FluxRecovery recovery = FluxRecovery::Variational) {
  if (report.kind == LevelKind::Lambda || report.kind == LevelKind::RayleighQ) return rayleighFlux(report, recovery);
  return edgeFlux(report.minimizer(), nl, recovery);
}

/// oint |du/dn|^p n_i over the edges tagged `tag` (domain-outward n).
inline double fluxMoment(const Mesh& m, const Vector& flux, double p, int i, BoundaryTag tag) {
  return boundaryIntegral(m, p, flux, normalComponent(m, i), tag);
}

inline double fluxTotal(const Mesh& m, const Vector& flux, double p) {
  return boundaryIntegralAll(m, p, flux, Vector(m.boundaryEdges.size(), 1.0));
}

namespace detail {

template <class Eval>
double richardsonCentral(Eval&& eval, double t) {
  const double d1 = (eval(t) - eval(-t)) / (2.0 * t);
  const double d2 = (eval(2.0 * t) - eval(-2.0 * t)) / (4.0 * t);
  return (4.0 * d1 - d2) / 3.0;
}

inline ShapeDerivativeResult finishShape(const Mesh& m, const Vector& flux, double p, double coefficient,
                                         const PerturbationField& field, double fd, double t) {
  ShapeDerivativeResult r;
  const Vector w = normalVelocity(m, field);
  Vector absw = w;
  for (double& x : absw) x = std::abs(x);
  r.formulaValue = coefficient * boundaryIntegralAll(m, p, flux, w);
  r.fluxScale = std::abs(coefficient) * boundaryIntegralAll(m, p, flux, absw);
  r.floor = 1e-2 * r.fluxScale;
  r.fdValue = fd;
  const double denom = std::max(std::abs(fd), r.floor);
  r.relMismatch = denom > 0.0 ? std::abs(r.formulaValue - fd) / denom : 0.0;
  r.fieldKind = field.kind;
  r.tStep = t;
  return r;
}

inline double outerRadiusOf(const Mesh& m) {
  if (m.domain) return m.domain->outerRadius;
  double r = 0.0;
  for (const Vec2& x : m.nodes) r = std::max(r, norm(x));
  return r;
}

}  // namespace detail

/// d/dt E[alpha(v_t) v_t] at t = 0 for a constant-sign Nehari minimizer v,
/// v_t carrying the nodal values of v on the morphed mesh.
inline ShapeDerivativeResult hadamardEnergy(const SolveReport& report, const NonlinearitySpec& nl,
                                            const PerturbationField& field, std::optional<double> tStep = {},
                                            FluxRecovery recovery = FluxRecovery::Variational) {
  const ScalarField u = report.minimizer();
  const double t = tStep.value_or(1e-3 * detail::outerRadiusOf(u.mesh()));
  auto eval = [&](double s) {
    const FemSpace moved(morphMesh(u.mesh(), field, s));
    return nehariScale(moved.disc(), u.values(), nl).projectedEnergy;
  };
  const double fd = detail::richardsonCentral(eval, t);
  return detail::finishShape(u.mesh(), reportFlux(report, nl, recovery), nl.p, -(nl.p - 1.0) / nl.p, field, fd, t);
}

/// d/dt J(u_t) at t = 0 for a Rayleigh minimizer normalized by int |u|^q = 1.
inline ShapeDerivativeResult hadamardRayleigh(const SolveReport& report, const PerturbationField& field,
                                              std::optional<double> tStep = {},
                                              FluxRecovery recovery = FluxRecovery::Variational) {
  if (report.kind != LevelKind::Lambda && report.kind != LevelKind::RayleighQ)
    fail(ErrorClass::ConfigError, "hadamardRayleigh needs a Rayleigh or eigenvalue report");
  const ScalarField u = report.minimizer();
  const double p = report.p;
  const double q = report.kind == LevelKind::Lambda ? p : report.q;
  const double t = tStep.value_or(1e-3 * detail::outerRadiusOf(u.mesh()));
  auto eval = [&](double s) {
    const FemSpace moved(morphMesh(u.mesh(), field, s));
    const double A = gradientTerm(moved.disc(), u.values(), p);
    const double B = lebesgueTerm(moved.disc(), u.values(), q);
    return A / std::pow(B, p / q);
  };
  const double fd = detail::richardsonCentral(eval, t);
  return detail::finishShape(u.mesh(), rayleighFlux(report, recovery), p, -(p - 1.0),
                             field, fd, t);
}

struct TranslationIdentity {
  double moment1 = 0.0;  ///< oint |du/dn|^p n_1
  double moment2 = 0.0;
  double total = 0.0;    ///< oint |du/dn|^p
  double worstRatio() const { return std::max(std::abs(moment1), std::abs(moment2)) / total; }
};

inline TranslationIdentity translationIdentity(const Mesh& m, const Vector& flux, double p) {
  TranslationIdentity r;
  for (BoundaryTag tag : {BoundaryTag::Outer, BoundaryTag::Inner}) {
    if (!m.hasTag(tag)) continue;
    r.moment1 += fluxMoment(m, flux, p, 0, tag);
    r.moment2 += fluxMoment(m, flux, p, 1, tag);
  }
  r.total = fluxTotal(m, flux, p);
  return r;
}

inline TranslationIdentity translationIdentity(const SolveReport& report, const NonlinearitySpec& nl,
                                               FluxRecovery recovery = FluxRecovery::Variational) {
  return translationIdentity(report.space->mesh(), reportFlux(report, nl, recovery), report.p);
}

// ---------------------------------------------------------------------------
// Displacement sweeps

enum class SweepTarget { MuPlus, MuMinus, Lambda };

constexpr std::string_view toString(SweepTarget w) {
  switch (w) {
    case SweepTarget::MuPlus: return "muPlus";
    case SweepTarget::MuMinus: return "muMinus";
    case SweepTarget::Lambda: return "lambda";
  }
  return "unknown";
}

struct SweepPoint {
  double s = 0.0;
  double level = std::nan("");
  double fluxInner = std::nan("");  ///< oint_inner |dv/dn|^p n_1
  double fluxOuter = std::nan("");  ///< oint_outer |dv/dn|^p n_1
  bool converged = false;
  int nodes = 0;
  std::string error;
};

struct SweepResult {
  SweepTarget which = SweepTarget::MuPlus;
  std::vector<SweepPoint> points;
  std::vector<double> upperDerivatives;  ///< -(p-1)/p fluxInner, when available
  double margin = 0.0;
  bool monotone = false;

  std::vector<double> sValues() const {
    std::vector<double> s;
    for (const auto& pt : points) s.push_back(pt.s);
    return s;
  }
  std::vector<double> levels() const {
    std::vector<double> l;
    for (const auto& pt : points) l.push_back(pt.level);
    return l;
  }

  /// level(s_{i+1}) < level(s_i) - margin for every consecutive pair.
  static bool strictlyDecreasing(const std::vector<SweepPoint>& pts, double margin) {
    if (pts.size() < 2) return false;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (!pts[i].converged || !pts[i + 1].converged) return false;
      if (!(pts[i + 1].level < pts[i].level - margin)) return false;
    }
    return true;
  }
};

inline SolveReport solveTarget(const FemSpacePtr& space, SweepTarget which, const NonlinearitySpec& nl,
                               const SolverOptions& opt) {
  switch (which) {
    case SweepTarget::MuPlus: return solvePositive(space, nl, opt);
    case SweepTarget::MuMinus: return solveNegative(space, nl, opt);
    case SweepTarget::Lambda: return solveEigen(space, nl.p, opt);
  }
  return {};
}

inline SweepPoint sweepPoint(DomainSpec spec, double s, SweepTarget which, const NonlinearitySpec& nl,
                             const SolverOptions& opt) {
  SweepPoint pt;
  pt.s = s;
  try {
    spec.displacement = s;
    spec.validate();
    if (!(s < spec.outerRadius - spec.innerRadius - 2.0 * opt.h))
      fail(ErrorClass::InfeasibleGeometry, "displacement too close to R1 - R0 for the mesh size");
    auto space = makeSpace(buildMesh(spec, opt.h));
    pt.nodes = space->nodeCount();
    const SolveReport rep = solveTarget(space, which, nl, opt);
    const Vector flux = reportFlux(rep, nl);
    const Mesh& m = space->mesh();
    pt.level = rep.level;
    pt.converged = rep.converged;
    pt.fluxInner = fluxMoment(m, flux, nl.p, 0, BoundaryTag::Inner);
    pt.fluxOuter = fluxMoment(m, flux, nl.p, 0, BoundaryTag::Outer);
  } catch (const Error& e) {
    pt.error = e.what();
  }
  return pt;
}

/// Discretization-error margin at s = 0: 3 (tol |L| + |L(2h) - L(h)|).
inline double calibrateMargin(DomainSpec spec, SweepTarget which, const NonlinearitySpec& nl,
                              const SolverOptions& opt) {
  spec.displacement = 0.0;
  const SolveReport fine = solveTarget(makeSpace(buildMesh(spec, opt.h)), which, nl, opt);
  const SolveReport coarse = solveTarget(makeSpace(buildMesh(spec, 2.0 * opt.h)), which, nl, opt);
  return 3.0 * (opt.tol * std::abs(fine.level) + std::abs(coarse.level - fine.level));
}

/// Fresh mesh per s; per-point failures are recorded and the sweep goes on.
inline SweepResult sweepLevels(const DomainSpec& specTemplate, const std::vector<double>& sGrid, SweepTarget which,
                               const NonlinearitySpec& nl, const SolverOptions& opt,
                               std::optional<double> margin = {}) {
  SweepResult res;
  res.which = which;
  res.points.resize(sGrid.size());
  SolverOptions inner = opt;
  const int jobs = std::max(1, opt.jobs);
  if (jobs > 1) inner.jobs = 1;
  for (std::size_t k0 = 0; k0 < sGrid.size(); k0 += jobs) {
    std::vector<std::future<SweepPoint>> fs;
    for (std::size_t k = k0; k < std::min(sGrid.size(), k0 + jobs); ++k)
      fs.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, sweepPoint, specTemplate,
                              sGrid[k], which, std::cref(nl), inner));
    for (std::size_t k = 0; k < fs.size(); ++k) res.points[k0 + k] = fs[k].get();
  }
  if (which != SweepTarget::Lambda)
    for (const auto& pt : res.points) res.upperDerivatives.push_back(-(nl.p - 1.0) / nl.p * pt.fluxInner);
  res.margin = margin ? *margin : calibrateMargin(specTemplate, which, nl, inner);
  res.monotone = SweepResult::strictlyDecreasing(res.points, res.margin);
  return res;
}

struct UpperDerivative {
  double inner = 0.0;  ///< -(p-1)/p oint_inner |dv/dn|^p n_1
  double outer = 0.0;  ///< (p-1)/p oint_outer |dv/dn|^p n_1
  double level = 0.0;
};

/// Both one-sided upper bounds for the derivative of the level in s at the
/// computed minimizer of mu_+ on the annulus displaced by s.
inline UpperDerivative upperDerivativeEstimate(const SolveReport& report, const NonlinearitySpec& nl,
                                               FluxRecovery recovery = FluxRecovery::Variational) {
  const Vector flux = reportFlux(report, nl, recovery);
  const Mesh& m = report.space->mesh();
  const double c = (report.p - 1.0) / report.p;
  return {-c * fluxMoment(m, flux, report.p, 0, BoundaryTag::Inner),
          c * fluxMoment(m, flux, report.p, 0, BoundaryTag::Outer), report.level};
}

inline UpperDerivative upperDerivativeEstimate(DomainSpec spec, double s, const NonlinearitySpec& nl,
                                               const SolverOptions& opt) {
  spec.displacement = s;
  spec.validate();
  if (!spec.isAnnulus()) fail(ErrorClass::UnsupportedDomain, "upper derivative estimates need an annulus");
  return upperDerivativeEstimate(solvePositive(makeSpace(buildMesh(spec, opt.h)), nl, opt), nl);
}

/// One-sided forward difference quotients (L(s + d) - L(s)) / d of a sweep
/// whose grid starts at s.
inline std::vector<double> forwardDifferences(const SweepResult& sweep) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < sweep.points.size(); ++i)
    out.push_back((sweep.points[i + 1].level - sweep.points[i].level) / (sweep.points[i + 1].s - sweep.points[i].s));
  return out;
}

// ---------------------------------------------------------------------------
// Continuity along a morph

struct ContinuityProbe {
  std::vector<double> deltas;
  std::vector<double> differences;  ///< |L(s + delta) - L(s)|
  std::vector<double> ratios;       ///< differences[k+1] / differences[k]
  double worstRatio() const {
    double r = 0.0;
    for (double x : ratios) r = std::max(r, x);
    return r;
  }
};

/// Levels on meshes morphed by the inner shift, each re-solved from the
/// transported minimizer.
inline ContinuityProbe continuityProbe(const SolveReport& base, const NonlinearitySpec& nl,
                                       const PerturbationField& field, const std::vector<double>& deltas,
                                       const SolverOptions& opt) {
  ContinuityProbe pr;
  pr.deltas = deltas;
  const int sign = base.kind == LevelKind::MuMinus ? -1 : 1;
  for (double d : deltas) {
    const auto space = makeSpace(morphMesh(base.space->mesh(), field, d));
    const DescentProblem pb = constantSignProblem(space->disc(), nl, sign);
    const DescentResult r = descend(space->disc(), pb, base.values, opt);
    if (!r.converged) fail(ErrorClass::NoConvergence, "continuity probe solve: " + r.stopReason);
    pr.differences.push_back(std::abs(r.value - base.level));
  }
  for (std::size_t k = 0; k + 1 < pr.differences.size(); ++k)
    pr.ratios.push_back(pr.differences[k + 1] / pr.differences[k]);
  return pr;
}

}  // namespace nehari
