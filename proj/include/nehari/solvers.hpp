#pragma once

// Least-energy levels by preconditioned descent with retraction onto the
// constraint set (Nehari manifold, nodal Nehari set or L^q sphere).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/SparseLU>

#include "nehari/discretization.hpp"
#include "nehari/errors.hpp"
#include "nehari/femcore.hpp"
#include "nehari/nehari.hpp"
#include "nehari/nonlinearity.hpp"
#include "nehari/radial.hpp"

namespace nehari {

struct SolverOptions {
  double tol = 1e-8;   ///< bound on g^T P^{-1} g / scale at convergence
  int maxIter = 5000;
  int starts = 5;      ///< randomized starts, besides the deterministic ones
  std::uint64_t seed = 1;
  int restarts = 10;
  double h = 0.02;
  int n1d = 2000;
  int jobs = 1;
  double armijo = 1e-4;
  double backtrack = 0.5;
};

enum class LevelKind { MuPlus, MuMinus, Nu, Lambda, RayleighQ };

constexpr std::string_view toString(LevelKind k) {
  switch (k) {
    case LevelKind::MuPlus: return "muPlus";
    case LevelKind::MuMinus: return "muMinus";
    case LevelKind::Nu: return "nu";
    case LevelKind::Lambda: return "lambda";
    case LevelKind::RayleighQ: return "rayleighQ";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Descent engine

struct DescentProblem {
  double p = 2.0;
  std::function<Vector(const Vector&)> project;
  std::function<double(const Vector&)> value;      ///< objective at a projected point
  std::function<Vector(const Vector&)> gradient;   ///< covector at a projected point
  std::function<double(const Vector&)> scale;      ///< normalization of the gradient norm
};

struct DescentResult {
  Vector u;
  double value = std::numeric_limits<double>::infinity();
  double gradientNorm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::string stopReason;
  std::vector<double> trace;  ///< objective after every accepted step
};

inline DescentResult descend(const Discretization& d, const DescentProblem& pb, const Vector& u0,
                             const SolverOptions& opt) {
  DescentResult r;
  MetricSolver metric(d);
  Vector u = pb.project(u0);
  double val = pb.value(u);
  Vector g = pb.gradient(u);
  metric.update(u, pb.p);
  Vector dir = metric.solve(g);
  double gd = dotProduct(g, dir);
  r.trace.push_back(val);
  double tau = 1.0;
  Vector trial(u.size());
  int it = 0;
  for (; it < opt.maxIter; ++it) {
    r.gradientNorm = gd / pb.scale(u);
    if (r.gradientNorm <= opt.tol) {
      r.converged = true;
      r.stopReason = "tolerance";
      break;
    }
    bool accepted = false;
    double tv = 0.0;
    for (int k = 0; k < 60 && !accepted; ++k, tau *= opt.backtrack) {
      for (std::size_t i = 0; i < u.size(); ++i) trial[i] = u[i] - tau * dir[i];
      try {
        trial = pb.project(trial);
        tv = pb.value(trial);
      } catch (const Error&) {
        continue;
      }
      accepted = std::isfinite(tv) && tv <= val - opt.armijo * tau * gd && tv < val;
      if (accepted) break;
    }
    if (!accepted) {
      r.stopReason = "line search stalled";
      break;
    }
    Vector gnew = pb.gradient(trial);
    Vector s(u.size()), y(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      s[i] = trial[i] - u[i];
      y[i] = gnew[i] - g[i];
    }
    u = trial;
    val = tv;
    g = std::move(gnew);
    r.trace.push_back(val);
    metric.update(u, pb.p);
    const double sPs = metric.quadratic(s);
    const double sy = dotProduct(s, y);
    tau = sy > 0.0 ? std::clamp(sPs / sy, 1e-6, 1e6) : 1.0;
    dir = metric.solve(g);
    gd = dotProduct(g, dir);
  }
  if (it == opt.maxIter && !r.converged) {
    r.gradientNorm = gd / pb.scale(u);
    r.converged = r.gradientNorm <= opt.tol;
    r.stopReason = r.converged ? "tolerance" : "iteration limit";
  }
  r.iterations = it;
  r.u = std::move(u);
  r.value = val;
  return r;
}

// ---------------------------------------------------------------------------
// Constrained problems on a generic discretization

/// Clip to the cone {sign * u >= 0}.
inline Vector clipToSign(Vector u, int sign) {
  for (double& x : u)
    if (sign * x < 0.0) x = 0.0;
  return u;
}

/// Zero the gradient where the sign constraint is active and the descent
/// direction points out of the cone.
inline void maskActive(Vector& g, const Vector& u, int sign, const std::vector<char>& pinned) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!pinned[i] && u[i] == 0.0 && sign * g[i] > 0.0) g[i] = 0.0;
}

inline DescentProblem constantSignProblem(const Discretization& d, const NonlinearitySpec& nl, int sign) {
  DescentProblem pb;
  pb.p = nl.p;
  pb.project = [&d, &nl, sign](const Vector& v) {
    Vector w = clipToSign(v, sign);
    const double a = nehariScale(d, w, nl).alpha;
    for (double& x : w) x *= a;
    return w;
  };
  pb.value = [&d, &nl](const Vector& v) { return energy(d, v, nl); };
  pb.gradient = [&d, &nl, sign](const Vector& v) {
    Vector g = energyGradient(d, v, nl);
    maskActive(g, v, sign, d.pinned);
    return g;
  };
  pb.scale = [&d, &nl](const Vector& v) { return gradientTerm(d, v, nl.p); };
  return pb;
}

/// J(u) = int |grad u|^p / (int |u|^q)^{p/q} over nonnegative u, retracted
/// to int |u|^q = 1. The gradient is dJ / p.
inline DescentProblem rayleighProblem(const Discretization& d, double p, double q) {
  DescentProblem pb;
  pb.p = p;
  pb.project = [&d, q](const Vector& v) {
    Vector w = clipToSign(v, 1);
    const double B = lebesgueTerm(d, w, q);
    if (!(B > 0.0)) fail(ErrorClass::ZeroField, "normalization of a vanishing field");
    const double c = std::pow(B, -1.0 / q);
    for (double& x : w) x *= c;
    return w;
  };
  pb.value = [&d, p](const Vector& v) { return gradientTerm(d, v, p); };
  pb.gradient = [&d, p, q](const Vector& v) {
    Vector g = gradientTermCovector(d, v, p);
    const double A = gradientTerm(d, v, p);
    Vector w = quadValues(d, v);
    for (double& s : w) s = NonlinearitySpec::signedPower(s, q - 1.0);
    const Vector load = loadCovector(d, w);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= A * load[i];
    maskActive(g, v, 1, d.pinned);
    return g;
  };
  pb.scale = [&d, p](const Vector& v) { return gradientTerm(d, v, p); };
  return pb;
}

struct NodalValue {
  double energy = 0.0;
  double energyPlus = 0.0;
  double energyMinus = 0.0;
  double gradPlus = 0.0;
  double gradMinus = 0.0;
};

/// E[u+] + E[-u-] for a field already on the nodal Nehari set.
inline NodalValue nodalValue(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  const auto [pos, neg] = nodalParts(u);
  const EnergyBreakdown bp = assembleBreakdown(d, pos, nl);
  const EnergyBreakdown bm = assembleBreakdown(d, neg, nl);
  return {bp.energy + bm.energy, bp.energy, bm.energy, bp.gradTerm, bm.gradTerm};
}

inline DescentProblem nodalProblem(const Discretization& d, const NonlinearitySpec& nl) {
  DescentProblem pb;
  pb.p = nl.p;
  pb.project = [&d, &nl](const Vector& v) { return nodalProject(d, v, nl).projected; };
  pb.value = [&d, &nl](const Vector& v) { return nodalValue(d, v, nl).energy; };
  pb.gradient = [&d, &nl](const Vector& v) {
    const auto [pos, neg] = nodalParts(v);
    const Vector gp = energyGradient(d, pos, nl);
    const Vector gm = energyGradient(d, neg, nl);
    Vector g(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (d.pinned[i]) continue;
      if (v[i] > 0.0) g[i] = gp[i];
      else if (v[i] < 0.0) g[i] = gm[i];
      else if (gp[i] < 0.0) g[i] = gp[i];
      else if (gm[i] > 0.0) g[i] = gm[i];
    }
    return g;
  };
  pb.scale = [&d, &nl](const Vector& v) { return gradientTerm(d, v, nl.p); };
  return pb;
}

// ---------------------------------------------------------------------------
// Initial fields

/// Solution of -Laplace w = 1 with the Dirichlet condition.
inline Vector torsionFunction(const Discretization& d) {
  MetricSolver K(d);
  K.update(Vector(d.nodeCount, 0.0), 2.0);
  Vector ones(d.interp.rows(), 1.0);
  return K.solve(loadCovector(d, ones));
}

/// A few inverse iterations of the Dirichlet Laplacian from the torsion
/// function; close to the first eigenfunction, scaled to unit maximum.
inline Vector eigenShape(const Discretization& d, int iterations = 6) {
  MetricSolver K(d);
  K.update(Vector(d.nodeCount, 0.0), 2.0);
  Vector w = torsionFunction(d);
  for (int k = 0; k < iterations; ++k) {
    w = K.solve(loadCovector(d, quadValues(d, w)));
    const double m = *std::max_element(w.begin(), w.end());
    for (double& x : w) x /= m;
  }
  return w;
}

struct SeedStream {
  explicit SeedStream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), 0x6e6568u};
    rng.seed(seq);
  }
  std::mt19937_64 rng;
};

/// Smooth random log-perturbation sum_k a_k exp(-|x - c_k|^2 / (2 sigma^2)).
inline Vector randomBumps(const Discretization& d, std::mt19937_64& rng, int count = 3) {
  std::array<double, 2> lo = d.coords.front(), hi = d.coords.front();
  for (const auto& x : d.coords)
    for (int k = 0; k < 2; ++k) {
      lo[k] = std::min(lo[k], x[k]);
      hi[k] = std::max(hi[k], x[k]);
    }
  const double L = std::max(hi[0] - lo[0], hi[1] - lo[1]);
  const double sigma = 0.2 * L;
  std::normal_distribution<double> amp(0.0, 1.5);
  std::uniform_int_distribution<int> pick(0, d.nodeCount - 1);
  std::vector<std::pair<std::array<double, 2>, double>> bumps;
  for (int k = 0; k < count; ++k) {
    const auto c = d.coords[pick(rng)];
    bumps.push_back({c, amp(rng)});
  }
  Vector out(d.nodeCount, 0.0);
  for (int i = 0; i < d.nodeCount; ++i)
    for (const auto& [c, a] : bumps) {
      const double dx = d.coords[i][0] - c[0], dy = d.coords[i][1] - c[1];
      out[i] += a * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  return out;
}

inline Vector randomConstantSignStart(const Discretization& d, const Vector& torsion, std::mt19937_64& rng) {
  const Vector b = randomBumps(d, rng);
  Vector u(d.nodeCount);
  for (int i = 0; i < d.nodeCount; ++i) u[i] = torsion[i] * std::exp(b[i]);
  return u;
}

/// torsion * (<a, x - c> + bumps) with random unit a and c near the middle.
inline Vector randomNodalStart(const Discretization& d, const Vector& torsion, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> offset(0.0, 0.1);
  const double th = angle(rng);
  std::array<double, 2> lo = d.coords.front(), hi = d.coords.front();
  for (const auto& x : d.coords)
    for (int k = 0; k < 2; ++k) {
      lo[k] = std::min(lo[k], x[k]);
      hi[k] = std::max(hi[k], x[k]);
    }
  const double L = std::max(hi[0] - lo[0], hi[1] - lo[1]);
  const double cx = 0.5 * (lo[0] + hi[0]) + offset(rng) * L, cy = 0.5 * (lo[1] + hi[1]) + offset(rng) * L;
  const Vector b = randomBumps(d, rng);
  Vector u(d.nodeCount);
  for (int i = 0; i < d.nodeCount; ++i) {
    const double lin = (std::cos(th) * (d.coords[i][0] - cx) + std::sin(th) * (d.coords[i][1] - cy)) / L;
    u[i] = torsion[i] * (lin + 0.1 * b[i]);
  }
  return u;
}

// ---------------------------------------------------------------------------
// Reports

struct SolveReport {
  LevelKind kind = LevelKind::MuPlus;
  double level = 0.0;
  double p = 2.0;
  Vector values;
  FemSpacePtr space;  ///< null for 1D radial solves
  int iterations = 0;
  double gradientNorm = 0.0;
  double nehariResidual = 0.0;  ///< relative, |int |grad u|^p - int u f(u)| / int |grad u|^p
  double meshSize = 0.0;
  double wallTime = 0.0;
  SolverOptions settings;
  bool converged = false;
  int bestStart = -1;
  std::vector<double> startLevels;  ///< NaN for starts that did not converge
  std::vector<double> trace;
  // nodal solves
  double levelPlus = 0.0;
  double levelMinus = 0.0;
  int nodalDomains = 0;
  double nodalLineSpread = 0.0;
  int polishIterations = 0;  ///< Newton steps after the nodal descent; 0 when not polished
  // Rayleigh solves
  double q = 0.0;
  double muPlusFromQ = 0.0;  ///< (1/p - 1/q) mu_q^{q/(q-p)}
  // radial oracle
  double errorEstimate = 0.0;
  double coarseLevel = 0.0;
  double fineLevel = 0.0;

  ScalarField minimizer() const {
    if (!space) fail(ErrorClass::UnsupportedDomain, "radial reports carry no planar field");
    return ScalarField(space, values);
  }
};

inline double relativeNehariResidual(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  const EnergyBreakdown b = assembleBreakdown(d, u, nl);
  return b.gradTerm > 0.0 ? std::abs(b.nehariResidual) / b.gradTerm : 0.0;
}

/// max over the parts of |<E'(u), u+->| / int |grad u+-|^p; equals the
/// individual Nehari residuals when no triangle carries both signs.
inline double nodalNehariResidual(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  const Vector e = energyGradient(d, u, nl);
  const auto [pos, neg] = nodalParts(u);
  double worst = 0.0;
  for (const Vector* part : {&pos, &neg}) {
    const double A = gradientTerm(d, *part, nl.p);
    if (A > 0.0) worst = std::max(worst, std::abs(dotProduct(e, *part)) / A);
  }
  return worst;
}

/// Runs every start (in parallel when jobs > 1) and keeps the lowest
/// converged level; ties go to the earlier start.
inline std::vector<DescentResult> runStarts(const Discretization& d, const DescentProblem& pb,
                                            const std::vector<Vector>& starts, const SolverOptions& opt) {
  std::vector<DescentResult> results(starts.size());
  auto one = [&](std::size_t k) {
    try {
      return descend(d, pb, starts[k], opt);
    } catch (const Error& e) {
      DescentResult r;
      r.stopReason = e.what();
      return r;
    }
  };
  if (opt.jobs <= 1) {
    for (std::size_t k = 0; k < starts.size(); ++k) results[k] = one(k);
  } else {
    for (std::size_t k0 = 0; k0 < starts.size(); k0 += opt.jobs) {
      std::vector<std::future<DescentResult>> fs;
      for (std::size_t k = k0; k < std::min(starts.size(), k0 + opt.jobs); ++k)
        fs.push_back(std::async(std::launch::async, one, k));
      for (std::size_t k = 0; k < fs.size(); ++k) results[k0 + k] = fs[k].get();
    }
  }
  return results;
}

inline int pickBest(const std::vector<DescentResult>& results, std::vector<double>& levels) {
  int best = -1;
  levels.clear();
  for (std::size_t k = 0; k < results.size(); ++k) {
    levels.push_back(results[k].converged ? results[k].value : std::nan(""));
    if (results[k].converged && (best < 0 || results[k].value < results[best].value)) best = static_cast<int>(k);
  }
  return best;
}

inline void requireBest(int best, const std::vector<DescentResult>& results) {
  if (best >= 0) return;
  std::string why;
  for (const auto& r : results) why += (why.empty() ? "" : "; ") + r.stopReason;
  fail(ErrorClass::NoConvergence, "no start converged (" + why + ")");
}

inline void fillFromDescent(SolveReport& rep, const DescentResult& r) {
  rep.level = r.value;
  rep.values = r.u;
  rep.iterations = r.iterations;
  rep.gradientNorm = r.gradientNorm;
  rep.converged = r.converged;
  rep.trace = r.trace;
}

/// mu_+ (sign = 1) or mu_- (sign = -1) on a generic discretization.
inline SolveReport solveConstantSign(const Discretization& d, const NonlinearitySpec& nl, int sign,
                                     const SolverOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const DescentProblem pb = constantSignProblem(d, nl, sign);
  const Vector torsion = torsionFunction(d);
  std::vector<Vector> starts;
  starts.push_back(eigenShape(d));
  for (int k = 0; k < opt.starts; ++k) {
    SeedStream ss(opt.seed, static_cast<std::uint64_t>(k));
    starts.push_back(randomConstantSignStart(d, torsion, ss.rng));
  }
  for (auto& s : starts)
    for (double& x : s) x *= sign;
  const auto results = runStarts(d, pb, starts, opt);
  SolveReport rep;
  rep.kind = sign > 0 ? LevelKind::MuPlus : LevelKind::MuMinus;
  rep.p = nl.p;
  rep.bestStart = pickBest(results, rep.startLevels);
  requireBest(rep.bestStart, results);
  fillFromDescent(rep, results[rep.bestStart]);
  rep.nehariResidual = relativeNehariResidual(d, rep.values, nl);
  rep.settings = opt;
  rep.wallTime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline SolveReport solveRayleigh(const Discretization& d, double p, double q, const SolverOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const DescentProblem pb = rayleighProblem(d, p, q);
  const Vector torsion = torsionFunction(d);
  std::vector<Vector> starts;
  starts.push_back(eigenShape(d));
  for (int k = 0; k < opt.starts; ++k) {
    SeedStream ss(opt.seed, static_cast<std::uint64_t>(k));
    starts.push_back(randomConstantSignStart(d, torsion, ss.rng));
  }
  const auto results = runStarts(d, pb, starts, opt);
  SolveReport rep;
  rep.kind = q == p ? LevelKind::Lambda : LevelKind::RayleighQ;
  rep.p = p;
  rep.q = q;
  rep.bestStart = pickBest(results, rep.startLevels);
  requireBest(rep.bestStart, results);
  fillFromDescent(rep, results[rep.bestStart]);
  if (q != p) rep.muPlusFromQ = (1.0 / p - 1.0 / q) * std::pow(rep.level, q / (q - p));
  rep.settings = opt;
  rep.wallTime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Planar solvers

inline SolveReport withSpace(SolveReport rep, const FemSpacePtr& space) {
  rep.space = space;
  rep.meshSize = space->mesh().resolution;
  return rep;
}

inline SolveReport solvePositive(const FemSpacePtr& space, const NonlinearitySpec& nl, const SolverOptions& opt = {}) {
  return withSpace(solveConstantSign(space->disc(), nl, 1, opt), space);
}

inline SolveReport solveNegative(const FemSpacePtr& space, const NonlinearitySpec& nl, const SolverOptions& opt = {}) {
  return withSpace(solveConstantSign(space->disc(), nl, -1, opt), space);
}

inline SolveReport solveEigen(const FemSpacePtr& space, double p, const SolverOptions& opt = {}) {
  return withSpace(solveRayleigh(space->disc(), p, p, opt), space);
}

inline SolveReport solveRayleighQ(const FemSpacePtr& space, double p, double q, const SolverOptions& opt = {}) {
  return withSpace(solveRayleigh(space->disc(), p, q, opt), space);
}

/// Connected components of {u > 0} plus those of {u < 0} on the node graph.
inline int nodalDomainCount(const Mesh& m, const Vector& u) {
  std::vector<int> parent(m.nodeCount());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int i) { return parent[i] == i ? i : parent[i] = find(parent[i]); };
  auto sgn = [&](int i) { return (u[i] > 0.0) - (u[i] < 0.0); };
  for (const auto& tri : m.triangles)
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k], b = tri[(k + 1) % 3];
      if (sgn(a) != 0 && sgn(a) == sgn(b)) parent[find(a)] = find(b);
    }
  int count = 0;
  for (int i = 0; i < static_cast<int>(m.nodeCount()); ++i)
    if (sgn(i) != 0 && find(i) == i) ++count;
  return count;
}

/// Relative standard deviation of |x - center| over the points where the
/// P1 interpolant changes sign along mesh edges.
inline double nodalLineSpread(const Mesh& m, const Vector& u, Vec2 center = {}) {
  std::vector<double> radii;
  for (const auto& tri : m.triangles)
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k], b = tri[(k + 1) % 3];
      if (a < b && u[a] * u[b] < 0.0) {
        const double t = u[a] / (u[a] - u[b]);
        radii.push_back(norm(m.nodes[a] + t * (m.nodes[b] - m.nodes[a]) - center));
      }
    }
  if (radii.size() < 2) return 0.0;
  double mean = 0.0;
  for (double r : radii) mean += r;
  mean /= radii.size();
  double var = 0.0;
  for (double r : radii) var += (r - mean) * (r - mean);
  var /= radii.size();
  return std::sqrt(var) / mean;
}

// ---------------------------------------------------------------------------
// Newton polish onto a discrete critical point

namespace detail {

inline SparseCM restrictToFree(const Discretization& d, const SparseRM& A) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int r = 0; r < A.outerSize(); ++r)
    for (SparseRM::InnerIterator it(A, r); it; ++it)
      if (d.freeIndex[it.col()] >= 0) trip.emplace_back(r, d.freeIndex[it.col()], it.value());
  SparseCM M(A.rows(), static_cast<int>(d.freeNodes.size()));
  M.setFromTriplets(trip.begin(), trip.end());
  return M;
}

/// Second derivative of E on the free dofs.
inline SparseCM energyHessian(const Discretization& d, const SparseCM& G, const SparseCM& B, const Vector& u,
                              const NonlinearitySpec& nl) {
  const double p = nl.p;
  const int dim = d.dim;
  const Vector g = cellGradients(d, u);
  const double eps2 = regularization2(d, g, p);
  std::vector<Eigen::Triplet<double>> trip;
  for (int c = 0; c < d.cellCount(); ++c) {
    const double n2 = cellGradNorm2(d, g, c) + eps2;
    const double w = d.cellMeasure[c] * (p == 2.0 ? 1.0 : std::pow(n2, 0.5 * (p - 2.0)));
    for (int a = 0; a < dim; ++a)
      for (int b = 0; b < dim; ++b) {
        const double v = (a == b ? 1.0 : 0.0) + (p - 2.0) * g[dim * c + a] * g[dim * c + b] / n2;
        if (v != 0.0) trip.emplace_back(dim * c + a, dim * c + b, w * v);
      }
  }
  SparseCM W(G.rows(), G.rows());
  W.setFromTriplets(trip.begin(), trip.end());
  const Vector uq = quadValues(d, u);
  Eigen::VectorXd react(uq.size());
  for (std::size_t q = 0; q < uq.size(); ++q) {
    double fp = 0.0;
    try {
      fp = nl.fprime(uq[q]);
    } catch (const Error&) {
      fp = 0.0;  // f'(0) undefined for sublinear terms; zero samples carry no weight
    }
    react[q] = d.quadWeight[q] * fp;
  }
  SparseCM H = SparseCM(G.transpose()) * W * G - SparseCM(B.transpose()) * react.asDiagonal() * B;
  H.makeCompressed();
  return H;
}

}  // namespace detail

struct PolishResult {
  Vector u;
  double residual = 0.0;  ///< E'^T P^{-1} E' / int |grad u|^p at the returned field
  int iterations = 0;
  bool converged = false;
};

/// Damped Newton on E'(u) = 0 from a nearby field. A near-null Hessian mode
/// (rotations of a solution on a rotationally symmetric domain) is found by
/// inverse iteration and removed from each step.
inline PolishResult polishCriticalPoint(const Discretization& d, Vector u, const NonlinearitySpec& nl,
                                        const SolverOptions& opt, int maxIter = 12) {
  const SparseCM G = detail::restrictToFree(d, d.grad);
  const SparseCM B = detail::restrictToFree(d, d.interp);
  const int nf = static_cast<int>(d.freeNodes.size());
  MetricSolver merit(d);
  merit.update(u, nl.p);
  auto residual = [&](const Vector& v) {
    const Vector e = energyGradient(d, v, nl);
    return dotProduct(e, merit.solve(e)) / gradientTerm(d, v, nl.p);
  };
  Eigen::VectorXd cellw(G.rows());
  for (int c = 0; c < d.cellCount(); ++c)
    for (int a = 0; a < d.dim; ++a) cellw[d.dim * c + a] = d.cellMeasure[c];
  auto stiff = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    return (G * x).cwiseProduct(cellw).dot(G * y);
  };

  PolishResult r;
  double m = residual(u);
  Eigen::SparseLU<SparseCM> lu;
  for (; r.iterations < maxIter && m > opt.tol * 1e-6; ++r.iterations) {
    const SparseCM H = detail::energyHessian(d, G, B, u, nl);
    lu.compute(H);
    if (lu.info() != Eigen::Success) break;
    const Vector e = energyGradient(d, u, nl);
    Eigen::VectorXd rhs(nf);
    for (int k = 0; k < nf; ++k) rhs[k] = -e[d.freeNodes[k]];
    Eigen::VectorXd step = lu.solve(rhs);
    Eigen::VectorXd z = Eigen::VectorXd::Ones(nf);
    for (int k = 0; k < 4; ++k) z = lu.solve(z).normalized();
    const double zz = stiff(z, z);
    if (std::isfinite(zz) && zz > 0.0 && std::abs(z.dot(H * z)) < 1e-2 * zz) step -= (stiff(step, z) / zz) * z;
    if (!step.allFinite()) break;
    bool accepted = false;
    Vector trial(u.size());
    for (double tau = 1.0; tau > 1e-4 && !accepted; tau *= 0.5) {
      trial = u;
      for (int k = 0; k < nf; ++k) trial[d.freeNodes[k]] += tau * step[k];
      const double mt = residual(trial);
      if (std::isfinite(mt) && mt < m) {
        u = trial;
        m = mt;
        accepted = true;
      }
    }
    if (!accepted) break;
  }
  MetricSolver local(d);
  local.update(u, nl.p);
  const Vector e = energyGradient(d, u, nl);
  r.residual = dotProduct(e, local.solve(e)) / gradientTerm(d, u, nl.p);
  r.converged = r.residual <= opt.tol;
  r.u = std::move(u);
  return r;
}

inline SolveReport solveNodal(const FemSpacePtr& space, const NonlinearitySpec& nl, const SolverOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const Discretization& d = space->disc();
  const Mesh& m = space->mesh();
  const Vec2 c = m.domain ? m.domain->center : Vec2{};
  const DescentProblem pb = nodalProblem(d, nl);
  const Vector torsion = torsionFunction(d);

  SolverOptions single = opt;
  single.starts = 0;
  const SolveReport pos = solveConstantSign(d, nl, 1, single);
  std::vector<Vector> starts;
  Vector product(d.nodeCount);
  for (int i = 0; i < d.nodeCount; ++i) product[i] = (m.nodes[i].x - c.x) * pos.values[i];
  starts.push_back(product);
  std::uint64_t stream = 1000;
  for (int k = 0; k < opt.starts; ++k) {
    Vector s;
    for (int attempt = 0; attempt <= opt.restarts; ++attempt) {
      SeedStream ss(opt.seed, stream++);
      s = randomNodalStart(d, torsion, ss.rng);
      try {
        nodalProject(d, s, nl);
        break;
      } catch (const Error&) {
        s.clear();
      }
    }
    if (!s.empty()) starts.push_back(std::move(s));
  }
  const auto results = runStarts(d, pb, starts, opt);
  SolveReport rep;
  rep.kind = LevelKind::Nu;
  rep.p = nl.p;
  rep.bestStart = pickBest(results, rep.startLevels);
  requireBest(rep.bestStart, results);
  fillFromDescent(rep, results[rep.bestStart]);
  rep.nodalDomains = nodalDomainCount(m, rep.values);

  // The descent treats the two P1 parts as separate functions, so triangles
  // cut by the nodal line keep an O(h) residual in the weak form. Newton
  // removes it; the result is kept only if it stays a two-signed solution.
  if (rep.converged) {
    PolishResult pol = polishCriticalPoint(d, rep.values, nl, opt);
    if (pol.converged) {
      const auto [pp, pm] = nodalParts(pol.u);
      const bool twoSigned = gradientTerm(d, pp, nl.p) > 0.0 && gradientTerm(d, pm, nl.p) > 0.0;
      if (twoSigned && nodalDomainCount(m, pol.u) == rep.nodalDomains) {
        rep.values = std::move(pol.u);
        rep.level = energy(d, rep.values, nl);
        rep.gradientNorm = pol.residual;
        rep.polishIterations = pol.iterations;
        rep.trace.push_back(rep.level);
      }
    }
  }
  const NodalValue nv = nodalValue(d, rep.values, nl);
  rep.levelPlus = nv.energyPlus;
  rep.levelMinus = nv.energyMinus;
  if (rep.polishIterations > 0) {
    rep.nehariResidual = nodalNehariResidual(d, rep.values, nl);
  } else {
    const auto [posPart, negPart] = nodalParts(rep.values);
    rep.nehariResidual = std::max(relativeNehariResidual(d, posPart, nl), relativeNehariResidual(d, negPart, nl));
  }
  rep.nodalLineSpread = nodalLineSpread(m, rep.values, c);
  rep.settings = opt;
  rep = withSpace(std::move(rep), space);
  rep.wallTime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Radial oracle

/// Constant-sign level on {a < |x| < b} from 1D solves at n and 2n elements,
/// Richardson-extrapolated for the O(h^2) energy error.
inline SolveReport radialLevel(double a, double b, const NonlinearitySpec& nl, int sign, int n1d,
                               const SolverOptions& opt = {}) {
  if (n1d < 2000) fail(ErrorClass::ConfigError, "the radial oracle needs at least 2000 nodes");
  SolverOptions o = opt;
  o.starts = 0;
  o.jobs = 1;
  const Discretization coarse = radialSpace(a, b, n1d);
  const Discretization fine = radialSpace(a, b, 2 * n1d);
  const SolveReport rc = solveConstantSign(coarse, nl, sign, o);
  SolveReport rf = solveConstantSign(fine, nl, sign, o);
  rf.coarseLevel = rc.level;
  rf.fineLevel = rf.level;
  rf.level = (4.0 * rf.fineLevel - rf.coarseLevel) / 3.0;
  rf.errorEstimate = std::abs(rf.fineLevel - rf.coarseLevel) / 3.0;
  rf.wallTime += rc.wallTime;
  rf.meshSize = (b - a) / (2.0 * n1d);
  return rf;
}

inline SolveReport radialOracle(const DomainSpec& spec, const NonlinearitySpec& nl, int sign, int n1d = 2000,
                                const SolverOptions& opt = {}) {
  spec.validate();
  if (!spec.isRadial()) fail(ErrorClass::UnsupportedDomain, "the radial oracle needs a concentric domain");
  return radialLevel(spec.isAnnulus() ? spec.innerRadius : 0.0, spec.outerRadius, nl, sign, n1d, opt);
}

struct RadialNodalResult {
  double level = 0.0;          ///< min over r of mu_+(outer part) + mu_-(inner part)
  double interfaceRadius = 0.0;
  double levelPlus = 0.0;
  double levelMinus = 0.0;
  double errorEstimate = 0.0;
  int evaluations = 0;
};

/// Radial least-energy nodal level: golden-section search over the radius
/// of the circular nodal line.
inline RadialNodalResult radialNodalLevel(const DomainSpec& spec, const NonlinearitySpec& nl, int n1d = 2000,
                                          const SolverOptions& opt = {}, double rTol = 1e-4) {
  spec.validate();
  if (!spec.isRadial()) fail(ErrorClass::UnsupportedDomain, "the radial nodal level needs a concentric domain");
  const double a = spec.isAnnulus() ? spec.innerRadius : 0.0;
  const double b = spec.outerRadius;
  RadialNodalResult res;
  struct Eval {
    double total, plus, minus, err;
  };
  auto eval = [&](double r) {
    ++res.evaluations;
    const SolveReport op = radialLevel(r, b, nl, 1, n1d, opt);
    const SolveReport im = radialLevel(a, r, nl, -1, n1d, opt);
    return Eval{op.level + im.level, op.level, im.level, op.errorEstimate + im.errorEstimate};
  };
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = a + 0.02 * (b - a), hi = b - 0.02 * (b - a);
  double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
  Eval f1 = eval(x1), f2 = eval(x2);
  while (hi - lo > rTol * b) {
    if (f1.total < f2.total) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = eval(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = eval(x2);
    }
  }
  const bool first = f1.total < f2.total;
  const Eval& best = first ? f1 : f2;
  res.interfaceRadius = first ? x1 : x2;
  res.level = best.total;
  res.levelPlus = best.plus;
  res.levelMinus = best.minus;
  res.errorEstimate = best.err;
  return res;
}

/// limsup_{s -> 0} f(s) / (|s|^{p-2} s) sampled near zero, for comparison
/// with lambda_p of the domain.
inline double smallAmplitudeRatio(const NonlinearitySpec& nl) {
  double r = 0.0;
  for (double s : {1e-6, -1e-6, 1e-5, -1e-5}) r = std::max(r, nl.f(s) / NonlinearitySpec::signedPower(s, nl.p - 1.0));
  return r;
}

}  // namespace nehari
