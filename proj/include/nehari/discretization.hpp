#pragma once

// A conforming first-order discretization reduced to two sparse operators:
//
//   grad   : nodal values -> cellwise constant gradients (dim rows per cell)
//   interp : nodal values -> values at quadrature points
//
// together with cell measures and quadrature weights. The planar P1 space
// and the radial 1D space are both expressed this way, so energies,
// gradients, Nehari projections and the descent solvers are written once.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

#include "nehari/errors.hpp"
#include "nehari/nonlinearity.hpp"

namespace nehari {

using Vector = std::vector<double>;
using SparseRM = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparseCM = Eigen::SparseMatrix<double>;

/// Deterministic pairwise summation: the result depends only on the order
/// of `values`, never on how the terms were produced.
inline double pairwiseSum(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n <= 16) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwiseSum(values.first(half)) + pairwiseSum(values.subspan(half));
}

struct Discretization {
  int nodeCount = 0;
  int dim = 2;
  std::vector<char> pinned;  ///< Dirichlet nodes, values fixed to zero
  SparseRM grad;             ///< (dim * cells) x nodes
  Vector cellMeasure;
  SparseRM interp;  ///< quadratureCount x nodes
  Vector quadWeight;
  std::vector<int> freeIndex;  ///< node -> free dof index or -1
  std::vector<int> freeNodes;
  SparseRM gradFree;  ///< grad restricted to free columns
  std::vector<std::array<double, 2>> coords;  ///< node positions (r, 0) in 1D

  int cellCount() const { return static_cast<int>(cellMeasure.size()); }

  void finalize() {
    freeIndex.assign(nodeCount, -1);
    freeNodes.clear();
    for (int i = 0; i < nodeCount; ++i)
      if (!pinned[i]) {
        freeIndex[i] = static_cast<int>(freeNodes.size());
        freeNodes.push_back(i);
      }
    std::vector<Eigen::Triplet<double>> trip;
    for (int r = 0; r < grad.outerSize(); ++r)
      for (SparseRM::InnerIterator it(grad, r); it; ++it)
        if (freeIndex[it.col()] >= 0) trip.emplace_back(r, freeIndex[it.col()], it.value());
    gradFree.resize(grad.rows(), static_cast<int>(freeNodes.size()));
    gradFree.setFromTriplets(trip.begin(), trip.end());
  }
};

inline Eigen::Map<const Eigen::VectorXd> asEigen(const Vector& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

inline Vector toVector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

/// Cellwise gradients, dim consecutive entries per cell.
inline Vector cellGradients(const Discretization& d, const Vector& u) {
  return toVector(d.grad * asEigen(u));
}

inline double cellGradNorm2(const Discretization& d, const Vector& g, int c) {
  double s = 0.0;
  for (int k = 0; k < d.dim; ++k) s += g[d.dim * c + k] * g[d.dim * c + k];
  return s;
}

inline Vector quadValues(const Discretization& d, const Vector& u) {
  return toVector(d.interp * asEigen(u));
}

/// int |grad u|^p
inline double gradientTerm(const Discretization& d, const Vector& u, double p) {
  const Vector g = cellGradients(d, u);
  Vector terms(d.cellCount());
  for (int c = 0; c < d.cellCount(); ++c) terms[c] = d.cellMeasure[c] * std::pow(cellGradNorm2(d, g, c), 0.5 * p);
  return pairwiseSum(terms);
}

/// Quadrature of phi(u) against the weights.
template <class Fn>
double integrateSamples(std::span<const double> values, std::span<const double> weights, Fn&& phi) {
  Vector terms(values.size());
  for (std::size_t q = 0; q < values.size(); ++q) terms[q] = weights[q] * phi(values[q]);
  return pairwiseSum(terms);
}

/// Flux weight |g|^{p-2}, regularized by eps only when p < 2.
inline double fluxWeight(double gnorm2, double p, double eps2) {
  if (p == 2.0) return 1.0;
  if (p < 2.0) return std::pow(gnorm2 + eps2, 0.5 * (p - 2.0));
  return std::pow(gnorm2, 0.5 * (p - 2.0));
}

inline double regularization2(const Discretization& d, const Vector& g, double p) {
  if (p >= 2.0) return 0.0;
  double gmax2 = 0.0;
  for (int c = 0; c < d.cellCount(); ++c) gmax2 = std::max(gmax2, cellGradNorm2(d, g, c));
  const double eps = 1e-10 * std::sqrt(gmax2);
  return eps > 0.0 ? eps * eps : 1e-300;
}

/// Covector of d/du (1/p) int |grad u|^p, pinned entries zero.
inline Vector gradientTermCovector(const Discretization& d, const Vector& u, double p) {
  const Vector g = cellGradients(d, u);
  const double eps2 = regularization2(d, g, p);
  Eigen::VectorXd flux(g.size());
  for (int c = 0; c < d.cellCount(); ++c) {
    const double w = d.cellMeasure[c] * fluxWeight(cellGradNorm2(d, g, c), p, eps2);
    for (int k = 0; k < d.dim; ++k) flux[d.dim * c + k] = w * g[d.dim * c + k];
  }
  Vector out = toVector(d.grad.transpose() * flux);
  for (int i = 0; i < d.nodeCount; ++i)
    if (d.pinned[i]) out[i] = 0.0;
  return out;
}

/// Covector int phi(u) hat_i, from samples phi at the quadrature points.
inline Vector loadCovector(const Discretization& d, const Vector& phiAtQuad) {
  Eigen::VectorXd w(phiAtQuad.size());
  for (std::size_t q = 0; q < phiAtQuad.size(); ++q) w[q] = d.quadWeight[q] * phiAtQuad[q];
  Vector out = toVector(d.interp.transpose() * w);
  for (int i = 0; i < d.nodeCount; ++i)
    if (d.pinned[i]) out[i] = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Energies

struct EnergyBreakdown {
  double gradTerm = 0.0;   ///< int |grad u|^p
  double potTerm = 0.0;    ///< int F(u)
  double reactTerm = 0.0;  ///< int u f(u)
  double energy = 0.0;     ///< gradTerm / p - potTerm
  double nehariResidual = 0.0;  ///< gradTerm - reactTerm

  static EnergyBreakdown fromTerms(double grad, double pot, double react, double p) {
    return {grad, pot, react, grad / p - pot, grad - react};
  }
};

inline void requireFinite(double v, const char* what) {
  if (!std::isfinite(v)) fail(ErrorClass::NonFiniteValue, std::string("non-finite ") + what);
}

inline EnergyBreakdown assembleBreakdown(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  const double A = gradientTerm(d, u, nl.p);
  const Vector v = quadValues(d, u);
  const double pot = integrateSamples(v, d.quadWeight, [&](double s) { return nl.F(s); });
  const double react = integrateSamples(v, d.quadWeight, [&](double s) { return nl.sf(s); });
  requireFinite(A, "gradient term");
  requireFinite(pot, "potential term");
  requireFinite(react, "reaction term");
  return EnergyBreakdown::fromTerms(A, pot, react, nl.p);
}

inline double energy(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  return assembleBreakdown(d, u, nl).energy;
}

/// Discrete Frechet derivative E'[u], pinned entries zero.
inline Vector energyGradient(const Discretization& d, const Vector& u, const NonlinearitySpec& nl) {
  Vector out = gradientTermCovector(d, u, nl.p);
  Vector fq = quadValues(d, u);
  for (double& s : fq) s = nl.f(s);
  const Vector load = loadCovector(d, fq);
  for (int i = 0; i < d.nodeCount; ++i) {
    out[i] -= load[i];
    requireFinite(out[i], "gradient entry");
  }
  return out;
}

/// int |u|^q
inline double lebesgueTerm(const Discretization& d, const Vector& u, double q) {
  const Vector v = quadValues(d, u);
  return integrateSamples(v, d.quadWeight, [&](double s) { return std::pow(std::abs(s), q); });
}

// ---------------------------------------------------------------------------
// Metric: weighted stiffness G^T diag(m_c w_c) G on the free dofs, used as
// a variable-metric preconditioner by the descent solvers.

class MetricSolver {
 public:
  explicit MetricSolver(const Discretization& d) : d_(&d) {}

  /// Rebuilds the metric with weights (|grad u|^2 + delta^2)^{(p-2)/2},
  /// delta a fraction of the largest cell gradient. p = 2 gives the plain
  /// stiffness matrix, factorized once.
  void update(const Vector& u, double p) {
    if (p == 2.0 && factorized_) return;
    Eigen::VectorXd w(d_->grad.rows());
    const Vector g = cellGradients(*d_, u);
    double gmax2 = 0.0;
    for (int c = 0; c < d_->cellCount(); ++c) gmax2 = std::max(gmax2, cellGradNorm2(*d_, g, c));
    const double delta2 = gmax2 > 0.0 ? 1e-2 * gmax2 : 1.0;
    for (int c = 0; c < d_->cellCount(); ++c) {
      const double wc = d_->cellMeasure[c] *
                        (p == 2.0 ? 1.0 : std::pow(cellGradNorm2(*d_, g, c) + delta2, 0.5 * (p - 2.0)));
      for (int k = 0; k < d_->dim; ++k) w[d_->dim * c + k] = wc;
    }
    SparseCM K = SparseCM(d_->gradFree.transpose()) * w.asDiagonal() * d_->gradFree;
    K.makeCompressed();
    if (!analyzed_) {
      llt_.analyzePattern(K);
      analyzed_ = true;
    }
    llt_.factorize(K);
    if (llt_.info() != Eigen::Success) fail(ErrorClass::NoConvergence, "metric factorization failed");
    K_ = std::move(K);
    factorized_ = true;
  }

  /// P^{-1} g on free dofs, zero on pinned nodes.
  Vector solve(const Vector& g) const {
    Eigen::VectorXd rhs(d_->freeNodes.size());
    for (std::size_t k = 0; k < d_->freeNodes.size(); ++k) rhs[k] = g[d_->freeNodes[k]];
    const Eigen::VectorXd x = llt_.solve(rhs);
    Vector out(d_->nodeCount, 0.0);
    for (std::size_t k = 0; k < d_->freeNodes.size(); ++k) out[d_->freeNodes[k]] = x[k];
    return out;
  }

  /// s^T P s
  double quadratic(const Vector& s) const {
    Eigen::VectorXd x(d_->freeNodes.size());
    for (std::size_t k = 0; k < d_->freeNodes.size(); ++k) x[k] = s[d_->freeNodes[k]];
    return x.dot(K_ * x);
  }

 private:
  const Discretization* d_;
  SparseCM K_;
  Eigen::SimplicialLDLT<SparseCM> llt_;
  bool analyzed_ = false;
  bool factorized_ = false;
};

inline double dotProduct(const Vector& a, const Vector& b) {
  Vector t(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) t[i] = a[i] * b[i];
  return pairwiseSum(t);
}

}  // namespace nehari
