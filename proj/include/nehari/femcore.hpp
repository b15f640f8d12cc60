#pragma once

// Piecewise-linear fields on triangle meshes.

#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nehari/discretization.hpp"
#include "nehari/geometry.hpp"
#include "nehari/nonlinearity.hpp"

namespace nehari {

/// Symmetric 7-point rule on the reference triangle, exact for degree 5.
/// Barycentric coordinates and weights relative to the triangle area.
struct TriangleRule {
  static constexpr int size = 7;
  static constexpr std::array<std::array<double, 3>, 7> points = {{
      {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0},
      {0.05971587178976982, 0.47014206410511511, 0.47014206410511511},
      {0.47014206410511511, 0.05971587178976982, 0.47014206410511511},
      {0.47014206410511511, 0.47014206410511511, 0.05971587178976982},
      {0.79742698535308731, 0.10128650732345634, 0.10128650732345634},
      {0.10128650732345634, 0.79742698535308731, 0.10128650732345634},
      {0.10128650732345634, 0.10128650732345634, 0.79742698535308731},
  }};
  static constexpr std::array<double, 7> weights = {
      0.225,
      0.13239415278850619, 0.13239415278850619, 0.13239415278850619,
      0.12593918054482714, 0.12593918054482714, 0.12593918054482714,
  };
};

/// Mesh plus its P1 discretization.
class FemSpace {
 public:
  explicit FemSpace(std::shared_ptr<const Mesh> mesh) : mesh_(std::move(mesh)) { build(); }
  explicit FemSpace(Mesh mesh) : FemSpace(std::make_shared<const Mesh>(std::move(mesh))) {}

  const Mesh& mesh() const { return *mesh_; }
  std::shared_ptr<const Mesh> meshPtr() const { return mesh_; }
  const Discretization& disc() const { return disc_; }
  int nodeCount() const { return disc_.nodeCount; }

  /// Physical coordinates of quadrature point q.
  Vec2 quadPoint(int q) const { return quadPoints_[q]; }
  /// Gradient of hat function k (local index) on triangle t.
  Vec2 hatGradient(int t, int k) const { return hatGrad_[3 * t + k]; }

 private:
  void build() {
    const Mesh& m = *mesh_;
    const int nt = static_cast<int>(m.triangleCount());
    disc_.nodeCount = static_cast<int>(m.nodeCount());
    disc_.dim = 2;
    disc_.pinned = m.boundaryMask();
    disc_.cellMeasure.resize(nt);
    hatGrad_.resize(3 * nt);
    std::vector<Eigen::Triplet<double>> gt, it;
    gt.reserve(6 * nt);
    it.reserve(3 * TriangleRule::size * nt);
    disc_.quadWeight.reserve(TriangleRule::size * nt);
    quadPoints_.reserve(TriangleRule::size * nt);
    for (int t = 0; t < nt; ++t) {
      const auto& tri = m.triangles[t];
      const Vec2 x[3] = {m.nodes[tri[0]], m.nodes[tri[1]], m.nodes[tri[2]]};
      const double area = m.signedArea(t);
      if (!(area > 0.0)) fail(ErrorClass::MeshQualityFailure, "non-positive triangle area");
      disc_.cellMeasure[t] = area;
      for (int k = 0; k < 3; ++k) {
        const Vec2 a = x[(k + 1) % 3], b = x[(k + 2) % 3];
        const Vec2 g{(a.y - b.y) / (2.0 * area), (b.x - a.x) / (2.0 * area)};
        hatGrad_[3 * t + k] = g;
        gt.emplace_back(2 * t, tri[k], g.x);
        gt.emplace_back(2 * t + 1, tri[k], g.y);
      }
      for (int q = 0; q < TriangleRule::size; ++q) {
        const int row = static_cast<int>(disc_.quadWeight.size());
        const auto& bc = TriangleRule::points[q];
        for (int k = 0; k < 3; ++k) it.emplace_back(row, tri[k], bc[k]);
        disc_.quadWeight.push_back(area * TriangleRule::weights[q]);
        quadPoints_.push_back(bc[0] * x[0] + bc[1] * x[1] + bc[2] * x[2]);
      }
    }
    disc_.coords.resize(disc_.nodeCount);
    for (int i = 0; i < disc_.nodeCount; ++i) disc_.coords[i] = {m.nodes[i].x, m.nodes[i].y};
    disc_.grad.resize(2 * nt, disc_.nodeCount);
    disc_.grad.setFromTriplets(gt.begin(), gt.end());
    disc_.interp.resize(static_cast<int>(disc_.quadWeight.size()), disc_.nodeCount);
    disc_.interp.setFromTriplets(it.begin(), it.end());
    disc_.finalize();
  }

  std::shared_ptr<const Mesh> mesh_;
  Discretization disc_;
  std::vector<Vec2> hatGrad_;
  std::vector<Vec2> quadPoints_;
};

using FemSpacePtr = std::shared_ptr<const FemSpace>;

inline FemSpacePtr makeSpace(Mesh mesh) { return std::make_shared<const FemSpace>(std::move(mesh)); }

/// Nodal coefficients of a P1 function vanishing on the boundary.
class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(FemSpacePtr space) : space_(std::move(space)), values_(space_->nodeCount(), 0.0) {}
  ScalarField(FemSpacePtr space, Vector values) : space_(std::move(space)), values_(std::move(values)) {
    if (static_cast<int>(values_.size()) != space_->nodeCount())
      fail(ErrorClass::DomainError, "field length does not match the node count");
    applyMask();
  }

  template <class Fn>
  static ScalarField interpolate(FemSpacePtr space, Fn&& fn) {
    Vector v(space->nodeCount());
    for (int i = 0; i < space->nodeCount(); ++i) v[i] = fn(space->mesh().nodes[i]);
    return ScalarField(std::move(space), std::move(v));
  }

  const FemSpace& space() const { return *space_; }
  const FemSpacePtr& spacePtr() const { return space_; }
  const Mesh& mesh() const { return space_->mesh(); }
  const Discretization& disc() const { return space_->disc(); }
  const Vector& values() const { return values_; }
  double operator[](int i) const { return values_[i]; }
  const std::vector<char>& dirichletMask() const { return space_->disc().pinned; }

  ScalarField scaled(double c) const {
    Vector v = values_;
    for (double& x : v) x *= c;
    return ScalarField(space_, std::move(v));
  }

 private:
  void applyMask() {
    const auto& mask = space_->disc().pinned;
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (mask[i]) values_[i] = 0.0;
  }

  FemSpacePtr space_;
  Vector values_;
};

inline EnergyBreakdown assembleBreakdown(const ScalarField& u, const NonlinearitySpec& nl) {
  return assembleBreakdown(u.disc(), u.values(), nl);
}

inline Vector energyGradient(const ScalarField& u, const NonlinearitySpec& nl) {
  return energyGradient(u.disc(), u.values(), nl);
}

/// Gradient of u on triangle t.
inline Vec2 triangleGradient(const ScalarField& u, int t) {
  const auto& tri = u.mesh().triangles[t];
  Vec2 g{};
  for (int k = 0; k < 3; ++k) g = g + u[tri[k]] * u.space().hatGradient(t, k);
  return g;
}

// ---------------------------------------------------------------------------
// Boundary quantities

/// Normal derivative per boundary edge (indexed like mesh.boundaryEdges;
/// NaN on edges with a different tag), from the owning triangle's gradient.
inline Vector boundaryFlux(const ScalarField& u, BoundaryTag tag) {
  const Mesh& m = u.mesh();
  if (!m.hasTag(tag)) fail(ErrorClass::MissingBoundary, std::string("no ") + std::string(toString(tag)) + " edges");
  const auto normals = boundaryNormals(m);
  Vector flux(m.boundaryEdges.size(), std::nan(""));
  for (std::size_t e = 0; e < m.boundaryEdges.size(); ++e) {
    if (m.boundaryEdges[e].tag != tag) continue;
    flux[e] = dot(triangleGradient(u, m.boundaryEdges[e].triangle), normals[e]);
  }
  return flux;
}

inline double edgeLength(const Mesh& m, const BoundaryEdge& e) {
  return norm(m.nodes[e.nodes[1]] - m.nodes[e.nodes[0]]);
}

/// Midpoint-rule sum of |flux|^p weight |e| over edges tagged `tag`.
inline double boundaryIntegral(const Mesh& m, double p, const Vector& flux, const Vector& weight, BoundaryTag tag) {
  if (!m.hasTag(tag)) fail(ErrorClass::MissingBoundary, std::string("no ") + std::string(toString(tag)) + " edges");
  Vector terms;
  for (std::size_t e = 0; e < m.boundaryEdges.size(); ++e) {
    if (m.boundaryEdges[e].tag != tag) continue;
    terms.push_back(std::pow(std::abs(flux[e]), p) * weight[e] * edgeLength(m, m.boundaryEdges[e]));
  }
  return pairwiseSum(terms);
}

/// <R, n> at edge midpoints.
inline Vector normalVelocity(const Mesh& m, const PerturbationField& field) {
  const auto normals = boundaryNormals(m);
  Vector w(m.boundaryEdges.size());
  for (std::size_t e = 0; e < m.boundaryEdges.size(); ++e) {
    const auto& be = m.boundaryEdges[e];
    const Vec2 mid = 0.5 * (m.nodes[be.nodes[0]] + m.nodes[be.nodes[1]]);
    w[e] = dot(field.value(mid), normals[e]);
  }
  return w;
}

/// Per-edge normal component n_i (i = 0 for x1, 1 for x2).
inline Vector normalComponent(const Mesh& m, int i) {
  const auto normals = boundaryNormals(m);
  Vector w(normals.size());
  for (std::size_t e = 0; e < normals.size(); ++e) w[e] = i == 0 ? normals[e].x : normals[e].y;
  return w;
}

/// Boundary normal-derivative recovery.
///
/// AdjacentTriangle projects the owning triangle's gradient (first order).
/// Variational solves M_b sigma = r on the boundary nodes, where r is the
/// unmasked residual of the weak form at the pinned nodes and M_b the P1
/// mass matrix of the boundary curve; sigma = |du/dn|^{p-2} du/dn.
enum class FluxRecovery { AdjacentTriangle, Variational };

constexpr std::string_view toString(FluxRecovery r) {
  return r == FluxRecovery::AdjacentTriangle ? "adjacent-triangle" : "variational";
}

/// Right-hand side g(u) of the Euler-Lagrange equation -Delta_p u = g(u).
using SourceTerm = std::function<double(double)>;

/// Nodal boundary values of sigma (NaN at interior nodes).
inline Vector variationalNodalFlux(const ScalarField& u, double p, const SourceTerm& source) {
  const Discretization& d = u.disc();
  const Mesh& m = u.mesh();
  const Vector g = cellGradients(d, u.values());
  const double eps2 = regularization2(d, g, p);
  Eigen::VectorXd flux(g.size());
  for (int c = 0; c < d.cellCount(); ++c) {
    const double w = d.cellMeasure[c] * fluxWeight(cellGradNorm2(d, g, c), p, eps2);
    for (int k = 0; k < d.dim; ++k) flux[d.dim * c + k] = w * g[d.dim * c + k];
  }
  Eigen::VectorXd residual = d.grad.transpose() * flux;
  Vector v = quadValues(d, u.values());
  Eigen::VectorXd load(v.size());
  for (std::size_t q = 0; q < v.size(); ++q) load[q] = d.quadWeight[q] * source(v[q]);
  residual -= d.interp.transpose() * load;

  std::vector<int> local(m.nodeCount(), -1);
  std::vector<int> nodes;
  for (const auto& e : m.boundaryEdges)
    for (int i : e.nodes)
      if (local[i] < 0) {
        local[i] = static_cast<int>(nodes.size());
        nodes.push_back(i);
      }
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& e : m.boundaryEdges) {
    const double L = edgeLength(m, e);
    const int a = local[e.nodes[0]], b = local[e.nodes[1]];
    trip.emplace_back(a, a, L / 3.0);
    trip.emplace_back(b, b, L / 3.0);
    trip.emplace_back(a, b, L / 6.0);
    trip.emplace_back(b, a, L / 6.0);
  }
  SparseCM M(static_cast<int>(nodes.size()), static_cast<int>(nodes.size()));
  M.setFromTriplets(trip.begin(), trip.end());
  Eigen::VectorXd rhs(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) rhs[k] = residual[nodes[k]];
  Eigen::SimplicialLDLT<SparseCM> solver(M);
  const Eigen::VectorXd sigma = solver.solve(rhs);
  Vector out(m.nodeCount(), std::nan(""));
  for (std::size_t k = 0; k < nodes.size(); ++k) out[nodes[k]] = sigma[k];
  return out;
}

/// Per-edge normal derivative for every boundary edge. Variational values
/// are chosen so that |flux|^p |e| equals the two-point Gauss integral of
/// |sigma|^{p/(p-1)} along the edge.
inline Vector edgeFlux(const ScalarField& u, double p, FluxRecovery recovery, const SourceTerm& source) {
  const Mesh& m = u.mesh();
  Vector out(m.boundaryEdges.size());
  if (recovery == FluxRecovery::AdjacentTriangle) {
    const auto normals = boundaryNormals(m);
    for (std::size_t e = 0; e < m.boundaryEdges.size(); ++e)
      out[e] = dot(triangleGradient(u, m.boundaryEdges[e].triangle), normals[e]);
    return out;
  }
  const Vector sigma = variationalNodalFlux(u, p, source);
  const double conj = p / (p - 1.0);
  const double xi = 0.5 / std::sqrt(3.0);
  for (std::size_t e = 0; e < m.boundaryEdges.size(); ++e) {
    const double a = sigma[m.boundaryEdges[e].nodes[0]], b = sigma[m.boundaryEdges[e].nodes[1]];
    const double s1 = (0.5 + xi) * a + (0.5 - xi) * b;
    const double s2 = (0.5 - xi) * a + (0.5 + xi) * b;
    const double mean = 0.5 * (std::pow(std::abs(s1), conj) + std::pow(std::abs(s2), conj));
    out[e] = std::copysign(std::pow(mean, 1.0 / p), a + b);
  }
  return out;
}

inline Vector edgeFlux(const ScalarField& u, const NonlinearitySpec& nl, FluxRecovery recovery) {
  return edgeFlux(u, nl.p, recovery, [&nl](double s) { return nl.f(s); });
}

/// Sum of |flux|^p weight |e| over every boundary edge.
inline double boundaryIntegralAll(const Mesh& m, double p, const Vector& flux, const Vector& weight) {
  Vector terms(m.boundaryEdges.size());
  for (std::size_t e = 0; e < m.boundaryEdges.size(); ++e)
    terms[e] = std::pow(std::abs(flux[e]), p) * weight[e] * edgeLength(m, m.boundaryEdges[e]);
  return pairwiseSum(terms);
}

// ---------------------------------------------------------------------------
// Pohozaev identity

struct PohozaevTerms {
  double gradDiv = 0.0;      ///< (1/p) int |grad u|^p div R
  double jacobianTerm = 0.0; ///< int |grad u|^{p-2} grad u^T R' grad u
  double potDiv = 0.0;       ///< int F(u) div R
  double boundary = 0.0;     ///< -(p-1)/p oint |du/dn|^p <R, n>
  double residual = 0.0;     ///< volume side minus boundary side

  double scale() const {
    return std::max({std::abs(gradDiv), std::abs(jacobianTerm), std::abs(potDiv), std::abs(boundary)});
  }
};

inline PohozaevTerms pohozaevTerms(const ScalarField& u, const NonlinearitySpec& nl, const PerturbationField& field,
                                   FluxRecovery recovery = FluxRecovery::Variational) {
  const FemSpace& V = u.space();
  const Mesh& m = u.mesh();
  const double p = nl.p;
  const int nt = static_cast<int>(m.triangleCount());
  Vector gd(nt), jt(nt);
  for (int t = 0; t < nt; ++t) {
    const Vec2 g = triangleGradient(u, t);
    const double g2 = dot(g, g);
    double divInt = 0.0;
    Mat2 Jint{};
    for (int q = 0; q < TriangleRule::size; ++q) {
      const double w = V.disc().quadWeight[TriangleRule::size * t + q];
      const Vec2 x = V.quadPoint(TriangleRule::size * t + q);
      const Mat2 J = field.jacobian(x);
      divInt += w * (J[0][0] + J[1][1]);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) Jint[a][b] += w * J[a][b];
    }
    const double gp2 = g2 > 0.0 ? std::pow(g2, 0.5 * (p - 2.0)) : 0.0;
    gd[t] = std::pow(g2, 0.5 * p) * divInt / p;
    const double quad = g.x * (Jint[0][0] * g.x + Jint[0][1] * g.y) + g.y * (Jint[1][0] * g.x + Jint[1][1] * g.y);
    jt[t] = gp2 * quad;
  }
  const Vector v = quadValues(V.disc(), u.values());
  Vector pt(v.size());
  for (std::size_t q = 0; q < v.size(); ++q)
    pt[q] = V.disc().quadWeight[q] * nl.F(v[q]) * field.divergence(V.quadPoint(static_cast<int>(q)));

  PohozaevTerms r;
  r.gradDiv = pairwiseSum(gd);
  r.jacobianTerm = pairwiseSum(jt);
  r.potDiv = pairwiseSum(pt);
  r.boundary = -(p - 1.0) / p * boundaryIntegralAll(m, p, edgeFlux(u, nl, recovery), normalVelocity(m, field));
  r.residual = (r.gradDiv - r.jacobianTerm - r.potDiv) - r.boundary;
  return r;
}

inline double pohozaevResidual(const ScalarField& u, const NonlinearitySpec& nl, const PerturbationField& field,
                               FluxRecovery recovery = FluxRecovery::Variational) {
  return pohozaevTerms(u, nl, field, recovery).residual;
}

// ---------------------------------------------------------------------------
// Point evaluation with zero extension

/// Bucket grid over triangle bounding boxes.
class PointLocator {
 public:
  explicit PointLocator(const Mesh& m) : m_(&m) {
    lo_ = hi_ = m.nodes.front();
    for (const Vec2& x : m.nodes) {
      lo_ = {std::min(lo_.x, x.x), std::min(lo_.y, x.y)};
      hi_ = {std::max(hi_.x, x.x), std::max(hi_.y, x.y)};
    }
    n_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(m.triangleCount()) / 2.0)));
    cell_ = {(hi_.x - lo_.x) / n_ * (1 + 1e-12), (hi_.y - lo_.y) / n_ * (1 + 1e-12)};
    buckets_.assign(static_cast<std::size_t>(n_) * n_, {});
    for (int t = 0; t < static_cast<int>(m.triangleCount()); ++t) {
      Vec2 a = m.nodes[m.triangles[t][0]], b = a;
      for (int v : m.triangles[t]) {
        a = {std::min(a.x, m.nodes[v].x), std::min(a.y, m.nodes[v].y)};
        b = {std::max(b.x, m.nodes[v].x), std::max(b.y, m.nodes[v].y)};
      }
      const auto [i0, j0] = bucketOf(a);
      const auto [i1, j1] = bucketOf(b);
      for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j) buckets_[static_cast<std::size_t>(i) * n_ + j].push_back(t);
    }
  }

  /// Triangle containing x and its barycentric coordinates, or t = -1.
  std::pair<int, std::array<double, 3>> locate(Vec2 x) const {
    if (x.x < lo_.x || x.y < lo_.y || x.x > hi_.x || x.y > hi_.y) return {-1, {}};
    const auto [i, j] = bucketOf(x);
    const double tol = 1e-12;
    for (int t : buckets_[static_cast<std::size_t>(i) * n_ + j]) {
      const auto& tri = m_->triangles[t];
      const Vec2 a = m_->nodes[tri[0]], b = m_->nodes[tri[1]], c = m_->nodes[tri[2]];
      const double det = cross(b - a, c - a);
      const double l1 = cross(x - a, c - a) / det;
      const double l2 = cross(b - a, x - a) / det;
      const double l0 = 1.0 - l1 - l2;
      if (l0 >= -tol && l1 >= -tol && l2 >= -tol) return {t, {l0, l1, l2}};
    }
    return {-1, {}};
  }

  /// u(x), zero off the mesh.
  double evaluate(const Vector& values, Vec2 x) const {
    const auto [t, bc] = locate(x);
    if (t < 0) return 0.0;
    const auto& tri = m_->triangles[t];
    return bc[0] * values[tri[0]] + bc[1] * values[tri[1]] + bc[2] * values[tri[2]];
  }

 private:
  std::pair<int, int> bucketOf(Vec2 x) const {
    const int i = std::clamp(static_cast<int>((x.x - lo_.x) / cell_.x), 0, n_ - 1);
    const int j = std::clamp(static_cast<int>((x.y - lo_.y) / cell_.y), 0, n_ - 1);
    return {i, j};
  }

  const Mesh* m_;
  Vec2 lo_{}, hi_{}, cell_{};
  int n_ = 1;
  std::vector<std::vector<int>> buckets_;
};

// ---------------------------------------------------------------------------
// Text IO: one value per line, node order.

inline void writeField(std::ostream& os, const ScalarField& u) {
  os << std::setprecision(17);
  for (double v : u.values()) os << v << '\n';
}

inline ScalarField readField(std::istream& is, FemSpacePtr space) {
  Vector v(space->nodeCount());
  for (double& x : v)
    if (!(is >> x)) fail(ErrorClass::ConfigError, "field file shorter than the node count");
  return ScalarField(std::move(space), std::move(v));
}

}  // namespace nehari
