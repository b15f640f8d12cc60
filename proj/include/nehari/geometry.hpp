#pragma once

// Domains (disks and eccentric annuli), boundary-conforming triangulations
// and the mesh deformations x -> x + t R(x).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nehari/errors.hpp"

namespace nehari {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 normalized(Vec2 a) { return (1.0 / norm(a)) * a; }

/// Row-major 2x2 matrix; J[i][j] = dR_i / dx_j.
using Mat2 = std::array<std::array<double, 2>, 2>;

// ---------------------------------------------------------------------------
// DomainSpec

enum class DomainKind { Ball, Annulus };

/// B_{R1}(center) for a ball, B_{R1}(center) minus the closed disk of radius
/// R0 around center + s e1 for an annulus.
struct DomainSpec {
  DomainKind kind = DomainKind::Ball;
  double outerRadius = 1.0;
  double innerRadius = 0.0;
  double displacement = 0.0;
  Vec2 center{};

  static DomainSpec ball(double radius, Vec2 c = {}) {
    return {DomainKind::Ball, radius, 0.0, 0.0, c};
  }
  static DomainSpec annulus(double outer, double inner, double s, Vec2 c = {}) {
    return {DomainKind::Annulus, outer, inner, s, c};
  }

  bool isAnnulus() const { return kind == DomainKind::Annulus; }
  bool isRadial() const { return displacement == 0.0; }
  Vec2 innerCenter() const { return center + Vec2{displacement, 0.0}; }
  double area() const {
    return std::numbers::pi * (outerRadius * outerRadius - innerRadius * innerRadius);
  }

  void validate() const {
    if (!(outerRadius > 0.0) || !std::isfinite(outerRadius))
      fail(ErrorClass::InfeasibleGeometry, "outer radius must be positive");
    if (kind == DomainKind::Ball) {
      if (innerRadius != 0.0 || displacement != 0.0)
        fail(ErrorClass::InfeasibleGeometry, "a ball requires R0 = 0 and s = 0");
      return;
    }
    if (!(innerRadius > 0.0 && innerRadius < outerRadius))
      fail(ErrorClass::InfeasibleGeometry, "annulus requires 0 < R0 < R1");
    if (!(displacement >= 0.0 && displacement < outerRadius - innerRadius))
      fail(ErrorClass::InfeasibleGeometry,
           "annulus requires 0 <= s < R1 - R0 (got s = " + std::to_string(displacement) + ")");
  }

  bool contains(Vec2 x) const {
    if (norm(x - center) >= outerRadius) return false;
    return kind == DomainKind::Ball || norm(x - innerCenter()) > innerRadius;
  }
};

// ---------------------------------------------------------------------------
// Mesh

enum class BoundaryTag { Outer, Inner };

constexpr std::string_view toString(BoundaryTag t) {
  return t == BoundaryTag::Outer ? "OUTER" : "INNER";
}

struct BoundaryEdge {
  std::array<int, 2> nodes{};
  BoundaryTag tag = BoundaryTag::Outer;
  int triangle = -1;  ///< the unique triangle owning the edge
};

struct Mesh {
  std::vector<Vec2> nodes;
  std::vector<std::array<int, 3>> triangles;
  std::vector<BoundaryEdge> boundaryEdges;
  /// Node permutation for the reflection x2 -> -x2 (about the axis through
  /// the outer center).
  std::optional<std::vector<int>> symmetryPairs;
  double resolution = 0.0;
  /// The domain this mesh discretizes. Dropped by morphs that do not map
  /// the domain family onto itself.
  std::optional<DomainSpec> domain;

  std::size_t nodeCount() const { return nodes.size(); }
  std::size_t triangleCount() const { return triangles.size(); }

  double signedArea(std::size_t t) const {
    const auto& tri = triangles[t];
    return 0.5 * cross(nodes[tri[1]] - nodes[tri[0]], nodes[tri[2]] - nodes[tri[0]]);
  }

  std::vector<char> boundaryMask() const {
    std::vector<char> mask(nodes.size(), 0);
    for (const auto& e : boundaryEdges) mask[e.nodes[0]] = mask[e.nodes[1]] = 1;
    return mask;
  }

  bool hasTag(BoundaryTag tag) const {
    return std::any_of(boundaryEdges.begin(), boundaryEdges.end(),
                       [&](const BoundaryEdge& e) { return e.tag == tag; });
  }

  double minAngleDegrees() const {
    double best = 180.0;
    for (const auto& tri : triangles) {
      for (int k = 0; k < 3; ++k) {
        const Vec2 a = nodes[tri[(k + 1) % 3]] - nodes[tri[k]];
        const Vec2 b = nodes[tri[(k + 2) % 3]] - nodes[tri[k]];
        const double ang = std::atan2(std::abs(cross(a, b)), dot(a, b));
        best = std::min(best, ang * 180.0 / std::numbers::pi);
      }
    }
    return best;
  }

  double maxEdgeLength() const {
    double h = 0.0;
    for (const auto& tri : triangles)
      for (int k = 0; k < 3; ++k) h = std::max(h, norm(nodes[tri[k]] - nodes[tri[(k + 1) % 3]]));
    return h;
  }
};

/// Number of closed loops formed by the boundary edges carrying `tag`.
inline int countBoundaryLoops(const Mesh& mesh, BoundaryTag tag) {
  std::map<int, std::vector<int>> adj;
  for (const auto& e : mesh.boundaryEdges) {
    if (e.tag != tag) continue;
    adj[e.nodes[0]].push_back(e.nodes[1]);
    adj[e.nodes[1]].push_back(e.nodes[0]);
  }
  std::map<int, bool> seen;
  int loops = 0;
  for (const auto& [start, nbrs] : adj) {
    if (seen[start]) continue;
    if (nbrs.size() != 2) return -1;
    ++loops;
    std::vector<int> stack{start};
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      if (seen[v]) continue;
      seen[v] = true;
      for (int w : adj[v])
        if (!seen[w]) stack.push_back(w);
    }
  }
  return loops;
}

namespace detail {

/// One ring of nodes: node `first + j` sits at polar angle 2*pi*j/count of
/// the parameter plane. count == 1 denotes the center of a disk.
struct Ring {
  int first = 0;
  int count = 0;
};

inline double ringAngle(const Ring& r, int j) {
  return 2.0 * std::numbers::pi * j / r.count;
}

/// Triangulates the strip between two rings over the upper half-plane of
/// the parameter angle, then mirrors it. Both rings have even counts so
/// that angles 0 and pi are nodes.
inline void stitchRings(const Ring& a, const Ring& b, std::vector<std::array<int, 3>>& tris) {
  std::vector<std::array<int, 3>> upper;
  if (a.count == 1) {
    for (int j = 0; j < b.count / 2; ++j) upper.push_back({a.first, b.first + j, b.first + j + 1});
  } else {
    const int ma = a.count / 2;
    const int mb = b.count / 2;
    int i = 0;
    int j = 0;
    while (i < ma || j < mb) {
      bool advanceA;
      if (i == ma) {
        advanceA = false;
      } else if (j == mb) {
        advanceA = true;
      } else {
        const double midA = 0.5 * (ringAngle(a, i) + ringAngle(a, i + 1));
        const double midB = 0.5 * (ringAngle(b, j) + ringAngle(b, j + 1));
        advanceA = midA < midB;
      }
      if (advanceA) {
        upper.push_back({a.first + i, a.first + i + 1, b.first + j});
        ++i;
      } else {
        upper.push_back({a.first + i, b.first + j + 1, b.first + j});
        ++j;
      }
    }
  }
  auto mirror = [&](int node) {
    const Ring& r = (node >= a.first && node < a.first + a.count) ? a : b;
    return r.first + (r.count - (node - r.first)) % r.count;
  };
  for (const auto& t : upper) {
    tris.push_back(t);
    tris.push_back({mirror(t[0]), mirror(t[2]), mirror(t[1])});
  }
}

inline double smoothstep5(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

inline double smoothstep5Derivative(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  return 30.0 * t * t * (t - 1.0) * (t - 1.0);
}

/// Moebius parameter a in (-1, 1) with w = (z - a) / (1 - a z) mapping the
/// unit disk minus the disk |z - c| <= r onto a concentric annulus
/// rho0 < |w| < 1. Returns {a, rho0}.
inline std::pair<double, double> moebiusParameters(double c, double r) {
  if (c == 0.0) return {0.0, r};
  const double b = 1.0 + c * c - r * r;
  const double a = (b - std::sqrt(b * b - 4.0 * c * c)) / (2.0 * c);
  const double rho0 = (c + r - a) / (1.0 - a * (c + r));
  return {a, rho0};
}

inline void finalizeMesh(Mesh& mesh, const std::vector<Ring>& rings, const std::vector<BoundaryTag>& ringTags,
                         const std::vector<int>& taggedRings) {
  // boundary edges along tagged rings, owning triangle from an edge map
  std::map<std::pair<int, int>, int> owner;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int k = 0; k < 3; ++k) {
      int u = tri[k], v = tri[(k + 1) % 3];
      if (u > v) std::swap(u, v);
      owner[{u, v}] = static_cast<int>(t);
    }
  }
  for (std::size_t q = 0; q < taggedRings.size(); ++q) {
    const Ring& r = rings[taggedRings[q]];
    for (int j = 0; j < r.count; ++j) {
      int u = r.first + j, v = r.first + (j + 1) % r.count;
      BoundaryEdge e;
      e.nodes = {u, v};
      e.tag = ringTags[q];
      if (u > v) std::swap(u, v);
      e.triangle = owner.at({u, v});
      mesh.boundaryEdges.push_back(e);
    }
  }
  std::vector<int> pairs(mesh.nodes.size());
  for (const Ring& r : rings)
    for (int j = 0; j < r.count; ++j) pairs[r.first + j] = r.first + (r.count - j) % r.count;
  mesh.symmetryPairs = std::move(pairs);
}

}  // namespace detail

/// Builds a boundary-conforming triangulation with target edge length h.
///
/// Disks use concentric rings with 6k nodes on ring k. Annuli are meshed
/// in the concentric parameter annulus rho0 < |w| < 1 and carried to the
/// physical domain by the disk automorphism z = (w + a) / (1 + a w), which
/// maps concentric circles to the nested inner/outer circles (bipolar
/// coordinates). The map is conformal, so element shapes are preserved;
/// ring spacing is graded so that the largest physical edge is about h.
/// Node numbering is ring-major, starting from the inner ring (or center).
inline Mesh buildMesh(const DomainSpec& spec, double h) {
  spec.validate();
  const double R1 = spec.outerRadius;
  const double R0 = spec.innerRadius;
  const double limit = spec.isAnnulus() ? (R1 - R0) / 4.0 : R1 / 4.0;
  if (!(h > 0.0 && h < limit))
    fail(ErrorClass::InfeasibleGeometry, "mesh size h must satisfy 0 < h < " + std::to_string(limit));

  Mesh mesh;
  mesh.resolution = h;
  mesh.domain = spec;
  std::vector<detail::Ring> rings;
  const double radialFactor = 0.9;

  auto addRing = [&](int count, auto&& position) {
    detail::Ring r{static_cast<int>(mesh.nodes.size()), count};
    for (int j = 0; j < count; ++j) {
      if (count > 1 && j > count / 2) {
        const Vec2 m = mesh.nodes[r.first + (count - j)];
        mesh.nodes.push_back({m.x, 2.0 * spec.center.y - m.y});
      } else {
        mesh.nodes.push_back(position(j));
      }
    }
    rings.push_back(r);
  };

  if (!spec.isAnnulus()) {
    const int layers = static_cast<int>(std::ceil(R1 / (radialFactor * h)));
    addRing(1, [&](int) { return spec.center; });
    for (int k = 1; k <= layers; ++k) {
      const double radius = R1 * k / layers;
      const int count = 6 * k;
      addRing(count, [&](int j) {
        const double th = 2.0 * std::numbers::pi * j / count;
        Vec2 p{radius * std::cos(th), radius * std::sin(th)};
        if (j == 0 || 2 * j == count) p.y = 0.0;
        return spec.center + p;
      });
    }
    for (std::size_t k = 0; k + 1 < rings.size(); ++k)
      detail::stitchRings(rings[k], rings[k + 1], mesh.triangles);
    // snap the outer ring onto the exact circle
    const auto& outer = rings.back();
    for (int j = 0; j < outer.count; ++j) {
      Vec2& x = mesh.nodes[outer.first + j];
      x = spec.center + R1 * normalized(x - spec.center);
    }
    detail::finalizeMesh(mesh, rings, {BoundaryTag::Outer}, {static_cast<int>(rings.size()) - 1});
  } else {
    const auto [a, rho0] = detail::moebiusParameters(spec.displacement / R1, R0 / R1);
    // largest physical stretch |dz/dw| on the parameter circle of radius rho
    auto stretch = [&](double rho) { return R1 * (1.0 - a * a) / ((1.0 - a * rho) * (1.0 - a * rho)); };
    // arc-length-like coordinate S(rho) = int_{rho0}^{rho} stretch
    auto S = [&](double rho) {
      if (a == 0.0) return R1 * (rho - rho0);
      return R1 * (1.0 - a * a) / a * (1.0 / (1.0 - a * rho) - 1.0 / (1.0 - a * rho0));
    };
    auto Sinv = [&](double value) {
      if (a == 0.0) return rho0 + value / R1;
      const double inv = value * a / (R1 * (1.0 - a * a)) + 1.0 / (1.0 - a * rho0);
      return (1.0 - 1.0 / inv) / a;
    };
    const double total = S(1.0);
    const int layers = std::max(2, static_cast<int>(std::ceil(total / (radialFactor * h))));
    for (int k = 0; k <= layers; ++k) {
      const double rho = (k == 0) ? rho0 : (k == layers ? 1.0 : Sinv(total * k / layers));
      const int count = 2 * static_cast<int>(std::ceil(std::numbers::pi * rho * stretch(rho) / h));
      addRing(count, [&, rho, count](int j) {
        const double th = 2.0 * std::numbers::pi * j / count;
        std::complex<double> w = std::polar(rho, th);
        if (j == 0) w = {rho, 0.0};
        if (2 * j == count) w = {-rho, 0.0};
        const std::complex<double> z = (w + a) / (1.0 + a * w);
        Vec2 p{R1 * z.real(), R1 * z.imag()};
        if (j == 0 || 2 * j == count) p.y = 0.0;
        return spec.center + p;
      });
    }
    for (std::size_t k = 0; k + 1 < rings.size(); ++k)
      detail::stitchRings(rings[k], rings[k + 1], mesh.triangles);
    const Vec2 ci = spec.innerCenter();
    for (int j = 0; j < rings.front().count; ++j) {
      Vec2& x = mesh.nodes[rings.front().first + j];
      x = ci + R0 * normalized(x - ci);
    }
    for (int j = 0; j < rings.back().count; ++j) {
      Vec2& x = mesh.nodes[rings.back().first + j];
      x = spec.center + R1 * normalized(x - spec.center);
    }
    detail::finalizeMesh(mesh, rings, {BoundaryTag::Inner, BoundaryTag::Outer},
                         {0, static_cast<int>(rings.size()) - 1});
  }

  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (mesh.signedArea(t) < 0.0) std::swap(mesh.triangles[t][1], mesh.triangles[t][2]);
    if (!(mesh.signedArea(t) > 0.0))
      fail(ErrorClass::MeshQualityFailure, "degenerate triangle in generated mesh");
  }
  const double minAngle = mesh.minAngleDegrees();
  if (minAngle < 15.0)
    fail(ErrorClass::MeshQualityFailure, "minimum angle " + std::to_string(minAngle) + " deg < 15 deg");
  return mesh;
}

// ---------------------------------------------------------------------------
// Perturbation fields

enum class PerturbationKind { InnerShift, OuterShift, Translation, Dilation, Custom };

constexpr std::string_view toString(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::InnerShift: return "InnerShift";
    case PerturbationKind::OuterShift: return "OuterShift";
    case PerturbationKind::Translation: return "Translation";
    case PerturbationKind::Dilation: return "Dilation";
    case PerturbationKind::Custom: return "Custom";
  }
  return "Unknown";
}

/// Vector field R driving Phi_t(x) = x + t R(x).
///
/// InnerShift: R = rho(x) d with rho = 1 for |x - c_in| <= r_lo and rho = 0
/// for |x - c_in| >= r_hi - s (which contains |x - center| >= r_hi), a
/// quintic smoothstep in between. OuterShift uses 1 - rho.
struct PerturbationField {
  PerturbationKind kind = PerturbationKind::Translation;
  Vec2 direction{1.0, 0.0};
  double rLo = 0.0;
  double rHi = 0.0;
  Vec2 center{};       ///< outer center (origin of the dilation)
  Vec2 innerCenter{};  ///< center of the radial cutoff coordinate
  double displacement = 0.0;
  std::function<Vec2(Vec2)> customValue;
  std::function<Mat2(Vec2)> customJacobian;

  static PerturbationField translation(Vec2 d) {
    PerturbationField f;
    f.kind = PerturbationKind::Translation;
    f.direction = d;
    return f;
  }
  static PerturbationField dilation(Vec2 origin = {}) {
    PerturbationField f;
    f.kind = PerturbationKind::Dilation;
    f.center = origin;
    return f;
  }
  static PerturbationField zero() { return translation({0.0, 0.0}); }

  /// Shift of the inner (or, with outer = true, the outer) boundary along
  /// `d` with the default cutoff radii.
  static PerturbationField shift(const DomainSpec& spec, Vec2 d, bool outer = false) {
    PerturbationField f;
    f.kind = outer ? PerturbationKind::OuterShift : PerturbationKind::InnerShift;
    f.direction = normalized(d);
    const double gap = spec.outerRadius - spec.innerRadius - spec.displacement;
    f.rLo = spec.innerRadius + 0.2 * gap;
    f.rHi = spec.outerRadius - 0.2 * gap;
    f.center = spec.center;
    f.innerCenter = spec.innerCenter();
    f.displacement = spec.displacement;
    return f;
  }

  static PerturbationField custom(std::function<Vec2(Vec2)> value, std::function<Mat2(Vec2)> jac) {
    PerturbationField f;
    f.kind = PerturbationKind::Custom;
    f.customValue = std::move(value);
    f.customJacobian = std::move(jac);
    return f;
  }

  Vec2 value(Vec2 x) const {
    switch (kind) {
      case PerturbationKind::Translation: return direction;
      case PerturbationKind::Dilation: return x - center;
      case PerturbationKind::InnerShift: return cutoff(x) * direction;
      case PerturbationKind::OuterShift: return (1.0 - cutoff(x)) * direction;
      case PerturbationKind::Custom: return customValue(x);
    }
    return {};
  }

  Mat2 jacobian(Vec2 x) const {
    switch (kind) {
      case PerturbationKind::Translation: return {{{0.0, 0.0}, {0.0, 0.0}}};
      case PerturbationKind::Dilation: return {{{1.0, 0.0}, {0.0, 1.0}}};
      case PerturbationKind::InnerShift:
      case PerturbationKind::OuterShift: {
        Vec2 g = cutoffGradient(x);
        if (kind == PerturbationKind::OuterShift) g = -1.0 * g;
        return {{{direction.x * g.x, direction.x * g.y}, {direction.y * g.x, direction.y * g.y}}};
      }
      case PerturbationKind::Custom: return customJacobian(x);
    }
    return {};
  }

  double divergence(Vec2 x) const {
    const Mat2 J = jacobian(x);
    return J[0][0] + J[1][1];
  }

 private:
  double transitionWidth() const { return rHi - displacement - rLo; }

  double cutoff(Vec2 x) const {
    const double r = norm(x - innerCenter);
    return 1.0 - detail::smoothstep5((r - rLo) / transitionWidth());
  }

  Vec2 cutoffGradient(Vec2 x) const {
    const Vec2 d = x - innerCenter;
    const double r = norm(d);
    if (r == 0.0) return {};
    const double L = transitionWidth();
    return (-detail::smoothstep5Derivative((r - rLo) / L) / (L * r)) * d;
  }
};

/// Largest spectral norm of R' over the mesh nodes.
inline double maxJacobianNorm(const Mesh& mesh, const PerturbationField& field) {
  double best = 0.0;
  for (const Vec2& x : mesh.nodes) {
    const Mat2 J = field.jacobian(x);
    const double a = J[0][0], b = J[0][1], c = J[1][0], d = J[1][1];
    const double s1 = a * a + b * b + c * c + d * d;
    const double det = a * d - b * c;
    const double disc = std::sqrt(std::max(0.0, s1 * s1 - 4.0 * det * det));
    best = std::max(best, std::sqrt(0.5 * (s1 + disc)));
  }
  return best;
}

/// Moves every node by t R(x); connectivity is unchanged.
inline Mesh morphMesh(const Mesh& mesh, const PerturbationField& field, double t) {
  if (std::abs(t) * maxJacobianNorm(mesh, field) >= 0.5)
    fail(ErrorClass::MorphFoldover, "|t| sup|R'| >= 1/2: outside the diffeomorphism regime");
  Mesh out = mesh;
  for (Vec2& x : out.nodes) x = x + t * field.value(x);
  for (std::size_t k = 0; k < out.triangles.size(); ++k)
    if (!(out.signedArea(k) > 0.0)) fail(ErrorClass::MorphFoldover, "triangle folded over");
  if (t != 0.0 && out.domain) {
    DomainSpec d = *out.domain;
    const bool alongAxis = field.direction.y == 0.0;
    switch (field.kind) {
      case PerturbationKind::InnerShift:
        if (alongAxis && field.direction.x > 0.0 && d.displacement + t >= 0.0) {
          d.displacement += t;
          out.domain = d;
        } else {
          out.domain.reset();
        }
        break;
      case PerturbationKind::Translation:
        d.center = d.center + t * field.direction;
        out.domain = d;
        break;
      case PerturbationKind::Dilation:
        d.outerRadius *= (1.0 + t);
        d.innerRadius *= (1.0 + t);
        d.displacement *= (1.0 + t);
        d.center = d.center + t * (d.center - field.center);
        out.domain = d;
        break;
      default: out.domain.reset();
    }
  }
  if (t != 0.0 && field.direction.y != 0.0 && field.kind != PerturbationKind::Dilation)
    out.symmetryPairs.reset();
  if (t != 0.0 && field.kind == PerturbationKind::Custom) out.symmetryPairs.reset();
  return out;
}

/// Domain-outward unit normal of every boundary edge (into the hole on the
/// inner circle), indexed like mesh.boundaryEdges.
inline std::vector<Vec2> boundaryNormals(const Mesh& mesh) {
  std::vector<Vec2> normals;
  normals.reserve(mesh.boundaryEdges.size());
  for (const auto& e : mesh.boundaryEdges) {
    const Vec2 a = mesh.nodes[e.nodes[0]];
    const Vec2 b = mesh.nodes[e.nodes[1]];
    const auto& tri = mesh.triangles[e.triangle];
    int opposite = tri[0];
    for (int v : tri)
      if (v != e.nodes[0] && v != e.nodes[1]) opposite = v;
    Vec2 n = normalized(Vec2{b.y - a.y, a.x - b.x});
    if (dot(n, mesh.nodes[opposite] - a) > 0.0) n = -1.0 * n;
    normals.push_back(n);
  }
  return normals;
}

inline double meshArea(const Mesh& mesh) {
  double a = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) a += mesh.signedArea(t);
  return a;
}

// ---------------------------------------------------------------------------
// Text serialization:
//   NODES n TRIANGLES m EDGES k
//   x y            (n lines)
//   i j k          (m lines)
//   i j TAG        (k lines, TAG in {OUTER, INNER})

inline void writeMesh(std::ostream& os, const Mesh& mesh) {
  os << "NODES " << mesh.nodes.size() << " TRIANGLES " << mesh.triangles.size() << " EDGES "
     << mesh.boundaryEdges.size() << '\n';
  os << std::setprecision(17);
  for (const Vec2& x : mesh.nodes) os << x.x << ' ' << x.y << '\n';
  for (const auto& t : mesh.triangles) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  for (const auto& e : mesh.boundaryEdges)
    os << e.nodes[0] << ' ' << e.nodes[1] << ' ' << toString(e.tag) << '\n';
}

inline Mesh readMesh(std::istream& is) {
  std::string kw1, kw2, kw3;
  std::size_t n = 0, m = 0, k = 0;
  if (!(is >> kw1 >> n >> kw2 >> m >> kw3 >> k) || kw1 != "NODES" || kw2 != "TRIANGLES" || kw3 != "EDGES")
    fail(ErrorClass::ConfigError, "malformed mesh header");
  Mesh mesh;
  mesh.nodes.resize(n);
  mesh.triangles.resize(m);
  for (auto& x : mesh.nodes) is >> x.x >> x.y;
  for (auto& t : mesh.triangles) is >> t[0] >> t[1] >> t[2];
  std::map<std::pair<int, int>, int> owner;
  for (std::size_t t = 0; t < m; ++t)
    for (int q = 0; q < 3; ++q) {
      int u = mesh.triangles[t][q], v = mesh.triangles[t][(q + 1) % 3];
      if (u > v) std::swap(u, v);
      owner[{u, v}] = static_cast<int>(t);
    }
  for (std::size_t q = 0; q < k; ++q) {
    BoundaryEdge e;
    std::string tag;
    is >> e.nodes[0] >> e.nodes[1] >> tag;
    e.tag = tag == "INNER" ? BoundaryTag::Inner : BoundaryTag::Outer;
    int u = e.nodes[0], v = e.nodes[1];
    if (u > v) std::swap(u, v);
    const auto it = owner.find({u, v});
    if (it == owner.end()) fail(ErrorClass::ConfigError, "boundary edge without a triangle");
    e.triangle = it->second;
    mesh.boundaryEdges.push_back(e);
  }
  if (!is) fail(ErrorClass::ConfigError, "truncated mesh file");
  mesh.resolution = mesh.maxEdgeLength();
  return mesh;
}

}  // namespace nehari
