#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <numbers>
#include <sstream>

#include "nehari/geometry.hpp"

using namespace nehari;

namespace {

double tagLength(const Mesh& m, BoundaryTag tag) {
  double L = 0.0;
  for (const auto& e : m.boundaryEdges)
    if (e.tag == tag) L += norm(m.nodes[e.nodes[1]] - m.nodes[e.nodes[0]]);
  return L;
}

int tagCount(const Mesh& m, BoundaryTag tag) {
  int c = 0;
  for (const auto& e : m.boundaryEdges) c += e.tag == tag;
  return c;
}

void expectMeshInvariants(const Mesh& m) {
  for (std::size_t t = 0; t < m.triangleCount(); ++t) ASSERT_GT(m.signedArea(t), 0.0) << "triangle " << t;
  // every boundary edge belongs to exactly one triangle
  std::map<std::pair<int, int>, int> uses;
  for (const auto& tri : m.triangles)
    for (int k = 0; k < 3; ++k) {
      int a = tri[k], b = tri[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++uses[{a, b}];
    }
  for (const auto& e : m.boundaryEdges) {
    int a = e.nodes[0], b = e.nodes[1];
    if (a > b) std::swap(a, b);
    EXPECT_EQ((uses[{a, b}]), 1);
  }
  int single = 0;
  for (const auto& [k, v] : uses) single += v == 1;
  EXPECT_EQ(single, static_cast<int>(m.boundaryEdges.size()));
}

}  // namespace

TEST(DomainSpec, AnnulusInvariants) {
  EXPECT_NO_THROW(DomainSpec::annulus(1.0, 0.3, 0.5).validate());
  EXPECT_THROW(DomainSpec::annulus(1.0, 0.3, 0.7).validate(), Error);
  EXPECT_THROW(DomainSpec::annulus(1.0, 1.2, 0.0).validate(), Error);
  EXPECT_THROW(DomainSpec::annulus(1.0, 0.0, 0.0).validate(), Error);
  DomainSpec bad = DomainSpec::ball(1.0);
  bad.displacement = 0.1;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(BuildMesh, BallHasOneOuterLoop) {
  const Mesh m = buildMesh(DomainSpec::ball(1.0), 0.1);
  EXPECT_EQ(countBoundaryLoops(m, BoundaryTag::Outer), 1);
  EXPECT_EQ(tagCount(m, BoundaryTag::Inner), 0);
  expectMeshInvariants(m);
}

TEST(BuildMesh, ConcentricAnnulusPerimeter) {
  const Mesh m = buildMesh(DomainSpec::annulus(1.0, 0.3, 0.0), 0.05);
  EXPECT_EQ(countBoundaryLoops(m, BoundaryTag::Outer), 1);
  EXPECT_EQ(countBoundaryLoops(m, BoundaryTag::Inner), 1);
  // inscribed-polygon oracle: n chords of a circle of radius R sum to 2 n R sin(pi/n)
  const int n = tagCount(m, BoundaryTag::Outer);
  const double chordOracle = 2.0 * n * std::sin(std::numbers::pi / n);
  EXPECT_NEAR(tagLength(m, BoundaryTag::Outer), 2.0 * std::numbers::pi, 0.005 * 2.0 * std::numbers::pi);
  EXPECT_NEAR(tagLength(m, BoundaryTag::Outer), chordOracle, 1e-6);
  expectMeshInvariants(m);
}

TEST(BuildMesh, InfeasibleDisplacement) {
  try {
    buildMesh(DomainSpec::annulus(1.0, 0.3, 0.8), 0.05);
    FAIL() << "expected InfeasibleGeometry";
  } catch (const Error& e) {
    EXPECT_EQ(e.errorClass(), ErrorClass::InfeasibleGeometry);
  }
  EXPECT_THROW(buildMesh(DomainSpec::annulus(1.0, 0.3, 0.0), 0.2), Error);
}

TEST(BuildMesh, EccentricBoundaryOnCircles) {
  for (double s : {0.0, 0.3, 0.6}) {
    const DomainSpec spec = DomainSpec::annulus(1.0, 0.3, s);
    const Mesh m = buildMesh(spec, 0.03);
    expectMeshInvariants(m);
    EXPECT_GE(m.minAngleDegrees(), 15.0);
    for (const auto& e : m.boundaryEdges)
      for (int i : e.nodes) {
        const Vec2 x = m.nodes[i];
        if (e.tag == BoundaryTag::Outer)
          EXPECT_NEAR(norm(x), 1.0, 1e-10);
        else
          EXPECT_NEAR(norm(x - spec.innerCenter()), 0.3, 1e-10);
      }
  }
}

TEST(BuildMesh, ReflectionSymmetry) {
  const Mesh m = buildMesh(DomainSpec::annulus(1.0, 0.3, 0.4), 0.04);
  ASSERT_TRUE(m.symmetryPairs.has_value());
  const auto& P = *m.symmetryPairs;
  std::set<std::array<int, 3>> tris;
  for (auto t : m.triangles) {
    std::sort(t.begin(), t.end());
    tris.insert(t);
  }
  for (int i = 0; i < static_cast<int>(m.nodeCount()); ++i) {
    EXPECT_EQ(P[P[i]], i);
    EXPECT_NEAR(m.nodes[P[i]].x, m.nodes[i].x, 1e-12);
    EXPECT_NEAR(m.nodes[P[i]].y, -m.nodes[i].y, 1e-12);
  }
  for (const auto& t : m.triangles) {
    std::array<int, 3> r = {P[t[0]], P[t[1]], P[t[2]]};
    std::sort(r.begin(), r.end());
    EXPECT_TRUE(tris.count(r));
  }
}

TEST(BuildMesh, DeterministicRingMajorOrder) {
  const Mesh a = buildMesh(DomainSpec::annulus(1.0, 0.3, 0.2), 0.05);
  const Mesh b = buildMesh(DomainSpec::annulus(1.0, 0.3, 0.2), 0.05);
  std::ostringstream sa, sb;
  writeMesh(sa, a);
  writeMesh(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(MorphMesh, IdentityAtZero) {
  const Mesh m = buildMesh(DomainSpec::annulus(1.0, 0.3, 0.0), 0.05);
  const Mesh out = morphMesh(m, PerturbationField::dilation(), 0.0);
  for (std::size_t i = 0; i < m.nodeCount(); ++i) {
    EXPECT_EQ(out.nodes[i].x, m.nodes[i].x);
    EXPECT_EQ(out.nodes[i].y, m.nodes[i].y);
  }
}

TEST(MorphMesh, InnerShiftMovesInnerCircle) {
  const DomainSpec spec = DomainSpec::annulus(1.0, 0.3, 0.0);
  const Mesh m = buildMesh(spec, 0.05);
  const Mesh out = morphMesh(m, PerturbationField::shift(spec, {1.0, 0.0}), 0.1);
  Vec2 c{};
  int n = 0;
  std::set<int> inner;
  for (const auto& e : out.boundaryEdges)
    if (e.tag == BoundaryTag::Inner) inner.insert(e.nodes.begin(), e.nodes.end());
  for (int i : inner) {
    c = c + out.nodes[i];
    ++n;
  }
  c = (1.0 / n) * c;
  EXPECT_NEAR(c.x, 0.1, 1e-8);
  EXPECT_NEAR(c.y, 0.0, 1e-8);
  for (int i : inner) EXPECT_NEAR(norm(out.nodes[i] - Vec2{0.1, 0.0}), 0.3, 1e-12);
  ASSERT_TRUE(out.domain.has_value());
  EXPECT_DOUBLE_EQ(out.domain->displacement, 0.1);
}

TEST(MorphMesh, TranslationShiftsEveryNode) {
  const Mesh m = buildMesh(DomainSpec::annulus(1.0, 0.3, 0.1), 0.05);
  const Mesh out = morphMesh(m, PerturbationField::translation({1.0, 0.0}), 0.2);
  for (std::size_t i = 0; i < m.nodeCount(); ++i) {
    EXPECT_DOUBLE_EQ(out.nodes[i].x, m.nodes[i].x + 0.2);
    EXPECT_DOUBLE_EQ(out.nodes[i].y, m.nodes[i].y);
  }
}

TEST(MorphMesh, FoldoverGuard) {
  const DomainSpec spec = DomainSpec::annulus(1.0, 0.3, 0.0);
  const Mesh m = buildMesh(spec, 0.05);
  try {
    morphMesh(m, PerturbationField::shift(spec, {1.0, 0.0}), 5.0);
    FAIL() << "expected MorphFoldover";
  } catch (const Error& e) {
    EXPECT_EQ(e.errorClass(), ErrorClass::MorphFoldover);
  }
}

TEST(MorphMesh, FlowComposition) {
  const DomainSpec spec = DomainSpec::annulus(1.0, 0.3, 0.2);
  const Mesh m = buildMesh(spec, 0.05);
  for (const auto& f : {PerturbationField::shift(spec, {1.0, 0.0}), PerturbationField::shift(spec, {0.6, 0.8}, true),
                        PerturbationField::dilation()}) {
    const Mesh once = morphMesh(m, f, 2e-3);
    const Mesh twice = morphMesh(morphMesh(m, f, 1e-3), f, 1e-3);
    double worst = 0.0;
    for (std::size_t i = 0; i < m.nodeCount(); ++i) worst = std::max(worst, norm(once.nodes[i] - twice.nodes[i]));
    EXPECT_LE(worst, 1e-4);
  }
}

TEST(PerturbationField, JacobianMatchesFiniteDifferences) {
  const DomainSpec spec = DomainSpec::annulus(1.0, 0.3, 0.25);
  const Mesh m = buildMesh(spec, 0.05);
  for (const auto& f : {PerturbationField::shift(spec, {1.0, 0.0}), PerturbationField::shift(spec, {0.6, 0.8}, true),
                        PerturbationField::dilation(), PerturbationField::translation({0.3, -0.4})}) {
    const double eps = 1e-6;
    for (std::size_t i = 0; i < m.nodeCount(); i += 7) {
      const Vec2 x = m.nodes[i];
      const Mat2 J = f.jacobian(x);
      const double scale = std::max(1.0, std::abs(J[0][0]) + std::abs(J[0][1]) + std::abs(J[1][0]) + std::abs(J[1][1]));
      for (int j = 0; j < 2; ++j) {
        const Vec2 e = j == 0 ? Vec2{eps, 0.0} : Vec2{0.0, eps};
        const Vec2 d = (0.5 / eps) * (f.value(x + e) - f.value(x - e));
        EXPECT_NEAR(d.x, J[0][j], 1e-6 * scale);
        EXPECT_NEAR(d.y, J[1][j], 1e-6 * scale);
      }
      EXPECT_NEAR(f.divergence(x), J[0][0] + J[1][1], 1e-14);
    }
  }
}

TEST(PerturbationField, CutoffSupport) {
  const DomainSpec spec = DomainSpec::annulus(1.0, 0.3, 0.2);
  const PerturbationField in = PerturbationField::shift(spec, {1.0, 0.0});
  const PerturbationField out = PerturbationField::shift(spec, {1.0, 0.0}, true);
  const Vec2 nearInner = spec.innerCenter() + Vec2{0.0, 0.31};
  const Vec2 nearOuter{0.0, 0.99};
  EXPECT_DOUBLE_EQ(in.value(nearInner).x, 1.0);
  EXPECT_DOUBLE_EQ(in.value(nearOuter).x, 0.0);
  EXPECT_DOUBLE_EQ(out.value(nearInner).x, 0.0);
  EXPECT_DOUBLE_EQ(out.value(nearOuter).x, 1.0);
}

TEST(BoundaryNormals, OrientationAndLength) {
  const Mesh disk = buildMesh(DomainSpec::ball(1.0), 0.05);
  const auto nd = boundaryNormals(disk);
  for (std::size_t k = 0; k < nd.size(); ++k) {
    const auto& e = disk.boundaryEdges[k];
    const Vec2 mid = 0.5 * (disk.nodes[e.nodes[0]] + disk.nodes[e.nodes[1]]);
    EXPECT_NEAR(norm(nd[k]), 1.0, 1e-12);
    if (mid.x > 0.999) {
      EXPECT_NEAR(nd[k].x, 1.0, 1e-2);
    }
  }
  const DomainSpec spec = DomainSpec::annulus(1.0, 0.3, 0.2);
  const Mesh m = buildMesh(spec, 0.03);
  const auto nm = boundaryNormals(m);
  for (std::size_t k = 0; k < nm.size(); ++k) {
    const auto& e = m.boundaryEdges[k];
    const Vec2 mid = 0.5 * (m.nodes[e.nodes[0]] + m.nodes[e.nodes[1]]);
    if (e.tag == BoundaryTag::Inner) {
      // points into the hole
      EXPECT_LT(dot(nm[k], mid - spec.innerCenter()), 0.0);
      if (mid.x < spec.displacement - 0.299) EXPECT_NEAR(nm[k].x, 1.0, 1e-2);
    } else {
      EXPECT_GT(dot(nm[k], mid), 0.0);
    }
  }
}

TEST(BoundaryNormals, DivergenceTheorem) {
  for (const DomainSpec& spec : {DomainSpec::ball(1.0), DomainSpec::annulus(1.0, 0.3, 0.35)}) {
    const Mesh m = buildMesh(spec, 0.03);
    const auto n = boundaryNormals(m);
    double flux = 0.0;
    for (std::size_t k = 0; k < n.size(); ++k) {
      const auto& e = m.boundaryEdges[k];
      const Vec2 a = m.nodes[e.nodes[0]], b = m.nodes[e.nodes[1]];
      flux += dot(0.5 * (a + b), n[k]) * norm(b - a);
    }
    // polygon area from the shoelace sum over triangles is the oracle
    EXPECT_NEAR(flux, 2.0 * meshArea(m), 0.005 * 2.0 * meshArea(m));
  }
}

TEST(MeshIO, RoundTrip) {
  const Mesh m = buildMesh(DomainSpec::annulus(1.0, 0.3, 0.3), 0.05);
  std::stringstream ss;
  writeMesh(ss, m);
  const std::string text = ss.str();
  EXPECT_EQ(text.rfind("NODES " + std::to_string(m.nodeCount()) + " TRIANGLES", 0), 0u);
  const Mesh r = readMesh(ss);
  ASSERT_EQ(r.nodeCount(), m.nodeCount());
  ASSERT_EQ(r.triangleCount(), m.triangleCount());
  ASSERT_EQ(r.boundaryEdges.size(), m.boundaryEdges.size());
  for (std::size_t i = 0; i < m.nodeCount(); ++i) {
    EXPECT_EQ(r.nodes[i].x, m.nodes[i].x);
    EXPECT_EQ(r.nodes[i].y, m.nodes[i].y);
  }
  for (std::size_t k = 0; k < m.boundaryEdges.size(); ++k) {
    EXPECT_EQ(r.boundaryEdges[k].tag, m.boundaryEdges[k].tag);
    EXPECT_EQ(r.boundaryEdges[k].triangle, m.boundaryEdges[k].triangle);
  }
  std::istringstream bad("NODES 3 TRIANGLES");
  EXPECT_THROW(readMesh(bad), Error);
}
