#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "nehari/shape.hpp"

using namespace nehari;

namespace {

const NonlinearitySpec kNl = NonlinearitySpec::power(2.0, 4.0);

SolverOptions quick(double h, int starts = 1) {
  SolverOptions o;
  o.h = h;
  o.starts = starts;
  return o;
}

const SolveReport& positive(const DomainSpec& d, double h) {
  static std::map<std::tuple<double, double, double>, SolveReport> cache;
  const auto key = std::make_tuple(d.innerRadius, d.displacement, h);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, solvePositive(makeSpace(buildMesh(d, h)), kNl, quick(h, 2))).first;
  return it->second;
}

}  // namespace

TEST(HadamardEnergy, ZeroFieldGivesZero) {
  const auto& rep = positive(DomainSpec::annulus(1.0, 0.3, 0.0), 0.05);
  const auto r = hadamardEnergy(rep, kNl, PerturbationField::zero());
  EXPECT_EQ(r.formulaValue, 0.0);
  EXPECT_EQ(r.fdValue, 0.0);
  EXPECT_EQ(r.relMismatch, 0.0);
}

TEST(HadamardEnergy, TranslationFormulaVanishes) {
  for (const DomainSpec& d : {DomainSpec::ball(1.0), DomainSpec::annulus(1.0, 0.3, 0.2)}) {
    const auto& rep = positive(d, 0.04);
    for (Vec2 dir : {Vec2{1.0, 0.0}, Vec2{0.0, 1.0}}) {
      const auto r = hadamardEnergy(rep, kNl, PerturbationField::translation(dir));
      EXPECT_LE(std::abs(r.formulaValue), 1e-2 * r.fluxScale);
      EXPECT_LE(std::abs(r.fdValue), 1e-6 * r.fluxScale);
    }
  }
}

TEST(HadamardEnergy, InnerShiftMatchesFiniteDifference) {
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.0);
  const auto& rep = positive(d, 0.04);
  for (const auto& f : {PerturbationField::shift(d, {1.0, 0.0}), PerturbationField::shift(d, {1.0, 0.0}, true),
                        PerturbationField::dilation()}) {
    const auto r = hadamardEnergy(rep, kNl, f);
    EXPECT_LE(r.relMismatch, 0.05) << "formula " << r.formulaValue << " fd " << r.fdValue;
    EXPECT_DOUBLE_EQ(r.tStep, 1e-3);
  }
}

TEST(HadamardEnergy, EccentricShiftsAgreeForSeveralExponents) {
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.2);
  for (double p : {3.0}) {
    const auto nl = NonlinearitySpec::power(p, p + 2.0);
    const auto rep = solvePositive(makeSpace(buildMesh(d, 0.04)), nl, quick(0.04));
    for (const auto& f : {PerturbationField::shift(d, {1.0, 0.0}), PerturbationField::dilation()}) {
      const auto r = hadamardEnergy(rep, nl, f);
      EXPECT_LE(r.relMismatch, 0.05) << "p=" << p << " formula " << r.formulaValue << " fd " << r.fdValue;
    }
  }
}

TEST(HadamardEnergy, DilationMatchesScalingLaw) {
  // mu+(c B) = c^{-2} mu+(B) for p = 2, q = 4, so d/dt at t = 0 is -2 mu+
  const auto& rep = positive(DomainSpec::ball(1.0), 0.04);
  const auto r = hadamardEnergy(rep, kNl, PerturbationField::dilation());
  EXPECT_NEAR(r.formulaValue, -2.0 * rep.level, 0.05 * 2.0 * rep.level);
  EXPECT_NEAR(r.fdValue, -2.0 * rep.level, 1e-4 * 2.0 * rep.level);
}

TEST(HadamardRayleigh, EigenDilation) {
  const auto ev = solveEigen(makeSpace(buildMesh(DomainSpec::ball(1.0), 0.04)), 2.0, quick(0.04));
  const auto r = hadamardRayleigh(ev, PerturbationField::dilation());
  EXPECT_NEAR(r.formulaValue, -2.0 * ev.level, 0.05 * 2.0 * ev.level);
  EXPECT_NEAR(r.fdValue, -2.0 * ev.level, 1e-4 * 2.0 * ev.level);
  const auto z = hadamardRayleigh(ev, PerturbationField::zero());
  EXPECT_EQ(z.formulaValue, 0.0);
  EXPECT_EQ(z.fdValue, 0.0);
}

TEST(HadamardRayleigh, QuotientInnerShift) {
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.2);
  const auto rq = solveRayleighQ(makeSpace(buildMesh(d, 0.04)), 2.0, 4.0, quick(0.04));
  const auto r = hadamardRayleigh(rq, PerturbationField::shift(d, {1.0, 0.0}));
  EXPECT_LE(r.relMismatch, 0.05) << "formula " << r.formulaValue << " fd " << r.fdValue;
}

TEST(HadamardRayleigh, RejectsNonRayleighReports) {
  const auto& rep = positive(DomainSpec::annulus(1.0, 0.3, 0.0), 0.05);
  try {
    hadamardRayleigh(rep, PerturbationField::dilation());
    FAIL() << "expected ConfigError";
  } catch (const Error& e) {
    EXPECT_EQ(e.errorClass(), ErrorClass::ConfigError);
  }
}

TEST(HadamardEnergy, FormulaIndependentOfStep) {
  // the boundary integral never sees the morph
  const auto& rep = positive(DomainSpec::annulus(1.0, 0.3, 0.0), 0.05);
  const auto f = PerturbationField::dilation();
  const auto a = hadamardEnergy(rep, kNl, f, 1e-3);
  const auto b = hadamardEnergy(rep, kNl, f, 2e-3);
  EXPECT_EQ(a.formulaValue, b.formulaValue);
  EXPECT_NE(a.fdValue, b.fdValue);
}

TEST(TranslationIdentity, MomentsVanish) {
  for (const DomainSpec& d : {DomainSpec::annulus(1.0, 0.3, 0.0), DomainSpec::annulus(1.0, 0.3, 0.3)}) {
    const auto& rep = positive(d, 0.04);
    const auto t = translationIdentity(rep, kNl);
    EXPECT_LE(std::abs(t.moment1), 0.01 * t.total);
    EXPECT_LE(std::abs(t.moment2), 0.01 * t.total);
  }
}

TEST(UpperDerivative, VanishesOnRadialSolution) {
  // the least-energy state of this annulus is a nonradial bump, so the radial
  // critical point is built from the 1D solution and projected onto the Nehari set
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.0);
  const auto radial = radialOracle(d, kNl, 1);
  const auto& v = radial.values;
  const int n = static_cast<int>(v.size());
  const auto V = makeSpace(buildMesh(d, 0.03));
  const ScalarField u = ScalarField::interpolate(V, [&](Vec2 x) {
    const double t = (norm(x) - 0.3) / 0.7 * (n - 1);
    const int k = std::clamp(static_cast<int>(t), 0, n - 2);
    return (1.0 - (t - k)) * v[k] + (t - k) * v[k + 1];
  });
  SolveReport rep;
  rep.kind = LevelKind::MuPlus;
  rep.p = 2.0;
  rep.space = V;
  rep.values = u.scaled(nehariScale(u, kNl).alpha).values();
  const auto est = upperDerivativeEstimate(rep, kNl);
  const double scale = 0.5 * fluxTotal(V->mesh(), reportFlux(rep, kNl), 2.0);
  EXPECT_LE(std::abs(est.inner), 1e-2 * scale);
  EXPECT_LE(std::abs(est.outer), 1e-2 * scale);
}

TEST(UpperDerivative, NegativeForDisplacedAnnulus) {
  const auto& shifted = positive(DomainSpec::annulus(1.0, 0.3, 0.3), 0.04);
  EXPECT_LT(upperDerivativeEstimate(shifted, kNl).inner, 0.0);
  EXPECT_THROW(upperDerivativeEstimate(DomainSpec::ball(1.0), 0.0, kNl, quick(0.05)), Error);
}

TEST(Sweep, RepeatedPointsAndVerdict) {
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.0);
  const auto res = sweepLevels(d, {0.0, 0.0, 0.2, 0.4}, SweepTarget::MuPlus, kNl, quick(0.05), 0.0);
  ASSERT_EQ(res.points.size(), 4u);
  EXPECT_EQ(res.points[0].level, res.points[1].level);
  EXPECT_FALSE(res.monotone);
  EXPECT_EQ(res.monotone, SweepResult::strictlyDecreasing(res.points, res.margin));
  EXPECT_LT(res.points[2].level, res.points[1].level);
  EXPECT_LT(res.points[3].level, res.points[2].level);
  EXPECT_EQ(res.upperDerivatives.size(), 4u);
}

TEST(Sweep, MonotoneWithCalibratedMargin) {
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.0);
  for (SweepTarget which : {SweepTarget::MuPlus, SweepTarget::Lambda}) {
    const auto res = sweepLevels(d, {0.0, 0.2, 0.4}, which, kNl, quick(0.04));
    EXPECT_GT(res.margin, 0.0);
    EXPECT_TRUE(res.monotone) << res.points[0].level << " " << res.points[1].level << " " << res.points[2].level
                              << " margin " << res.margin;
  }
}

TEST(Sweep, InfeasiblePointsAreRecorded) {
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.0);
  const auto res = sweepLevels(d, {0.0, 0.69}, SweepTarget::MuPlus, kNl, quick(0.05), 0.0);
  EXPECT_TRUE(res.points[0].error.empty());
  EXPECT_FALSE(res.points[1].error.empty());
  EXPECT_FALSE(res.points[1].converged);
  EXPECT_FALSE(res.monotone);
}

TEST(Sweep, ForwardDifferencesOnly) {
  SweepResult s;
  s.points = {{0.0, 10.0}, {0.1, 9.0}, {0.3, 8.0}};
  const auto fd = forwardDifferences(s);
  ASSERT_EQ(fd.size(), 2u);
  EXPECT_DOUBLE_EQ(fd[0], -10.0);
  EXPECT_DOUBLE_EQ(fd[1], -5.0);
}

TEST(Continuity, DifferencesShrinkUnderHalving) {
  const DomainSpec d = DomainSpec::annulus(1.0, 0.3, 0.2);
  const auto& rep = positive(d, 0.04);
  const auto pr = continuityProbe(rep, kNl, PerturbationField::shift(d, {1.0, 0.0}), {0.04, 0.02, 0.01, 0.005},
                                  quick(0.04));
  ASSERT_EQ(pr.ratios.size(), 3u);
  EXPECT_LE(pr.worstRatio(), 0.7);
}
