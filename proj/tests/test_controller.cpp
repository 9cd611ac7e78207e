#include <gtest/gtest.h>

#include <cmath>

#include "spherecar/controller.hpp"
#include "spherecar/errors.hpp"
#include "spherecar/integrators.hpp"
#include "test_support.hpp"

using namespace spherecar;
using spherecar::oracle::maxAbsDiff;
using spherecar::oracle::Sampler;

namespace {

const CarGeometry kGeom(0.1, 0.02, 1.0);
const ControllerGains kGains{1.0, 2.0, 1.0};
const SingularityPolicy kPolicy{};

ReferenceSample staticSample(const Rotation3& frame, double curvature = 0.0) {
  return {0.0, frame, 1.0, curvature, 0.0};
}

// Vehicle offset from the reference frame by (sigma, delta) and a heading offset.
Rotation3 offset(const Rotation3& gd, double sigma, double delta, double heading) {
  return gd * expSO3(Vec3{-std::sin(delta), -std::cos(delta), 0.0}, sigma) *
         expSO3(Vec3::UnitZ(), heading);
}

struct ClosedLoopRun {
  std::vector<double> s;
  std::vector<Rotation3> g;
};

ClosedLoopRun simulate(const Reference& ref, const Rotation3& g0, double h, std::size_t steps) {
  const BodyRateFn f = [&](double s, const Rotation3& g) {
    return closedLoopRate(g, ref.at(s), kGains, kPolicy, kGeom).bodyRate;
  };
  ClosedLoopRun run;
  run.s = uniformGrid(0.0, h, steps);
  run.g = integrateTrajectory(g0, f, run.s, IntegratorConfig{IntegratorMethod::kRkmk4, h, 0});
  return run;
}

}  // namespace

TEST(ControllerGains, RejectsNonPositive) {
  EXPECT_THROW((ControllerGains{0.0, 2.0, 1.0}.validate()), DomainError);
  EXPECT_THROW((ControllerGains{1.0, -2.0, 1.0}.validate()), DomainError);
  EXPECT_NO_THROW(kGains.validate());
}

TEST(SpeedFeedback, LimitRegionGivesUnitSpeed) {
  const Rotation3 gd = Sampler().rotation();
  const ReferenceSample ref = staticSample(gd);
  const ErrorAngles e = errorAngles(gd, gd);
  EXPECT_EQ(speedFeedback(gd, ref, e, kGains, kPolicy, 1.0), 1.0);
}

TEST(SpeedFeedback, AheadOnTrack) {
  // beta = (sin 0.1, 0, cos 0.1): <beta, tau_d> = sin 0.1, <tau, beta_d> = -sin 0.1.
  const Rotation3 g = expSO3(Vec3::UnitY(), 0.1);
  const ReferenceSample ref = staticSample(Rotation3::identity());
  const ErrorAngles e = errorAngles(g, ref.frame);
  EXPECT_NEAR(e.sigma, 0.1, 1e-15);
  const double s = std::sin(0.1);
  for (double c : {1.0, 2.0}) {
    const double oracle = (c * 0.1 * s - s) / (-s);
    const double u = speedFeedback(g, ref, e, {c, 2.0, 1.0}, kPolicy, 1.0);
    EXPECT_NEAR(u, oracle, 1e-14);
  }
  EXPECT_NEAR(speedFeedback(g, ref, e, {1.0, 2.0, 1.0}, kPolicy, 1.0), 0.9, 1e-14);
  EXPECT_NEAR(speedFeedback(g, ref, e, {2.0, 2.0, 1.0}, kPolicy, 1.0), 0.8, 1e-14);
}

TEST(SpeedFeedback, LateralOffsetWithAlignedHeadingIsSingular) {
  const Rotation3 g = offset(Rotation3::identity(), 0.1, kPi / 2, 0.0);
  const ReferenceSample ref = staticSample(Rotation3::identity());
  const ErrorAngles e = errorAngles(g, ref.frame);
  EXPECT_THROW(speedFeedback(g, ref, e, kGains, kPolicy, 1.0), SingularConfiguration);
}

TEST(SigmaRate, SpeedFeedbackImposesExponentialDecay) {
  Sampler rng(31);
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const Rotation3 gd = rng.rotation();
    const Rotation3 g =
        offset(gd, rng.uniform(0.01, 1.0), rng.uniform(-kPi, kPi), rng.uniform(-kPi, kPi));
    const ReferenceSample ref = staticSample(gd, rng.uniform(-1, 1));
    const ErrorAngles e = errorAngles(g, gd);
    if (std::abs(g.tangent().dot(gd.binormal())) < 1e-3) {
      continue;
    }
    const double u = speedFeedback(g, ref, e, kGains, kPolicy, 1.0);
    EXPECT_LT(std::abs(sigmaRate(u, g, ref, e.sigma, 1.0) + kGains.cSigma * e.sigma), 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 150);
}

TEST(SigmaRate, ZeroWhenBothInnerProductsVanish) {
  const Rotation3 g = expSO3(Vec3::UnitX(), 0.1);
  const ReferenceSample ref = staticSample(Rotation3::identity());
  EXPECT_EQ(sigmaRate(0.0, g, ref, 0.1, 1.0), 0.0);
}

TEST(DeltaRate, LateralOffsetIsFinite) {
  const Rotation3 g = offset(Rotation3::identity(), 0.1, kPi / 2, 0.0);
  const ReferenceSample ref = staticSample(Rotation3::identity());
  const ErrorAngles e = errorAngles(g, ref.frame);
  EXPECT_NEAR(std::sin(e.delta) * std::sin(e.sigma), std::sin(0.1), 1e-15);
  const double dSigma = sigmaRate(1.0, g, ref, e.sigma, 1.0);
  EXPECT_TRUE(std::isfinite(deltaRate(1.0, g, ref, e, dSigma, 1.0, 1e-6)));
}

TEST(DeltaRate, StationaryPatternOnLatitudeCircle) {
  // Vehicle on the reference circle itself, 0.3 behind, same speed and curvature.
  const LatitudeCircleReference ref(kPi / 3, 1.0);
  const ReferenceSample rs = ref.at(1.0);
  const Rotation3 g = ref.at(0.7).frame;
  const ErrorAngles e = errorAngles(g, rs.frame);
  ASSERT_GT(std::abs(std::sin(e.delta) * std::sin(e.sigma)), 1e-3);
  const double dSigma = sigmaRate(1.0, g, rs, e.sigma, 1.0);
  EXPECT_NEAR(dSigma, 0.0, 1e-14);
  EXPECT_NEAR(deltaRate(1.0, g, rs, e, dSigma, 1.0, 1e-6), 0.0, 1e-13);
}

TEST(DeltaRate, SingularAtAlignedError) {
  const Rotation3 g = expSO3(Vec3::UnitY(), -0.1);
  const ReferenceSample ref = staticSample(Rotation3::identity());
  const ErrorAngles e = errorAngles(g, ref.frame);
  EXPECT_THROW(deltaRate(1.0, g, ref, e, 0.0, 1.0, 1e-6), SingularConfiguration);
}

TEST(SpeedFeedbackRate, ZeroAtEquilibrium) {
  const ReferenceSample ref = staticSample(Rotation3::identity(), 0.4);
  const ErrorAngles e = errorAngles(ref.frame, ref.frame);
  const AffineRate r = speedFeedbackRate(ref.frame, ref, e, kGains, kPolicy, 1.0);
  EXPECT_EQ(r.at(0.4), 0.0);
}

TEST(SpeedFeedbackRate, AffineInCurvature) {
  const ReferenceSample ref = staticSample(Rotation3::identity(), 0.3);
  const Rotation3 g = offset(ref.frame, 0.2, 0.6, 0.1);
  const AffineRate r = speedFeedbackRate(g, ref, errorAngles(g, ref.frame), kGains, kPolicy, 1.0);
  const double quad = r.at(0.0) - 2.0 * r.at(1.0) + r.at(2.0);
  EXPECT_LT(std::abs(quad), 1e-10);
}

TEST(ClosedLoopDerivatives, MatchFiniteDifferencesAlongTrajectory) {
  const LatitudeCircleReference ref(kPi / 4, 1.0);
  const double h = 1e-4;
  const ClosedLoopRun run = simulate(ref, offset(ref.at(0.0).frame, 0.2, 0.6, 0.0), h, 3000);
  double worstSigma = 0.0, worstDelta = 0.0, worstSpeed = 0.0;
  for (std::size_t k = 1000; k + 1 < run.g.size(); k += 500) {
    auto angles = [&](std::size_t i) { return errorAngles(run.g[i], ref.at(run.s[i]).frame); };
    auto speed = [&](std::size_t i) {
      return speedFeedback(run.g[i], ref.at(run.s[i]), angles(i), kGains, kPolicy, 1.0);
    };
    const ReferenceSample rs = ref.at(run.s[k]);
    const ErrorAngles e = angles(k);
    const double u = speed(k);
    const double dSigma = sigmaRate(u, run.g[k], rs, e.sigma, 1.0);
    const double dDelta = deltaRate(u, run.g[k], rs, e, dSigma, 1.0, 1e-6);
    const double kappa = closedLoopRate(run.g[k], rs, kGains, kPolicy, kGeom).diagnostics.curvature;
    const double dSpeed = speedFeedbackRate(run.g[k], rs, e, kGains, kPolicy, 1.0).at(kappa);
    const double fdSigma = (angles(k + 1).sigma - angles(k - 1).sigma) / (2 * h);
    const double fdDelta = wrapAngle(angles(k + 1).delta - angles(k - 1).delta) / (2 * h);
    const double fdSpeed = (speed(k + 1) - speed(k - 1)) / (2 * h);
    worstSigma = std::max(worstSigma, std::abs(fdSigma - dSigma));
    worstDelta = std::max(worstDelta, std::abs(fdDelta - dDelta));
    worstSpeed = std::max(worstSpeed, std::abs(fdSpeed - dSpeed));
  }
  EXPECT_LT(worstSigma, 1e-6);
  EXPECT_LT(worstDelta, 1e-6);
  EXPECT_LT(worstSpeed, 1e-5);
}

TEST(SteeringFeedback, ZeroErrorLimitTracksReferenceCurvature) {
  const ReferenceSample ref = staticSample(Sampler().rotation(), 0.7);
  const SteeringResult r =
      steeringFeedback(ref.frame, ref, errorAngles(ref.frame, ref.frame), kGains, kPolicy, kGeom);
  EXPECT_EQ(r.mode, SteeringMode::kLimit);
  EXPECT_EQ(r.curvature, 0.7);
  EXPECT_NEAR(r.steering, std::atan(kGeom.effectiveWheelbase() * 0.7), 1e-15);
}

TEST(SteeringFeedback, LateralOffsetOnEquatorSolvesResidual) {
  // A pure lateral offset needs a heading offset to keep the speed law regular.
  const GreatCircleReference ref(Vec3::UnitZ(), 1.0);
  const ReferenceSample rs = ref.at(0.0);
  const Rotation3 g = offset(rs.frame, 0.2, kPi / 2, -0.5);
  const ErrorAngles e = errorAngles(g, rs.frame);
  const SteeringResult r = steeringFeedback(g, rs, e, kGains, kPolicy, kGeom);
  EXPECT_EQ(r.mode, SteeringMode::kAffine);
  EXPECT_LT(std::abs(steeringResidual(g, rs, e, kGains, kPolicy, 1.0, r.curvature)), 1e-10);
}

TEST(SteeringFeedback, ResidualIsAffineInCurvature) {
  Sampler rng(41);
  for (int i = 0; i < 50; ++i) {
    const ReferenceSample ref = staticSample(rng.rotation(), rng.uniform(-1, 1));
    const Rotation3 g =
        offset(ref.frame, rng.uniform(0.05, 0.5), rng.uniform(0.3, 2.8), rng.uniform(-0.3, 0.3));
    const ErrorAngles e = errorAngles(g, ref.frame);
    auto f = [&](double k) { return steeringResidual(g, ref, e, kGains, kPolicy, 1.0, k); };
    const double scale = std::max({1.0, std::abs(f(-1.0)), std::abs(f(1.0))});
    EXPECT_LT(std::abs(f(-1.0) - 2.0 * f(0.0) + f(1.0)) / scale, 1e-9);
  }
}

TEST(SteeringFeedback, MisalignmentSingularityFallsBack) {
  const ReferenceSample ref = staticSample(Rotation3::identity(), 0.2);
  const Rotation3 g = offset(ref.frame, 0.1, 0.0, 0.0);
  const SteeringResult r =
      steeringFeedback(g, ref, errorAngles(g, ref.frame), kGains, kPolicy, kGeom);
  EXPECT_EQ(r.mode, SteeringMode::kFallback);
  EXPECT_EQ(r.curvature, 0.2);
}

TEST(SteeringFeedback, BoundsThrowOrSaturate) {
  const ReferenceSample ref = staticSample(Rotation3::identity());
  const Rotation3 g = offset(ref.frame, 0.05, kPi / 2, -0.8);
  const ErrorAngles e = errorAngles(g, ref.frame);
  EXPECT_THROW(steeringFeedback(g, ref, e, kGains, kPolicy, kGeom), InfeasibleSteering);
  SingularityPolicy saturating = kPolicy;
  saturating.saturate = true;
  const SteeringResult r = steeringFeedback(g, ref, e, kGains, saturating, kGeom);
  EXPECT_EQ(r.mode, SteeringMode::kSaturated);
  EXPECT_LE(std::abs(r.steering), saturating.maxSteering);
}

TEST(ClosedLoopRate, EquilibriumFollowsReference) {
  const LatitudeCircleReference ref(1.0, 2.0);
  const CarGeometry geom(0.1, 0.0, 2.0);
  const ReferenceSample rs = ref.at(0.5);
  const ClosedLoopRate r = closedLoopRate(rs.frame, rs, kGains, kPolicy, geom);
  EXPECT_EQ(r.diagnostics.speed, 1.0);
  EXPECT_LT(maxAbsDiff(r.bodyRate, Twist3{0.0, 0.5, rs.curvature}), 1e-15);
}

TEST(ClosedLoopRate, ErrorsCarryStation) {
  const GreatCircleReference ref(Vec3::UnitZ(), 1.0);
  ReferenceSample rs = ref.at(0.0);
  rs.station = 2.5;
  const Rotation3 g = offset(rs.frame, 0.1, kPi / 2, 0.0);
  try {
    closedLoopRate(g, rs, kGains, kPolicy, kGeom);
    FAIL() << "expected SingularConfiguration";
  } catch (const SingularConfiguration& e) {
    ASSERT_TRUE(e.station().has_value());
    EXPECT_EQ(*e.station(), 2.5);
    EXPECT_NE(std::string(e.what()).find("s_d"), std::string::npos);
  }
}

TEST(ClosedLoopRate, InvariantUnderLeftAction) {
  Sampler rng(51);
  for (int i = 0; i < 50; ++i) {
    const ReferenceSample ref = staticSample(rng.rotation(), rng.uniform(-1, 1));
    const Rotation3 g =
        offset(ref.frame, rng.uniform(0.05, 0.4), rng.uniform(0.3, 2.8), rng.uniform(-0.2, 0.2));
    const Rotation3 h = rng.rotation();
    ReferenceSample moved = ref;
    moved.frame = h * ref.frame;
    ClosedLoopDiagnostics a, b;
    try {
      a = closedLoopRate(g, ref, kGains, kPolicy, kGeom).diagnostics;
    } catch (const InfeasibleSteering&) {
      continue;
    }
    b = closedLoopRate(h * g, moved, kGains, kPolicy, kGeom).diagnostics;
    EXPECT_NEAR(a.speed, b.speed, 1e-12);
    EXPECT_NEAR(a.curvature, b.curvature, 1e-12 * std::max(1.0, std::abs(a.curvature)));
  }
}

TEST(ClosedLoop, SigmaDecaysExponentially) {
  const GreatCircleReference ref(Vec3::UnitZ(), 1.0);
  const ClosedLoopRun run = simulate(ref, offset(ref.at(0.0).frame, 0.1, 0.6, 0.0), 1e-3, 3000);
  double worst = 0.0;
  for (std::size_t k = 0; k < run.g.size(); k += 100) {
    const double sigma = errorAngles(run.g[k], ref.at(run.s[k]).frame).sigma;
    const double oracle = 0.1 * std::exp(-run.s[k]);
    worst = std::max(worst, std::abs(sigma - oracle) / oracle);
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(ClosedLoop, DeltaFollowsLinearDynamics) {
  const GreatCircleReference ref(Vec3::UnitZ(), 1.0);
  const Rotation3 g0 = offset(ref.at(0.0).frame, 0.1, 0.6, 0.0);
  const ClosedLoopRun run = simulate(ref, g0, 1e-3, 3000);
  // Critically damped oracle with matched delta(0), delta'(0).
  const ReferenceSample r0 = ref.at(0.0);
  const ErrorAngles e0 = errorAngles(g0, r0.frame);
  const double u0 = speedFeedback(g0, r0, e0, kGains, kPolicy, 1.0);
  const double d1 = deltaRate(u0, g0, r0, e0, sigmaRate(u0, g0, r0, e0.sigma, 1.0), 1.0, 1e-6);
  double worst = 0.0;
  for (std::size_t k = 0; k < run.g.size(); k += 100) {
    const double s = run.s[k];
    const double oracle = (e0.delta + (d1 + e0.delta) * s) * std::exp(-s);
    worst = std::max(worst, std::abs(errorAngles(run.g[k], ref.at(s).frame).delta - oracle));
  }
  EXPECT_LT(worst, 1e-3);
}
