#include "spherecar/controller.hpp"

#include <cmath>
#include <sstream>

#include "spherecar/errors.hpp"

namespace spherecar {

void ControllerGains::validate() const {
  if (!(cSigma > 0.0) || !(cDelta1 > 0.0) || !(cDelta0 > 0.0)) {
    throw DomainError("controller gains must be positive");
  }
}

void SingularityPolicy::validate() const {
  if (!(denominatorEpsilon > 0.0) || !(limitEpsilon > 0.0) || !(misalignmentEpsilon > 0.0) ||
      !(affineEpsilon > 0.0) || !(maxCurvature >= 0.0) || !(maxSteering > 0.0)) {
    throw DomainError("singularity policy thresholds must be positive");
  }
  if (!(maxSteering < 0.5 * kPi)) {
    throw DomainError("singularity policy: max steering must be below pi/2");
  }
}

double SingularityPolicy::curvatureBound(const CarGeometry& geom) const {
  return maxCurvature > 0.0 ? maxCurvature : 10.0 / geom.effectiveWheelbase();
}

ReferenceDerivatives referenceDerivatives(const ReferenceSample& ref, double rho) {
  const Vec3 tau = ref.frame.tangent();
  const Vec3 nu = ref.frame.normal();
  const Vec3 beta = ref.frame.binormal();
  const double k = ref.curvature;
  const Vec3 dTau = k * nu - beta / rho;
  return {tau / rho, -k * tau, dTau / rho, -ref.curvatureRate * tau - k * dTau};
}

VehicleDerivatives vehicleDerivatives(const Rotation3& g, double speed, double speedRate,
                                      double curvature, double rho) {
  const Vec3 tau = g.tangent();
  const Vec3 dTau = speed * (curvature * g.normal() - g.binormal() / rho);
  return {speed * tau / rho, speedRate * tau / rho + speed / rho * dTau};
}

bool inLimitRegion(const Rotation3& g, const Rotation3& gd, double sigma,
                   const SingularityPolicy& policy) {
  const Vec3 tau = g.tangent();
  const Vec3 tauD = gd.tangent();
  const double headingAngle = std::atan2(tau.cross(tauD).norm(), tau.dot(tauD));
  return std::max(sigma, headingAngle) < policy.limitEpsilon;
}

namespace {

struct SpeedTerms {
  double numerator;
  double denominator;
};

SpeedTerms speedTerms(const Rotation3& g, const ReferenceSample& ref, double sigma,
                      const ControllerGains& gains, double rho) {
  return {rho * gains.cSigma * sigma * std::sin(sigma) - g.binormal().dot(ref.frame.tangent()),
          g.tangent().dot(ref.frame.binormal())};
}

void requireRegularDenominator(double denominator, double sigma, const SingularityPolicy& policy) {
  if (!(std::abs(denominator) > policy.denominatorEpsilon * std::sin(sigma))) {
    std::ostringstream msg;
    msg << "speed feedback singular: <tau, beta_d> = " << denominator << " at sigma = " << sigma;
    throw SingularConfiguration(msg.str());
  }
}

}  // namespace

double speedFeedback(const Rotation3& g, const ReferenceSample& ref, const ErrorAngles& errors,
                     const ControllerGains& gains, const SingularityPolicy& policy, double rho) {
  if (inLimitRegion(g, ref.frame, errors.sigma, policy)) {
    return 1.0;
  }
  const SpeedTerms t = speedTerms(g, ref, errors.sigma, gains, rho);
  requireRegularDenominator(t.denominator, errors.sigma, policy);
  return t.numerator / t.denominator;
}

double sigmaRate(double speed, const Rotation3& g, const ReferenceSample& ref, double sigma,
                 double rho) {
  const double s = std::sin(sigma);
  if (s <= kSigmaEpsilon) {
    return 0.0;
  }
  return -(speed * g.tangent().dot(ref.frame.binormal()) + g.binormal().dot(ref.frame.tangent())) /
         (rho * s);
}

double deltaRate(double speed, const Rotation3& g, const ReferenceSample& ref,
                 const ErrorAngles& errors, double dSigma, double rho, double epsilon) {
  const double den = std::sin(errors.delta) * std::sin(errors.sigma);
  if (!(std::abs(den) > epsilon)) {
    std::ostringstream msg;
    msg << "misalignment rate singular: sin(delta) sin(sigma) = " << den;
    throw SingularConfiguration(msg.str());
  }
  const Vec3 beta = g.binormal();
  const Vec3 betaD = ref.frame.binormal();
  const Vec3 nuD = ref.frame.normal();
  const ReferenceDerivatives rd = referenceDerivatives(ref, rho);
  const Vec3 dBeta = speed * g.tangent() / rho;
  const double lhs =
      (dBeta.cross(betaD) + beta.cross(rd.dBeta)).dot(nuD) + beta.cross(betaD).dot(rd.dNu);
  return (dSigma * std::cos(errors.sigma) * std::cos(errors.delta) - lhs) / den;
}

AffineRate speedFeedbackRate(const Rotation3& g, const ReferenceSample& ref,
                             const ErrorAngles& errors, const ControllerGains& gains,
                             const SingularityPolicy& policy, double rho) {
  if (inLimitRegion(g, ref.frame, errors.sigma, policy)) {
    return {};
  }
  const double sigma = errors.sigma;
  const SpeedTerms t = speedTerms(g, ref, sigma, gains, rho);
  requireRegularDenominator(t.denominator, sigma, policy);
  const double u = t.numerator / t.denominator;

  const Vec3 tau = g.tangent();
  const Vec3 nu = g.normal();
  const Vec3 beta = g.binormal();
  const Vec3 tauD = ref.frame.tangent();
  const Vec3 betaD = ref.frame.binormal();
  const Vec3 dTauD = ref.curvature * ref.frame.normal() - betaD / rho;

  const double dSigma = sigmaRate(u, g, ref, sigma, rho);
  const double dNum = rho * gains.cSigma * dSigma * (std::sin(sigma) + sigma * std::cos(sigma)) -
                      (u / rho) * tau.dot(tauD) - beta.dot(dTauD);
  // D' = u <kappa_g nu - beta / rho, beta_d> + <tau, tau_d> / rho
  const double dDenOffset = -u * beta.dot(betaD) / rho + tau.dot(tauD) / rho;
  const double dDenSlope = u * nu.dot(betaD);
  return {(dNum - u * dDenOffset) / t.denominator, -u * dDenSlope / t.denominator};
}

namespace {

// Everything in F except the kappa_g dependence, evaluated once per state.
struct ResidualTerms {
  double speed;
  AffineRate speedRate;
  double dSigma;
  double ddSigma;
  double dDelta;
  double ddDelta;
};

ResidualTerms residualTerms(const Rotation3& g, const ReferenceSample& ref,
                            const ErrorAngles& errors, const ControllerGains& gains,
                            const SingularityPolicy& policy, double rho) {
  ResidualTerms r{};
  r.speed = speedFeedback(g, ref, errors, gains, policy, rho);
  r.speedRate = speedFeedbackRate(g, ref, errors, gains, policy, rho);
  r.dSigma = sigmaRate(r.speed, g, ref, errors.sigma, rho);
  r.ddSigma = -gains.cSigma * r.dSigma;
  r.dDelta = deltaRate(r.speed, g, ref, errors, r.dSigma, rho, policy.misalignmentEpsilon);
  r.ddDelta = -gains.cDelta1 * r.dDelta - gains.cDelta0 * errors.delta;
  return r;
}

double residualAt(const Rotation3& g, const ReferenceSample& ref, const ErrorAngles& e,
                  const ResidualTerms& r, double rho, double curvature) {
  const Vec3 beta = g.binormal();
  const Vec3 betaD = ref.frame.binormal();
  const Vec3 nuD = ref.frame.normal();
  const ReferenceDerivatives rd = referenceDerivatives(ref, rho);
  const VehicleDerivatives vd =
      vehicleDerivatives(g, r.speed, r.speedRate.at(curvature), curvature, rho);

  const double lhs =
      (vd.ddBeta.cross(betaD) + 2.0 * vd.dBeta.cross(rd.dBeta) + beta.cross(rd.ddBeta)).dot(nuD) +
      2.0 * (vd.dBeta.cross(betaD) + beta.cross(rd.dBeta)).dot(rd.dNu) +
      beta.cross(betaD).dot(rd.ddNu);

  const double ss = std::sin(e.sigma);
  const double cs = std::cos(e.sigma);
  const double sd = std::sin(e.delta);
  const double cd = std::cos(e.delta);
  const double rhs = r.ddSigma * cs * cd - r.dSigma * r.dSigma * ss * cd -
                     2.0 * r.dSigma * r.dDelta * sd * cs - r.ddDelta * sd * ss -
                     r.dDelta * r.dDelta * cd * ss;
  return lhs - rhs;
}

}  // namespace

double steeringResidual(const Rotation3& g, const ReferenceSample& ref, const ErrorAngles& errors,
                        const ControllerGains& gains, const SingularityPolicy& policy, double rho,
                        double curvature) {
  const ResidualTerms r = residualTerms(g, ref, errors, gains, policy, rho);
  return residualAt(g, ref, errors, r, rho, curvature);
}

std::string_view toString(SteeringMode mode) {
  switch (mode) {
    case SteeringMode::kAffine:
      return "affine";
    case SteeringMode::kSecant:
      return "secant";
    case SteeringMode::kLimit:
      return "limit";
    case SteeringMode::kFallback:
      return "fallback";
    case SteeringMode::kSaturated:
      return "saturated";
  }
  return "unknown";
}

SteeringResult steeringFeedback(const Rotation3& g, const ReferenceSample& ref,
                                const ErrorAngles& errors, const ControllerGains& gains,
                                const SingularityPolicy& policy, const CarGeometry& geom) {
  const double rho = geom.sphereRadius();
  auto passthrough = [&](SteeringMode mode) {
    return SteeringResult{ref.curvature, steeringFromCurvature(ref.curvature, geom), mode, 0.0, 0};
  };
  if (inLimitRegion(g, ref.frame, errors.sigma, policy)) {
    return passthrough(SteeringMode::kLimit);
  }
  // Surfaces a singular speed feedback before the misalignment check.
  speedFeedback(g, ref, errors, gains, policy, rho);
  if (!(std::abs(std::sin(errors.delta) * std::sin(errors.sigma)) > policy.misalignmentEpsilon)) {
    return passthrough(SteeringMode::kFallback);
  }

  const ResidualTerms terms = residualTerms(g, ref, errors, gains, policy, rho);
  auto residual = [&](double k) { return residualAt(g, ref, errors, terms, rho, k); };

  SteeringResult out;
  const double f0 = residual(0.0);
  const double slope = residual(1.0) - f0;
  if (std::abs(slope) > policy.affineEpsilon) {
    out.curvature = -f0 / slope;
    out.mode = SteeringMode::kAffine;
  } else {
    // Secant iteration from the reference curvature; steps are clipped to the bound.
    const double bound = policy.curvatureBound(geom);
    double k0 = ref.curvature;
    double k1 = ref.curvature + 1.0;
    double r0 = residual(k0);
    double r1 = residual(k1);
    bool converged = false;
    for (int it = 0; it < 50; ++it) {
      out.iterations = it + 1;
      if (std::abs(r1) <= 1e-12) {
        converged = true;
        break;
      }
      const double dr = r1 - r0;
      if (dr == 0.0) {
        break;
      }
      const double k2 = std::clamp(k1 - r1 * (k1 - k0) / dr, -bound, bound);
      k0 = k1;
      r0 = r1;
      k1 = k2;
      r1 = residual(k1);
    }
    if (!converged) {
      throw InfeasibleSteering("steering feedback: secant iteration did not converge");
    }
    out.curvature = k1;
    out.mode = SteeringMode::kSecant;
  }
  out.residual = std::abs(residual(out.curvature));

  const double bound = policy.curvatureBound(geom);
  if (!std::isfinite(out.curvature) || std::abs(out.curvature) > bound) {
    if (!policy.saturate || !std::isfinite(out.curvature)) {
      std::ostringstream msg;
      msg << "steering feedback: kappa_g = " << out.curvature << " exceeds bound " << bound;
      throw InfeasibleSteering(msg.str());
    }
    out.curvature = std::clamp(out.curvature, -bound, bound);
    out.mode = SteeringMode::kSaturated;
  }
  out.steering = steeringFromCurvature(out.curvature, geom);
  if (std::abs(out.steering) > policy.maxSteering) {
    if (!policy.saturate) {
      std::ostringstream msg;
      msg << "steering feedback: phi = " << out.steering << " exceeds bound " << policy.maxSteering;
      throw InfeasibleSteering(msg.str());
    }
    out.steering = std::clamp(out.steering, -policy.maxSteering, policy.maxSteering);
    out.curvature = geodesicCurvature(out.steering, geom);
    out.mode = SteeringMode::kSaturated;
  }
  return out;
}

ClosedLoopRate closedLoopRate(const Rotation3& g, const ReferenceSample& ref,
                              const ControllerGains& gains, const SingularityPolicy& policy,
                              const CarGeometry& geom) {
  try {
    const double rho = geom.sphereRadius();
    const ErrorAngles e = errorAngles(g, ref.frame);
    const double u = speedFeedback(g, ref, e, gains, policy, rho);
    const SteeringResult steer = steeringFeedback(g, ref, e, gains, policy, geom);
    ClosedLoopRate out;
    out.bodyRate = Twist3{0.0, u / rho, u * steer.curvature};
    out.diagnostics = {e.sigma, e.delta, u, steer.steering, steer.curvature, steer.mode};
    return out;
  } catch (Error& e) {
    e.attachStation(ref.station);
    throw;
  }
}

}  // namespace spherecar
