#pragma once

#include <cstdint>
#include <string_view>

#include "spherecar/car_models.hpp"
#include "spherecar/reference.hpp"
#include "spherecar/tracking_error.hpp"

namespace spherecar {

/// Coefficients of sigma' + c_sigma sigma = 0 and
/// delta'' + c_delta1 delta' + c_delta0 delta = 0.
struct ControllerGains {
  double cSigma = 1.0;
  double cDelta1 = 2.0;
  double cDelta0 = 1.0;

  /// Throws DomainError unless every coefficient is positive.
  void validate() const;
};

/// Numeric realisation of the analytic singular limits.
struct SingularityPolicy {
  /// Speed feedback is singular when |<tau, beta_d>| <= denominatorEpsilon * sin(sigma).
  double denominatorEpsilon = 1e-6;
  /// Zero-error limit region: max(sigma, angle(tau, tau_d)) < limitEpsilon.
  double limitEpsilon = 1e-8;
  /// Misalignment solve is singular when |sin(delta) sin(sigma)| <= misalignmentEpsilon.
  double misalignmentEpsilon = 1e-6;
  /// Closed-form steering solve needs |dF/dkappa_g| > affineEpsilon.
  double affineEpsilon = 1e-12;
  /// Bound on |kappa_g|; 0 selects 10 / ell.
  double maxCurvature = 0.0;
  /// Bound on |phi|, below pi/2.
  double maxSteering = 1.4;
  /// Clamp to the bounds instead of throwing InfeasibleSteering.
  bool saturate = false;

  void validate() const;
  double curvatureBound(const CarGeometry& geom) const;
};

/// First and second arc-length derivatives of the reference frame vectors.
struct ReferenceDerivatives {
  Vec3 dBeta;   // tau_d / rho
  Vec3 dNu;     // -kappa_d tau_d
  Vec3 ddBeta;  // (kappa_d nu_d - beta_d / rho) / rho
  Vec3 ddNu;    // -kappa_d' tau_d - kappa_d (kappa_d nu_d - beta_d / rho)
};

ReferenceDerivatives referenceDerivatives(const ReferenceSample& ref, double sphereRadius);

/// beta' and beta'' of the vehicle for speed u, its rate u' and curvature kappa_g.
struct VehicleDerivatives {
  Vec3 dBeta;
  Vec3 ddBeta;
};

VehicleDerivatives vehicleDerivatives(const Rotation3& g, double speed, double speedRate,
                                      double curvature, double sphereRadius);

/// True inside the zero-error region where u = 1 and kappa_g = kappa_{g,d}.
bool inLimitRegion(const Rotation3& g, const Rotation3& gd, double sigma,
                   const SingularityPolicy& policy);

/// Speed feedback u = mu(sigma, g, g_d) imposing sigma' = -c_sigma sigma:
///   u = (rho c_sigma sigma sin(sigma) - <beta, tau_d>) / <tau, beta_d>.
/// Returns 1 in the limit region; throws SingularConfiguration when the
/// denominator vanishes elsewhere.
double speedFeedback(const Rotation3& g, const ReferenceSample& ref, const ErrorAngles& errors,
                     const ControllerGains& gains, const SingularityPolicy& policy,
                     double sphereRadius);

/// sigma' = -(u <tau, beta_d> + <beta, tau_d>) / (rho sin(sigma)); 0 for sigma at zero.
double sigmaRate(double speed, const Rotation3& g, const ReferenceSample& ref, double sigma,
                 double sphereRadius);

/// delta' from the derivative of cos(delta) sin(sigma) = <beta x beta_d, nu_d>.
/// Throws SingularConfiguration when |sin(delta) sin(sigma)| <= epsilon.
double deltaRate(double speed, const Rotation3& g, const ReferenceSample& ref,
                 const ErrorAngles& errors, double sigmaRate, double sphereRadius, double epsilon);

/// u' = d mu / d s_d, affine in kappa_g: u'(kappa_g) = offset + slope * kappa_g.
struct AffineRate {
  double offset = 0.0;
  double slope = 0.0;
  double at(double curvature) const { return offset + slope * curvature; }
};

/// Derivative of the speed feedback along the closed loop (u = mu). Zero in
/// the limit region.
AffineRate speedFeedbackRate(const Rotation3& g, const ReferenceSample& ref,
                             const ErrorAngles& errors, const ControllerGains& gains,
                             const SingularityPolicy& policy, double sphereRadius);

/// F(kappa_g): second derivative of <beta x beta_d, nu_d> minus its value
/// under the imposed sigma and delta dynamics. Roots of F are the steering
/// curvatures that realise the imposed misalignment dynamics.
double steeringResidual(const Rotation3& g, const ReferenceSample& ref, const ErrorAngles& errors,
                        const ControllerGains& gains, const SingularityPolicy& policy,
                        double sphereRadius, double curvature);

enum class SteeringMode : std::uint8_t {
  kAffine,     // closed-form root of the affine residual
  kSecant,     // safeguarded secant iteration
  kLimit,      // zero-error limit: kappa_g = kappa_{g,d}
  kFallback,   // misalignment parametrisation singular: kappa_g = kappa_{g,d}
  kSaturated,  // root clamped to the curvature or steering bound
};

std::string_view toString(SteeringMode mode);

struct SteeringResult {
  double curvature = 0.0;  // kappa_g
  double steering = 0.0;   // phi
  SteeringMode mode = SteeringMode::kLimit;
  double residual = 0.0;  // |F(kappa_g)|, 0 in limit and fallback modes
  int iterations = 0;     // secant iterations
};

/// Quasi-static steering feedback. Throws InfeasibleSteering when no root lies
/// inside the bounds (unless the policy saturates) and SingularConfiguration
/// when the speed feedback is singular.
SteeringResult steeringFeedback(const Rotation3& g, const ReferenceSample& ref,
                                const ErrorAngles& errors, const ControllerGains& gains,
                                const SingularityPolicy& policy, const CarGeometry& geom);

struct ClosedLoopDiagnostics {
  double sigma = 0.0;
  double delta = 0.0;
  double speed = 1.0;      // u
  double steering = 0.0;   // phi
  double curvature = 0.0;  // kappa_g
  SteeringMode mode = SteeringMode::kLimit;
};

struct ClosedLoopRate {
  Twist3 bodyRate;  // g' = g hat(bodyRate)
  ClosedLoopDiagnostics diagnostics;
};

/// Closed-loop arc-length rate of the vehicle configuration. Controller errors
/// are rethrown with the station in the message.
ClosedLoopRate closedLoopRate(const Rotation3& g, const ReferenceSample& ref,
                              const ControllerGains& gains, const SingularityPolicy& policy,
                              const CarGeometry& geom);

}  // namespace spherecar
