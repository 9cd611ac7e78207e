#pragma once

#include <optional>
#include <span>
#include <vector>

#include "spherecar/lie.hpp"

namespace spherecar {

/// Physical car on a sphere: wheelbase l, wheel radius r, sphere radius rho.
class CarGeometry {
 public:
  /// Throws DomainError unless l > 0, r >= 0, rho > 0 and the car fits on
  /// the sphere (central angle below pi).
  CarGeometry(double wheelbase, double wheelRadius, double sphereRadius);

  double wheelbase() const { return l_; }
  double wheelRadius() const { return r_; }
  double sphereRadius() const { return rho_; }

  /// lambda = l / (rho + r).
  double centralAngle() const { return l_ / (rho_ + r_); }
  /// ell = rho * sin(lambda), the steering lever arm on the sphere.
  double effectiveWheelbase() const;

 private:
  double l_;
  double r_;
  double rho_;
};

struct WheelbaseOnSphere {
  double centralAngle;
  double effectiveWheelbase;
};

WheelbaseOnSphere effectiveWheelbase(const CarGeometry& geom);

struct PlanarCarState {
  Vec2 position = Vec2::Zero();  // rear-axle midpoint
  double heading = 0.0;
};

/// Derivative of a PlanarCarState (w.r.t. time or arc length).
struct PlanarCarRate {
  Vec2 position = Vec2::Zero();
  double heading = 0.0;
};

struct ControlInput {
  double speed = 0.0;     // v, or the normalised speed u = v / v_d
  double steering = 0.0;  // phi, |phi| < pi/2
};

/// Rolling-without-slipping planar model in time.
PlanarCarRate planarRate(const PlanarCarState& state, double speed, double steering,
                         double wheelbase);

/// Planar model in arc length: y' = tau, theta' = tan(phi) / l.
PlanarCarRate planarArclengthRate(const PlanarCarState& state, double steering, double wheelbase);

/// Configuration R(y/rho, theta) R_y for a rear-axle position y on the sphere
/// and heading theta measured from the meridian-aligned frame R_y.
/// Throws PoleSingularity at the south pole and DomainError off the sphere.
Rotation3 configFromPosition(const Vec3& y, double heading, double sphereRadius);

/// Rear-axle position rho * beta.
inline Vec3 rearAxlePosition(const Rotation3& g, double sphereRadius) {
  return sphereRadius * g.binormal();
}

/// (0, v/rho, (v/ell) tan phi).
Twist3 sphericalBodyVelocity(double speed, double steering, const CarGeometry& geom);

/// Left-invariant model g_dot = g * hat(body velocity).
Mat3 sphericalRate(const Rotation3& g, const ControlInput& input, const CarGeometry& geom);

/// Model in the reference arc length with normalised speed u.
Mat3 arclengthRate(const Rotation3& g, double normalizedSpeed, double steering,
                   const CarGeometry& geom);

/// kappa_g = tan(phi) / ell.
double geodesicCurvature(double steering, const CarGeometry& geom);
/// phi = atan(ell * kappa_g).
double steeringFromCurvature(double curvature, const CarGeometry& geom);

struct CurveFrame {
  Rotation3 frame;  // (tau, nu, beta)
  double speed;     // |y_dot|
};

/// Frame (y_dot/v, (y/rho) x (y_dot/v), y/rho) of a curve on the sphere.
CurveFrame framesFromCurve(const Vec3& y, const Vec3& yDot, double sphereRadius);

/// Position and time derivatives of a curve at one parameter value.
struct CurveJet {
  Vec3 y = Vec3::Zero();
  Vec3 dy = Vec3::Zero();
  Vec3 ddy = Vec3::Zero();
  std::optional<Vec3> dddy;
};

struct FlatInputs {
  Rotation3 frame;
  double speed;
  double geodesicCurvature;
  double steering;
  /// d kappa_g / ds when the jet carries a third derivative.
  std::optional<double> curvatureRate;
};

/// Recovers configuration and inputs from the rear-axle position (flat output).
/// Throws DomainError at zero speed.
FlatInputs flatParametrization(const CurveJet& jet, const CarGeometry& geom);

struct CurvatureSplit {
  std::vector<double> curvature;          // |y''|, one per interior sample
  std::vector<double> geodesicCurvature;  // <y'', nu>
  double maxResidual = 0.0;               // max |kappa^2 - kappa_g^2 - rho^-2|
  /// Richardson estimate of the discretisation part of maxResidual.
  double discretizationEstimate = 0.0;
  /// True when the discretisation estimate exceeds the requested tolerance.
  bool stepTooCoarse = false;
};

/// Checks kappa^2 = kappa_g^2 + rho^-2 on unit-speed samples y(s_i), s_i = i*step,
/// with second-order central differences.
CurvatureSplit curvatureSplitCheck(std::span<const Vec3> samples, double step, double sphereRadius,
                                   double tolerance = 1e-6);

}  // namespace spherecar
