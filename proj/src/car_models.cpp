#include "spherecar/car_models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spherecar/errors.hpp"

namespace spherecar {

namespace {

void requireSteering(double steering) {
  if (!std::isfinite(steering) || std::abs(steering) >= 0.5 * kPi) {
    std::ostringstream msg;
    msg << "steering angle " << steering << " outside (-pi/2, pi/2)";
    throw DomainError(msg.str());
  }
}

void requireOnSphere(const Vec3& y, double sphereRadius) {
  if (!y.allFinite() ||
      std::abs(y.norm() - sphereRadius) > kRotationTolerance * std::max(1.0, sphereRadius)) {
    std::ostringstream msg;
    msg << "point is not on the sphere of radius " << sphereRadius << " (|y| = " << y.norm() << ")";
    throw DomainError(msg.str());
  }
}

}  // namespace

CarGeometry::CarGeometry(double wheelbase, double wheelRadius, double sphereRadius)
    : l_(wheelbase), r_(wheelRadius), rho_(sphereRadius) {
  if (!(l_ > 0.0) || !std::isfinite(l_)) {
    throw DomainError("car geometry: wheelbase must be positive");
  }
  if (!(r_ >= 0.0) || !std::isfinite(r_)) {
    throw DomainError("car geometry: wheel radius must be non-negative");
  }
  if (!(rho_ > 0.0) || !std::isfinite(rho_)) {
    throw DomainError("car geometry: sphere radius must be positive");
  }
  if (!(centralAngle() < kPi)) {
    throw DomainError("car geometry: wheelbase does not fit on the sphere");
  }
}

double CarGeometry::effectiveWheelbase() const { return rho_ * std::sin(centralAngle()); }

WheelbaseOnSphere effectiveWheelbase(const CarGeometry& geom) {
  return {geom.centralAngle(), geom.effectiveWheelbase()};
}

PlanarCarRate planarRate(const PlanarCarState& state, double speed, double steering,
                         double wheelbase) {
  requireSteering(steering);
  return {speed * Vec2{std::cos(state.heading), std::sin(state.heading)},
          speed / wheelbase * std::tan(steering)};
}

PlanarCarRate planarArclengthRate(const PlanarCarState& state, double steering, double wheelbase) {
  requireSteering(steering);
  return {Vec2{std::cos(state.heading), std::sin(state.heading)}, std::tan(steering) / wheelbase};
}

Rotation3 configFromPosition(const Vec3& y, double heading, double sphereRadius) {
  requireOnSphere(y, sphereRadius);
  const Vec3 beta = y / sphereRadius;
  const Vec3 cross = Vec3::UnitZ().cross(beta);
  const double crossNorm = cross.norm();
  Rotation3 meridian;
  if (crossNorm < 1e-15) {
    if (beta.z() < 0.0) {
      throw PoleSingularity("configFromPosition: meridian rotation undefined at the south pole");
    }
  } else {
    const double colatitude = std::atan2(crossNorm, beta.z());
    meridian = expSO3(cross / crossNorm, colatitude);
  }
  return expSO3(beta.normalized(), heading) * meridian;
}

Twist3 sphericalBodyVelocity(double speed, double steering, const CarGeometry& geom) {
  requireSteering(steering);
  return {0.0, speed / geom.sphereRadius(), speed / geom.effectiveWheelbase() * std::tan(steering)};
}

Mat3 sphericalRate(const Rotation3& g, const ControlInput& input, const CarGeometry& geom) {
  return g.matrix() * hat(sphericalBodyVelocity(input.speed, input.steering, geom));
}

Mat3 arclengthRate(const Rotation3& g, double normalizedSpeed, double steering,
                   const CarGeometry& geom) {
  return g.matrix() * hat(sphericalBodyVelocity(normalizedSpeed, steering, geom));
}

double geodesicCurvature(double steering, const CarGeometry& geom) {
  requireSteering(steering);
  return std::tan(steering) / geom.effectiveWheelbase();
}

double steeringFromCurvature(double curvature, const CarGeometry& geom) {
  return std::atan(geom.effectiveWheelbase() * curvature);
}

CurveFrame framesFromCurve(const Vec3& y, const Vec3& yDot, double sphereRadius) {
  requireOnSphere(y, sphereRadius);
  const double speed = yDot.norm();
  if (!(speed > 0.0)) {
    throw DomainError("framesFromCurve: zero speed, frame undefined");
  }
  if (std::abs(y.dot(yDot)) > kRotationTolerance * sphereRadius * speed) {
    throw DomainError("framesFromCurve: velocity is not tangent to the sphere");
  }
  const Vec3 beta = y / sphereRadius;
  const Vec3 tau = yDot / speed;
  return {Rotation3::fromColumns(tau, beta.cross(tau), beta), speed};
}

FlatInputs flatParametrization(const CurveJet& jet, const CarGeometry& geom) {
  const CurveFrame f = framesFromCurve(jet.y, jet.dy, geom.sphereRadius());
  const double v = f.speed;
  const Vec3 tau = f.frame.tangent();
  const Vec3 nu = f.frame.normal();
  const double kappa = jet.ddy.dot(nu) / (v * v);
  FlatInputs out{f.frame, v, kappa, steeringFromCurvature(kappa, geom), std::nullopt};
  if (jet.dddy) {
    // d/dt <y_ddot, nu> uses nu_dot = -v kappa_g tau.
    const double vDot = jet.ddy.dot(tau);
    const double kappaDot =
        (jet.dddy->dot(nu) - v * kappa * vDot) / (v * v) - 2.0 * kappa * vDot / v;
    out.curvatureRate = kappaDot / v;
  }
  return out;
}

namespace {

// Signed residuals kappa^2 - kappa_g^2 - rho^-2 for the stencil spacing `stride`.
std::vector<double> splitResiduals(std::span<const Vec3> y, double h, int stride, double rho,
                                   std::vector<double>* kappa, std::vector<double>* kappaG) {
  std::vector<double> out;
  const auto n = static_cast<int>(y.size());
  const double hs = h * stride;
  for (int i = stride; i + stride < n; i += 1) {
    const Vec3 d1 = (y[i + stride] - y[i - stride]) / (2.0 * hs);
    const Vec3 d2 = (y[i + stride] - 2.0 * y[i] + y[i - stride]) / (hs * hs);
    const Vec3 beta = y[i] / rho;
    const Vec3 nu = beta.cross(d1.normalized());
    const double k = d2.norm();
    const double kg = d2.dot(nu);
    if (kappa) {
      kappa->push_back(k);
      kappaG->push_back(kg);
    }
    out.push_back(k * k - kg * kg - 1.0 / (rho * rho));
  }
  return out;
}

}  // namespace

CurvatureSplit curvatureSplitCheck(std::span<const Vec3> samples, double step, double sphereRadius,
                                   double tolerance) {
  if (samples.size() < 3) {
    throw DomainError("curvatureSplitCheck: need at least three samples");
  }
  if (!(step > 0.0)) {
    throw DomainError("curvatureSplitCheck: step must be positive");
  }
  CurvatureSplit out;
  const std::vector<double> fine =
      splitResiduals(samples, step, 1, sphereRadius, &out.curvature, &out.geodesicCurvature);
  for (double r : fine) {
    out.maxResidual = std::max(out.maxResidual, std::abs(r));
  }
  if (samples.size() >= 5) {
    const std::vector<double> coarse =
        splitResiduals(samples, step, 2, sphereRadius, nullptr, nullptr);
    // coarse[j] sits at sample j + 2, fine[j + 1] at the same sample.
    for (std::size_t j = 0; j < coarse.size(); ++j) {
      out.discretizationEstimate =
          std::max(out.discretizationEstimate, std::abs(coarse[j] - fine[j + 1]) / 3.0);
    }
  }
  out.stepTooCoarse = out.discretizationEstimate > tolerance;
  return out;
}

}  // namespace spherecar
