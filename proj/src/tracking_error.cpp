#include "spherecar/tracking_error.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "spherecar/errors.hpp"

namespace spherecar {

SE2Error se2Error(const PlanarPose& g, const PlanarPose& gd) {
  const Eigen::Rotation2Dd rdT(-gd.heading);
  return {wrapAngle(g.heading - gd.heading), rdT * (g.position - gd.position)};
}

ErrorAngles errorAngles(const Rotation3& g, const Rotation3& gd) {
  const Vec3 beta = g.binormal();
  const Vec3 betaD = gd.binormal();
  const Vec3 axis = beta.cross(betaD);
  const double c = std::clamp(beta.dot(betaD), -1.0, 1.0);
  const double s = axis.norm();
  const double sigma = std::atan2(s, c);
  if (sigma <= kSigmaEpsilon) {
    return {sigma, 0.0};
  }
  if (s <= kSigmaEpsilon) {
    throw AntipodalError("errorAngles: vehicle and reference are antipodal");
  }
  const double delta = std::atan2(axis.dot(gd.tangent()), axis.dot(gd.normal()));
  return {sigma, delta == -kPi ? kPi : delta};
}

ErrorAnglesDeviation errorAnglesInvarianceCheck(const Rotation3& g, const Rotation3& gd,
                                                const Rotation3& h) {
  const ErrorAngles a = errorAngles(g, gd);
  const ErrorAngles b = errorAngles(h * g, h * gd);
  return {std::abs(a.sigma - b.sigma), std::abs(wrapAngle(a.delta - b.delta))};
}

}  // namespace spherecar
