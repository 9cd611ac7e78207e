#pragma once

#include "spherecar/lie.hpp"

namespace spherecar {

/// Left-invariant planar error g_d^{-1} g in pose coordinates.
struct SE2Error {
  double heading = 0.0;          // theta - theta_d, wrapped to (-pi, pi]
  Vec2 position = Vec2::Zero();  // R_{theta_d}^T (y - y_d)
};

SE2Error se2Error(const PlanarPose& g, const PlanarPose& gd);

/// Below this central angle the misalignment is reported as zero.
inline constexpr double kSigmaEpsilon = 1e-10;

/// Orthodrome error between vehicle and reference rear-axle points.
///
/// sigma is the central angle, cos(sigma) = <beta, beta_d>. delta orients the
/// error great circle in the reference tangent plane:
///   cos(delta) sin(sigma) = <beta x beta_d, nu_d>,
///   sin(delta) sin(sigma) = <beta x beta_d, tau_d>.
/// delta = 0 puts the vehicle behind the reference on its great circle,
/// delta = +pi/2 puts it to the left (along +nu_d).
struct ErrorAngles {
  double sigma = 0.0;  // [0, pi)
  double delta = 0.0;  // (-pi, pi]
};

/// Throws AntipodalError when beta = -beta_d.
ErrorAngles errorAngles(const Rotation3& g, const Rotation3& gd);

struct ErrorAnglesDeviation {
  double sigma;
  double delta;
};

/// |angles(h g, h g_d) - angles(g, g_d)| componentwise (delta difference wrapped).
ErrorAnglesDeviation errorAnglesInvarianceCheck(const Rotation3& g, const Rotation3& gd,
                                                const Rotation3& h);

}  // namespace spherecar
