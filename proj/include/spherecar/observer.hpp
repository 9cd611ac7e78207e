#pragma once

#include <array>
#include <complex>
#include <span>

#include "spherecar/car_models.hpp"
#include "spherecar/lie.hpp"

namespace spherecar {

/// Injection gains L_i = l_i1 <B, e2> - l_i2 <B, e1>, i = 1..3.
///
/// With `scheduled` set, l12 and l21 are replaced at run time by -kappa_g and
/// kappa_g, which makes the linearised error dynamics independent of kappa_g.
struct ObserverGains {
  double l11 = 0.0;
  double l12 = 0.0;
  double l21 = 0.0;
  double l22 = 0.0;
  double l31 = 0.0;
  double l32 = 0.0;
  bool scheduled = true;

  /// Gains in effect for geodesic curvature input kappa_g.
  ObserverGains at(double curvature) const;
};

/// B = g_hat^T (y / rho). Equals e3 when the estimate is exact.
/// Throws DomainError when y is off the sphere.
Vec3 measurementFunction(const Rotation3& estimate, const Vec3& y, double sphereRadius);

/// (L1, L2, L3) for the gains already scheduled to the current curvature.
Vec3 observerGainValues(const Vec3& b, const ObserverGains& gains);

/// Body rate of the observer in the arc length of y:
///   (0, 1/rho, kappa_g) + (L1, L2, L3).
Twist3 observerBodyRate(const Rotation3& estimate, const Vec3& y, double curvature,
                        const CarGeometry& geom, const ObserverGains& gains);

/// g_hat' = g_hat hat(observerBodyRate(...)).
Mat3 observerRate(const Rotation3& estimate, const Vec3& y, double curvature,
                  const CarGeometry& geom, const ObserverGains& gains);

/// Matrix A of the first-order error dynamics xi' = A xi (vee coordinates of
/// log(g^T g_hat)) for curvature kappa_g, gains scheduled if requested.
Mat3 errorLinearization(double curvature, double sphereRadius, const ObserverGains& gains);

/// Monic cubic lambda^3 + a2 lambda^2 + a1 lambda + a0.
struct CubicCoefficients {
  double a2;
  double a1;
  double a0;
};

/// Characteristic polynomial of the scheduled linearisation; l12 and l21
/// do not enter, l32 does not either.
CubicCoefficients characteristicPolynomial(const ObserverGains& gains, double sphereRadius);

/// Coefficients of prod (lambda - p_i).
CubicCoefficients polynomialFromRoots(std::span<const std::complex<double>, 3> poles);

/// Scheduled gains placing the eigenvalues of the linearisation at `poles`.
/// l22 takes the first real pole, the two others fix l11 and l31; l32 is
/// `l32` (free). Throws PlacementError unless all poles have negative real
/// part, complex poles come in conjugate pairs and one pole is real.
ObserverGains placePoles(std::span<const std::complex<double>, 3> poles, double sphereRadius,
                         double l32 = 0.0);

/// Eigenvalues sorted by real part then imaginary part.
std::array<std::complex<double>, 3> eigenvalues(const Mat3& a);

struct ObservationError {
  Rotation3 error;  // g^T g_hat
  double angle;     // rotation angle of the error
};

/// Left-invariant observation error. Throws OutOfRegime when the error
/// angle reaches the pi branch.
ObservationError observationError(const Rotation3& truth, const Rotation3& estimate);

}  // namespace spherecar
