#include "spherecar/observer.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "spherecar/errors.hpp"

namespace spherecar {

ObserverGains ObserverGains::at(double curvature) const {
  ObserverGains g = *this;
  if (scheduled) {
    g.l21 = curvature;
    g.l12 = -curvature;
  }
  return g;
}

Vec3 measurementFunction(const Rotation3& estimate, const Vec3& y, double rho) {
  if (!y.allFinite() || std::abs(y.norm() - rho) > kRotationTolerance * std::max(1.0, rho)) {
    std::ostringstream msg;
    msg << "measurement is not on the sphere (|y| = " << y.norm() << ", rho = " << rho << ")";
    throw DomainError(msg.str());
  }
  return estimate.matrix().transpose() * (y / rho);
}

Vec3 observerGainValues(const Vec3& b, const ObserverGains& gains) {
  const double along = b.y();   // <B, g_hat^T nu_hat>
  const double across = b.x();  // <B, g_hat^T tau_hat>
  return {gains.l11 * along - gains.l12 * across, gains.l21 * along - gains.l22 * across,
          gains.l31 * along - gains.l32 * across};
}

Twist3 observerBodyRate(const Rotation3& estimate, const Vec3& y, double curvature,
                        const CarGeometry& geom, const ObserverGains& gains) {
  const Vec3 b = measurementFunction(estimate, y, geom.sphereRadius());
  return Twist3{0.0, 1.0 / geom.sphereRadius(), curvature} +
         observerGainValues(b, gains.at(curvature));
}

Mat3 observerRate(const Rotation3& estimate, const Vec3& y, double curvature,
                  const CarGeometry& geom, const ObserverGains& gains) {
  return estimate.matrix() * hat(observerBodyRate(estimate, y, curvature, geom, gains));
}

Mat3 errorLinearization(double curvature, double rho, const ObserverGains& gains) {
  const ObserverGains l = gains.at(curvature);
  Mat3 a;
  // clang-format off
  a << l.l11,             l.l12 + curvature, -1.0 / rho,
       l.l21 - curvature, l.l22,              0.0,
       l.l31 + 1.0 / rho, l.l32,              0.0;
  // clang-format on
  return a;
}

CubicCoefficients characteristicPolynomial(const ObserverGains& gains, double rho) {
  const double rho2 = rho * rho;
  return {-(gains.l22 + gains.l11), (gains.l31 * rho + rho2 * gains.l11 * gains.l22 + 1.0) / rho2,
          -(gains.l22 / rho2 + gains.l31 * gains.l22 / rho)};
}

CubicCoefficients polynomialFromRoots(std::span<const std::complex<double>, 3> p) {
  const std::complex<double> a2 = -(p[0] + p[1] + p[2]);
  const std::complex<double> a1 = p[0] * p[1] + p[0] * p[2] + p[1] * p[2];
  const std::complex<double> a0 = -(p[0] * p[1] * p[2]);
  return {a2.real(), a1.real(), a0.real()};
}

ObserverGains placePoles(std::span<const std::complex<double>, 3> poles, double rho, double l32) {
  if (!(rho > 0.0)) {
    throw PlacementError("pole placement: sphere radius must be positive");
  }
  for (const auto& p : poles) {
    if (!(p.real() < 0.0)) {
      throw PlacementError("pole placement: every pole needs a negative real part");
    }
  }
  // The real pole goes to l22; the remaining pair must be real or conjugate.
  int realIndex = -1;
  for (int i = 0; i < 3; ++i) {
    if (poles[i].imag() == 0.0) {
      realIndex = i;
      break;
    }
  }
  if (realIndex < 0) {
    throw PlacementError("pole placement: at least one pole must be real");
  }
  const std::complex<double> p2 = poles[(realIndex + 1) % 3];
  const std::complex<double> p3 = poles[(realIndex + 2) % 3];
  const bool bothReal = p2.imag() == 0.0 && p3.imag() == 0.0;
  const bool conjugate = p2 == std::conj(p3);
  if (!bothReal && !conjugate) {
    throw PlacementError("pole placement: complex poles must form a conjugate pair");
  }
  // p(lambda) = (lambda - l22)(lambda^2 - l11 lambda + l31 / rho + 1 / rho^2)
  ObserverGains g;
  g.l22 = poles[realIndex].real();
  g.l11 = (p2 + p3).real();
  g.l31 = rho * (p2 * p3).real() - 1.0 / rho;
  g.l32 = l32;
  g.scheduled = true;
  return g;
}

std::array<std::complex<double>, 3> eigenvalues(const Mat3& a) {
  Eigen::EigenSolver<Mat3> solver(a, false);
  std::array<std::complex<double>, 3> out;
  for (int i = 0; i < 3; ++i) {
    out[i] = solver.eigenvalues()[i];
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.real() != y.real() ? x.real() < y.real() : x.imag() < y.imag();
  });
  return out;
}

ObservationError observationError(const Rotation3& truth, const Rotation3& estimate) {
  const Rotation3 e = truth.inverse() * estimate;
  try {
    return {e, logSO3(e).angle};
  } catch (const BranchError&) {
    throw OutOfRegime("observation error angle reached pi");
  }
}

}  // namespace spherecar
