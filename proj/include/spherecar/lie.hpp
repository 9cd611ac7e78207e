#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <numbers>

namespace spherecar {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Axis coordinates (n1, n2, n3) of an so(3) element; hat() gives the matrix view.
using Twist3 = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;

/// Elementwise tolerance on R^T R - I and on det R - 1.
inline constexpr double kRotationTolerance = 1e-9;
/// Tolerance on X + X^T for vee().
inline constexpr double kSkewTolerance = 1e-9;
/// Tolerance on | |n| - 1 | for rotation axes.
inline constexpr double kUnitAxisTolerance = 1e-9;
/// Below this angle exp/log switch to their second-order series.
inline constexpr double kSmallAngle = 1e-7;
/// log() refuses rotations with trace <= -1 + kLogBranchMargin.
inline constexpr double kLogBranchMargin = 1e-9;

/// Max elementwise |R^T R - I|.
double orthogonalityDefect(const Mat3& m);
/// |det R - 1|.
double determinantDefect(const Mat3& m);
bool isRotation(const Mat3& m, double tolerance = kRotationTolerance);

/// Element of SO(3). Every constructor and product re-checks membership at
/// kRotationTolerance and throws NotARotation otherwise.
///
/// For the spherical car the columns are (tau, nu, beta): tangent, normal and
/// outward binormal of the rear-axle track.
class Rotation3 {
 public:
  Rotation3() : m_(Mat3::Identity()) {}
  explicit Rotation3(const Mat3& m);

  static Rotation3 identity() { return {}; }
  static Rotation3 fromColumns(const Vec3& c0, const Vec3& c1, const Vec3& c2);

  const Mat3& matrix() const { return m_; }
  double operator()(int row, int col) const { return m_(row, col); }
  Vec3 column(int i) const { return m_.col(i); }
  Vec3 tangent() const { return m_.col(0); }
  Vec3 normal() const { return m_.col(1); }
  Vec3 binormal() const { return m_.col(2); }

  Rotation3 inverse() const { return Rotation3(m_.transpose(), Unchecked{}); }
  Rotation3 operator*(const Rotation3& other) const { return Rotation3(m_ * other.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

 private:
  struct Unchecked {};
  Rotation3(const Mat3& m, Unchecked) : m_(m) {}

  Mat3 m_;
};

/// X(n) with X(n) w = n x w.
Mat3 hat(const Vec3& n);

/// Inverse of hat(). Throws SymmetryViolation if |X + X^T| exceeds
/// kSkewTolerance (scaled by the magnitude of X when that is larger than one).
Vec3 vee(const Mat3& x);

/// Rotation by `angle` about the unit axis `axis` (Rodrigues formula).
/// Throws DomainError for a non-unit axis unless angle == 0.
Rotation3 expSO3(const Vec3& axis, double angle);

/// exp(hat(w)) for an arbitrary rotation vector w.
Rotation3 expSO3(const Twist3& w);

struct AxisAngle {
  Vec3 axis;
  double angle;  // in [0, pi)
};

/// Principal logarithm. Identity maps to (e3, 0). Throws BranchError when the
/// rotation angle is within kLogBranchMargin (on the trace) of pi.
AxisAngle logSO3(const Rotation3& r);

/// Rotation vector axis * angle of logSO3().
Twist3 logSO3Vector(const Rotation3& r);

/// AB - BA. Throws DomainError on a shape mismatch.
Eigen::MatrixXd lieBracket(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
Mat3 lieBracket(const Mat3& a, const Mat3& b);

/// Nearest orthogonal matrix (polar factor) of a nearly orthogonal matrix.
Rotation3 polarProjection(const Mat3& m);

/// Wraps an angle into (-pi, pi].
double wrapAngle(double angle);

/// Element of SE(2) as rear-axle position and heading.
struct PlanarPose {
  Vec2 position = Vec2::Zero();
  double heading = 0.0;

  /// Homogeneous 3x3 matrix (R_theta, y; 0, 1).
  Mat3 matrix() const;
  static PlanarPose fromMatrix(const Mat3& m);
};

/// Group law g * h (matrix product).
PlanarPose compose(const PlanarPose& g, const PlanarPose& h);
PlanarPose inverse(const PlanarPose& g);

}  // namespace spherecar
