#include "spherecar/lie.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <sstream>

#include "spherecar/errors.hpp"

namespace spherecar {

double orthogonalityDefect(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
}

double determinantDefect(const Mat3& m) { return std::abs(m.determinant() - 1.0); }

bool isRotation(const Mat3& m, double tolerance) {
  return m.allFinite() && orthogonalityDefect(m) <= tolerance && determinantDefect(m) <= tolerance;
}

Rotation3::Rotation3(const Mat3& m) : m_(m) {
  if (!isRotation(m)) {
    std::ostringstream msg;
    msg << "matrix is not a rotation (orthogonality defect " << orthogonalityDefect(m)
        << ", determinant defect " << determinantDefect(m) << ")";
    throw NotARotation(msg.str());
  }
}

Rotation3 Rotation3::fromColumns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
  Mat3 m;
  m.col(0) = c0;
  m.col(1) = c1;
  m.col(2) = c2;
  return Rotation3(m);
}

Mat3 hat(const Vec3& n) {
  Mat3 x;
  // clang-format off
  x <<   0.0, -n.z(),  n.y(),
       n.z(),    0.0, -n.x(),
      -n.y(),  n.x(),    0.0;
  // clang-format on
  return x;
}

Vec3 vee(const Mat3& x) {
  const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
  const double asym = (x + x.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= kSkewTolerance * scale)) {
    std::ostringstream msg;
    msg << "vee: matrix is not skew-symmetric (|X + X^T| = " << asym << ")";
    throw SymmetryViolation(msg.str());
  }
  return {0.5 * (x(2, 1) - x(1, 2)), 0.5 * (x(0, 2) - x(2, 0)), 0.5 * (x(1, 0) - x(0, 1))};
}

namespace {

// exp(hat(w)) given |w| = theta; no validation.
Mat3 rodrigues(const Vec3& w, double theta) {
  const Mat3 k = hat(w);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(theta) / theta;
  const double half = std::sin(0.5 * theta);
  const double b = 2.0 * half * half / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

}  // namespace

Rotation3 expSO3(const Vec3& axis, double angle) {
  if (angle == 0.0) {
    return Rotation3::identity();
  }
  if (std::abs(axis.norm() - 1.0) > kUnitAxisTolerance) {
    std::ostringstream msg;
    msg << "expSO3: rotation axis is not a unit vector (|n| = " << axis.norm() << ")";
    throw DomainError(msg.str());
  }
  const Vec3 w = axis * angle;
  return Rotation3(rodrigues(w, std::abs(angle)));
}

Rotation3 expSO3(const Twist3& w) { return Rotation3(rodrigues(w, w.norm())); }

AxisAngle logSO3(const Rotation3& r) {
  const Mat3& m = r.matrix();
  const double trace = m.trace();
  if (trace <= -1.0 + kLogBranchMargin) {
    throw BranchError("logSO3: rotation angle is at the pi branch");
  }
  const Vec3 v{0.5 * (m(2, 1) - m(1, 2)), 0.5 * (m(0, 2) - m(2, 0)), 0.5 * (m(1, 0) - m(0, 1))};
  const double s = v.norm();  // sin(angle)
  const double c = 0.5 * (trace - 1.0);
  const double angle = std::atan2(s, c);
  if (angle < kSmallAngle) {
    if (s == 0.0) {
      return {Vec3::UnitZ(), 0.0};
    }
    return {v / s, s};
  }
  if (c >= 0.0) {
    return {v / s, angle};
  }
  // Past pi/2 the antisymmetric part loses accuracy; read the axis off the
  // symmetric part (1 - cos) a a^T and take the sign from v.
  const Mat3 sym = 0.5 * (m + m.transpose()) - c * Mat3::Identity();
  int k = 0;
  sym.diagonal().maxCoeff(&k);
  Vec3 axis = sym.col(k) / std::sqrt(sym(k, k) * (1.0 - c));
  if (axis.dot(v) < 0.0) {
    axis = -axis;
  }
  return {axis.normalized(), angle};
}

Twist3 logSO3Vector(const Rotation3& r) {
  const AxisAngle aa = logSO3(r);
  return aa.axis * aa.angle;
}

Eigen::MatrixXd lieBracket(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows()) {
    throw DomainError("lieBracket: operands must be square matrices of equal size");
  }
  return a * b - b * a;
}

Mat3 lieBracket(const Mat3& a, const Mat3& b) { return a * b - b * a; }

Rotation3 polarProjection(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    u.col(2) = -u.col(2);
  }
  return Rotation3(u * v.transpose());
}

double wrapAngle(double angle) {
  double a = std::remainder(angle, 2.0 * kPi);
  if (a <= -kPi) {
    a += 2.0 * kPi;
  }
  return a;
}

Mat3 PlanarPose::matrix() const {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  Mat3 m;
  // clang-format off
  m << c, -s, position.x(),
       s,  c, position.y(),
       0.0, 0.0, 1.0;
  // clang-format on
  return m;
}

PlanarPose PlanarPose::fromMatrix(const Mat3& m) {
  return {Vec2{m(0, 2), m(1, 2)}, std::atan2(m(1, 0), m(0, 0))};
}

PlanarPose compose(const PlanarPose& g, const PlanarPose& h) {
  const Eigen::Rotation2Dd rg(g.heading);
  return {g.position + rg * h.position, wrapAngle(g.heading + h.heading)};
}

PlanarPose inverse(const PlanarPose& g) {
  const Eigen::Rotation2Dd rinv(-g.heading);
  return {-(rinv * g.position), wrapAngle(-g.heading)};
}

}  // namespace spherecar
