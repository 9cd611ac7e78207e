#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "spherecar/car_models.hpp"
#include "spherecar/lie.hpp"

namespace spherecar {

/// Reference configuration and curvature data at arc-length station s_d.
struct ReferenceSample {
  double station = 0.0;        // s_d
  Rotation3 frame;             // g_d = (tau_d, nu_d, beta_d)
  double speed = 1.0;          // v_d, 1 for references generated directly in arc length
  double curvature = 0.0;      // kappa_{g,d}
  double curvatureRate = 0.0;  // d kappa_{g,d} / d s_d
};

/// Smooth unit-speed reference t -> g_d evaluated at any arc-length station.
class Reference {
 public:
  virtual ~Reference() = default;
  virtual ReferenceSample at(double station) const = 0;
  virtual double sphereRadius() const = 0;
  /// Arc length of one period, or 0 for non-periodic references.
  virtual double period() const { return 0.0; }
};

/// Great circle with unit normal `axis` (= nu_d) starting at rho * start.
class GreatCircleReference final : public Reference {
 public:
  /// `start` must be a unit vector orthogonal to `axis`.
  GreatCircleReference(const Vec3& axis, const Vec3& start, double sphereRadius);
  /// Start point chosen as the normalised projection of e1 (or e2 when the
  /// axis is close to e1) onto the plane orthogonal to `axis`.
  GreatCircleReference(const Vec3& axis, double sphereRadius);

  ReferenceSample at(double station) const override;
  double sphereRadius() const override { return rho_; }
  double period() const override { return 2.0 * kPi * rho_; }

 private:
  Vec3 axis_;
  Rotation3 start_;
  double rho_;
};

/// Circle of colatitude psi about `pole`, driven counterclockwise about the pole.
/// Geodesic curvature cot(psi) / rho.
class LatitudeCircleReference final : public Reference {
 public:
  LatitudeCircleReference(double colatitude, double sphereRadius, const Vec3& pole = Vec3::UnitZ());

  ReferenceSample at(double station) const override;
  double sphereRadius() const override { return rho_; }
  double period() const override { return 2.0 * kPi * rho_ * std::sin(psi_); }
  double curvature() const;

 private:
  double psi_;
  double rho_;
  Rotation3 poleFrame_;  // maps e3 to the pole
};

/// Time-parametrised curve on the sphere with analytic derivatives.
using CurveFunction = std::function<CurveJet(double t)>;

/// Great circle about `axis` from rho * start traversed at constant speed.
CurveFunction greatCircleCurve(const Vec3& axis, const Vec3& start, double sphereRadius,
                               double speed = 1.0);
/// Latitude circle of colatitude psi about e3 at constant speed.
CurveFunction latitudeCircleCurve(double colatitude, double sphereRadius, double speed = 1.0);
/// Latitude circle whose colatitude oscillates: psi(t) = psi0 + a sin(w t),
/// azimuth(t) = rate * t. Speed varies along the curve.
CurveFunction wobbleCurve(double colatitude, double amplitude, double frequency, double azimuthRate,
                          double sphereRadius);

struct ArclengthGrid {
  std::vector<double> station;  // s_d at each time node
  /// Max difference between two quadrature orders over any interval.
  double quadratureResidual = 0.0;
};

/// s_d(t_i) = integral of v_d from t_0 to t_i. Throws DomainError if v_d <= 0
/// anywhere on the grid or at a quadrature node, or if the grid is not increasing.
ArclengthGrid arclengthReparametrize(const std::function<double(double)>& speed,
                                     std::span<const double> times);

/// Reference generated from a flat output y(t) on [t0, t1]. Stations are
/// measured from t0; kappa' comes from the third derivative when the curve
/// provides it, otherwise from five-point central differences.
class FlatCurveReference final : public Reference {
 public:
  FlatCurveReference(CurveFunction curve, double t0, double t1, const CarGeometry& geom,
                     std::size_t intervals = 2048);

  ReferenceSample at(double station) const override;
  double sphereRadius() const override { return geom_.sphereRadius(); }
  double length() const { return stations_.back(); }
  /// Curve parameter at a station (Newton on the arc-length integral).
  double timeAt(double station) const;

  /// Samples at the given stations.
  std::vector<ReferenceSample> sample(std::span<const double> stations) const;

 private:
  double arcLength(double ta, double tb) const;
  double curvatureAtTime(double t) const;

  CurveFunction curve_;
  CarGeometry geom_;
  std::vector<double> times_;
  std::vector<double> stations_;
};

/// Samples `reference` at stations 0, h, 2h, ... up to and including `end`.
std::vector<ReferenceSample> sampleReference(const Reference& reference, double end, double h);

}  // namespace spherecar
