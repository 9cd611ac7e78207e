#include "spherecar/reference.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <sstream>

#include "spherecar/errors.hpp"

namespace spherecar {

namespace {

Vec3 defaultStart(const Vec3& axis) {
  const Vec3 seed = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return (seed - seed.dot(axis) * axis).normalized();
}

Vec3 requireUnit(const Vec3& v, const char* what) {
  if (!v.allFinite() || std::abs(v.norm() - 1.0) > kUnitAxisTolerance) {
    std::ostringstream msg;
    msg << what << " must be a unit vector";
    throw DomainError(msg.str());
  }
  return v;
}

// Third-order Taylor jet of a scalar function of t.
struct Jet {
  double v = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
};

Jet operator*(const Jet& a, const Jet& b) {
  return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + 2.0 * a.d1 * b.d1 + a.v * b.d2,
          a.d3 * b.v + 3.0 * a.d2 * b.d1 + 3.0 * a.d1 * b.d2 + a.v * b.d3};
}

// f(x(t)) given f and its first three derivatives at x.
Jet compose(const Jet& x, double f0, double f1, double f2, double f3) {
  return {f0, f1 * x.d1, f2 * x.d1 * x.d1 + f1 * x.d2,
          f3 * x.d1 * x.d1 * x.d1 + 3.0 * f2 * x.d1 * x.d2 + f1 * x.d3};
}

Jet sin(const Jet& x) {
  const double s = std::sin(x.v);
  const double c = std::cos(x.v);
  return compose(x, s, c, -s, -c);
}

Jet cos(const Jet& x) {
  const double s = std::sin(x.v);
  const double c = std::cos(x.v);
  return compose(x, c, -s, -c, s);
}

// Point rho * (sin psi cos az, sin psi sin az, cos psi) with jets of psi, az.
CurveJet sphericalJet(const Jet& psi, const Jet& az, double rho) {
  const Jet sp = sin(psi);
  const Jet x = sp * cos(az);
  const Jet y = sp * sin(az);
  const Jet z = cos(psi);
  CurveJet out;
  out.y = rho * Vec3{x.v, y.v, z.v};
  out.dy = rho * Vec3{x.d1, y.d1, z.d1};
  out.ddy = rho * Vec3{x.d2, y.d2, z.d2};
  out.dddy = rho * Vec3{x.d3, y.d3, z.d3};
  return out;
}

}  // namespace

GreatCircleReference::GreatCircleReference(const Vec3& axis, const Vec3& start, double sphereRadius)
    : axis_(requireUnit(axis, "great circle axis")), rho_(sphereRadius) {
  requireUnit(start, "great circle start point");
  if (std::abs(axis.dot(start)) > kUnitAxisTolerance) {
    throw DomainError("great circle start point must be orthogonal to the axis");
  }
  if (!(sphereRadius > 0.0)) {
    throw DomainError("sphere radius must be positive");
  }
  start_ = Rotation3::fromColumns(axis_.cross(start), axis_, start);
}

GreatCircleReference::GreatCircleReference(const Vec3& axis, double sphereRadius)
    : GreatCircleReference(axis, defaultStart(requireUnit(axis, "great circle axis")),
                           sphereRadius) {}

ReferenceSample GreatCircleReference::at(double station) const {
  return {station, expSO3(axis_, station / rho_) * start_, 1.0, 0.0, 0.0};
}

LatitudeCircleReference::LatitudeCircleReference(double colatitude, double sphereRadius,
                                                 const Vec3& pole)
    : psi_(colatitude), rho_(sphereRadius) {
  if (!(colatitude > 0.0 && colatitude < kPi)) {
    throw DomainError("latitude circle colatitude must lie in (0, pi)");
  }
  if (!(sphereRadius > 0.0)) {
    throw DomainError("sphere radius must be positive");
  }
  poleFrame_ = configFromPosition(requireUnit(pole, "latitude circle pole"), 0.0, 1.0);
}

double LatitudeCircleReference::curvature() const { return 1.0 / (std::tan(psi_) * rho_); }

ReferenceSample LatitudeCircleReference::at(double station) const {
  const double az = station / (rho_ * std::sin(psi_));
  const double sp = std::sin(psi_);
  const double cp = std::cos(psi_);
  const double sa = std::sin(az);
  const double ca = std::cos(az);
  const Vec3 tau{-sa, ca, 0.0};
  const Vec3 nu{-cp * ca, -cp * sa, sp};
  const Vec3 beta{sp * ca, sp * sa, cp};
  return {station, poleFrame_ * Rotation3::fromColumns(tau, nu, beta), 1.0, curvature(), 0.0};
}

CurveFunction greatCircleCurve(const Vec3& axis, const Vec3& start, double sphereRadius,
                               double speed) {
  const Vec3 a = requireUnit(axis, "great circle axis");
  const Vec3 b0 = requireUnit(start, "great circle start point");
  const Vec3 t0 = a.cross(b0);
  return [=](double t) {
    const double w = speed / sphereRadius;
    const double c = std::cos(w * t);
    const double s = std::sin(w * t);
    CurveJet jet;
    jet.y = sphereRadius * (c * b0 + s * t0);
    jet.dy = sphereRadius * w * (-s * b0 + c * t0);
    jet.ddy = -w * w * jet.y;
    jet.dddy = -w * w * jet.dy;
    return jet;
  };
}

CurveFunction latitudeCircleCurve(double colatitude, double sphereRadius, double speed) {
  const double rate = speed / (sphereRadius * std::sin(colatitude));
  return [=](double t) {
    return sphericalJet(Jet{colatitude, 0.0, 0.0, 0.0}, Jet{rate * t, rate, 0.0, 0.0},
                        sphereRadius);
  };
}

CurveFunction wobbleCurve(double colatitude, double amplitude, double frequency, double azimuthRate,
                          double sphereRadius) {
  return [=](double t) {
    const double s = std::sin(frequency * t);
    const double c = std::cos(frequency * t);
    const double w = frequency;
    const Jet psi{colatitude + amplitude * s, amplitude * w * c, -amplitude * w * w * s,
                  -amplitude * w * w * w * c};
    const Jet az{azimuthRate * t, azimuthRate, 0.0, 0.0};
    return sphericalJet(psi, az, sphereRadius);
  };
}

ArclengthGrid arclengthReparametrize(const std::function<double(double)>& speed,
                                     std::span<const double> times) {
  using boost::math::quadrature::gauss;
  ArclengthGrid out;
  if (times.empty()) {
    return out;
  }
  auto checkedSpeed = [&](double t) {
    const double v = speed(t);
    if (!(v > 0.0)) {
      std::ostringstream msg;
      msg << "arclengthReparametrize: non-positive speed " << v << " at t = " << t;
      throw DomainError(msg.str());
    }
    return v;
  };
  checkedSpeed(times[0]);
  out.station.reserve(times.size());
  out.station.push_back(0.0);
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double a = times[i - 1];
    const double b = times[i];
    if (!(b > a)) {
      throw DomainError("arclengthReparametrize: time grid must be strictly increasing");
    }
    checkedSpeed(b);
    const double hi = gauss<double, 10>::integrate(checkedSpeed, a, b);
    const double lo = gauss<double, 7>::integrate(checkedSpeed, a, b);
    out.quadratureResidual = std::max(out.quadratureResidual, std::abs(hi - lo));
    out.station.push_back(out.station.back() + hi);
  }
  return out;
}

FlatCurveReference::FlatCurveReference(CurveFunction curve, double t0, double t1,
                                       const CarGeometry& geom, std::size_t intervals)
    : curve_(std::move(curve)), geom_(geom) {
  if (!(t1 > t0) || intervals == 0) {
    throw DomainError("flat curve reference needs a non-empty parameter interval");
  }
  times_.resize(intervals + 1);
  for (std::size_t i = 0; i <= intervals; ++i) {
    times_[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(intervals);
  }
  // Validates speed > 0 along the whole grid.
  stations_ =
      arclengthReparametrize([this](double t) { return curve_(t).dy.norm(); }, times_).station;
}

double FlatCurveReference::arcLength(double ta, double tb) const {
  using boost::math::quadrature::gauss;
  return gauss<double, 10>::integrate([this](double t) { return curve_(t).dy.norm(); }, ta, tb);
}

double FlatCurveReference::timeAt(double station) const {
  auto it = std::upper_bound(stations_.begin(), stations_.end(), station);
  std::size_t i =
      it == stations_.begin() ? 0 : static_cast<std::size_t>(it - stations_.begin()) - 1;
  i = std::min(i, stations_.size() - 2);
  const double ti = times_[i];
  const double si = stations_[i];
  // Linear initial guess inside the bracketing interval, then Newton.
  const double frac = (station - si) / (stations_[i + 1] - si);
  double t = ti + frac * (times_[i + 1] - ti);
  for (int iter = 0; iter < 30; ++iter) {
    const double f = si + arcLength(ti, t) - station;
    const double v = curve_(t).dy.norm();
    if (!(v > 0.0)) {
      throw DomainError("flat curve reference: zero speed");
    }
    const double dt = f / v;
    t -= dt;
    if (std::abs(dt) <= 1e-15 * std::max(1.0, std::abs(t))) {
      break;
    }
  }
  return t;
}

double FlatCurveReference::curvatureAtTime(double t) const {
  return flatParametrization(curve_(t), geom_).geodesicCurvature;
}

ReferenceSample FlatCurveReference::at(double station) const {
  const double t = timeAt(station);
  const FlatInputs flat = flatParametrization(curve_(t), geom_);
  double rate = 0.0;
  if (flat.curvatureRate) {
    rate = *flat.curvatureRate;
  } else {
    const double h = 1e-3;
    auto k = [&](double s) { return curvatureAtTime(timeAt(s)); };
    rate = (k(station - 2.0 * h) - 8.0 * k(station - h) + 8.0 * k(station + h) -
            k(station + 2.0 * h)) /
           (12.0 * h);
  }
  return {station, flat.frame, flat.speed, flat.geodesicCurvature, rate};
}

std::vector<ReferenceSample> FlatCurveReference::sample(std::span<const double> stations) const {
  std::vector<ReferenceSample> out;
  out.reserve(stations.size());
  for (double s : stations) {
    out.push_back(at(s));
  }
  return out;
}

std::vector<ReferenceSample> sampleReference(const Reference& reference, double end, double h) {
  if (!(h > 0.0) || !(end >= 0.0)) {
    throw DomainError("sampleReference: need h > 0 and end >= 0");
  }
  const auto n = static_cast<std::size_t>(std::llround(end / h));
  std::vector<ReferenceSample> out;
  out.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    out.push_back(reference.at(static_cast<double>(i) * h));
  }
  return out;
}

}  // namespace spherecar
