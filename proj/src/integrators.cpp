#include "spherecar/integrators.hpp"

namespace spherecar {

void IntegratorConfig::validate() const {
  if (!(step > 0.0)) {
    throw DomainError("integrator step must be positive");
  }
  if (renormalizeEvery < 0) {
    throw DomainError("renormalisation period must be non-negative");
  }
}

Rotation3 lieEulerStep(const Rotation3& g, const Twist3& w, double h) {
  return g * expSO3(Twist3(h * w));
}

Twist3 dexpInverse(const Twist3& theta, const Twist3& w) {
  const Twist3 tw = theta.cross(w);
  return w + 0.5 * tw + theta.cross(tw) / 12.0;
}

Rotation3 rkmk4Step(const Rotation3& g, const BodyRateFn& f, double s, double h) {
  const GroupRateFn<1> wrapped = [&f](double t, const GroupState<1>& x) {
    return GroupRates<1>{f(t, x[0])};
  };
  return rkmk4Step<1>(GroupState<1>{g}, wrapped, s, h)[0];
}

std::vector<Rotation3> integrateTrajectory(const Rotation3& g0, const BodyRateFn& f,
                                           std::span<const double> grid,
                                           const IntegratorConfig& config) {
  const GroupRateFn<1> wrapped = [&f](double t, const GroupState<1>& x) {
    return GroupRates<1>{f(t, x[0])};
  };
  const auto states = integrateTrajectory<1>(GroupState<1>{g0}, wrapped, grid, config);
  std::vector<Rotation3> out;
  out.reserve(states.size());
  for (const auto& x : states) {
    out.push_back(x[0]);
  }
  return out;
}

std::vector<double> uniformGrid(double s0, double h, std::size_t steps) {
  std::vector<double> grid(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    grid[i] = s0 + h * static_cast<double>(i);
  }
  return grid;
}

}  // namespace spherecar
