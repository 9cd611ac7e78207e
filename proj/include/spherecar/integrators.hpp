#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "spherecar/errors.hpp"
#include "spherecar/lie.hpp"

namespace spherecar {

enum class IntegratorMethod { kLieEuler, kRkmk4 };

struct IntegratorConfig {
  IntegratorMethod method = IntegratorMethod::kRkmk4;
  double step = 1e-3;
  /// Polar projection every this many steps; 0 disables it.
  int renormalizeEvery = 1000;

  void validate() const;
};

/// Product of N rotations integrated together (vehicle, observer, ...).
template <std::size_t N>
using GroupState = std::array<Rotation3, N>;

/// Body rates w_i with g_i' = g_i hat(w_i).
template <std::size_t N>
using GroupRates = std::array<Twist3, N>;

template <std::size_t N>
using GroupRateFn = std::function<GroupRates<N>(double s, const GroupState<N>&)>;

using BodyRateFn = std::function<Twist3(double s, const Rotation3& g)>;

/// g exp(h w).
Rotation3 lieEulerStep(const Rotation3& g, const Twist3& w, double h);

/// Truncated inverse left-trivialised dexp: w + (theta x w)/2 + theta x (theta x w)/12.
/// Enough for a fourth-order Munthe-Kaas step.
Twist3 dexpInverse(const Twist3& theta, const Twist3& w);

/// Fourth-order Runge-Kutta-Munthe-Kaas step: classical RK4 on the algebra
/// coordinate theta with g(s + h) = g(s) exp(theta).
template <std::size_t N>
GroupState<N> rkmk4Step(const GroupState<N>& g, const GroupRateFn<N>& f, double s, double h) {
  auto moved = [&](const GroupRates<N>& theta) {
    GroupState<N> out;
    for (std::size_t i = 0; i < N; ++i) {
      out[i] = g[i] * expSO3(theta[i]);
    }
    return out;
  };
  auto scaled = [](const GroupRates<N>& k, double c) {
    GroupRates<N> out;
    for (std::size_t i = 0; i < N; ++i) {
      out[i] = c * k[i];
    }
    return out;
  };
  auto corrected = [&](const GroupRates<N>& theta, const GroupRates<N>& w) {
    GroupRates<N> out;
    for (std::size_t i = 0; i < N; ++i) {
      out[i] = h * dexpInverse(theta[i], w[i]);
    }
    return out;
  };

  const GroupRates<N> k1 = scaled(f(s, g), h);
  const GroupRates<N> t1 = scaled(k1, 0.5);
  const GroupRates<N> k2 = corrected(t1, f(s + 0.5 * h, moved(t1)));
  const GroupRates<N> t2 = scaled(k2, 0.5);
  const GroupRates<N> k3 = corrected(t2, f(s + 0.5 * h, moved(t2)));
  const GroupRates<N> k4 = corrected(k3, f(s + h, moved(k3)));
  GroupRates<N> theta;
  for (std::size_t i = 0; i < N; ++i) {
    theta[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
  }
  return moved(theta);
}

Rotation3 rkmk4Step(const Rotation3& g, const BodyRateFn& f, double s, double h);

/// Called with the sample index, station and state at every grid point,
/// including the initial one.
template <std::size_t N>
using StepObserver = std::function<void(std::size_t, double, const GroupState<N>&)>;

/// Integrates from g0 at grid[0] through every grid point without storing
/// the trajectory and returns the final state. Errors raised by the rate
/// function get the station of the failing step attached.
template <std::size_t N>
GroupState<N> propagate(const GroupState<N>& g0, const GroupRateFn<N>& f,
                        std::span<const double> grid, const IntegratorConfig& config,
                        const StepObserver<N>& observer = {}) {
  config.validate();
  GroupState<N> state = g0;
  if (grid.empty()) {
    return state;
  }
  if (observer) {
    observer(0, grid[0], state);
  }
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double s = grid[k - 1];
    const double h = grid[k] - s;
    if (!(h > 0.0)) {
      throw DomainError("integrator grid must be strictly increasing");
    }
    GroupState<N> next;
    try {
      if (config.method == IntegratorMethod::kLieEuler) {
        const GroupRates<N> w = f(s, state);
        for (std::size_t i = 0; i < N; ++i) {
          next[i] = lieEulerStep(state[i], w[i], h);
        }
      } else {
        next = rkmk4Step<N>(state, f, s, h);
      }
    } catch (Error& e) {
      e.attachStation(s);
      throw;
    }
    if (config.renormalizeEvery > 0 && k % static_cast<std::size_t>(config.renormalizeEvery) == 0) {
      for (auto& r : next) {
        r = polarProjection(r.matrix());
      }
    }
    state = next;
    if (observer) {
      observer(k, grid[k], state);
    }
  }
  return state;
}

/// As propagate, keeping every state.
template <std::size_t N>
std::vector<GroupState<N>> integrateTrajectory(const GroupState<N>& g0, const GroupRateFn<N>& f,
                                               std::span<const double> grid,
                                               const IntegratorConfig& config,
                                               const StepObserver<N>& observer = {}) {
  std::vector<GroupState<N>> out;
  out.reserve(grid.size());
  propagate<N>(g0, f, grid, config, [&](std::size_t k, double s, const GroupState<N>& x) {
    out.push_back(x);
    if (observer) {
      observer(k, s, x);
    }
  });
  return out;
}

/// Single-rotation convenience wrapper.
std::vector<Rotation3> integrateTrajectory(const Rotation3& g0, const BodyRateFn& f,
                                           std::span<const double> grid,
                                           const IntegratorConfig& config);

/// Uniform grid s0, s0 + h, ..., s0 + n h.
std::vector<double> uniformGrid(double s0, double h, std::size_t steps);

}  // namespace spherecar
