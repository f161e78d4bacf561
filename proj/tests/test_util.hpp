#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "diffcontact/diffcontact.hpp"

namespace testutil {

using namespace diffcontact;

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  Vec3d vec(double lo = -1.0, double hi = 1.0) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }
  Vec3d unit() {
    for (;;) {
      const Vec3d v = vec();
      const double n = norm(v);
      if (n > 1e-3 && n <= 1.0) return v / n;
    }
  }
  Quatd quat() { return axis_angle(unit(), uniform(0.0, std::numbers::pi)); }
  Posed pose(double extent = 1.0) { return {vec(-extent, extent), quat()}; }
};

inline SphereCloudd random_cloud(Rng& rng, std::size_t n, double extent = 0.05, double smin = 0.005, double smax = 0.02) {
  SphereCloudd c;
  for (std::size_t i = 0; i < n; ++i) {
    c.centers.push_back(rng.vec(-extent, extent));
    c.scales.push_back(rng.uniform(smin, smax));
  }
  return c;
}

/// Central difference of a scalar function along coordinate i.
template <class F>
double central_diff(F&& f, std::vector<double> x, std::size_t i, double h) {
  x[i] += h;
  const double fp = f(x);
  x[i] -= 2.0 * h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// A block resting on the ground: one body, optional pusher, settled for `settle` steps.
inline SceneStated resting_state(const Scene& scene, const PhysParamsd& params, const SphereCloudd& cloud, double h,
                                 std::size_t settle) {
  SceneStated x;
  x.bodies.resize(1);
  x.bodies[0].pose = {{0.0, 0.0, -lowest_point(cloud, Posed{})}, Quatd::identity()};
  x.actuators.resize(scene.num_actuators());
  const ActionInputd idle = idle_action(scene);
  for (std::size_t i = 0; i < settle; ++i) x = step(scene, params, x, idle, h).first;
  return x;
}

}  // namespace testutil
