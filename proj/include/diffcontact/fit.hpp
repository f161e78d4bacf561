#pragma once

// Sphere-cloud approximation of a point cloud.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "diffcontact/ad.hpp"
#include "diffcontact/geometry.hpp"
#include "diffcontact/optim.hpp"

namespace diffcontact {

struct FitConfig {
  std::size_t iterations = 200;
  std::uint64_t seed = 0;
  std::size_t max_points = 2048;     // random subset used by the refinement
  double center_step = 0.01;         // Adam rate for centers, as a fraction of the cloud extent
  double log_scale_step = 0.05;      // Adam rate for log scales
  SoftSdfParams sdf;
};

namespace detail {

inline double cloud_extent(std::span<const Vec3d> pts) {
  Vec3d lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  return norm(hi - lo);
}

/// Mean distance from pts[i] to its k nearest other points (brute force).
inline double mean_knn_distance(std::span<const Vec3d> pts, std::size_t i, std::size_t k) {
  std::vector<double> d;
  d.reserve(pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (j == i) continue;
    const double v = norm(pts[j] - pts[i]);
    if (v > 0.0) d.push_back(v);
  }
  if (d.empty()) return 0.0;
  k = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  return std::accumulate(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / static_cast<double>(k);
}

}  // namespace detail

/// Indices of n farthest-point samples, starting from a seeded random point.
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3d> pts, std::size_t n, std::uint64_t seed) {
  if (n > pts.size()) throw ValidationError("farthest_point_sample: more samples than points");
  std::vector<std::size_t> out;
  if (n == 0) return out;
  std::mt19937_64 rng(seed);
  out.push_back(std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng));
  std::vector<double> dist(pts.size(), std::numeric_limits<double>::infinity());
  while (out.size() < n) {
    const Vec3d& last = pts[out.back()];
    std::size_t best = 0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      dist[j] = std::min(dist[j], norm(pts[j] - last));
      if (dist[j] > dist[best]) best = j;
    }
    out.push_back(best);
  }
  return out;
}

/// Mean |blended distance| of the points to the cloud.
inline double fit_loss(const SphereCloudd& cloud, std::span<const Vec3d> pts, const SoftSdfParams& sdf) {
  double s = 0.0;
  for (const auto& p : pts) s += std::abs(blended_distance(soft_min_distance(cloud, Posed{}, p, sdf), sdf));
  return s / static_cast<double>(pts.size());
}

/// Fits `count` spheres to a point cloud. Centers start at farthest-point
/// samples and scales at half the mean 8-NN distance; both are refined with
/// Adam on the mean |blended distance|. A final pass enlarges the sphere
/// nearest to any point farther than max radius + margin from every center.
inline SphereCloudd fit_sphere_cloud(std::span<const Vec3d> points, std::size_t count, const FitConfig& cfg = {}) {
  cfg.sdf.validate();
  if (count == 0) throw ValidationError("fit_sphere_cloud: sphere count must be >= 1");
  if (points.size() < count) throw ValidationError("fit_sphere_cloud: fewer points than requested spheres");
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ValidationError("fit_sphere_cloud: non-finite input point");
  }
  const double extent = detail::cloud_extent(points);
  if (!(extent > 1e-12)) throw ValidationError("fit_sphere_cloud: degenerate point cloud (all points coincide)");

  const std::vector<std::size_t> seeds = farthest_point_sample(points, count, cfg.seed);
  SphereCloudd cloud;
  Vec3d centroid{0.0, 0.0, 0.0};
  for (const auto& p : points) centroid += p;
  centroid = centroid / static_cast<double>(points.size());
  for (std::size_t i : seeds) {
    const double knn = detail::mean_knn_distance(points, i, 8);
    const double s = std::max(0.5 * knn, 1e-4 * extent);
    // Seeds sit on input points, where the distance gradient is undefined;
    // start them one radius inward instead.
    Vec3d c = points[i];
    const Vec3d in = centroid - c;
    const double len = norm(in);
    c += len > 1e-12 ? in * (std::min(2.0 * s, 0.5 * len) / len) : Vec3d{0.0, 0.0, 1e-3 * extent};
    cloud.centers.push_back(c);
    cloud.scales.push_back(s);
  }

  // Deterministic refinement subset.
  std::vector<Vec3d> subset(points.begin(), points.end());
  if (subset.size() > cfg.max_points) {
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(subset.begin(), subset.end(), rng);
    subset.resize(cfg.max_points);
  }

  const std::size_t n = cloud.size();
  std::vector<double> x(4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    x[4 * i] = cloud.centers[i].x;
    x[4 * i + 1] = cloud.centers[i].y;
    x[4 * i + 2] = cloud.centers[i].z;
    x[4 * i + 3] = std::log(cloud.scales[i]);
  }
  Adam center_opt(x.size(), cfg.center_step * extent), scale_opt(x.size(), cfg.log_scale_step);
  std::vector<char> center_mask(x.size(), 1), scale_mask(x.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    center_mask[4 * i + 3] = 0;
    scale_mask[4 * i + 3] = 1;
  }
  auto to_cloud = [&](const std::vector<double>& v) {
    SphereCloudd c;
    for (std::size_t i = 0; i < n; ++i) {
      c.centers.push_back({v[4 * i], v[4 * i + 1], v[4 * i + 2]});
      c.scales.push_back(std::exp(v[4 * i + 3]));
    }
    return c;
  };
  std::vector<double> best_x = x, grad(x.size());
  double best = fit_loss(cloud, subset, cfg.sdf);
  ad::Tape tape;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    tape.clear();
    ad::TapeScope scope(tape);
    std::vector<ad::Var> leaves;
    leaves.reserve(x.size());
    for (double v : x) leaves.push_back(ad::Var::leaf(v));
    SphereCloud<ad::Var> vc;
    for (std::size_t i = 0; i < n; ++i) {
      vc.centers.push_back({leaves[4 * i], leaves[4 * i + 1], leaves[4 * i + 2]});
      vc.scales.push_back(exp(leaves[4 * i + 3]));
    }
    const Pose<ad::Var> origin{Vec3<ad::Var>{0.0, 0.0, 0.0}, Quat<ad::Var>::identity()};
    ad::Var loss(0.0);
    for (const auto& p : subset) {
      const ad::Var phi = soft_sdf(vc, origin, Vec3<ad::Var>(p), cfg.sdf.beta).phi;
      loss += abs(blended_distance(phi, cfg.sdf));
    }
    loss = loss / static_cast<double>(subset.size());
    if (!std::isfinite(loss.value())) break;
    if (loss.value() < best) {
      best = loss.value();
      best_x = x;
    }
    tape.zero_adjoints();
    tape.seed(loss.index(), 1.0);
    tape.propagate();
    bool finite = true;
    for (std::size_t k = 0; k < x.size(); ++k) {
      grad[k] = tape.adjoint(leaves[k].index());
      finite = finite && std::isfinite(grad[k]);
    }
    if (!finite) break;
    center_opt.step(x, grad, center_mask);
    scale_opt.step(x, grad, scale_mask);
  }
  if (const double final_loss = fit_loss(to_cloud(x), subset, cfg.sdf); final_loss < best) best_x = x;
  cloud = to_cloud(best_x);

  // Coverage pass over every input point, not only the subset.
  for (const auto& p : points) {
    double max_r = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_r = std::max(max_r, cloud.radius(i));
    std::size_t nearest = 0;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = norm(p - cloud.centers[i]);
      if (d < dmin) {
        dmin = d;
        nearest = i;
      }
    }
    if (dmin > max_r + cfg.sdf.margin) cloud.scales[nearest] = 0.5 * (dmin - cfg.sdf.margin);
  }
  validate(cloud);
  return cloud;
}

inline SphereCloudd fit_sphere_cloud(std::span<const Vec3d> points, std::size_t count, std::size_t iterations,
                                     std::uint64_t seed = 0) {
  FitConfig cfg;
  cfg.iterations = iterations;
  cfg.seed = seed;
  return fit_sphere_cloud(points, count, cfg);
}

}  // namespace diffcontact
