#pragma once

// Sphere-splat silhouette renderer. Each sphere projects to an isotropic 2D
// Gaussian; occupancies composite as 1 - Π(1 - α g), which is independent of
// draw order. Occlusion between bodies is ignored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "diffcontact/geometry.hpp"

namespace diffcontact {

struct Camera {
  double fx = 64.0, fy = 64.0;
  double cx = 31.5, cy = 31.5;
  int width = 64, height = 64;
  Posed T_cw{};  // world -> camera; camera looks along +z

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera: focal lengths must be positive");
    if (width < 8 || height < 8) throw ValidationError("camera: image must be at least 8x8");
  }

  /// Camera at `eye` looking at `target`, image y axis roughly along -up.
  static Camera look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, int width = 64, int height = 64,
                        double fov_x_deg = 60.0) {
    Camera c;
    c.width = width;
    c.height = height;
    c.fx = c.fy = 0.5 * width / std::tan(0.5 * fov_x_deg * std::numbers::pi / 180.0);
    c.cx = 0.5 * (width - 1);
    c.cy = 0.5 * (height - 1);
    const Vec3d z = normalized(target - eye);
    const Vec3d x = normalized(cross(z, up));
    const Vec3d y = cross(z, x);
    // Rows of R_cw are the camera axes in world coordinates.
    const double m[3][3] = {{x.x, x.y, x.z}, {y.x, y.y, y.z}, {z.x, z.y, z.z}};
    Quatd q;
    const double tr = m[0][0] + m[1][1] + m[2][2];
    if (tr > 0.0) {
      const double s = 2.0 * std::sqrt(tr + 1.0);
      q = {0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s};
    } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
      const double s = 2.0 * std::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]);
      q = {(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s};
    } else if (m[1][1] > m[2][2]) {
      const double s = 2.0 * std::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]);
      q = {(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s};
    } else {
      const double s = 2.0 * std::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]);
      q = {(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s};
    }
    q = normalized(q);
    c.T_cw = {-rotate(q, eye), q};
    return c;
  }
};

template <class S>
struct Image {
  int width = 0, height = 0;
  std::vector<S> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), S(0.0)) {}

  S& at(int row, int col) { return data[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)]; }
  const S& at(int row, int col) const {
    return data[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)];
  }
};

using SilhouetteImage = Image<double>;

template <class S>
SphereCloud<S> transform_cloud(const SphereCloud<S>& cloud, const Pose<S>& pose) {
  SphereCloud<S> out;
  out.scales = cloud.scales;
  out.centers.reserve(cloud.size());
  for (const auto& c : cloud.centers) out.centers.push_back(pose_apply(pose, c));
  return out;
}

inline constexpr double kSplatOpacity = 0.95;
inline constexpr double kSplatCutoffSigmas = 6.0;

/// Occupancy image of world-frame clouds. Pixel (row, col) is centered at
/// image coordinates (u, v) = (col, row). Spheres closer than 1e-4 m to the
/// image plane are skipped. Contributions beyond 6σ are dropped (below 2e-8).
template <class S>
Image<S> splat_silhouette(const std::vector<SphereCloud<S>>& world_clouds, const Camera& cam) {
  cam.validate();
  const int W = cam.width, H = cam.height;
  // log transmittance per pixel; only touched pixels are allocated on the tape.
  std::vector<S> log_t(static_cast<std::size_t>(W) * static_cast<std::size_t>(H), S(0.0));
  std::vector<char> touched(log_t.size(), 0);
  const Pose<S> T_cw(cam.T_cw);
  for (const auto& cloud : world_clouds) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Vec3<S> pc = pose_apply(T_cw, cloud.centers[i]);
      if (val(pc.z) <= 1e-4) continue;
      const S u = pc.x / pc.z * cam.fx + cam.cx;
      const S v = pc.y / pc.z * cam.fy + cam.cy;
      const S sigma = cloud.scales[i] * 2.0 * cam.fx / pc.z * 0.5;
      const double sv = val(sigma), uv = val(u), vv = val(v);
      const double reach = kSplatCutoffSigmas * sv;
      const int c0 = std::max(0, static_cast<int>(std::ceil(uv - reach)));
      const int c1 = std::min(W - 1, static_cast<int>(std::floor(uv + reach)));
      const int r0 = std::max(0, static_cast<int>(std::ceil(vv - reach)));
      const int r1 = std::min(H - 1, static_cast<int>(std::floor(vv + reach)));
      if (c0 > c1 || r0 > r1) continue;
      const S inv2s2 = S(0.5) / (sigma * sigma);
      for (int r = r0; r <= r1; ++r) {
        const S dv = v - double(r);
        for (int c = c0; c <= c1; ++c) {
          const S du = u - double(c);
          const double rho2 = (uv - c) * (uv - c) + (vv - r) * (vv - r);
          if (rho2 > reach * reach) continue;
          const S g = exp(-(du * du + dv * dv) * inv2s2);
          const std::size_t k = static_cast<std::size_t>(r) * static_cast<std::size_t>(W) + static_cast<std::size_t>(c);
          log_t[k] = touched[k] ? log_t[k] + log1p(-g * kSplatOpacity) : log1p(-g * kSplatOpacity);
          touched[k] = 1;
        }
      }
    }
  }
  Image<S> img(W, H);
  for (std::size_t k = 0; k < log_t.size(); ++k) {
    if (touched[k]) img.data[k] = S(1.0) - exp(log_t[k]);
  }
  return img;
}

template <class S>
Image<S> splat_silhouette(const SphereCloud<S>& world_cloud, const Camera& cam) {
  return splat_silhouette(std::vector<SphereCloud<S>>{world_cloud}, cam);
}

/// Renders every body of the scene at the given poses.
template <class S>
Image<S> render_bodies(std::span<const SphereCloudd> clouds, std::span<const Pose<S>> poses, const Camera& cam) {
  if (clouds.size() != poses.size()) throw ValidationError("render: cloud/pose count mismatch");
  std::vector<SphereCloud<S>> world;
  world.reserve(clouds.size());
  for (std::size_t b = 0; b < clouds.size(); ++b) world.push_back(transform_cloud(SphereCloud<S>(clouds[b]), poses[b]));
  return splat_silhouette(world, cam);
}

inline void require_same_shape(const SilhouetteImage& a, const SilhouetteImage& b) {
  if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size())
    throw ValidationError("image dimension mismatch");
}

/// -10 log10(MSE), capped at 99 dB when MSE < 1e-10.
inline double psnr(const SilhouetteImage& a, const SilhouetteImage& b) {
  require_same_shape(a, b);
  if (a.data.empty()) throw ValidationError("psnr of empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) mse += square(a.data[i] - b.data[i]);
  mse /= static_cast<double>(a.data.size());
  if (mse < 1e-10) return 99.0;
  return -10.0 * std::log10(mse);
}

/// Mean absolute pixel difference between a rendered image and an observation.
template <class S>
S mean_l1(const Image<S>& rendered, const SilhouetteImage& observed) {
  if (rendered.width != observed.width || rendered.height != observed.height)
    throw ValidationError("image dimension mismatch");
  S acc(0.0);
  for (std::size_t i = 0; i < observed.data.size(); ++i) acc += abs(rendered.data[i] - observed.data[i]);
  return acc / static_cast<double>(observed.data.size());
}

// ---------------------------------------------------------------------------
// Image files

/// Plain PGM (P2), maxval 255, values rounded from [0,1].
inline void write_pgm(const std::string& path, const SilhouetteImage& img) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << "P2\n" << img.width << " " << img.height << "\n255\n";
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double v = std::clamp(img.at(r, c), 0.0, 1.0);
      f << static_cast<int>(std::lround(v * 255.0)) << (c + 1 < img.width ? " " : "\n");
    }
  }
}

inline SilhouetteImage read_pgm(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read " + path);
  std::string magic;
  f >> magic;
  if (magic != "P2") throw ValidationError(path + ": not a plain PGM (P2) file");
  auto next_int = [&]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return std::stoi(tok);
    }
    throw ValidationError(path + ": truncated PGM");
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0) throw ValidationError(path + ": bad PGM header");
  SilhouetteImage img(w, h);
  for (auto& v : img.data) v = static_cast<double>(next_int()) / maxval;
  return img;
}

/// Raw little-endian float32 stack of equally sized frames.
inline void write_f32_frames(const std::string& path, const std::vector<SilhouetteImage>& frames) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path);
  for (const auto& img : frames) {
    for (double v : img.data) {
      const float x = static_cast<float>(v);
      f.write(reinterpret_cast<const char*>(&x), sizeof(float));
    }
  }
}

inline std::vector<SilhouetteImage> read_f32_frames(const std::string& path, int width, int height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::size_t frame_bytes = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * sizeof(float);
  if (frame_bytes == 0 || bytes.size() % frame_bytes != 0) throw ValidationError(path + ": size is not a whole number of frames");
  std::vector<SilhouetteImage> out;
  for (std::size_t off = 0; off < bytes.size(); off += frame_bytes) {
    SilhouetteImage img(width, height);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      float x;
      std::memcpy(&x, bytes.data() + off + i * sizeof(float), sizeof(float));
      img.data[i] = x;
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace diffcontact
