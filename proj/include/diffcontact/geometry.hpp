#pragma once

// Sphere-cloud collision geometry: LogSumExp soft signed distance, sigmoid
// penetration floor, gradient projection onto the surface, and contact
// generation with rigid-body contact Jacobians.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "diffcontact/spatial.hpp"

namespace diffcontact {

/// Union of isotropic spheres in a body frame. Radii are always 2 * scale.
template <class S>
struct SphereCloud {
  std::vector<Vec3<S>> centers;
  std::vector<S> scales;

  SphereCloud() = default;
  SphereCloud(std::vector<Vec3<S>> c, std::vector<S> s) : centers(std::move(c)), scales(std::move(s)) {}
  template <class U>
  explicit SphereCloud(const SphereCloud<U>& o) {
    centers.reserve(o.size());
    scales.reserve(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) {
      centers.emplace_back(o.centers[i]);
      scales.emplace_back(S(o.scales[i]));
    }
  }

  std::size_t size() const { return centers.size(); }
  S radius(std::size_t i) const { return scales[i] * 2.0; }
};

using SphereCloudd = SphereCloud<double>;

inline void validate(const SphereCloudd& cloud) {
  if (cloud.size() == 0) throw ValidationError("sphere cloud is empty");
  if (cloud.scales.size() != cloud.centers.size()) throw ValidationError("sphere cloud: centers/scales size mismatch");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!(cloud.scales[i] > 0.0) || !std::isfinite(cloud.scales[i]))
      throw ValidationError("sphere cloud: scale " + std::to_string(i) + " is not positive");
    const Vec3d& c = cloud.centers[i];
    if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.z))
      throw ValidationError("sphere cloud: non-finite center " + std::to_string(i));
  }
}

struct SoftSdfParams {
  double beta = 200.0;   // LSE sharpness, 1/m
  double gamma = 300.0;  // sigmoid sharpness, 1/m
  double delta = 0.05;   // penetration floor, m
  double margin = 0.01;  // contact activation distance, m
  int max_contacts_per_pair = 8;

  void validate() const {
    if (!(beta > 0.0 && gamma > 0.0 && delta > 0.0 && margin > 0.0))
      throw ValidationError("soft sdf parameters must be positive");
    if (max_contacts_per_pair < 1) throw ValidationError("max_contacts_per_pair must be >= 1");
  }
};

struct PlaneGeom {
  Vec3d normal{0.0, 0.0, 1.0};
  double offset = 0.0;

  double distance(const Vec3d& p) const { return dot(p, normal) - offset; }
};

/// Thrown when the soft SDF gradient vanishes at the query (symmetry center).
class DegenerateGradient : public NumericalError {
 public:
  DegenerateGradient() : NumericalError("soft sdf gradient vanishes at query point") {}
};

template <class S>
struct SoftSdfSample {
  S phi;              // LSE soft distance
  Vec3<S> gradient;   // world-frame ∇_p phi
};

/// Soft distance and its query gradient. The LSE is shifted by the hard
/// minimum so exp never overflows and min - ln(N)/β <= phi <= min holds.
template <class S>
SoftSdfSample<S> soft_sdf(const SphereCloud<S>& cloud, const Pose<S>& pose, const Vec3<S>& p, double beta) {
  const Vec3<S> local = rotate_inverse(pose.orientation, p - pose.position);
  const std::size_t n = cloud.size();
  std::vector<S> dist(n);
  std::vector<Vec3<S>> dir(n);
  std::size_t arg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3<S> diff = local - cloud.centers[i];
    const S len = norm(diff);
    dist[i] = len - cloud.radius(i);
    dir[i] = diff / len;
    if (val(dist[i]) < val(dist[arg])) arg = i;
  }
  const double shift = val(dist[arg]);
  S total(0.0);
  std::vector<S> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = exp((dist[i] - shift) * (-beta));
    total += w[i];
  }
  SoftSdfSample<S> out;
  if (n == 1) {
    out.phi = dist[0];
    out.gradient = rotate(pose.orientation, dir[0]);
    return out;
  }
  out.phi = S(shift) - log(total) / beta;
  Vec3<S> g{S(0.0), S(0.0), S(0.0)};
  for (std::size_t i = 0; i < n; ++i) g += dir[i] * (w[i] / total);
  out.gradient = rotate(pose.orientation, g);
  return out;
}

/// φ_soft(p) = -(1/β) log Σ exp(-β(|p - c_i| - r_i))
template <class S>
S soft_min_distance(const SphereCloud<S>& cloud, const Pose<S>& pose, const Vec3<S>& p, const SoftSdfParams& params) {
  return soft_sdf(cloud, pose, p, params.beta).phi;
}

/// Hard minimum over spheres; reference for the soft version.
inline double hard_min_distance(const SphereCloudd& cloud, const Posed& pose, const Vec3d& p) {
  const Vec3d local = rotate_inverse(pose.orientation, p - pose.position);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) best = std::min(best, norm(local - cloud.centers[i]) - cloud.radius(i));
  return best;
}

/// σ(γφ)·φ + (1 - σ(γφ))·(-δ)
template <class S>
S blended_distance(const S& phi_soft, const SoftSdfParams& params) {
  const S s = sigmoid(phi_soft * params.gamma);
  return s * phi_soft + (S(1.0) - s) * (-params.delta);
}

template <class S>
struct SurfacePoint {
  Vec3<S> point;
  Vec3<S> normal;
  S phi;       // blended distance at the query
  S phi_soft;  // raw LSE distance at the query
};

/// p_c = p - φ(p) n with n = ∇φ/|∇φ|. Throws DegenerateGradient when |∇φ| <= 1e-8.
template <class S>
SurfacePoint<S> surface_projection(const SphereCloud<S>& cloud, const Pose<S>& pose, const Vec3<S>& p,
                                   const SoftSdfParams& params) {
  const SoftSdfSample<S> s = soft_sdf(cloud, pose, p, params.beta);
  const S gnorm = norm(s.gradient);
  if (!(val(gnorm) > 1e-8)) throw DegenerateGradient();
  SurfacePoint<S> out;
  out.normal = s.gradient / gnorm;
  out.phi_soft = s.phi;
  out.phi = blended_distance(s.phi, params);
  out.point = p - out.normal * out.phi;
  return out;
}

// ---------------------------------------------------------------------------
// Contacts

enum class EntityKind { Body, Ground, Actuator };

struct EntityRef {
  EntityKind kind = EntityKind::Body;
  int index = 0;

  static EntityRef body(int i) { return {EntityKind::Body, i}; }
  static EntityRef ground() { return {EntityKind::Ground, 0}; }
  static EntityRef actuator(int i) { return {EntityKind::Actuator, i}; }
  bool is_body() const { return kind == EntityKind::Body; }
  friend bool operator==(const EntityRef&, const EntityRef&) = default;
  friend auto operator<=>(const EntityRef&, const EntityRef&) = default;
};

enum class ContactKind { Plane, BodyBody, Actuator };

/// Identifies a contact candidate independently of the state, so a selection
/// made on one pass can be replayed exactly on another.
struct ContactKey {
  ContactKind kind = ContactKind::Plane;
  int body = 0;    // Plane: body; BodyBody: query body; Actuator: actuator
  int other = 0;   // BodyBody / Actuator: target body
  int index = 0;   // sphere index (Plane, BodyBody) or actuator point index
  bool perturbed = false;

  friend bool operator==(const ContactKey&, const ContactKey&) = default;
};

template <class S>
struct Contact {
  Vec3<S> point;   // world witness point
  Vec3<S> normal;  // unit, from body b into body a
  S phi;           // signed distance
  EntityRef a;
  EntityRef b;
};

/// Rows map stacked generalized velocity to the relative velocity of the
/// contact point (a relative to b) expressed in [n, t1, t2]. Only the two
/// 3×6 blocks of the participating bodies are stored; velocity of a kinematic
/// actuator on side a enters through `bias`.
template <class S>
struct ContactJacobian {
  std::array<Vec3<S>, 3> frame;  // n, t1, t2
  int body_a = -1;
  int body_b = -1;
  std::array<std::array<S, 6>, 3> block_a{};
  std::array<std::array<S, 6>, 3> block_b{};
  Vec3<S> bias{};
};

template <class S>
struct ContactSet {
  std::vector<Contact<S>> contacts;
  std::vector<ContactJacobian<S>> jacobians;
  std::vector<ContactKey> keys;

  std::size_t size() const { return contacts.size(); }
};

struct ActuatorGeom {
  std::vector<Vec3d> points;  // query points relative to the actuator origin
  double radius = 0.0;
  int material = 2;
};

struct BodyGeom {
  SphereCloudd cloud;
  int material = 1;
};

/// Everything static about the collision scene.
struct SceneGeometry {
  std::vector<BodyGeom> bodies;
  std::optional<PlaneGeom> ground = PlaneGeom{};
  int ground_material = 0;
  std::vector<ActuatorGeom> actuators;
  SoftSdfParams sdf;
  int n_d = 4;

  void validate() const {
    sdf.validate();
    if (n_d < 2 || n_d % 2 != 0) throw ValidationError("n_d must be even and >= 2");
    for (const auto& b : bodies) diffcontact::validate(b.cloud);
    if (ground && std::abs(norm(ground->normal) - 1.0) > 1e-9) throw ValidationError("ground normal must be unit");
  }
};

/// Dense 3 × 6B form of a contact Jacobian (tests and diagnostics).
template <class S>
std::vector<std::vector<double>> dense_jacobian(const ContactJacobian<S>& j, std::size_t num_bodies) {
  std::vector<std::vector<double>> m(3, std::vector<double>(6 * num_bodies, 0.0));
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 6; ++c) {
      if (j.body_a >= 0) m[r][6 * static_cast<std::size_t>(j.body_a) + c] += val(j.block_a[r][c]);
      if (j.body_b >= 0) m[r][6 * static_cast<std::size_t>(j.body_b) + c] += val(j.block_b[r][c]);
    }
  }
  return m;
}

namespace detail {

/// Velocity Jacobian row for direction u at world point p on a body at `pose`:
/// u·(v + R(ω × r)) = u·v + ω·(r × Rᵀu), r = Rᵀ(p - x).
template <class S>
std::array<S, 6> point_row(const Pose<S>& pose, const Vec3<S>& p, const Vec3<S>& u, double sign) {
  const Vec3<S> r = rotate_inverse(pose.orientation, p - pose.position);
  const Vec3<S> ang = cross(r, rotate_inverse(pose.orientation, u));
  return {u.x * sign, u.y * sign, u.z * sign, ang.x * sign, ang.y * sign, ang.z * sign};
}

template <class S>
ContactJacobian<S> build_jacobian(const Contact<S>& c, std::span<const Pose<S>> poses,
                                  std::span<const Vec3<S>> actuator_velocity, int n_d) {
  ContactJacobian<S> j;
  const Vec3<S> t1 = tangent_basis(c.normal, n_d)[0];
  j.frame = {c.normal, t1, cross(c.normal, t1)};
  if (c.a.is_body()) {
    j.body_a = c.a.index;
    for (int r = 0; r < 3; ++r) j.block_a[r] = point_row(poses[c.a.index], c.point, j.frame[r], 1.0);
  } else {
    for (auto& row : j.block_a) row.fill(S(0.0));
  }
  if (c.b.is_body()) {
    j.body_b = c.b.index;
    for (int r = 0; r < 3; ++r) j.block_b[r] = point_row(poses[c.b.index], c.point, j.frame[r], -1.0);
  } else {
    for (auto& row : j.block_b) row.fill(S(0.0));
  }
  j.bias = Vec3<S>{S(0.0), S(0.0), S(0.0)};
  if (c.a.kind == EntityKind::Actuator && c.a.index < static_cast<int>(actuator_velocity.size())) {
    const Vec3<S>& va = actuator_velocity[c.a.index];
    j.bias = {dot(j.frame[0], va), dot(j.frame[1], va), dot(j.frame[2], va)};
  }
  return j;
}

template <class S>
double bounding_radius(const SphereCloud<S>& cloud, Vec3d& center) {
  center = {0.0, 0.0, 0.0};
  for (const auto& c : cloud.centers) center += value_of(c);
  center = center / static_cast<double>(cloud.size());
  double r = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    r = std::max(r, norm(value_of(cloud.centers[i]) - center) + val(cloud.radius(i)));
  return r;
}

template <class S>
std::optional<SurfacePoint<S>> project_with_retry(const SphereCloud<S>& cloud, const Pose<S>& pose, const Vec3<S>& p,
                                                  const SoftSdfParams& params, bool perturbed) {
  const double eps = 1e-7 / std::sqrt(3.0);
  const Vec3<S> q = perturbed ? p + Vec3<S>{S(eps), S(eps), S(eps)} : p;
  try {
    return surface_projection(cloud, pose, q, params);
  } catch (const DegenerateGradient&) {
    return std::nullopt;
  }
}

/// Evaluates one candidate. Returns nullopt if the projection is degenerate.
template <class S>
std::optional<Contact<S>> evaluate_key(const ContactKey& key, const SceneGeometry& geom,
                                       std::span<const SphereCloud<S>> clouds, std::span<const Pose<S>> poses,
                                       std::span<const Vec3<S>> actuator_pos) {
  const SoftSdfParams& sdf = geom.sdf;
  switch (key.kind) {
    case ContactKind::Plane: {
      const PlaneGeom& g = *geom.ground;
      const Vec3<S> n(g.normal);
      const SphereCloud<S>& cloud = clouds[key.body];
      const Vec3<S> c = pose_apply(poses[key.body], cloud.centers[key.index]);
      const S r = cloud.radius(key.index);
      S d = dot(c, n) - g.offset - r;
      if (val(d) < -sdf.delta) d = S(-sdf.delta);
      return Contact<S>{c - n * r, n, d, EntityRef::body(key.body), EntityRef::ground()};
    }
    case ContactKind::BodyBody: {
      const SphereCloud<S>& qc = clouds[key.body];
      const Vec3<S> c = pose_apply(poses[key.body], qc.centers[key.index]);
      auto sp = project_with_retry(clouds[key.other], poses[key.other], c, sdf, key.perturbed);
      if (!sp) return std::nullopt;
      const S phi = blended_distance(sp->phi_soft - qc.radius(key.index), sdf);
      return Contact<S>{sp->point, sp->normal, phi, EntityRef::body(key.body), EntityRef::body(key.other)};
    }
    case ContactKind::Actuator: {
      const ActuatorGeom& act = geom.actuators[key.body];
      const Vec3<S> p = actuator_pos[key.body] + Vec3<S>(act.points[key.index]);
      auto sp = project_with_retry(clouds[key.other], poses[key.other], p, sdf, key.perturbed);
      if (!sp) return std::nullopt;
      const S phi = blended_distance(sp->phi_soft - act.radius, sdf);
      return Contact<S>{sp->point, sp->normal, phi, EntityRef::actuator(key.body), EntityRef::body(key.other)};
    }
  }
  return std::nullopt;
}

template <class S>
void push_candidate(ContactKey key, const SceneGeometry& geom, std::span<const SphereCloud<S>> clouds,
                    std::span<const Pose<S>> poses, std::span<const Vec3<S>> actuator_pos,
                    std::vector<std::pair<ContactKey, Contact<S>>>& out) {
  auto c = evaluate_key(key, geom, clouds, poses, actuator_pos);
  if (!c && key.kind != ContactKind::Plane) {
    key.perturbed = true;
    c = evaluate_key(key, geom, clouds, poses, actuator_pos);
  }
  if (c && val(c->phi) < geom.sdf.margin) out.emplace_back(key, std::move(*c));
}

/// Deepest-first cap; stable sort keeps candidate order on ties.
template <class S>
void keep_deepest(std::vector<std::pair<ContactKey, Contact<S>>>& group, int cap) {
  std::stable_sort(group.begin(), group.end(),
                   [](const auto& l, const auto& r) { return val(l.second.phi) < val(r.second.phi); });
  if (group.size() > static_cast<std::size_t>(cap)) group.resize(static_cast<std::size_t>(cap));
}

}  // namespace detail

/// Generates contacts for the scene at the given body poses and actuator
/// positions. When `fixed` is given, exactly those candidates are evaluated
/// (no margin test, no cap), which replays a selection made earlier.
template <class S>
ContactSet<S> generate_contacts(const SceneGeometry& geom, std::span<const SphereCloud<S>> clouds,
                                std::span<const Pose<S>> poses, std::span<const Vec3<S>> actuator_pos,
                                std::span<const Vec3<S>> actuator_vel, const std::vector<ContactKey>* fixed = nullptr) {
  ContactSet<S> set;
  auto emit = [&](const ContactKey& key, const Contact<S>& c) {
    set.keys.push_back(key);
    set.contacts.push_back(c);
    set.jacobians.push_back(detail::build_jacobian(c, poses, actuator_vel, geom.n_d));
  };

  if (fixed != nullptr) {
    for (const ContactKey& key : *fixed) {
      auto c = detail::evaluate_key(key, geom, clouds, poses, actuator_pos);
      if (!c) throw NumericalError("contact replay: candidate became degenerate");
      emit(key, *c);
    }
    return set;
  }

  const int cap = geom.sdf.max_contacts_per_pair;
  const double slack = geom.sdf.margin + geom.sdf.delta;
  const std::size_t nb = clouds.size();
  using Group = std::vector<std::pair<ContactKey, Contact<S>>>;

  // Body vs ground plane: analytic.
  if (geom.ground) {
    for (std::size_t b = 0; b < nb; ++b) {
      Group group;
      for (std::size_t i = 0; i < clouds[b].size(); ++i) {
        ContactKey key{ContactKind::Plane, static_cast<int>(b), 0, static_cast<int>(i), false};
        detail::push_candidate(key, geom, clouds, poses, actuator_pos, group);
      }
      detail::keep_deepest(group, cap);
      for (const auto& [k, c] : group) emit(k, c);
    }
  }

  // Body vs body: sphere centers of each cloud queried into the other's soft SDF.
  std::vector<Vec3d> bcenter(nb);
  std::vector<double> bradius(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    Vec3d local;
    bradius[b] = detail::bounding_radius(clouds[b], local);
    bcenter[b] = pose_apply(value_of(poses[b]), local);
  }
  for (std::size_t a = 0; a < nb; ++a) {
    for (std::size_t b = a + 1; b < nb; ++b) {
      const double lse_slack = std::log(static_cast<double>(std::max(clouds[a].size(), clouds[b].size()))) / geom.sdf.beta;
      if (norm(bcenter[a] - bcenter[b]) > bradius[a] + bradius[b] + slack + lse_slack) continue;
      Group group;
      for (auto [q, t] : {std::pair{a, b}, std::pair{b, a}}) {
        const Posed pq = value_of(poses[q]);
        for (std::size_t i = 0; i < clouds[q].size(); ++i) {
          const Vec3d c = pose_apply(pq, value_of(clouds[q].centers[i]));
          const double rq = val(clouds[q].radius(i));
          if (norm(c - bcenter[t]) > bradius[t] + rq + slack + lse_slack) continue;
          ContactKey key{ContactKind::BodyBody, static_cast<int>(q), static_cast<int>(t), static_cast<int>(i), false};
          detail::push_candidate(key, geom, clouds, poses, actuator_pos, group);
        }
      }
      detail::keep_deepest(group, cap);
      for (const auto& [k, c] : group) emit(k, c);
    }
  }

  // Actuator query points vs bodies.
  for (std::size_t k = 0; k < geom.actuators.size() && k < actuator_pos.size(); ++k) {
    const ActuatorGeom& act = geom.actuators[k];
    for (std::size_t b = 0; b < nb; ++b) {
      Group group;
      for (std::size_t j = 0; j < act.points.size(); ++j) {
        const Vec3d p = value_of(actuator_pos[k]) + act.points[j];
        if (norm(p - bcenter[b]) > bradius[b] + act.radius + slack) continue;
        ContactKey key{ContactKind::Actuator, static_cast<int>(k), static_cast<int>(b), static_cast<int>(j), false};
        detail::push_candidate(key, geom, clouds, poses, actuator_pos, group);
      }
      detail::keep_deepest(group, cap);
      for (const auto& [k2, c] : group) emit(k2, c);
    }
  }
  return set;
}

}  // namespace diffcontact
