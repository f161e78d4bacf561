#pragma once

// Closed-form complementarity-free contact step.
//
//   b      = v + h M⁻¹ τ(q, v, a)
//   λ      = softplus(-K (h J̃ b + φ̃) - D J̃ b)
//   v'     = b + h M⁻¹ J̃ᵀ λ
//   q'     = q ⊕ h v'
//
// J̃ stacks, per contact c and tangent direction d_i, the dual-cone face row
// J_c^n - μ_c J_c^{d_i}; φ̃ repeats φ_c once per face.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffcontact/geometry.hpp"

namespace diffcontact {

inline constexpr double kMaxFriction = 5.0;

/// μ from its raw coordinate: exp(raw) smoothly capped at kMaxFriction.
/// μ = μmax·e / (e⁸ + μmax⁸)^(1/8), which is e to within 1e-8 relative for e < 0.5.
template <class S>
S friction_from_raw(const S& raw) {
  const S e = exp(raw);
  const S ratio = e / kMaxFriction;
  return e / pow(S(1.0) + pow(ratio, 8.0), 1.0 / 8.0);
}

inline double friction_to_raw(double mu) {
  if (!(mu > 0.0 && mu < kMaxFriction)) throw ValidationError("friction must lie in (0, 5)");
  const double y = mu / kMaxFriction;
  return std::log(kMaxFriction * y / std::pow(1.0 - std::pow(y, 8.0), 1.0 / 8.0));
}

template <class S>
struct PhysParams {
  std::vector<S> mass;               // per body, kg
  std::vector<Vec3<S>> inertia;      // per body, principal diagonal, kg m²
  std::vector<S> mu;                 // per material pair
  std::vector<S> stiffness;          // K per material pair, N/m
  std::vector<S> damping;            // D per material pair, N s/m

  template <class U>
  static PhysParams from(const PhysParams<U>& o) {
    PhysParams p;
    for (const auto& m : o.mass) p.mass.push_back(S(m));
    for (const auto& i : o.inertia) p.inertia.emplace_back(i);
    for (const auto& m : o.mu) p.mu.push_back(S(m));
    for (const auto& k : o.stiffness) p.stiffness.push_back(S(k));
    for (const auto& d : o.damping) p.damping.push_back(S(d));
    return p;
  }
};

using PhysParamsd = PhysParams<double>;

/// Static scene description: collision geometry, material pairs, gravity.
struct Scene {
  SceneGeometry geometry;
  std::vector<std::pair<int, int>> material_pairs{{0, 1}, {1, 1}, {1, 2}};
  Vec3d gravity{0.0, 0.0, -9.81};

  std::size_t num_bodies() const { return geometry.bodies.size(); }
  std::size_t num_actuators() const { return geometry.actuators.size(); }

  int material_of(const EntityRef& e) const {
    switch (e.kind) {
      case EntityKind::Body: return geometry.bodies[static_cast<std::size_t>(e.index)].material;
      case EntityKind::Ground: return geometry.ground_material;
      case EntityKind::Actuator: return geometry.actuators[static_cast<std::size_t>(e.index)].material;
    }
    return -1;
  }

  int pair_index(int a, int b) const {
    for (std::size_t i = 0; i < material_pairs.size(); ++i) {
      const auto& [x, y] = material_pairs[i];
      if ((x == a && y == b) || (x == b && y == a)) return static_cast<int>(i);
    }
    throw ValidationError("no contact material defined for pair (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  }

  std::vector<SphereCloudd> clouds() const {
    std::vector<SphereCloudd> out;
    for (const auto& b : geometry.bodies) out.push_back(b.cloud);
    return out;
  }

  void validate() const { geometry.validate(); }
};

inline void validate(const PhysParamsd& p, const Scene& scene) {
  const std::size_t nb = scene.num_bodies(), np = scene.material_pairs.size();
  if (p.mass.size() != nb || p.inertia.size() != nb) throw ValidationError("physical parameters: body count mismatch");
  if (p.mu.size() != np || p.stiffness.size() != np || p.damping.size() != np)
    throw ValidationError("physical parameters: material pair count mismatch");
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  for (std::size_t b = 0; b < nb; ++b) {
    if (!positive(p.mass[b]) || !positive(p.inertia[b].x) || !positive(p.inertia[b].y) || !positive(p.inertia[b].z))
      throw ValidationError("mass and inertia must be positive");
  }
  for (std::size_t i = 0; i < np; ++i) {
    if (!positive(p.mu[i]) || p.mu[i] > kMaxFriction || !positive(p.stiffness[i]) || !positive(p.damping[i]))
      throw ValidationError("contact parameters must be positive (mu <= 5)");
  }
}

template <class S>
struct BodyState {
  Pose<S> pose;
  Twist<S> twist;
};

/// Kinematic actuator: origin of its query points and the velocity it was
/// last commanded with.
template <class S>
struct ActuatorState {
  Vec3<S> position{};
  Vec3<S> velocity{};
};

template <class S>
struct SceneState {
  std::vector<BodyState<S>> bodies;
  std::vector<ActuatorState<S>> actuators;
};

using SceneStated = SceneState<double>;

/// Spring-damper coupling a body-frame attachment point to a target:
/// F = k (x_target - x) + d (v_target - v), applied at the attachment point.
template <class S>
struct ImpedanceTarget {
  int body = 0;
  Vec3d attachment{};
  Vec3<S> target_position{};
  Vec3<S> target_velocity{};
  double stiffness = 0.0;
  double damping = 0.0;
};

template <class S>
struct ActionInput {
  std::vector<Vec3<S>> actuator_velocity;  // commanded velocity per actuator, world frame
  std::vector<ImpedanceTarget<S>> impedance;
};

using ActionInputd = ActionInput<double>;

using Wrench = std::array<double, 6>;

template <class S>
using GenForce = std::vector<std::array<S, 6>>;

/// Generalized non-contact force per body: gravity (world linear), gyroscopic
/// torque -ω × Iω (body angular) and impedance-target wrenches.
template <class S>
GenForce<S> external_wrench(const Scene& scene, const SceneState<S>& x, const ActionInput<S>& a,
                            const PhysParams<S>& params) {
  const std::size_t nb = x.bodies.size();
  GenForce<S> tau(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    const S& m = params.mass[b];
    const Vec3<S>& inertia = params.inertia[b];
    const Vec3<S>& w = x.bodies[b].twist.angular;
    const Vec3<S> iw{inertia.x * w.x, inertia.y * w.y, inertia.z * w.z};
    const Vec3<S> gyro = -cross(w, iw);
    tau[b] = {m * scene.gravity.x, m * scene.gravity.y, m * scene.gravity.z, gyro.x, gyro.y, gyro.z};
  }
  for (const ImpedanceTarget<S>& imp : a.impedance) {
    if (imp.body < 0 || static_cast<std::size_t>(imp.body) >= nb) throw ValidationError("impedance target: bad body index");
    const BodyState<S>& bs = x.bodies[static_cast<std::size_t>(imp.body)];
    const Vec3<S> r(imp.attachment);
    const Vec3<S> p = pose_apply(bs.pose, r);
    const Vec3<S> v = bs.twist.linear + rotate(bs.pose.orientation, cross(bs.twist.angular, r));
    const Vec3<S> f = (imp.target_position - p) * S(imp.stiffness) + (imp.target_velocity - v) * S(imp.damping);
    const Vec3<S> torque = cross(r, rotate_inverse(bs.pose.orientation, f));
    auto& t = tau[static_cast<std::size_t>(imp.body)];
    t[0] += f.x;
    t[1] += f.y;
    t[2] += f.z;
    t[3] += torque.x;
    t[4] += torque.y;
    t[5] += torque.z;
  }
  return tau;
}

/// One face of the polyhedral dual cone: J^n - μ J^{d_i}, restricted to the
/// two participating bodies.
template <class S>
struct DualConeRow {
  int body_a = -1;
  int body_b = -1;
  std::array<S, 6> ja{};
  std::array<S, 6> jb{};
  S bias{};  // prescribed actuator velocity projected on the face
  S phi{};
  int contact = 0;
};

template <class S>
struct DualConeSystem {
  std::vector<DualConeRow<S>> rows;
  int n_d = 4;

  std::size_t size() const { return rows.size(); }

  /// Dense (n_c n_d) × 6B matrix (tests and diagnostics).
  std::vector<std::vector<double>> dense(std::size_t num_bodies) const {
    std::vector<std::vector<double>> m(rows.size(), std::vector<double>(6 * num_bodies, 0.0));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int c = 0; c < 6; ++c) {
        if (rows[r].body_a >= 0) m[r][6 * static_cast<std::size_t>(rows[r].body_a) + c] += val(rows[r].ja[c]);
        if (rows[r].body_b >= 0) m[r][6 * static_cast<std::size_t>(rows[r].body_b) + c] += val(rows[r].jb[c]);
      }
    }
    return m;
  }

  template <class V>
  S row_times(std::size_t r, const V& gen_velocity) const {
    const DualConeRow<S>& row = rows[r];
    S acc = row.bias;
    for (int c = 0; c < 6; ++c) {
      if (row.body_a >= 0) acc += row.ja[c] * gen_velocity[static_cast<std::size_t>(row.body_a)][c];
      if (row.body_b >= 0) acc += row.jb[c] * gen_velocity[static_cast<std::size_t>(row.body_b)][c];
    }
    return acc;
  }
};

/// Stacks n_d dual-cone faces per contact; φ̃ repeats each contact's φ.
template <class S>
DualConeSystem<S> dual_cone_stack(const ContactSet<S>& contacts, std::span<const S> mu, int n_d) {
  if (mu.size() != contacts.size()) throw ValidationError("dual_cone_stack: one friction value per contact required");
  DualConeSystem<S> sys;
  sys.n_d = n_d;
  sys.rows.reserve(contacts.size() * static_cast<std::size_t>(n_d));
  for (std::size_t c = 0; c < contacts.size(); ++c) {
    const ContactJacobian<S>& j = contacts.jacobians[c];
    for (int i = 0; i < n_d; ++i) {
      const double ang = 2.0 * std::numbers::pi * i / n_d;
      const double ci = std::cos(ang), si = std::sin(ang);
      DualConeRow<S> row;
      row.body_a = j.body_a;
      row.body_b = j.body_b;
      for (int k = 0; k < 6; ++k) {
        row.ja[k] = j.block_a[0][k] - mu[c] * (j.block_a[1][k] * ci + j.block_a[2][k] * si);
        row.jb[k] = j.block_b[0][k] - mu[c] * (j.block_b[1][k] * ci + j.block_b[2][k] * si);
      }
      row.bias = j.bias.x - mu[c] * (j.bias.y * ci + j.bias.z * si);
      row.phi = contacts.contacts[c].phi;
      row.contact = static_cast<int>(c);
      sys.rows.push_back(std::move(row));
    }
  }
  return sys;
}

/// λ = softplus(-K (h J̃ b + φ̃) - D J̃ b), elementwise; K and D per row.
template <class S>
std::vector<S> contact_impulse(const GenForce<S>& b, const DualConeSystem<S>& dual, std::span<const S> stiffness,
                               std::span<const S> damping, double h) {
  if (!(h > 0.0)) throw ValidationError("contact_impulse: step must be positive");
  std::vector<S> lambda(dual.size());
  for (std::size_t r = 0; r < dual.size(); ++r) {
    const S jb = dual.row_times(r, b);
    lambda[r] = softplus(-stiffness[r] * (jb * h + dual.rows[r].phi) - damping[r] * jb);
  }
  return lambda;
}

/// Contact force on body a at contact c reconstructed from face multipliers:
/// normal part Σλ_i and tangential part μ Σ λ_i d_i (on the face directions).
struct ContactForce {
  double normal = 0.0;
  Vec3d tangential{};
};

template <class S>
ContactForce reconstruct_contact_force(const ContactSet<S>& contacts, std::span<const S> lambda, std::size_t c,
                                       double mu, int n_d) {
  ContactForce f;
  const auto dirs = tangent_basis(value_of(contacts.contacts[c].normal), n_d);
  for (int i = 0; i < n_d; ++i) {
    const double l = val(lambda[c * static_cast<std::size_t>(n_d) + static_cast<std::size_t>(i)]);
    f.normal += l;
    f.tangential += dirs[static_cast<std::size_t>(i)] * (mu * l);
  }
  return f;
}

/// Everything needed to replay one step in the reverse pass.
struct StepRecord {
  SceneStated state;
  ActionInputd action;
  std::vector<ContactKey> selection;
  ContactSet<double> contacts;
  GenForce<double> b;
  std::vector<double> lambda;
  SceneStated next;
};

template <class S>
struct StepOutput {
  SceneState<S> next;
  ContactSet<S> contacts;
  DualConeSystem<S> dual;
  GenForce<S> b;
  std::vector<S> lambda;
};

/// Generic step used by both the double forward pass and the taped replay.
template <class S>
StepOutput<S> step_core(const Scene& scene, std::span<const SphereCloud<S>> clouds, const PhysParams<S>& params,
                        const SceneState<S>& x, const ActionInput<S>& a, double h,
                        const std::vector<ContactKey>* fixed = nullptr) {
  if (!(h > 0.0)) throw ValidationError("step: h must be positive");
  const std::size_t nb = x.bodies.size();
  const std::size_t na = x.actuators.size();
  if (nb != scene.num_bodies() || clouds.size() != nb) throw ValidationError("step: body count mismatch");
  if (na != scene.num_actuators()) throw ValidationError("step: actuator count mismatch");
  if (a.actuator_velocity.size() != na) throw ValidationError("step: one commanded velocity per actuator required");

  StepOutput<S> out;
  std::vector<Pose<S>> poses(nb);
  for (std::size_t i = 0; i < nb; ++i) poses[i] = x.bodies[i].pose;
  std::vector<Vec3<S>> act_pos(na);
  for (std::size_t k = 0; k < na; ++k) act_pos[k] = x.actuators[k].position;

  out.contacts = generate_contacts<S>(scene.geometry, clouds, poses, act_pos, a.actuator_velocity, fixed);

  const std::size_t nc = out.contacts.size();
  const int n_d = scene.geometry.n_d;
  std::vector<S> mu(nc);
  std::vector<S> k_row(nc * static_cast<std::size_t>(n_d)), d_row(nc * static_cast<std::size_t>(n_d));
  for (std::size_t c = 0; c < nc; ++c) {
    const Contact<S>& ct = out.contacts.contacts[c];
    const auto pair = static_cast<std::size_t>(scene.pair_index(scene.material_of(ct.a), scene.material_of(ct.b)));
    mu[c] = params.mu[pair];
    for (int i = 0; i < n_d; ++i) {
      k_row[c * static_cast<std::size_t>(n_d) + static_cast<std::size_t>(i)] = params.stiffness[pair];
      d_row[c * static_cast<std::size_t>(n_d) + static_cast<std::size_t>(i)] = params.damping[pair];
    }
  }
  out.dual = dual_cone_stack<S>(out.contacts, mu, n_d);

  const GenForce<S> tau = external_wrench(scene, x, a, params);
  out.b.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    const S inv_m = S(1.0) / params.mass[i];
    const Vec3<S>& in = params.inertia[i];
    const Twist<S>& tw = x.bodies[i].twist;
    out.b[i] = {tw.linear.x + tau[i][0] * inv_m * h, tw.linear.y + tau[i][1] * inv_m * h,
                tw.linear.z + tau[i][2] * inv_m * h, tw.angular.x + tau[i][3] / in.x * h,
                tw.angular.y + tau[i][4] / in.y * h, tw.angular.z + tau[i][5] / in.z * h};
  }

  out.lambda = contact_impulse<S>(out.b, out.dual, k_row, d_row, h);

  // v' = b + h M⁻¹ J̃ᵀ λ
  GenForce<S> v = out.b;
  for (std::size_t r = 0; r < out.dual.size(); ++r) {
    const DualConeRow<S>& row = out.dual.rows[r];
    const S& l = out.lambda[r];
    auto apply = [&](int body, const std::array<S, 6>& j) {
      if (body < 0) return;
      const auto bi = static_cast<std::size_t>(body);
      const S scale_lin = l * h / params.mass[bi];
      const Vec3<S>& in = params.inertia[bi];
      v[bi][0] += j[0] * scale_lin;
      v[bi][1] += j[1] * scale_lin;
      v[bi][2] += j[2] * scale_lin;
      v[bi][3] += j[3] * l * h / in.x;
      v[bi][4] += j[4] * l * h / in.y;
      v[bi][5] += j[5] * l * h / in.z;
    };
    apply(row.body_a, row.ja);
    apply(row.body_b, row.jb);
  }

  out.next.bodies.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    BodyState<S>& nbs = out.next.bodies[i];
    nbs.twist.linear = {v[i][0], v[i][1], v[i][2]};
    nbs.twist.angular = {v[i][3], v[i][4], v[i][5]};
    nbs.pose.position = x.bodies[i].pose.position + nbs.twist.linear * S(h);
    nbs.pose.orientation = quat_exp_integrate(x.bodies[i].pose.orientation, nbs.twist.angular, h);
  }
  out.next.actuators.resize(na);
  for (std::size_t k = 0; k < na; ++k) {
    out.next.actuators[k].position = x.actuators[k].position + a.actuator_velocity[k] * S(h);
    out.next.actuators[k].velocity = a.actuator_velocity[k];
  }
  return out;
}

inline bool is_finite(const SceneStated& x) {
  auto fin = [](const Vec3d& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); };
  for (const auto& b : x.bodies) {
    const Quatd& q = b.pose.orientation;
    if (!fin(b.pose.position) || !fin(b.twist.linear) || !fin(b.twist.angular)) return false;
    if (!std::isfinite(q.w) || !std::isfinite(q.x) || !std::isfinite(q.y) || !std::isfinite(q.z)) return false;
  }
  for (const auto& a : x.actuators) {
    if (!fin(a.position) || !fin(a.velocity)) return false;
  }
  return true;
}

/// Advances the scene one step with the scene's own geometry.
inline std::pair<SceneStated, StepRecord> step(const Scene& scene, const PhysParamsd& params, const SceneStated& x,
                                               const ActionInputd& a, double h, long step_index = 0,
                                               std::span<const SphereCloudd> clouds = {}) {
  std::vector<SphereCloudd> own;
  if (clouds.empty()) {
    own = scene.clouds();
    clouds = own;
  }
  StepOutput<double> out = step_core<double>(scene, clouds, params, x, a, h);
  if (!is_finite(out.next)) throw NumericalError("non-finite state", step_index);
  StepRecord rec;
  rec.state = x;
  rec.action = a;
  rec.selection = out.contacts.keys;
  rec.b = out.b;
  rec.lambda = out.lambda;
  rec.contacts = std::move(out.contacts);
  rec.next = out.next;
  return {std::move(out.next), std::move(rec)};
}

struct Trajectory {
  double h = 0.005;
  std::vector<SceneStated> states;    // x_0 .. x_T
  std::vector<ActionInputd> actions;  // a_0 .. a_{T-1}

  std::size_t steps() const { return actions.size(); }
};

/// Zero commands for every actuator.
inline ActionInputd idle_action(const Scene& scene) {
  ActionInputd a;
  a.actuator_velocity.assign(scene.num_actuators(), Vec3d{0.0, 0.0, 0.0});
  return a;
}

inline Trajectory rollout(const Scene& scene, const PhysParamsd& params, const SceneStated& x0,
                          std::span<const ActionInputd> actions, double h, std::vector<StepRecord>* records = nullptr,
                          std::span<const SphereCloudd> clouds = {}) {
  std::vector<SphereCloudd> own;
  if (clouds.empty()) {
    own = scene.clouds();
    clouds = own;
  }
  Trajectory traj;
  traj.h = h;
  traj.states.reserve(actions.size() + 1);
  traj.states.push_back(x0);
  traj.actions.assign(actions.begin(), actions.end());
  if (records) records->clear();
  for (std::size_t t = 0; t < actions.size(); ++t) {
    auto [next, rec] = step(scene, params, traj.states.back(), actions[t], h, static_cast<long>(t), clouds);
    traj.states.push_back(std::move(next));
    if (records) records->push_back(std::move(rec));
  }
  return traj;
}

}  // namespace diffcontact
