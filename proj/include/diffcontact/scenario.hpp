#pragma once

// Scenario families used for self-consistency experiments:
//   fall_and_rebound   a block released above the ground, discrete impacts
//   push_slide_settle  a block on the ground pushed by a kinematic paddle,
//                      which then stops and lets the block settle

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "diffcontact/sysid.hpp"

namespace diffcontact {

/// Spheres on an nx × ny × nz grid filling a box of the given full size.
/// Radius is half the smallest cell edge; outer spheres touch the faces.
inline SphereCloudd make_block_cloud(const Vec3d& size, int nx, int ny, int nz) {
  if (nx < 1 || ny < 1 || nz < 1) throw ValidationError("block grid counts must be >= 1");
  if (!(size.x > 0.0 && size.y > 0.0 && size.z > 0.0)) throw ValidationError("block size must be positive");
  const double r = 0.5 * std::min({size.x / nx, size.y / ny, size.z / nz});
  SphereCloudd c;
  auto axis = [&](double len, int n, int i) { return n == 1 ? 0.0 : -0.5 * len + r + (len - 2.0 * r) * i / (n - 1); };
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        c.centers.push_back({axis(size.x, nx, i), axis(size.y, ny, j), axis(size.z, nz, k)});
        c.scales.push_back(0.5 * r);
      }
    }
  }
  return c;
}

/// Principal inertia of a solid box.
inline Vec3d box_inertia(double mass, const Vec3d& size) {
  return {mass / 12.0 * (size.y * size.y + size.z * size.z), mass / 12.0 * (size.x * size.x + size.z * size.z),
          mass / 12.0 * (size.x * size.x + size.y * size.y)};
}

/// Lowest point of a posed cloud along +z.
inline double lowest_point(const SphereCloudd& cloud, const Posed& pose) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) lo = std::min(lo, pose_apply(pose, cloud.centers[i]).z - cloud.radius(i));
  return lo;
}

enum class ScenarioKind { FallAndRebound, PushSlideSettle };

inline ScenarioKind parse_scenario_kind(const std::string& s) {
  if (s == "fall_and_rebound") return ScenarioKind::FallAndRebound;
  if (s == "push_slide_settle") return ScenarioKind::PushSlideSettle;
  throw ValidationError("unknown scenario '" + s + "' (expected fall_and_rebound or push_slide_settle)");
}

inline std::string to_string(ScenarioKind k) {
  return k == ScenarioKind::FallAndRebound ? "fall_and_rebound" : "push_slide_settle";
}

struct Range {
  double lo = 0.0, hi = 0.0;

  void validate(const std::string& name) const {
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) throw ValidationError("range '" + name + "' is not well ordered");
  }
  double sample(std::mt19937_64& rng) const {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

struct PusherConfig {
  Range speed{0.05, 0.15};       // m/s along the push direction
  int points = 3;                // query points across the paddle
  double width = 0.06;           // m, paddle extent across the push direction
  double radius = 0.005;         // m
  double gap = 0.008;            // m, initial clearance behind the block (the blended
                                 // distance crosses zero near 6.7 mm, so closer starts are
                                 // already loaded)
  double push_fraction = 0.5;    // share of the steps during which the paddle moves
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::FallAndRebound;
  SphereCloudd cloud;
  double mass = 1.0;
  Vec3d inertia{0.01, 0.01, 0.01};
  double mu = 0.4, stiffness = 2000.0, damping = 20.0;
  SoftSdfParams sdf;
  double h = 0.005;
  std::size_t steps = 140;           // per training sequence
  std::size_t test_steps = 500;      // per held-out sequence
  std::size_t steps_per_frame = 10;
  std::size_t train_sequences = 1;
  std::size_t test_sequences = 4;
  // Initial conditions. Heights are clearances of the lowest point above the ground.
  Range height{0.05, 0.3};
  Range xy{-0.05, 0.05};
  Range tilt_deg{0.0, 30.0};
  Range yaw_deg{-180.0, 180.0};
  Range speed_xy{0.0, 0.5};
  Range speed_z{0.0, 0.0};
  Range spin{0.0, 3.0};             // rad/s, random axis
  PusherConfig pusher;
  std::vector<Camera> cameras;
  bool render = false;
  std::uint64_t seed = 0;

  void validate() const {
    diffcontact::validate(cloud);
    sdf.validate();
    if (!(h > 0.0)) throw ValidationError("scenario: h must be positive");
    if (steps_per_frame == 0) throw ValidationError("scenario: steps_per_frame must be >= 1");
    if (steps == 0 || test_steps == 0) throw ValidationError("scenario: step counts must be >= 1");
    if (!(mass > 0.0) || !(inertia.x > 0.0 && inertia.y > 0.0 && inertia.z > 0.0))
      throw ValidationError("scenario: mass and inertia must be positive");
    if (!(mu > 0.0 && mu < kMaxFriction) || !(stiffness > 0.0) || !(damping > 0.0))
      throw ValidationError("scenario: contact parameters must be positive (mu < 5)");
    height.validate("height");
    xy.validate("xy");
    tilt_deg.validate("tilt_deg");
    yaw_deg.validate("yaw_deg");
    speed_xy.validate("speed_xy");
    speed_z.validate("speed_z");
    spin.validate("spin");
    pusher.speed.validate("pusher.speed");
    if (kind == ScenarioKind::FallAndRebound && height.lo <= sdf.margin)
      throw ValidationError("scenario: drop clearance must exceed the contact margin");
    if (kind == ScenarioKind::PushSlideSettle && (pusher.points < 1 || !(pusher.radius >= 0.0)))
      throw ValidationError("scenario: pusher needs at least one query point");
    if (render && cameras.empty()) throw ValidationError("scenario: rendering requested without cameras");
    for (const auto& c : cameras) c.validate();
  }

  Scene scene() const {
    Scene s;
    s.geometry.bodies.push_back({cloud, 1});
    s.geometry.sdf = sdf;
    if (kind == ScenarioKind::PushSlideSettle) {
      ActuatorGeom act;
      act.radius = pusher.radius;
      for (int i = 0; i < pusher.points; ++i) {
        const double y = pusher.points == 1 ? 0.0 : -0.5 * pusher.width + pusher.width * i / (pusher.points - 1);
        act.points.push_back({0.0, y, 0.0});
      }
      s.geometry.actuators.push_back(act);
    }
    return s;
  }

  PhysParamsd params() const {
    return {{mass}, {inertia}, {mu, mu, mu}, {stiffness, stiffness, stiffness}, {damping, damping, damping}};
  }
};

struct GeneratedSequence {
  Trajectory trajectory;
  std::vector<std::vector<SilhouetteImage>> images;  // [frame][camera], empty unless rendered
  double pusher_speed = 0.0;
};

struct GeneratedDataset {
  Scene scene;
  PhysParamsd params;
  std::vector<GeneratedSequence> train, test;
};

/// One initial condition and action sequence drawn from the config ranges.
inline std::pair<SceneStated, std::vector<ActionInputd>> sample_sequence(const ScenarioConfig& cfg, const Scene& scene,
                                                                         std::size_t steps, std::mt19937_64& rng,
                                                                         double* pusher_speed = nullptr) {
  constexpr double deg = std::numbers::pi / 180.0;
  SceneStated x;
  BodyState<double> b;
  const double yaw = cfg.yaw_deg.sample(rng) * deg;
  const double tilt = cfg.tilt_deg.sample(rng) * deg;
  const double tilt_dir = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const Quatd q = axis_angle({std::cos(tilt_dir), std::sin(tilt_dir), 0.0}, tilt) * axis_angle({0, 0, 1}, yaw);
  b.pose.orientation = normalized(q);
  b.pose.position = {cfg.xy.sample(rng), cfg.xy.sample(rng), 0.0};
  std::vector<ActionInputd> actions(steps, idle_action(scene));

  if (cfg.kind == ScenarioKind::FallAndRebound) {
    const double clearance = cfg.height.sample(rng);
    b.pose.position.z = clearance - lowest_point(cfg.cloud, {{0, 0, 0}, b.pose.orientation});
    const double speed = cfg.speed_xy.sample(rng);
    const double dir = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    b.twist.linear = {speed * std::cos(dir), speed * std::sin(dir), -cfg.speed_z.sample(rng)};
    const double w = cfg.spin.sample(rng);
    std::normal_distribution<double> nd(0.0, 1.0);
    Vec3d axis{nd(rng), nd(rng), nd(rng)};
    if (norm(axis) < 1e-12) axis = {0, 0, 1};
    b.twist.angular = normalized(axis) * w;
    x.bodies.push_back(b);
  } else {
    // Resting flat on the ground (tilt is ignored for pushing).
    b.pose.orientation = axis_angle({0, 0, 1}, yaw);
    b.pose.position.z = -lowest_point(cfg.cloud, {{0, 0, 0}, b.pose.orientation});
    x.bodies.push_back(b);
    const double speed = cfg.pusher.speed.sample(rng);
    if (pusher_speed) *pusher_speed = speed;
    // Paddle starts behind the block's -x extent and moves along +x.
    double back = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cfg.cloud.size(); ++i)
      back = std::min(back, pose_apply(b.pose, cfg.cloud.centers[i]).x - cfg.cloud.radius(i));
    ActuatorState<double> a;
    a.position = {back - cfg.pusher.radius - cfg.pusher.gap, b.pose.position.y, b.pose.position.z};
    x.actuators.push_back(a);
    const auto push_steps = static_cast<std::size_t>(std::llround(cfg.pusher.push_fraction * static_cast<double>(steps)));
    for (std::size_t t = 0; t < steps && t < push_steps; ++t) actions[t].actuator_velocity[0] = {speed, 0.0, 0.0};
  }
  return {x, actions};
}

/// Samples initial conditions with the seeded generator and rolls them out
/// with the true parameters. Train sequences come first, then test.
inline GeneratedDataset generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  GeneratedDataset out;
  out.scene = cfg.scene();
  out.params = cfg.params();
  std::mt19937_64 rng(cfg.seed);
  auto make = [&](std::size_t steps) {
    GeneratedSequence g;
    auto [x0, actions] = sample_sequence(cfg, out.scene, steps, rng, &g.pusher_speed);
    g.trajectory = rollout(out.scene, out.params, x0, actions, cfg.h);
    return g;
  };
  for (std::size_t i = 0; i < cfg.train_sequences; ++i) out.train.push_back(make(cfg.steps));
  for (std::size_t i = 0; i < cfg.test_sequences; ++i) out.test.push_back(make(cfg.test_steps));
  if (cfg.render) {
    const std::vector<SphereCloudd> clouds = out.scene.clouds();
    for (auto* set : {&out.train, &out.test}) {
      for (auto& g : *set) {
        const auto frames = frame_states(g.trajectory, cfg.steps_per_frame, g.trajectory.steps() / cfg.steps_per_frame + 1);
        g.images = render_sequence(frames, clouds, cfg.cameras);
      }
    }
  }
  return out;
}

/// Reference block: 0.1 × 0.1 × 0.05 m, 2 × 2 × 2 spheres, 2 kg.
inline ScenarioConfig standard_block_config(ScenarioKind kind = ScenarioKind::FallAndRebound, std::uint64_t seed = 0) {
  ScenarioConfig c;
  c.kind = kind;
  const Vec3d size{0.1, 0.1, 0.05};
  c.cloud = make_block_cloud(size, 2, 2, 2);
  c.mass = 2.0;
  c.inertia = box_inertia(c.mass, size);
  c.seed = seed;
  return c;
}

/// Fall-and-rebound variant for friction identification: low, nearly flat
/// releases with fast sliding. At slow sliding speeds the damping term
/// dominates the tangential response and μ trades off against D, so the
/// clips are chosen fast enough for Coulomb sliding to dominate.
inline ScenarioConfig identification_scenario(std::uint64_t seed = 0) {
  ScenarioConfig c = standard_block_config(ScenarioKind::FallAndRebound, seed);
  c.steps_per_frame = 10;
  c.steps = 14 * c.steps_per_frame;  // 15 frames
  c.test_steps = 50;
  c.height = {0.02, 0.05};
  c.speed_xy = {1.5, 3.0};
  c.speed_z = {0.5, 1.0};
  c.tilt_deg = {0.0, 5.0};
  c.spin = {0.0, 0.0};
  return c;
}

/// Observation set (poses, and images when rendered) for identification.
inline Dataset to_dataset(const Scene& scene, const std::vector<GeneratedSequence>& seqs, double h,
                          std::size_t steps_per_frame, const std::vector<Camera>& cameras = {}) {
  Dataset d;
  d.scene = scene;
  d.h = h;
  d.steps_per_frame = steps_per_frame;
  d.cameras = cameras;
  for (const auto& g : seqs) {
    Observation o;
    o.x0 = g.trajectory.states.front();
    o.actions = g.trajectory.actions;
    o.states = frame_states(g.trajectory, steps_per_frame, g.trajectory.steps() / steps_per_frame + 1);
    o.images = g.images;
    d.sequences.push_back(std::move(o));
  }
  return d;
}

}  // namespace diffcontact
