#pragma once

// Gradient-shooting MPC. Actions are planar pusher velocities squashed into
// the bound by a = bound * tanh(u); the unconstrained u are updated with Adam
// using dL/da from the same reverse pass that differentiates the rollout.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "diffcontact/diff.hpp"
#include "diffcontact/optim.hpp"
#include "diffcontact/scenario.hpp"

namespace diffcontact {

struct MpcConfig {
  std::size_t horizon = 10;        // control steps
  std::size_t iterations = 10;     // Adam updates per replan
  double learning_rate = 0.5;
  double action_bound = 0.2;       // m/s per axis
  Posed goal{};
  double w_pos = 100.0;            // 1/m²
  double w_rot = 0.0;
  double w_act = 0.01;             // s²/m²
  double terminal_weight = 1.0;    // multiplier on the last stage's pose terms
  std::size_t replan_stride = 1;
  std::size_t substeps = 1;        // physics steps per control step (action held)
  double h = 0.005;                // physics step, s
  std::size_t body = 0;            // body driven to the goal
  std::size_t actuator = 0;        // actuator that is commanded
  std::size_t fallback_population = 16;  // CEM samples per round when no finite gradient plan exists (0 disables)
  std::size_t fallback_iterations = 4;

  void validate(const Scene& scene) const {
    if (horizon < 1) throw ValidationError("mpc: horizon must be >= 1");
    if (!(action_bound > 0.0) || !std::isfinite(action_bound)) throw ValidationError("mpc: action bound must be finite and positive");
    if (!(learning_rate > 0.0)) throw ValidationError("mpc: learning rate must be positive");
    if (fallback_population == 1) throw ValidationError("mpc: fallback population must be 0 or >= 2");
    if (replan_stride < 1 || replan_stride > horizon) throw ValidationError("mpc: replan stride must lie in [1, horizon]");
    if (substeps < 1) throw ValidationError("mpc: substeps must be >= 1");
    if (!(h > 0.0)) throw ValidationError("mpc: h must be positive");
    if (w_pos < 0.0 || w_rot < 0.0 || w_act < 0.0 || terminal_weight < 0.0) throw ValidationError("mpc: cost weights must be nonnegative");
    if (body >= scene.num_bodies()) throw ValidationError("mpc: goal body out of range");
    if (actuator >= scene.num_actuators()) throw ValidationError("mpc: commanded actuator out of range");
  }
};

/// Pose part of the stage cost: w_pos ‖p − g‖² + w_rot (1 − |q·q_g|)².
template <class S>
S goal_pose_cost(const MpcConfig& cfg, const SceneState<S>& x) {
  const Pose<S>& p = x.bodies[cfg.body].pose;
  S c = squared_norm(p.position - Vec3<S>(cfg.goal.position)) * cfg.w_pos;
  if (cfg.w_rot != 0.0) c += square(S(1.0) - abs(dot(p.orientation, Quat<S>(cfg.goal.orientation)))) * cfg.w_rot;
  return c;
}

/// Running + terminal cost over H control steps of `substeps` physics steps.
struct MpcObjective {
  const MpcConfig* cfg = nullptr;

  template <class S>
  S frame(std::size_t t, const SceneState<S>& x, const FrameContext&) const {
    if (t == 0 || t % cfg->substeps != 0) return S(0.0);
    const double w = t / cfg->substeps == cfg->horizon ? cfg->terminal_weight : 1.0;
    return goal_pose_cost(*cfg, x) * w;
  }
  template <class S>
  S action(std::size_t t, const ActionInput<S>& a) const {
    if (t % cfg->substeps != 0) return S(0.0);
    return squared_norm(a.actuator_velocity[cfg->actuator]) * cfg->w_act;
  }
};

struct Plan {
  std::vector<double> u;               // 2 per control step (x, y), unconstrained
  std::vector<ActionInputd> actions;   // per physics step, squashed
  double cost = std::numeric_limits<double>::infinity();
  bool nonfinite = false;              // a non-finite cost was met; best finite plan returned
};

/// Squashed per-physics-step actions for a control sequence.
inline std::vector<ActionInputd> expand_actions(const Scene& scene, const MpcConfig& cfg, const std::vector<double>& u) {
  std::vector<ActionInputd> acts;
  acts.reserve(cfg.horizon * cfg.substeps);
  for (std::size_t k = 0; k < cfg.horizon; ++k) {
    ActionInputd a = idle_action(scene);
    a.actuator_velocity[cfg.actuator] = {cfg.action_bound * std::tanh(u[2 * k]), cfg.action_bound * std::tanh(u[2 * k + 1]), 0.0};
    for (std::size_t s = 0; s < cfg.substeps; ++s) acts.push_back(a);
  }
  return acts;
}

/// Cost of a control sequence without gradients.
inline double plan_cost(const Scene& scene, const PhysParamsd& params, const SceneStated& x, const MpcConfig& cfg,
                        const std::vector<double>& u) {
  const std::vector<ActionInputd> acts = expand_actions(scene, cfg, u);
  const Trajectory traj = rollout(scene, params, x, acts, cfg.h);
  const std::vector<SphereCloudd> clouds = scene.clouds();
  return evaluate_objective(MpcObjective{&cfg}, traj, FrameContext{clouds});
}

inline constexpr double kMaxControl = 3.0;  // |u| bound, tanh(3) ≈ 0.995

/// Optimizes the control sequence from `warm_u` (zeros when empty).
inline Plan plan(const Scene& scene, const PhysParamsd& params, const SceneStated& x, const MpcConfig& cfg,
                 const std::vector<double>& warm_u = {}) {
  cfg.validate(scene);
  const ParamVector theta = pack_params(scene, params);
  std::vector<double> u = warm_u;
  if (u.empty()) u.assign(2 * cfg.horizon, 0.0);
  if (u.size() != 2 * cfg.horizon) throw ValidationError("mpc: warm start has the wrong length");
  const MpcObjective obj{&cfg};
  Adam adam(u.size(), cfg.learning_rate);
  Plan best;
  std::vector<double> du(u.size());
  auto consider = [&](double cost) {
    if (!std::isfinite(cost)) {
      best.nonfinite = true;
      return;
    }
    if (cost < best.cost) {
      best.cost = cost;
      best.u = u;
    }
  };
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const std::vector<ActionInputd> acts = expand_actions(scene, cfg, u);
    GradReport rep;
    try {
      rep = rollout_grad(scene, theta, x, acts, cfg.h, obj, {.action_gradients = true});
    } catch (const NumericalError&) {
      best.nonfinite = true;
      break;
    }
    consider(rep.loss);
    for (std::size_t k = 0; k < cfg.horizon; ++k) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t s = 0; s < cfg.substeps; ++s) {
        const Vec3d& g = rep.action_gradient[k * cfg.substeps + s][cfg.actuator];
        gx += g.x;
        gy += g.y;
      }
      const double tx = std::tanh(u[2 * k]), ty = std::tanh(u[2 * k + 1]);
      du[2 * k] = gx * cfg.action_bound * (1.0 - tx * tx);
      du[2 * k + 1] = gy * cfg.action_bound * (1.0 - ty * ty);
    }
    adam.step(u, du);
    // tanh saturates quickly; bounding u keeps the gradient alive across warm starts.
    for (double& v : u) v = std::clamp(v, -kMaxControl, kMaxControl);
  }
  try {
    consider(plan_cost(scene, params, x, cfg, u));
  } catch (const NumericalError&) {
    best.nonfinite = true;
  }
  if (best.u.empty() && cfg.fallback_population >= 2) {
    // Sampling fallback over the unconstrained controls.
    CemConfig cc;
    cc.population = cfg.fallback_population;
    cc.elites = std::max<std::size_t>(1, cfg.fallback_population / 4);
    cc.iterations = cfg.fallback_iterations;
    auto f = [&](const std::vector<double>& v) {
      try {
        return plan_cost(scene, params, x, cfg, v);
      } catch (const NumericalError&) {
        return std::numeric_limits<double>::infinity();
      }
    };
    const CemResult r = cem(f, std::vector<double>(u.size(), -2.0), std::vector<double>(u.size(), 2.0), cc);
    if (std::isfinite(r.best_value)) {
      best.u = r.best;
      best.cost = r.best_value;
    }
  }
  if (best.u.empty()) {
    // Nothing finite was found; hold still.
    best.u.assign(2 * cfg.horizon, 0.0);
  }
  best.actions = expand_actions(scene, cfg, best.u);
  return best;
}

/// Previous plan advanced by `shift` control steps, repeating the last step.
inline std::vector<double> shift_plan(const std::vector<double>& u, std::size_t shift) {
  if (u.empty()) return u;
  const std::size_t H = u.size() / 2;
  std::vector<double> out(u.size());
  for (std::size_t k = 0; k < H; ++k) {
    const std::size_t src = std::min(k + shift, H - 1);
    out[2 * k] = u[2 * src];
    out[2 * k + 1] = u[2 * src + 1];
  }
  return out;
}

struct MpcRun {
  Trajectory trajectory;                 // executed physics steps
  std::vector<double> costs;             // pose cost of the state after each control step
  std::vector<double> plan_costs;        // optimized horizon cost at each replan
  std::vector<double> plan_seconds;      // wall time of each replan
  double initial_cost = 0.0;             // pose cost of x_0
  bool warnings = false;                 // some replan met a non-finite cost
};

/// Closed loop: plan, execute `replan_stride` control steps, repeat.
inline MpcRun run_mpc(const Scene& scene, const PhysParamsd& params, const SceneStated& x0, const MpcConfig& cfg,
                      std::size_t total_steps) {
  cfg.validate(scene);
  MpcRun run;
  run.trajectory.h = cfg.h;
  run.trajectory.states.push_back(x0);
  run.initial_cost = goal_pose_cost(cfg, x0);
  std::vector<double> warm;
  std::size_t done = 0;
  while (done < total_steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const Plan p = plan(scene, params, run.trajectory.states.back(), cfg, warm);
    run.plan_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    run.plan_costs.push_back(p.cost);
    run.warnings = run.warnings || p.nonfinite;
    const std::size_t n = std::min(cfg.replan_stride, total_steps - done);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t s = 0; s < cfg.substeps; ++s) {
        const ActionInputd& a = p.actions[k * cfg.substeps + s];
        auto [next, rec] = step(scene, params, run.trajectory.states.back(), a, cfg.h,
                                static_cast<long>(run.trajectory.actions.size()));
        run.trajectory.actions.push_back(a);
        run.trajectory.states.push_back(std::move(next));
      }
      run.costs.push_back(goal_pose_cost(cfg, run.trajectory.states.back()));
    }
    done += n;
    warm = shift_plan(p.u, n);
  }
  return run;
}

/// Planar pushing benchmark: a five-sphere quincunx block resting on the
/// ground with a three-point paddle behind it. The seed jitters the block yaw
/// (within ±5°) and the paddle's lateral offset (within ±5 mm); the goal is
/// `distance` ahead of the block along +x.
struct PushTask {
  Scene scene;
  PhysParamsd params;
  SceneStated x0;
  Posed goal;
};

inline PushTask make_push_task(std::uint64_t seed = 0, double distance = 0.1) {
  constexpr double r = 0.025, pitch = 0.03, mass = 1.0;
  PushTask task;
  SphereCloudd cloud({{0, 0, 0}, {pitch, pitch, 0}, {pitch, -pitch, 0}, {-pitch, pitch, 0}, {-pitch, -pitch, 0}},
                     std::vector<double>(5, r / 2.0));
  task.scene.geometry.bodies.push_back({cloud, 1});
  ActuatorGeom paddle;
  paddle.radius = 0.005;
  for (int i = -1; i <= 1; ++i) paddle.points.push_back({0.0, pitch * i, 0.0});
  task.scene.geometry.actuators.push_back(paddle);
  const double k = 2000.0, d = 20.0, mu = 0.4;
  task.params = {{mass}, {box_inertia(mass, {2 * (pitch + r), 2 * (pitch + r), 2 * r})}, {mu, mu, mu}, {k, k, k}, {d, d, d}};

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double yaw = u(rng) * 5.0 * std::numbers::pi / 180.0;
  const double lateral = u(rng) * 0.005;
  SceneStated x;
  x.bodies.resize(1);
  x.bodies[0].pose = {{0.0, 0.0, r}, axis_angle({0, 0, 1}, yaw)};
  double back = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) back = std::min(back, pose_apply(x.bodies[0].pose, cloud.centers[i]).x - r);
  x.actuators.resize(1);
  x.actuators[0].position = {back - paddle.radius - 0.008, lateral, r};
  // Let the contact settle before the task starts.
  const ActionInputd idle = idle_action(task.scene);
  for (int i = 0; i < 100; ++i) x = step(task.scene, task.params, x, idle, 0.005).first;
  task.x0 = x;
  task.goal = x.bodies[0].pose;
  task.goal.position.x += distance;
  return task;
}

}  // namespace diffcontact
