#pragma once

// Reverse accumulation through rollouts.
//
// The forward pass runs in double and keeps one StepRecord per step. The
// reverse pass walks the records backwards; for each step it replays the
// step on a fresh tape with the recorded contact selection held fixed, seeds
// the outputs with the adjoint of x_{t+1}, and reads back the adjoints of x_t,
// the parameters and the action. Peak tape size is one step, storage is linear
// in T.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "diffcontact/ad.hpp"
#include "diffcontact/dynamics.hpp"

namespace diffcontact {

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Named slices of the flat unconstrained parameter vector.
class ParamLayout {
 public:
  void add(const std::string& name, std::size_t size) {
    if (find(name) != nullptr) throw ValidationError("duplicate parameter slice " + name);
    slices_.push_back({name, total_, size});
    total_ += size;
  }
  const ParamSlice* find(const std::string& name) const {
    for (const auto& s : slices_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
  const ParamSlice& at(const std::string& name) const {
    const ParamSlice* s = find(name);
    if (s == nullptr) throw ValidationError("unknown parameter slice '" + name + "'");
    return *s;
  }
  bool has(const std::string& name) const { return find(name) != nullptr; }
  std::size_t size() const { return total_; }
  const std::vector<ParamSlice>& slices() const { return slices_; }

 private:
  std::vector<ParamSlice> slices_;
  std::size_t total_ = 0;
};

struct LayoutOptions {
  bool geometry = false;       // sphere centers + log scales
  bool initial_state = false;  // pose tangent + twist offsets of x_0
};

inline ParamLayout make_layout(const Scene& scene, LayoutOptions opts = {}) {
  const std::size_t nb = scene.num_bodies(), np = scene.material_pairs.size();
  ParamLayout l;
  l.add("mass", nb);
  l.add("inertia", 3 * nb);
  l.add("mu", np);
  l.add("K", np);
  l.add("D", np);
  if (opts.geometry) {
    std::size_t n = 0;
    for (const auto& b : scene.geometry.bodies) n += b.cloud.size();
    l.add("centers", 3 * n);
    l.add("scales", n);
  }
  if (opts.initial_state) {
    l.add("init_pose", 6 * nb);
    l.add("init_twist", 6 * nb);
  }
  return l;
}

/// Flat parameter vector Θ with its layout.
struct ParamVector {
  ParamLayout layout;
  std::vector<double> values;

  std::span<double> slice(const std::string& name) {
    const ParamSlice& s = layout.at(name);
    return {values.data() + s.offset, s.size};
  }
  std::span<const double> slice(const std::string& name) const {
    const ParamSlice& s = layout.at(name);
    return {values.data() + s.offset, s.size};
  }
};

inline ParamVector pack_params(const Scene& scene, const PhysParamsd& p, LayoutOptions opts = {}) {
  validate(p, scene);
  ParamVector th{make_layout(scene, opts), {}};
  th.values.assign(th.layout.size(), 0.0);
  auto mass = th.slice("mass");
  auto inertia = th.slice("inertia");
  for (std::size_t b = 0; b < scene.num_bodies(); ++b) {
    mass[b] = std::log(p.mass[b]);
    inertia[3 * b] = std::log(p.inertia[b].x);
    inertia[3 * b + 1] = std::log(p.inertia[b].y);
    inertia[3 * b + 2] = std::log(p.inertia[b].z);
  }
  for (std::size_t i = 0; i < scene.material_pairs.size(); ++i) {
    th.slice("mu")[i] = friction_to_raw(p.mu[i]);
    th.slice("K")[i] = std::log(p.stiffness[i]);
    th.slice("D")[i] = std::log(p.damping[i]);
  }
  if (opts.geometry) {
    auto centers = th.slice("centers");
    auto scales = th.slice("scales");
    std::size_t k = 0;
    for (const auto& b : scene.geometry.bodies) {
      for (std::size_t i = 0; i < b.cloud.size(); ++i, ++k) {
        centers[3 * k] = b.cloud.centers[i].x;
        centers[3 * k + 1] = b.cloud.centers[i].y;
        centers[3 * k + 2] = b.cloud.centers[i].z;
        scales[k] = std::log(b.cloud.scales[i]);
      }
    }
  }
  return th;
}

template <class S>
struct Model {
  PhysParams<S> params;
  std::vector<SphereCloud<S>> clouds;
};

/// Maps raw parameters to physical values and geometry. Slices absent from the
/// layout fall back to the scene's geometry.
template <class S>
Model<S> unpack(const ParamLayout& layout, std::span<const S> raw, const Scene& scene) {
  Model<S> m;
  const std::size_t nb = scene.num_bodies(), np = scene.material_pairs.size();
  const auto at = [&](const std::string& name, std::size_t i) -> const S& { return raw[layout.at(name).offset + i]; };
  for (std::size_t b = 0; b < nb; ++b) {
    m.params.mass.push_back(exp(at("mass", b)));
    m.params.inertia.push_back({exp(at("inertia", 3 * b)), exp(at("inertia", 3 * b + 1)), exp(at("inertia", 3 * b + 2))});
  }
  for (std::size_t i = 0; i < np; ++i) {
    m.params.mu.push_back(friction_from_raw(at("mu", i)));
    m.params.stiffness.push_back(exp(at("K", i)));
    m.params.damping.push_back(exp(at("D", i)));
  }
  if (layout.has("centers")) {
    std::size_t k = 0;
    for (const auto& b : scene.geometry.bodies) {
      SphereCloud<S> c;
      for (std::size_t i = 0; i < b.cloud.size(); ++i, ++k) {
        c.centers.push_back({at("centers", 3 * k), at("centers", 3 * k + 1), at("centers", 3 * k + 2)});
        c.scales.push_back(exp(at("scales", k)));
      }
      m.clouds.push_back(std::move(c));
    }
  } else {
    for (const auto& b : scene.geometry.bodies) m.clouds.emplace_back(b.cloud);
  }
  return m;
}

inline Model<double> unpack(const ParamVector& th, const Scene& scene) {
  return unpack<double>(th.layout, std::span<const double>(th.values), scene);
}

/// x_0 with the optional initial-state offsets applied: position + dp,
/// orientation ⊗ exp(dθ) (body frame), twist + dv.
template <class S>
SceneState<S> initial_state(const SceneStated& nominal, const ParamLayout& layout, std::span<const S> raw) {
  SceneState<S> x;
  const bool has = layout.has("init_pose");
  for (std::size_t b = 0; b < nominal.bodies.size(); ++b) {
    const BodyState<double>& nb = nominal.bodies[b];
    BodyState<S> bs;
    bs.pose = Pose<S>(nb.pose);
    bs.twist = Twist<S>(nb.twist);
    if (has) {
      const std::size_t po = layout.at("init_pose").offset + 6 * b;
      const std::size_t to = layout.at("init_twist").offset + 6 * b;
      bs.pose.position += Vec3<S>{raw[po], raw[po + 1], raw[po + 2]};
      bs.pose.orientation =
          normalized(bs.pose.orientation * quat_exp(Vec3<S>{raw[po + 3], raw[po + 4], raw[po + 5]}));
      bs.twist.linear += Vec3<S>{raw[to], raw[to + 1], raw[to + 2]};
      bs.twist.angular += Vec3<S>{raw[to + 3], raw[to + 4], raw[to + 5]};
    }
    x.bodies.push_back(std::move(bs));
  }
  for (const auto& a : nominal.actuators) x.actuators.push_back({Vec3<S>(a.position), Vec3<S>(a.velocity)});
  return x;
}

inline SceneStated initial_state(const SceneStated& nominal, const ParamVector& th) {
  return initial_state<double>(nominal, th.layout, std::span<const double>(th.values));
}

/// Geometry values (double) handed to per-frame loss terms, e.g. for rendering.
struct FrameContext {
  std::span<const SphereCloudd> clouds;
};

/// Base for objectives without an action term.
struct NoActionCost {
  template <class S>
  S action(std::size_t, const ActionInput<S>&) const {
    return S(0.0);
  }
};

/// Objective from a generic lambda `(t, state, ctx) -> S`.
template <class F>
struct FrameObjective : NoActionCost {
  F f;
  explicit FrameObjective(F fn) : f(std::move(fn)) {}
  template <class S>
  S frame(std::size_t t, const SceneState<S>& x, const FrameContext& ctx) const {
    return f(t, x, ctx);
  }
};

inline constexpr std::size_t kBodyStateDim = 13;
inline constexpr std::size_t kActuatorStateDim = 6;

inline std::size_t state_dim(const SceneStated& x) {
  return kBodyStateDim * x.bodies.size() + kActuatorStateDim * x.actuators.size();
}

namespace detail {

/// Creates tape leaves for every state component, in flattening order.
inline SceneState<ad::Var> state_leaves(const SceneStated& x) {
  using ad::Var;
  SceneState<Var> s;
  for (const auto& b : x.bodies) {
    BodyState<Var> bs;
    const auto& p = b.pose.position;
    const auto& q = b.pose.orientation;
    bs.pose.position = {Var::leaf(p.x), Var::leaf(p.y), Var::leaf(p.z)};
    bs.pose.orientation = {Var::leaf(q.w), Var::leaf(q.x), Var::leaf(q.y), Var::leaf(q.z)};
    bs.twist.linear = {Var::leaf(b.twist.linear.x), Var::leaf(b.twist.linear.y), Var::leaf(b.twist.linear.z)};
    bs.twist.angular = {Var::leaf(b.twist.angular.x), Var::leaf(b.twist.angular.y), Var::leaf(b.twist.angular.z)};
    s.bodies.push_back(bs);
  }
  for (const auto& a : x.actuators) {
    ActuatorState<Var> as;
    as.position = {Var::leaf(a.position.x), Var::leaf(a.position.y), Var::leaf(a.position.z)};
    as.velocity = {Var::leaf(a.velocity.x), Var::leaf(a.velocity.y), Var::leaf(a.velocity.z)};
    s.actuators.push_back(as);
  }
  return s;
}

template <class Fn>
void for_each_component(const SceneState<ad::Var>& s, Fn&& fn) {
  for (const auto& b : s.bodies) {
    for (int i = 0; i < 3; ++i) fn(b.pose.position[i]);
    fn(b.pose.orientation.w);
    fn(b.pose.orientation.x);
    fn(b.pose.orientation.y);
    fn(b.pose.orientation.z);
    for (int i = 0; i < 3; ++i) fn(b.twist.linear[i]);
    for (int i = 0; i < 3; ++i) fn(b.twist.angular[i]);
  }
  for (const auto& a : s.actuators) {
    for (int i = 0; i < 3; ++i) fn(a.position[i]);
    for (int i = 0; i < 3; ++i) fn(a.velocity[i]);
  }
}

inline std::vector<double> read_adjoints(const ad::Tape& tape, const SceneState<ad::Var>& s) {
  std::vector<double> g;
  for_each_component(s, [&](const ad::Var& v) { g.push_back(tape.adjoint(v.index())); });
  return g;
}

inline void seed_state(ad::Tape& tape, const SceneState<ad::Var>& s, const std::vector<double>& adj) {
  std::size_t i = 0;
  for_each_component(s, [&](const ad::Var& v) { tape.seed(v.index(), adj[i++]); });
}

inline ActionInput<ad::Var> action_leaves(const ActionInputd& a) {
  using ad::Var;
  ActionInput<Var> out;
  for (const auto& v : a.actuator_velocity) out.actuator_velocity.push_back({Var::leaf(v.x), Var::leaf(v.y), Var::leaf(v.z)});
  for (const auto& imp : a.impedance) {
    ImpedanceTarget<Var> t;
    t.body = imp.body;
    t.attachment = imp.attachment;
    t.target_position = Vec3<Var>(imp.target_position);
    t.target_velocity = Vec3<Var>(imp.target_velocity);
    t.stiffness = imp.stiffness;
    t.damping = imp.damping;
    out.impedance.push_back(t);
  }
  return out;
}

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

struct GradOptions {
  bool action_gradients = false;
};

struct GradReport {
  double loss = 0.0;
  ParamLayout layout;
  std::vector<double> gradient;                      // dL/dΘ, layout order
  std::vector<double> state0_gradient;               // dL/dx_0 in state flattening order
  std::vector<std::vector<Vec3d>> action_gradient;   // dL/d(actuator velocity) per step
  std::map<std::string, double> fd_max_rel_error;    // filled by checkers
  Trajectory trajectory;

  std::span<const double> slice(const std::string& name) const {
    const ParamSlice& s = layout.at(name);
    return {gradient.data() + s.offset, s.size};
  }
};

/// Loss value of an objective along a trajectory (double forward only).
template <class Objective>
double evaluate_objective(const Objective& obj, const Trajectory& traj, const FrameContext& ctx) {
  double loss = 0.0;
  for (std::size_t t = 0; t < traj.states.size(); ++t) loss += obj.template frame<double>(t, traj.states[t], ctx);
  for (std::size_t t = 0; t < traj.actions.size(); ++t) loss += obj.template action<double>(t, traj.actions[t]);
  return loss;
}

/// dL/dΘ, dL/dx_0 and optionally dL/da for L = Σ_t frame(t, x_t) + Σ_t action(t, a_t)
/// along the rollout from x_0(Θ). Geometry slices receive gradient only
/// through contact generation and dynamics: frame terms see geometry as
/// plain doubles.
template <class Objective>
GradReport rollout_grad(const Scene& scene, const ParamVector& theta, const SceneStated& x0_nominal,
                        std::span<const ActionInputd> actions, double h, const Objective& objective,
                        GradOptions opts = {}) {
  using ad::Tape;
  using ad::TapeScope;
  using ad::Var;

  GradReport rep;
  rep.layout = theta.layout;
  rep.gradient.assign(theta.values.size(), 0.0);

  const Model<double> model = unpack(theta, scene);
  const SceneStated x0 = initial_state(x0_nominal, theta);
  std::vector<StepRecord> records;
  rep.trajectory = rollout(scene, model.params, x0, actions, h, &records, model.clouds);
  const FrameContext ctx{model.clouds};
  rep.loss = evaluate_objective(objective, rep.trajectory, ctx);
  if (!std::isfinite(rep.loss)) throw NumericalError("non-finite loss");

  const std::size_t T = actions.size();
  if (opts.action_gradients) rep.action_gradient.assign(T, {});

  // Adjoint of the terminal state from its own loss term.
  std::vector<double> adj;
  {
    Tape tape;
    TapeScope scope(tape);
    const SceneState<Var> xT = detail::state_leaves(rep.trajectory.states[T]);
    const Var l = objective.template frame<Var>(T, xT, ctx);
    tape.seed(l.index(), 1.0);
    tape.propagate();
    adj = detail::read_adjoints(tape, xT);
  }
  if (!detail::all_finite(adj)) throw NumericalError("non-finite adjoint", static_cast<long>(T));

  // Parameter slices that enter the step (initial-state slices handled last).
  std::vector<std::size_t> step_params;
  for (const auto& s : theta.layout.slices()) {
    if (s.name == "init_pose" || s.name == "init_twist") continue;
    for (std::size_t i = 0; i < s.size; ++i) step_params.push_back(s.offset + i);
  }

  Tape tape;
  for (std::size_t t = T; t-- > 0;) {
    tape.clear();
    TapeScope scope(tape);
    std::vector<Var> raw(theta.values.begin(), theta.values.end());
    for (std::size_t i : step_params) raw[i] = Var::leaf(theta.values[i]);
    const Model<Var> m = unpack<Var>(theta.layout, std::span<const Var>(raw), scene);
    const SceneState<Var> x = detail::state_leaves(records[t].state);
    const ActionInput<Var> a = detail::action_leaves(records[t].action);
    const StepOutput<Var> out =
        step_core<Var>(scene, std::span<const SphereCloud<Var>>(m.clouds), m.params, x, a, h, &records[t].selection);
    const Var l = objective.template frame<Var>(t, x, ctx) + objective.template action<Var>(t, a);
    tape.seed(l.index(), 1.0);
    detail::seed_state(tape, out.next, adj);
    tape.propagate();
    adj = detail::read_adjoints(tape, x);
    if (!detail::all_finite(adj)) throw NumericalError("non-finite adjoint", static_cast<long>(t));
    for (std::size_t i : step_params) rep.gradient[i] += tape.adjoint(raw[i].index());
    if (opts.action_gradients) {
      for (const auto& v : a.actuator_velocity)
        rep.action_gradient[t].push_back({tape.adjoint(v.x.index()), tape.adjoint(v.y.index()), tape.adjoint(v.z.index())});
    }
  }
  rep.state0_gradient = adj;

  if (theta.layout.has("init_pose")) {
    tape.clear();
    TapeScope scope(tape);
    std::vector<Var> raw(theta.values.begin(), theta.values.end());
    std::vector<std::size_t> idx;
    for (const char* name : {"init_pose", "init_twist"}) {
      const ParamSlice& s = theta.layout.at(name);
      for (std::size_t i = 0; i < s.size; ++i) idx.push_back(s.offset + i);
    }
    for (std::size_t i : idx) raw[i] = Var::leaf(theta.values[i]);
    const SceneState<Var> xv = initial_state<Var>(x0_nominal, theta.layout, std::span<const Var>(raw));
    detail::seed_state(tape, xv, adj);
    tape.propagate();
    for (std::size_t i : idx) rep.gradient[i] += tape.adjoint(raw[i].index());
  }
  if (!detail::all_finite(rep.gradient)) throw NumericalError("non-finite parameter gradient");
  return rep;
}

/// Loss only (forward pass), matching rollout_grad's value.
template <class Objective>
double rollout_loss(const Scene& scene, const ParamVector& theta, const SceneStated& x0_nominal,
                    std::span<const ActionInputd> actions, double h, const Objective& objective) {
  const Model<double> model = unpack(theta, scene);
  const Trajectory traj = rollout(scene, model.params, initial_state(x0_nominal, theta), actions, h, nullptr, model.clouds);
  return evaluate_objective(objective, traj, FrameContext{model.clouds});
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  std::vector<std::size_t> nonfinite;  // coordinates where either side is non-finite

  bool passed(double tol) const { return nonfinite.empty() && max_rel_error <= tol; }
};

/// Central differences per coordinate with per-coordinate steps; relative
/// error normalized by max(|analytic|, |numeric|, 1e-12).
inline GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::vector<double>& x, const std::vector<double>& analytic,
                                  const std::vector<double>& steps) {
  if (analytic.size() != x.size() || steps.size() != x.size()) throw ValidationError("grad_check: size mismatch");
  GradCheckResult r;
  r.numeric.resize(x.size());
  r.rel_error.resize(x.size());
  std::vector<double> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + steps[i];
    const double fp = f(xp);
    xp[i] = x[i] - steps[i];
    const double fm = f(xp);
    xp[i] = x[i];
    const double num = (fp - fm) / (2.0 * steps[i]);
    r.numeric[i] = num;
    if (!std::isfinite(num) || !std::isfinite(analytic[i])) {
      r.nonfinite.push_back(i);
      r.rel_error[i] = std::numeric_limits<double>::infinity();
      continue;
    }
    const double denom = std::max({std::abs(analytic[i]), std::abs(num), 1e-12});
    r.rel_error[i] = std::abs(analytic[i] - num) / denom;
    r.max_rel_error = std::max(r.max_rel_error, r.rel_error[i]);
  }
  return r;
}

/// Absolute step `step` for every coordinate, or `step * max(1, |x_i|)` when relative.
inline GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::vector<double>& x, const std::vector<double>& analytic, double step,
                                  bool relative = false) {
  std::vector<double> steps(x.size(), step);
  if (relative) {
    for (std::size_t i = 0; i < x.size(); ++i) steps[i] = step * std::max(1.0, std::abs(x[i]));
  }
  return grad_check(f, x, analytic, steps);
}

/// Finite-difference steps per slice: 1e-6 absolute for geometry and state
/// slices (meters/radians), 1e-5 relative for raw physical parameters.
inline std::vector<double> default_fd_steps(const ParamVector& th) {
  std::vector<double> steps(th.values.size(), 1e-6);
  for (const auto& s : th.layout.slices()) {
    const bool physical = s.name == "mass" || s.name == "inertia" || s.name == "mu" || s.name == "K" || s.name == "D";
    for (std::size_t i = 0; i < s.size; ++i) {
      const double v = th.values[s.offset + i];
      steps[s.offset + i] = physical ? 1e-5 * std::max(1.0, std::abs(v)) : 1e-6;
    }
  }
  return steps;
}

/// Checks rollout_grad against central differences; returns per-slice max
/// relative error.
template <class Objective>
std::map<std::string, double> check_rollout_grad(const Scene& scene, const ParamVector& theta,
                                                 const SceneStated& x0, std::span<const ActionInputd> actions,
                                                 double h, const Objective& obj, GradReport& report) {
  report = rollout_grad(scene, theta, x0, actions, h, obj);
  ParamVector probe = theta;
  auto f = [&](const std::vector<double>& v) {
    probe.values = v;
    return rollout_loss(scene, probe, x0, actions, h, obj);
  };
  const GradCheckResult r = grad_check(f, theta.values, report.gradient, default_fd_steps(theta));
  std::map<std::string, double> per;
  for (const auto& s : theta.layout.slices()) {
    double m = 0.0;
    for (std::size_t i = 0; i < s.size; ++i) m = std::max(m, r.rel_error[s.offset + i]);
    per[s.name] = m;
  }
  report.fd_max_rel_error = per;
  return per;
}

}  // namespace diffcontact
