#pragma once

// Losses, gradient identification, initial-state estimation, the CEM
// baseline and evaluation metrics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "diffcontact/diff.hpp"
#include "diffcontact/optim.hpp"
#include "diffcontact/parallel.hpp"
#include "diffcontact/render.hpp"

namespace diffcontact {

enum class ObservationMode { Pose, Silhouette };

inline ObservationMode parse_mode(const std::string& s) {
  if (s == "pose") return ObservationMode::Pose;
  if (s == "silhouette") return ObservationMode::Silhouette;
  throw ValidationError("unknown observation mode '" + s + "' (expected pose or silhouette)");
}

/// One observed sequence. Frame k is simulation step k * steps_per_frame.
struct Observation {
  SceneStated x0;
  std::vector<ActionInputd> actions;
  std::vector<SceneStated> states;                    // per frame (pose mode)
  std::vector<std::vector<SilhouetteImage>> images;   // [frame][camera] (silhouette mode)

  std::size_t frames() const { return std::max(states.size(), images.size()); }
};

struct Dataset {
  Scene scene;
  double h = 0.005;
  std::size_t steps_per_frame = 1;
  std::vector<Camera> cameras;
  std::vector<Observation> sequences;

  void validate() const {
    if (sequences.empty()) throw ValidationError("dataset has no sequences");
    if (!(h > 0.0)) throw ValidationError("dataset: h must be positive");
    if (steps_per_frame == 0) throw ValidationError("dataset: steps_per_frame must be >= 1");
    for (const auto& s : sequences) {
      if (s.frames() == 0) throw ValidationError("dataset: sequence without observations");
      if (s.actions.size() < (s.frames() - 1) * steps_per_frame)
        throw ValidationError("dataset: fewer actions than observed frames require");
      if (!s.images.empty()) {
        for (const auto& f : s.images) {
          if (f.size() != cameras.size()) throw ValidationError("dataset: one image per camera per frame required");
        }
      }
    }
  }
};

/// Splits sequences into (train, test) with train:test = 1:ratio, train first.
inline std::pair<std::vector<Observation>, std::vector<Observation>> split_dataset(const std::vector<Observation>& seqs,
                                                                                   std::size_t ratio = 4) {
  const std::size_t n_train = std::max<std::size_t>(1, seqs.size() / (ratio + 1));
  return {std::vector<Observation>(seqs.begin(), seqs.begin() + static_cast<long>(std::min(n_train, seqs.size()))),
          std::vector<Observation>(seqs.begin() + static_cast<long>(std::min(n_train, seqs.size())), seqs.end())};
}

inline constexpr double kDefaultRotationWeight = 0.1;

template <class S>
S pose_frame_loss(const SceneState<S>& x, const SceneStated& obs, double w_q) {
  if (x.bodies.size() != obs.bodies.size()) throw ValidationError("pose loss: body count mismatch");
  S acc(0.0);
  for (std::size_t b = 0; b < x.bodies.size(); ++b) {
    const Pose<S>& p = x.bodies[b].pose;
    const Posed& o = obs.bodies[b].pose;
    acc += squared_norm(p.position - Vec3<S>(o.position));
    if (w_q != 0.0) acc += square(S(1.0) - abs(dot(p.orientation, Quat<S>(o.orientation)))) * w_q;
  }
  return acc;
}

/// Pose-mode loss Σ_t ‖p̂_t − p_t‖² + w_q Σ_t (1 − |q̂_t·q_t|)² over all frames.
inline double trajectory_loss(const std::vector<SceneStated>& predicted, const std::vector<SceneStated>& observed,
                              double w_q = kDefaultRotationWeight) {
  if (predicted.size() != observed.size()) throw ValidationError("trajectory_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t t = 0; t < predicted.size(); ++t) acc += pose_frame_loss(predicted[t], observed[t], w_q);
  return acc;
}

/// Silhouette-mode loss: Σ_t Σ_cameras mean-pixel L1.
inline double trajectory_loss(const std::vector<std::vector<SilhouetteImage>>& rendered,
                              const std::vector<std::vector<SilhouetteImage>>& observed) {
  if (rendered.size() != observed.size()) throw ValidationError("trajectory_loss: length mismatch");
  double acc = 0.0;
  for (std::size_t t = 0; t < rendered.size(); ++t) {
    if (rendered[t].size() != observed[t].size()) throw ValidationError("trajectory_loss: camera count mismatch");
    for (std::size_t c = 0; c < rendered[t].size(); ++c) acc += mean_l1(rendered[t][c], observed[t][c]);
  }
  return acc;
}

/// Objective over observed poses at every `stride`-th step.
struct PoseObjective : NoActionCost {
  const std::vector<SceneStated>* observed = nullptr;
  std::size_t stride = 1;
  double w_q = kDefaultRotationWeight;

  template <class S>
  S frame(std::size_t t, const SceneState<S>& x, const FrameContext&) const {
    if (t % stride != 0 || t / stride >= observed->size()) return S(0.0);
    return pose_frame_loss(x, (*observed)[t / stride], w_q);
  }
};

/// Objective over observed silhouettes at every `stride`-th step. Geometry
/// reaches the renderer only as plain values from the frame context.
struct SilhouetteObjective : NoActionCost {
  const std::vector<std::vector<SilhouetteImage>>* observed = nullptr;
  const std::vector<Camera>* cameras = nullptr;
  std::size_t stride = 1;
  std::size_t first_frame = 0;
  std::size_t last_frame = std::numeric_limits<std::size_t>::max();

  template <class S>
  S frame(std::size_t t, const SceneState<S>& x, const FrameContext& ctx) const {
    if (t % stride != 0) return S(0.0);
    const std::size_t k = t / stride;
    if (k >= observed->size() || k < first_frame || k > last_frame) return S(0.0);
    std::vector<Pose<S>> poses;
    for (const auto& b : x.bodies) poses.push_back(b.pose);
    S acc(0.0);
    for (std::size_t c = 0; c < cameras->size(); ++c) {
      const Image<S> img = render_bodies<S>(ctx.clouds, poses, (*cameras)[c]);
      acc += mean_l1(img, (*observed)[k][c]);
    }
    return acc;
  }
};

/// Renders every frame of a state sequence for each camera.
inline std::vector<std::vector<SilhouetteImage>> render_sequence(const std::vector<SceneStated>& frames,
                                                                 std::span<const SphereCloudd> clouds,
                                                                 const std::vector<Camera>& cameras) {
  std::vector<std::vector<SilhouetteImage>> out(frames.size());
  parallel_for(frames.size(), [&](std::size_t t) {
    std::vector<Posed> poses;
    for (const auto& b : frames[t].bodies) poses.push_back(b.pose);
    for (const auto& cam : cameras) out[t].push_back(render_bodies<double>(clouds, poses, cam));
  });
  return out;
}

/// States at frame times 0, stride, 2·stride, ... up to `frames` entries.
inline std::vector<SceneStated> frame_states(const Trajectory& traj, std::size_t stride, std::size_t frames) {
  std::vector<SceneStated> out;
  for (std::size_t k = 0; k < frames && k * stride < traj.states.size(); ++k) out.push_back(traj.states[k * stride]);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient identification

struct IdentifyConfig {
  ObservationMode mode = ObservationMode::Pose;
  double learning_rate = 0.05;
  std::size_t iterations = 200;
  std::vector<std::string> free_slices{"mu", "K", "D"};
  std::uint64_t seed = 0;
  double w_q = kDefaultRotationWeight;
  bool cosine_schedule = true;

  void validate(const ParamLayout& layout) const {
    if (free_slices.empty()) throw ValidationError("identify: at least one free parameter slice is required");
    for (const auto& s : free_slices) layout.at(s);
    if (!(learning_rate > 0.0)) throw ValidationError("identify: learning rate must be positive");
  }
};

struct IdentifyResult {
  ParamVector theta;                  // best-loss parameters
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> history;        // loss at each iterate
  std::vector<double> best_history;   // best loss so far after each iterate
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Total dataset loss and gradient; sequences evaluated in parallel and summed
/// in index order.
inline LossAndGradient dataset_loss_grad(const Dataset& data, const ParamVector& theta, ObservationMode mode,
                                         double w_q = kDefaultRotationWeight, bool with_gradient = true) {
  const std::size_t n = data.sequences.size();
  std::vector<double> losses(n, 0.0);
  std::vector<std::vector<double>> grads(n);
  parallel_for(n, [&](std::size_t i) {
    const Observation& seq = data.sequences[i];
    const std::size_t T = (seq.frames() - 1) * data.steps_per_frame;
    const std::span<const ActionInputd> acts(seq.actions.data(), T);
    auto run = [&](const auto& obj) {
      if (with_gradient) {
        GradReport r = rollout_grad(data.scene, theta, seq.x0, acts, data.h, obj);
        losses[i] = r.loss;
        grads[i] = std::move(r.gradient);
      } else {
        losses[i] = rollout_loss(data.scene, theta, seq.x0, acts, data.h, obj);
      }
    };
    if (mode == ObservationMode::Pose) {
      if (seq.states.empty()) throw ValidationError("pose-mode identification needs observed poses");
      PoseObjective obj;
      obj.observed = &seq.states;
      obj.stride = data.steps_per_frame;
      obj.w_q = w_q;
      run(obj);
    } else {
      if (seq.images.empty()) throw ValidationError("silhouette-mode identification needs observed images");
      SilhouetteObjective obj;
      obj.observed = &seq.images;
      obj.cameras = &data.cameras;
      obj.stride = data.steps_per_frame;
      run(obj);
    }
  });
  LossAndGradient out;
  out.gradient.assign(theta.values.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out.loss += losses[i];
    if (with_gradient) {
      for (std::size_t k = 0; k < out.gradient.size(); ++k) out.gradient[k] += grads[i][k];
    }
  }
  return out;
}

inline double dataset_loss(const Dataset& data, const ParamVector& theta, ObservationMode mode,
                           double w_q = kDefaultRotationWeight) {
  return dataset_loss_grad(data, theta, mode, w_q, false).loss;
}

inline std::vector<char> slice_mask(const ParamLayout& layout, const std::vector<std::string>& names) {
  std::vector<char> mask(layout.size(), 0);
  for (const auto& n : names) {
    const ParamSlice& s = layout.at(n);
    std::fill(mask.begin() + static_cast<long>(s.offset), mask.begin() + static_cast<long>(s.offset + s.size), 1);
  }
  return mask;
}

/// Adam on the free slices; returns the best iterate seen.
inline IdentifyResult identify(const Dataset& data, const ParamVector& theta_init, const IdentifyConfig& cfg,
                               const std::function<void(std::size_t, double)>& on_iteration = {}) {
  data.validate();
  cfg.validate(theta_init.layout);
  const std::vector<char> mask = slice_mask(theta_init.layout, cfg.free_slices);
  IdentifyResult res;
  res.theta = theta_init;
  ParamVector theta = theta_init;
  Adam adam(theta.values.size(), cfg.learning_rate);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    LossAndGradient lg;
    try {
      lg = dataset_loss_grad(data, theta, cfg.mode, cfg.w_q);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("identify: ") + e.what() + " at iteration " + std::to_string(it));
    }
    if (!std::isfinite(lg.loss)) throw NumericalError("identify: non-finite loss at iteration " + std::to_string(it));
    res.history.push_back(lg.loss);
    if (lg.loss < res.best_loss) {
      res.best_loss = lg.loss;
      res.theta = theta;
    }
    res.best_history.push_back(res.best_loss);
    if (on_iteration) on_iteration(it, lg.loss);
    const double lr = cfg.cosine_schedule ? cosine_lr(cfg.learning_rate, it, cfg.iterations) : cfg.learning_rate;
    adam.step(theta.values, lg.gradient, mask, lr);
  }
  if (cfg.iterations == 0) {
    res.best_loss = dataset_loss(data, theta, cfg.mode, cfg.w_q);
    res.best_history.push_back(res.best_loss);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Cross-entropy method

struct CemConfig {
  std::size_t population = 32;
  std::size_t elites = 8;
  std::size_t iterations = 20;
  std::uint64_t seed = 0;
  double min_std = 1e-6;
  double smoothing = 0.5;  // weight of the freshly fitted mean/std; 1 disables smoothing

  void validate() const {
    if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ValidationError("cem: smoothing must lie in (0, 1]");
    if (elites == 0) throw ValidationError("cem: elites must be >= 1");
    if (population < 2 * elites) throw ValidationError("cem: population must be at least twice the elite count");
  }
};

struct CemResult {
  std::vector<double> best;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<double> history;  // best value after the initial population and after each iteration
};

/// Minimizes f over the box [lo, hi]. The initial population is uniform in
/// the box; each iteration ranks the current samples together with the
/// previous elites, refits a diagonal Gaussian to the new elites (blended with
/// the previous fit by `smoothing`) and resamples, clamped to the box. Samples are drawn sequentially from one
/// seeded generator, evaluations run in parallel, so results depend only on
/// the seed. Non-finite objective values rank last.
inline CemResult cem(const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& lo,
                     const std::vector<double>& hi, const CemConfig& cfg) {
  cfg.validate();
  const std::size_t d = lo.size();
  if (hi.size() != d || d == 0) throw ValidationError("cem: bounds dimension mismatch");
  for (std::size_t i = 0; i < d; ++i) {
    if (!(lo[i] < hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
      throw ValidationError("cem: invalid bounds at coordinate " + std::to_string(i));
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<double>> pop(cfg.population, std::vector<double>(d));
  for (auto& x : pop) {
    for (std::size_t i = 0; i < d; ++i) x[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
  }
  CemResult res;
  std::vector<double> values(cfg.population);
  auto evaluate = [&]() {
    parallel_for(pop.size(), [&](std::size_t k) {
      const double v = f(pop[k]);
      values[k] = std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    });
    for (std::size_t k = 0; k < pop.size(); ++k) {
      if (values[k] < res.best_value || res.best.empty()) {
        res.best_value = values[k];
        res.best = pop[k];
      }
    }
    res.history.push_back(res.best_value);
  };
  evaluate();
  std::vector<double> mean(d), stdev(d);
  std::vector<std::vector<double>> elite;
  std::vector<double> elite_values;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::vector<double>> pool = pop;
    std::vector<double> pool_values = values;
    pool.insert(pool.end(), elite.begin(), elite.end());
    pool_values.insert(pool_values.end(), elite_values.begin(), elite_values.end());
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pool_values[a] < pool_values[b]; });
    elite.clear();
    elite_values.clear();
    for (std::size_t e = 0; e < cfg.elites; ++e) {
      elite.push_back(pool[order[e]]);
      elite_values.push_back(pool_values[order[e]]);
    }
    const double a = it == 0 ? 1.0 : cfg.smoothing;
    for (std::size_t i = 0; i < d; ++i) {
      double m = 0.0;
      for (const auto& x : elite) m += x[i];
      m /= static_cast<double>(cfg.elites);
      double v = 0.0;
      for (const auto& x : elite) v += square(x[i] - m);
      mean[i] = a * m + (1.0 - a) * mean[i];
      stdev[i] = std::max(a * std::sqrt(v / static_cast<double>(cfg.elites)) + (1.0 - a) * stdev[i], cfg.min_std);
    }
    for (auto& x : pop) {
      for (std::size_t i = 0; i < d; ++i) {
        x[i] = std::clamp(mean[i] + stdev[i] * std::normal_distribution<double>(0.0, 1.0)(rng), lo[i], hi[i]);
      }
    }
    evaluate();
  }
  return res;
}

/// Bounds in physical units per named slice (every entry of the slice).
using ParamBounds = std::map<std::string, std::pair<double, double>>;

inline std::pair<double, double> raw_bounds(const std::string& slice, std::pair<double, double> b) {
  if (!(b.first > 0.0) || !(b.first < b.second)) throw ValidationError("bounds for '" + slice + "' must satisfy 0 < lo < hi");
  if (slice == "mu") {
    if (b.second >= kMaxFriction) throw ValidationError("friction bounds must lie below 5");
    return {friction_to_raw(b.first), friction_to_raw(b.second)};
  }
  if (slice == "mass" || slice == "inertia" || slice == "K" || slice == "D") return {std::log(b.first), std::log(b.second)};
  throw ValidationError("cem: bounds are supported for mass, inertia, mu, K, D; got '" + slice + "'");
}

struct CemIdentifyResult {
  ParamVector theta;
  double best_loss = 0.0;
  std::vector<double> history;
};

/// Gradient-free identification: CEM over the raw coordinates of the bounded slices.
inline CemIdentifyResult cem_identify(const Dataset& data, const ParamVector& theta_init, const ParamBounds& bounds,
                                      const CemConfig& cfg, ObservationMode mode = ObservationMode::Pose,
                                      double w_q = kDefaultRotationWeight) {
  data.validate();
  if (bounds.empty()) throw ValidationError("cem_identify: no bounded parameters");
  std::vector<std::size_t> coords;
  std::vector<double> lo, hi;
  for (const auto& [name, b] : bounds) {
    const ParamSlice& s = theta_init.layout.at(name);
    const auto rb = raw_bounds(name, b);
    for (std::size_t i = 0; i < s.size; ++i) {
      coords.push_back(s.offset + i);
      lo.push_back(rb.first);
      hi.push_back(rb.second);
    }
  }
  auto assemble = [&](const std::vector<double>& x) {
    ParamVector th = theta_init;
    for (std::size_t k = 0; k < coords.size(); ++k) th.values[coords[k]] = x[k];
    return th;
  };
  // Serial inner evaluation: the population itself is already spread over workers.
  auto f = [&](const std::vector<double>& x) {
    const ParamVector th = assemble(x);
    double total = 0.0;
    for (const auto& seq : data.sequences) {
      const std::size_t T = (seq.frames() - 1) * data.steps_per_frame;
      const std::span<const ActionInputd> acts(seq.actions.data(), T);
      try {
        if (mode == ObservationMode::Pose) {
          PoseObjective obj;
          obj.observed = &seq.states;
          obj.stride = data.steps_per_frame;
          obj.w_q = w_q;
          total += rollout_loss(data.scene, th, seq.x0, acts, data.h, obj);
        } else {
          SilhouetteObjective obj;
          obj.observed = &seq.images;
          obj.cameras = &data.cameras;
          obj.stride = data.steps_per_frame;
          total += rollout_loss(data.scene, th, seq.x0, acts, data.h, obj);
        }
      } catch (const NumericalError&) {
        return std::numeric_limits<double>::infinity();
      }
    }
    return total;
  };
  const CemResult r = cem(f, lo, hi, cfg);
  return {assemble(r.best), r.best_value, r.history};
}

// ---------------------------------------------------------------------------
// Initial-state estimation

struct InitialStateConfig {
  std::size_t pose_iterations = 300;
  std::size_t velocity_iterations = 300;
  double pose_lr = 3e-3;
  double velocity_lr = 2e-2;
  bool estimate_angular = true;
  double l1_threshold = 0.05;  // per-camera mean L1 above which the fit is reported as non-converged
};

struct InitialStateResult {
  SceneStated state;
  double pose_l1 = 0.0;      // mean per-camera L1 at frame 0 after phase 1
  double velocity_l1 = 0.0;  // mean per-camera L1 over frames 0..2 after phase 2
  bool converged = false;
  std::vector<double> pose_history, velocity_history;
};

/// Two phases: fit the frame-0 pose by silhouette L1 with everything else
/// frozen, then freeze it and fit the initial twist by aligning frames 0..2
/// through a rollout. Frames must be contact-free.
inline InitialStateResult estimate_initial_state(const Scene& scene, const PhysParamsd& params,
                                                 const std::vector<std::vector<SilhouetteImage>>& frames,
                                                 const std::vector<Camera>& cameras, double h,
                                                 std::size_t steps_per_frame, const SceneStated& guess,
                                                 const InitialStateConfig& cfg = {}) {
  if (frames.size() < 3) throw ValidationError("estimate_initial_state: three observed frames required");
  if (cameras.empty()) throw ValidationError("estimate_initial_state: at least one camera required");
  for (const auto& f : frames) {
    if (f.size() != cameras.size()) throw ValidationError("estimate_initial_state: one image per camera per frame required");
  }
  const std::vector<std::vector<SilhouetteImage>> obs(frames.begin(), frames.begin() + 3);
  const double ncam = static_cast<double>(cameras.size());

  InitialStateResult res;
  ParamVector theta = pack_params(scene, params, {.geometry = false, .initial_state = true});
  SilhouetteObjective obj;
  obj.observed = &obs;
  obj.cameras = &cameras;
  obj.stride = steps_per_frame;

  // Phase 1: pose at frame 0 (zero-step rollout).
  SceneStated nominal = guess;
  {
    obj.last_frame = 0;
    const std::vector<char> mask = slice_mask(theta.layout, {"init_pose"});
    Adam adam(theta.values.size(), cfg.pose_lr);
    ParamVector best = theta;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < cfg.pose_iterations; ++it) {
      const GradReport r = rollout_grad(scene, theta, nominal, {}, h, obj);
      res.pose_history.push_back(r.loss);
      if (r.loss < best_loss) {
        best_loss = r.loss;
        best = theta;
      }
      adam.step(theta.values, r.gradient, mask, cosine_lr(cfg.pose_lr, it, cfg.pose_iterations));
    }
    const double final_loss = rollout_loss(scene, theta, nominal, {}, h, obj);
    if (final_loss < best_loss) {
      best_loss = final_loss;
      best = theta;
    }
    nominal = initial_state(nominal, best);
    res.pose_l1 = best_loss / ncam;
    theta = pack_params(scene, params, {.geometry = false, .initial_state = true});
  }

  // Phase 2: twist from frames 0..2 with the pose frozen.
  {
    obj.last_frame = 2;
    const std::vector<ActionInputd> acts(2 * steps_per_frame, idle_action(scene));
    std::vector<char> mask = slice_mask(theta.layout, {"init_twist"});
    if (!cfg.estimate_angular) {
      const ParamSlice& s = theta.layout.at("init_twist");
      for (std::size_t b = 0; b < scene.num_bodies(); ++b) {
        for (std::size_t k = 3; k < 6; ++k) mask[s.offset + 6 * b + k] = 0;
      }
    }
    Adam adam(theta.values.size(), cfg.velocity_lr);
    ParamVector best = theta;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < cfg.velocity_iterations; ++it) {
      const GradReport r = rollout_grad(scene, theta, nominal, acts, h, obj);
      res.velocity_history.push_back(r.loss);
      if (r.loss < best_loss) {
        best_loss = r.loss;
        best = theta;
      }
      adam.step(theta.values, r.gradient, mask, cosine_lr(cfg.velocity_lr, it, cfg.velocity_iterations));
    }
    const double final_loss = rollout_loss(scene, theta, nominal, acts, h, obj);
    if (final_loss < best_loss) {
      best_loss = final_loss;
      best = theta;
    }
    res.state = initial_state(nominal, best);
    res.velocity_l1 = best_loss / (3.0 * ncam);
  }
  res.converged = res.pose_l1 <= cfg.l1_threshold && res.velocity_l1 <= cfg.l1_threshold;
  return res;
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double e_trans = 0.0;  // m
  double e_rot = 0.0;    // rad
  double e_psnr = 0.0;   // dB
  bool has_psnr = false;
};

/// Averages over sequences, frames t = 1..T and bodies. x_0 is the shared
/// starting point of open-loop prediction and is excluded; a single-frame
/// sequence contributes its only frame.
inline Metrics metrics(const std::vector<std::vector<SceneStated>>& predicted,
                       const std::vector<std::vector<SceneStated>>& truth,
                       const std::vector<std::vector<std::vector<SilhouetteImage>>>* predicted_images = nullptr,
                       const std::vector<std::vector<std::vector<SilhouetteImage>>>* truth_images = nullptr) {
  if (predicted.size() != truth.size() || predicted.empty()) throw ValidationError("metrics: sequence count mismatch");
  Metrics m;
  double n = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != truth[i].size() || predicted[i].empty())
      throw ValidationError("metrics: frame count mismatch in sequence " + std::to_string(i));
    const std::size_t t0 = predicted[i].size() > 1 ? 1 : 0;
    for (std::size_t t = t0; t < predicted[i].size(); ++t) {
      const auto& a = predicted[i][t].bodies;
      const auto& b = truth[i][t].bodies;
      if (a.size() != b.size()) throw ValidationError("metrics: body count mismatch");
      for (std::size_t k = 0; k < a.size(); ++k) {
        m.e_trans += norm(a[k].pose.position - b[k].pose.position);
        m.e_rot += rotation_angle_between(a[k].pose.orientation, b[k].pose.orientation);
        n += 1.0;
      }
    }
  }
  m.e_trans /= n;
  m.e_rot /= n;
  if (predicted_images && truth_images) {
    if (predicted_images->size() != truth_images->size()) throw ValidationError("metrics: image sequence count mismatch");
    double acc = 0.0, cnt = 0.0;
    for (std::size_t i = 0; i < predicted_images->size(); ++i) {
      const auto& pa = (*predicted_images)[i];
      const auto& ta = (*truth_images)[i];
      if (pa.size() != ta.size() || pa.empty()) throw ValidationError("metrics: image frame count mismatch");
      const std::size_t t0 = pa.size() > 1 ? 1 : 0;
      for (std::size_t t = t0; t < pa.size(); ++t) {
        if (pa[t].size() != ta[t].size()) throw ValidationError("metrics: camera count mismatch");
        for (std::size_t c = 0; c < pa[t].size(); ++c) {
          acc += psnr(pa[t][c], ta[t][c]);
          cnt += 1.0;
        }
      }
    }
    m.e_psnr = acc / cnt;
    m.has_psnr = true;
  }
  return m;
}

}  // namespace diffcontact
