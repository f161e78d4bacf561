// Command-line front end. Every subcommand writes into --out and leaves a
// manifest.json there that `rerun` can replay.
//
// Exit codes: 0 success, 1 validation error (bad flags, files, configs),
// 2 numerical failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "diffcontact/diffcontact.hpp"

namespace dc = diffcontact;
namespace io = diffcontact::io;
namespace fs = std::filesystem;
using io::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;

struct Run {
  std::string command;
  std::vector<std::string> args;
  std::map<std::string, std::string> inputs;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

std::vector<std::string> list_outputs(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") out.push_back(fs::relative(e.path(), dir).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Shared option groups

struct InitOptions {
  double mu = 0.8, stiffness = 1000.0, damping = 10.0;

  void add(CLI::App* app) {
    app->add_option("--init-mu", mu, "initial friction coefficient")->capture_default_str();
    app->add_option("--init-stiffness", stiffness, "initial contact stiffness K, N/m")->capture_default_str();
    app->add_option("--init-damping", damping, "initial contact damping D, N s/m")->capture_default_str();
  }

  dc::PhysParamsd apply(dc::PhysParamsd p) const {
    for (auto& v : p.mu) v = mu;
    for (auto& v : p.stiffness) v = stiffness;
    for (auto& v : p.damping) v = damping;
    return p;
  }
};

dc::ObservationMode mode_of(const std::string& s) { return dc::parse_mode(s); }

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string config, dataset, theta, split = "test";
  std::optional<std::uint64_t> seed;
};

io::SequenceFiles replay(const io::SceneFile& sf, const dc::PhysParamsd& params, const io::SequenceFiles& s, bool render) {
  io::SequenceFiles out;
  out.trajectory = dc::rollout(sf.scene, params, s.trajectory.states.front(), s.trajectory.actions, sf.h);
  if (render && !sf.cameras.empty()) {
    const auto clouds = sf.scene.clouds();
    const auto frames =
        dc::frame_states(out.trajectory, sf.steps_per_frame, out.trajectory.steps() / sf.steps_per_frame + 1);
    out.images = dc::render_sequence(frames, clouds, sf.cameras);
  }
  return out;
}

void run_simulate(const SimulateOptions& o, Run& run) {
  if (o.config.empty() == o.dataset.empty()) throw dc::ValidationError("simulate: give exactly one of --config or --dataset");
  if (!o.config.empty()) {
    if (!o.theta.empty()) throw dc::ValidationError("simulate: --theta applies to --dataset replays only");
    run.inputs["config"] = o.config;
    dc::ScenarioConfig cfg = io::read_scenario(o.config);
    if (o.seed) cfg.seed = *o.seed;
    run.seed = cfg.seed;
    const dc::GeneratedDataset g = dc::generate_scenario(cfg);
    io::write_dataset(run.out, io::dataset_files(cfg, g));
    return;
  }
  run.inputs["dataset"] = o.dataset;
  const io::DatasetFiles in = io::read_dataset(o.dataset);
  io::DatasetFiles out;
  out.scene = in.scene;
  if (!o.theta.empty()) {
    run.inputs["theta"] = o.theta;
    out.scene.params = io::read_theta(o.theta);
    dc::validate(out.scene.params, out.scene.scene);
  }
  if (o.split != "train" && o.split != "test" && o.split != "both")
    throw dc::ValidationError("simulate: --split must be train, test or both");
  const bool render = [&] {
    for (const auto* set : {&in.train, &in.test})
      for (const auto& s : *set)
        if (!s.images.empty()) return true;
    return false;
  }();
  if (o.split != "test")
    for (const auto& s : in.train) out.train.push_back(replay(out.scene, out.scene.params, s, render));
  if (o.split != "train")
    for (const auto& s : in.test) out.test.push_back(replay(out.scene, out.scene.params, s, render));
  io::write_dataset(run.out, out);
}

// ---------------------------------------------------------------------------
// identify / cem-identify

struct IdentifyOptions {
  std::string dataset, mode = "pose";
  std::size_t iterations = 500;
  double lr = 0.05, rotation_weight = dc::kDefaultRotationWeight;
  std::vector<std::string> free{"mu", "K", "D"};
  bool constant_lr = false;
  std::uint64_t seed = 0;
  InitOptions init;
};

json theta_summary(const dc::ParamVector& th, const dc::Scene& scene) {
  const dc::PhysParamsd p = dc::unpack(th, scene).params;
  json slices = json::array();
  for (const auto& s : th.layout.slices()) slices.push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  return {{"params", io::to_json(p)}, {"layout", slices}, {"raw", th.values}};
}

void write_identified(const Run& run, const io::DatasetFiles& ds, const dc::ParamVector& th) {
  const dc::Model<double> m = dc::unpack(th, ds.scene.scene);
  io::write_theta(run.out / "theta.txt", m.params);
  if (th.layout.has("centers")) {
    for (std::size_t b = 0; b < m.clouds.size(); ++b)
      io::write_sphere_table(run.out / ("spheres_" + std::to_string(b) + ".txt"), m.clouds[b]);
  }
}

void run_identify(const IdentifyOptions& o, Run& run) {
  run.inputs["dataset"] = o.dataset;
  run.seed = o.seed;
  const io::DatasetFiles ds = io::read_dataset(o.dataset);
  const dc::Dataset data = ds.observations(false);
  dc::IdentifyConfig cfg;
  cfg.mode = mode_of(o.mode);
  cfg.learning_rate = o.lr;
  cfg.iterations = o.iterations;
  cfg.free_slices = o.free;
  cfg.seed = o.seed;
  cfg.w_q = o.rotation_weight;
  cfg.cosine_schedule = !o.constant_lr;
  const bool geometry = std::find(o.free.begin(), o.free.end(), "centers") != o.free.end() ||
                        std::find(o.free.begin(), o.free.end(), "scales") != o.free.end();
  const dc::ParamVector th0 = dc::pack_params(ds.scene.scene, o.init.apply(ds.scene.params), {.geometry = geometry});
  const dc::IdentifyResult r = dc::identify(data, th0, cfg);
  write_identified(run, ds, r.theta);
  io::write_series_csv(run.out / "loss_curve.csv", {"loss", "best_loss"}, {r.history, r.best_history});
  json s = theta_summary(r.theta, ds.scene.scene);
  s["initial_loss"] = r.history.empty() ? r.best_loss : r.history.front();
  s["best_loss"] = r.best_loss;
  s["iterations"] = o.iterations;
  s["mode"] = o.mode;
  write_json(run.out / "summary.json", s);
}

struct CemOptions {
  std::string dataset, mode = "pose";
  std::size_t population = 32, elites = 8, iterations = 20;
  std::vector<std::string> bounds{"mu=0.1:1.5", "K=300:6000", "D=3:60"};
  double rotation_weight = dc::kDefaultRotationWeight;
  std::uint64_t seed = 0;
  InitOptions init;
};

dc::ParamBounds parse_bounds(const std::vector<std::string>& specs) {
  dc::ParamBounds b;
  for (const auto& s : specs) {
    const auto eq = s.find('='), colon = s.find(':');
    if (eq == std::string::npos || colon == std::string::npos || colon < eq)
      throw dc::ValidationError("bounds: expected name=lo:hi, got '" + s + "'");
    const std::string name = s.substr(0, eq);
    b[name] = {io::parse_double(s.substr(eq + 1, colon - eq - 1), "bounds"), io::parse_double(s.substr(colon + 1), "bounds")};
  }
  return b;
}

void run_cem(const CemOptions& o, Run& run) {
  run.inputs["dataset"] = o.dataset;
  run.seed = o.seed;
  const io::DatasetFiles ds = io::read_dataset(o.dataset);
  const dc::Dataset data = ds.observations(false);
  dc::CemConfig cfg;
  cfg.population = o.population;
  cfg.elites = o.elites;
  cfg.iterations = o.iterations;
  cfg.seed = o.seed;
  const dc::ParamVector th0 = dc::pack_params(ds.scene.scene, o.init.apply(ds.scene.params));
  const dc::CemIdentifyResult r = dc::cem_identify(data, th0, parse_bounds(o.bounds), cfg, mode_of(o.mode), o.rotation_weight);
  write_identified(run, ds, r.theta);
  io::write_series_csv(run.out / "loss_curve.csv", {"best_loss"}, {r.history});
  json s = theta_summary(r.theta, ds.scene.scene);
  s["best_loss"] = r.best_loss;
  s["mode"] = o.mode;
  write_json(run.out / "summary.json", s);
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  std::string dataset, theta;
  std::size_t sequence = 0, steps = 0;
  double tolerance = 1e-3;
  bool geometry = false, initial_state = false;
  InitOptions init;
};

bool run_gradcheck(const GradcheckOptions& o, Run& run) {
  run.inputs["dataset"] = o.dataset;
  const io::DatasetFiles ds = io::read_dataset(o.dataset);
  const auto& seqs = ds.train.empty() ? ds.test : ds.train;
  if (o.sequence >= seqs.size()) throw dc::ValidationError("gradcheck: sequence index out of range");
  const auto& seq = seqs[o.sequence];
  dc::PhysParamsd p = o.init.apply(ds.scene.params);
  if (!o.theta.empty()) {
    run.inputs["theta"] = o.theta;
    p = io::read_theta(o.theta);
  }
  const std::size_t spf = ds.scene.steps_per_frame;
  std::size_t T = o.steps == 0 ? seq.trajectory.steps() : o.steps;
  T = std::min(T, seq.trajectory.steps());
  const std::vector<dc::SceneStated> obs = dc::frame_states(seq.trajectory, spf, T / spf + 1);
  dc::PoseObjective obj;
  obj.observed = &obs;
  obj.stride = spf;
  const dc::ParamVector th = dc::pack_params(ds.scene.scene, p, {.geometry = o.geometry, .initial_state = o.initial_state});
  dc::GradReport rep;
  const std::span<const dc::ActionInputd> acts(seq.trajectory.actions.data(), T);
  const auto t0 = std::chrono::steady_clock::now();
  const auto per = dc::check_rollout_grad(ds.scene.scene, th, seq.trajectory.states.front(), acts, ds.scene.h, obj, rep);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string csv = "slice,max_rel_error\n";
  bool ok = true;
  double worst = 0.0;
  for (const auto& s : th.layout.slices()) {
    const double e = per.at(s.name);
    csv += s.name + "," + io::fmt(e) + "\n";
    ok = ok && e <= o.tolerance;
    worst = std::max(worst, e);
  }
  io::write_text(run.out / "gradcheck.csv", csv);
  write_json(run.out / "summary.json",
             {{"loss", rep.loss}, {"steps", T}, {"tolerance", o.tolerance}, {"max_rel_error", worst}, {"passed", ok}});
  std::printf("gradcheck: %zu steps, worst relative error %.3e (%s), %.2f s\n", T, worst, ok ? "pass" : "FAIL", secs);
  return ok;
}

// ---------------------------------------------------------------------------
// mpc

struct MpcOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void run_mpc_cmd(const MpcOptions& o, Run& run) {
  run.inputs["config"] = o.config;
  io::MpcTask task = io::read_mpc(o.config);
  if (o.seed) task.seed = *o.seed;
  run.seed = task.seed;
  const dc::PushTask pt = dc::make_push_task(task.seed, task.distance);
  task.config.goal = pt.goal;
  const dc::MpcRun r = dc::run_mpc(pt.scene, pt.params, pt.x0, task.config, task.steps);
  io::write_trajectory(run.out / "trajectory.csv", io::make_trajectory_file(pt.scene, r.trajectory.states, r.trajectory.h));
  io::write_text(run.out / "actions.csv", io::actions_csv(r.trajectory.actions));
  std::string csv = "step,cost,plan_cost\n";
  for (std::size_t k = 0; k < r.costs.size(); ++k) {
    // Replans happen every replan_stride control steps.
    const std::size_t plan = k / task.config.replan_stride;
    csv += std::to_string(k + 1) + "," + io::fmt(r.costs[k]) + "," + io::fmt(r.plan_costs[plan]) + "\n";
  }
  io::write_text(run.out / "costs.csv", csv);
  const auto& final_pos = r.trajectory.states.back().bodies[0].pose.position;
  write_json(run.out / "summary.json", {{"initial_cost", r.initial_cost},
                                         {"final_cost", r.costs.empty() ? r.initial_cost : r.costs.back()},
                                         {"final_position_error", dc::norm(final_pos - pt.goal.position)},
                                         {"warnings", r.warnings},
                                         {"replans", r.plan_costs.size()}});
  if (r.warnings) std::fprintf(stderr, "mpc: warning: a replan met a non-finite cost\n");
}

// ---------------------------------------------------------------------------
// fit-spheres

struct FitOptions {
  std::string points;
  std::size_t count = 16, iterations = 200;
  std::uint64_t seed = 0;
};

void run_fit(const FitOptions& o, Run& run) {
  run.inputs["points"] = o.points;
  run.seed = o.seed;
  const auto pts = io::read_xyz(o.points);
  dc::FitConfig cfg;
  cfg.iterations = o.iterations;
  cfg.seed = o.seed;
  const dc::SphereCloudd cloud = dc::fit_sphere_cloud(pts, o.count, cfg);
  io::write_sphere_table(run.out / "spheres.txt", cloud);
  write_json(run.out / "summary.json", {{"points", pts.size()}, {"spheres", cloud.size()}, {"loss", dc::fit_loss(cloud, pts, cfg.sdf)}});
}

// ---------------------------------------------------------------------------
// render

struct RenderOptions {
  std::string dataset, split = "test";
  int size = 64;
};

std::vector<dc::Camera> default_cameras(int size) {
  return {dc::Camera::look_at({0.6, 0.0, 0.4}, {0.0, 0.0, 0.05}, {0, 0, 1}, size, size, 60.0),
          dc::Camera::look_at({0.0, 0.6, 0.4}, {0.0, 0.0, 0.05}, {0, 0, 1}, size, size, 60.0)};
}

void run_render(const RenderOptions& o, Run& run) {
  run.inputs["dataset"] = o.dataset;
  const io::DatasetFiles ds = io::read_dataset(o.dataset);
  if (o.split != "train" && o.split != "test") throw dc::ValidationError("render: --split must be train or test");
  const std::vector<dc::Camera> cams = ds.scene.cameras.empty() ? default_cameras(o.size) : ds.scene.cameras;
  const auto clouds = ds.scene.scene.clouds();
  const auto& seqs = o.split == "train" ? ds.train : ds.test;
  const std::size_t spf = ds.scene.steps_per_frame;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& tr = seqs[i].trajectory;
    const auto frames = dc::frame_states(tr, spf, tr.steps() / spf + 1);
    const auto imgs = dc::render_sequence(frames, clouds, cams);
    for (std::size_t t = 0; t < imgs.size(); ++t) {
      for (std::size_t c = 0; c < imgs[t].size(); ++c) {
        char name[64];
        std::snprintf(name, sizeof name, "frame_%04zu_cam%zu.pgm", t, c);
        const fs::path dir = run.out / o.split / io::seq_name(i);
        fs::create_directories(dir);
        dc::write_pgm((dir / name).string(), imgs[t][c]);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsOptions {
  std::string pred, truth, split = "test";
};

void run_metrics(const MetricsOptions& o, Run& run) {
  run.inputs["pred"] = o.pred;
  run.inputs["truth"] = o.truth;
  std::vector<std::vector<dc::SceneStated>> P, T;
  std::vector<std::vector<std::vector<dc::SilhouetteImage>>> PI, TI;
  bool images = false;
  if (fs::is_directory(o.pred) != fs::is_directory(o.truth))
    throw dc::ValidationError("metrics: --pred and --truth must both be datasets or both be trajectory files");
  if (fs::is_directory(o.pred)) {
    if (o.split != "train" && o.split != "test") throw dc::ValidationError("metrics: --split must be train or test");
    const io::DatasetFiles a = io::read_dataset(o.pred), b = io::read_dataset(o.truth);
    const auto& sa = o.split == "train" ? a.train : a.test;
    const auto& sb = o.split == "train" ? b.train : b.test;
    if (sa.size() != sb.size()) throw dc::ValidationError("metrics: sequence counts differ");
    images = !sa.empty() && !sa[0].images.empty() && !sb[0].images.empty();
    for (std::size_t i = 0; i < sa.size(); ++i) {
      P.push_back(sa[i].trajectory.states);
      T.push_back(sb[i].trajectory.states);
      if (images) {
        PI.push_back(sa[i].images);
        TI.push_back(sb[i].images);
      }
    }
  } else {
    P.push_back(io::read_trajectory(o.pred).states);
    T.push_back(io::read_trajectory(o.truth).states);
  }
  const dc::Metrics m = images ? dc::metrics(P, T, &PI, &TI) : dc::metrics(P, T);
  json j = {{"e_trans", m.e_trans}, {"e_rot", m.e_rot}, {"sequences", P.size()}};
  j["e_psnr"] = m.has_psnr ? json(m.e_psnr) : json(nullptr);
  write_json(run.out / "metrics.json", j);
  // Per-step error curve averaged over sequences and bodies.
  std::size_t len = 0;
  for (const auto& s : P) len = std::max(len, s.size());
  std::vector<double> et(len, 0.0), er(len, 0.0), cnt(len, 0.0);
  for (std::size_t i = 0; i < P.size(); ++i) {
    for (std::size_t t = 0; t < P[i].size(); ++t) {
      for (std::size_t b = 0; b < P[i][t].bodies.size(); ++b) {
        et[t] += dc::norm(P[i][t].bodies[b].pose.position - T[i][t].bodies[b].pose.position);
        er[t] += dc::rotation_angle_between(P[i][t].bodies[b].pose.orientation, T[i][t].bodies[b].pose.orientation);
        cnt[t] += 1.0;
      }
    }
  }
  std::string csv = "t,e_trans,e_rot\n";
  for (std::size_t t = 0; t < len; ++t)
    csv += std::to_string(t) + "," + io::fmt(et[t] / std::max(cnt[t], 1.0)) + "," + io::fmt(er[t] / std::max(cnt[t], 1.0)) + "\n";
  io::write_text(run.out / "error_vs_time.csv", csv);
  std::printf("E_trans %.6g m  E_rot %.6g rad", m.e_trans, m.e_rot);
  if (m.has_psnr) std::printf("  PSNR %.3f dB", m.e_psnr);
  std::printf("\n");
}

// ---------------------------------------------------------------------------
// Dispatch

int dispatch(const std::vector<std::string>& args);

struct RerunOptions {
  std::string manifest, out;
};

int run_rerun(const RerunOptions& o) {
  json m;
  try {
    m = json::parse(io::read_text(o.manifest));
  } catch (const json::exception& e) {
    throw dc::ValidationError(o.manifest + ": " + e.what());
  }
  if (m.value("tool", "") != "diffcontact") throw dc::ValidationError(o.manifest + ": not a diffcontact manifest");
  for (const auto& [key, entry] : m.at("inputs").items()) {
    const std::string path = entry.at("path").get<std::string>();
    const json probe = io::make_manifest("", {}, {{key, path}}, std::nullopt, 0.0, {});
    if (probe["inputs"][key]["fnv1a"] != entry.at("fnv1a"))
      throw dc::ValidationError("rerun: input '" + key + "' (" + path + ") changed since the recorded run");
  }
  std::vector<std::string> args = m.at("args").get<std::vector<std::string>>();
  const std::string out = fs::absolute(o.out).string();
  bool replaced = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" && i + 1 < args.size()) {
      args[i + 1] = out;
      replaced = true;
    } else if (args[i].rfind("--out=", 0) == 0) {
      args[i] = "--out=" + out;
      replaced = true;
    }
  }
  if (!replaced) throw dc::ValidationError("rerun: manifest arguments have no --out");
  // Relative paths in the recorded arguments refer to the original working directory.
  if (m.contains("cwd")) {
    fs::current_path(m["cwd"].get<std::string>());
  }
  return dispatch(args);
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Differentiable contact simulation, identification and control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", io::kToolVersion);
  Run run;
  std::string out;
  std::function<int()> action;

  auto with_out = [&](CLI::App* sub) { sub->add_option("--out", out, "output directory")->required(); };

  SimulateOptions sim;
  auto* s_sim = app.add_subcommand("simulate", "generate a scenario dataset, or replay a dataset with new parameters");
  s_sim->add_option("--config", sim.config, "scenario config (JSON)")->check(CLI::ExistingFile);
  s_sim->add_option("--dataset", sim.dataset, "dataset directory to replay")->check(CLI::ExistingDirectory);
  s_sim->add_option("--theta", sim.theta, "parameter file used for the replay")->check(CLI::ExistingFile);
  s_sim->add_option("--split", sim.split, "replayed split: train, test or both")->capture_default_str();
  s_sim->add_option("--seed", sim.seed, "overrides the config seed");
  with_out(s_sim);
  s_sim->callback([&] { action = [&] { run_simulate(sim, run); return 0; }; });

  IdentifyOptions idf;
  auto* s_id = app.add_subcommand("identify", "gradient-based parameter identification");
  s_id->add_option("--dataset", idf.dataset, "dataset directory (train split is used)")->required()->check(CLI::ExistingDirectory);
  s_id->add_option("--mode", idf.mode, "pose or silhouette")->capture_default_str();
  s_id->add_option("--iterations", idf.iterations)->capture_default_str();
  s_id->add_option("--lr", idf.lr, "Adam learning rate")->capture_default_str();
  s_id->add_option("--free", idf.free, "free parameter slices")->delimiter(',')->capture_default_str();
  s_id->add_option("--rotation-weight", idf.rotation_weight)->capture_default_str();
  s_id->add_flag("--constant-lr", idf.constant_lr, "disable the cosine learning-rate decay");
  s_id->add_option("--seed", idf.seed)->capture_default_str();
  idf.init.add(s_id);
  with_out(s_id);
  s_id->callback([&] { action = [&] { run_identify(idf, run); return 0; }; });

  CemOptions cemo;
  auto* s_cem = app.add_subcommand("cem-identify", "cross-entropy-method parameter identification");
  s_cem->add_option("--dataset", cemo.dataset)->required()->check(CLI::ExistingDirectory);
  s_cem->add_option("--mode", cemo.mode)->capture_default_str();
  s_cem->add_option("--population", cemo.population)->capture_default_str();
  s_cem->add_option("--elites", cemo.elites)->capture_default_str();
  s_cem->add_option("--iterations", cemo.iterations)->capture_default_str();
  s_cem->add_option("--bounds", cemo.bounds, "name=lo:hi in physical units")->delimiter(',')->capture_default_str();
  s_cem->add_option("--rotation-weight", cemo.rotation_weight)->capture_default_str();
  s_cem->add_option("--seed", cemo.seed)->capture_default_str();
  cemo.init.add(s_cem);
  with_out(s_cem);
  s_cem->callback([&] { action = [&] { run_cem(cemo, run); return 0; }; });

  GradcheckOptions gco;
  auto* s_gc = app.add_subcommand("gradcheck", "compare rollout gradients with central differences");
  s_gc->add_option("--dataset", gco.dataset)->required()->check(CLI::ExistingDirectory);
  s_gc->add_option("--theta", gco.theta)->check(CLI::ExistingFile);
  s_gc->add_option("--sequence", gco.sequence)->capture_default_str();
  s_gc->add_option("--steps", gco.steps, "rollout length (0 = whole sequence)")->capture_default_str();
  s_gc->add_option("--tolerance", gco.tolerance)->capture_default_str();
  s_gc->add_flag("--geometry", gco.geometry, "include sphere centers and scales");
  s_gc->add_flag("--initial-state", gco.initial_state, "include initial pose and twist offsets");
  gco.init.add(s_gc);
  with_out(s_gc);
  s_gc->callback([&] { action = [&] { return run_gradcheck(gco, run) ? 0 : kExitNumerical; }; });

  MpcOptions mpo;
  auto* s_mpc = app.add_subcommand("mpc", "closed-loop planar pushing with gradient MPC");
  s_mpc->add_option("--config", mpo.config, "MPC config (JSON)")->required()->check(CLI::ExistingFile);
  s_mpc->add_option("--seed", mpo.seed, "overrides the config seed");
  with_out(s_mpc);
  s_mpc->callback([&] { action = [&] { run_mpc_cmd(mpo, run); return 0; }; });

  FitOptions fo;
  auto* s_fit = app.add_subcommand("fit-spheres", "fit a sphere cloud to an XYZ point cloud");
  s_fit->add_option("--points", fo.points)->required()->check(CLI::ExistingFile);
  s_fit->add_option("--count", fo.count)->capture_default_str();
  s_fit->add_option("--iterations", fo.iterations)->capture_default_str();
  s_fit->add_option("--seed", fo.seed)->capture_default_str();
  with_out(s_fit);
  s_fit->callback([&] { action = [&] { run_fit(fo, run); return 0; }; });

  RenderOptions ro;
  auto* s_r = app.add_subcommand("render", "render dataset silhouettes to PGM files");
  s_r->add_option("--dataset", ro.dataset)->required()->check(CLI::ExistingDirectory);
  s_r->add_option("--split", ro.split)->capture_default_str();
  s_r->add_option("--size", ro.size, "image size when the dataset has no cameras")->capture_default_str();
  with_out(s_r);
  s_r->callback([&] { action = [&] { run_render(ro, run); return 0; }; });

  MetricsOptions mo;
  auto* s_m = app.add_subcommand("metrics", "translation, rotation and PSNR errors between two runs");
  s_m->add_option("--pred", mo.pred, "predicted dataset directory or trajectory file")->required()->check(CLI::ExistingPath);
  s_m->add_option("--truth", mo.truth, "reference dataset directory or trajectory file")->required()->check(CLI::ExistingPath);
  s_m->add_option("--split", mo.split)->capture_default_str();
  with_out(s_m);
  s_m->callback([&] { action = [&] { run_metrics(mo, run); return 0; }; });

  RerunOptions rr;
  auto* s_rr = app.add_subcommand("rerun", "repeat a recorded run from its manifest");
  s_rr->add_option("--manifest", rr.manifest)->required()->check(CLI::ExistingFile);
  s_rr->add_option("--out", rr.out)->required();
  s_rr->callback([&] { action = [&] { return run_rerun(rr); }; });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "rerun") return action();
  run.command = command;
  run.args = args;
  run.out = out;
  fs::create_directories(run.out);
  const auto t0 = std::chrono::steady_clock::now();
  const int code = action();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json manifest = io::make_manifest(run.command, run.args, run.inputs, run.seed, secs, list_outputs(run.out));
  manifest["cwd"] = fs::current_path().string();
  write_json(run.out / "manifest.json", manifest);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const dc::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const dc::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const io::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
}
