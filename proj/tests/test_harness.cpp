#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "diffcontact/io.hpp"
#include "test_util.hpp"

using namespace diffcontact;
namespace io = diffcontact::io;
namespace fs = std::filesystem;
using io::json;

namespace {

const fs::path kSource = DIFFCONTACT_SOURCE_DIR;

fs::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / "diffcontact_harness" / (std::string(info->test_suite_name()) + "_" + info->name()) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

// Relative path -> file bytes for every regular file except manifests.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      out[fs::relative(e.path(), dir).generic_string()] = io::read_text(e.path());
  }
  return out;
}

SceneStated random_state(testutil::Rng& rng, std::size_t bodies, std::size_t actuators) {
  SceneStated x;
  for (std::size_t b = 0; b < bodies; ++b) {
    BodyState<double> s;
    s.pose = rng.pose(0.5);
    s.twist.linear = rng.vec(-3, 3);
    s.twist.angular = rng.vec(-10, 10);
    x.bodies.push_back(s);
  }
  for (std::size_t k = 0; k < actuators; ++k) x.actuators.push_back({rng.vec(), rng.vec(-0.2, 0.2)});
  return x;
}

Scene two_body_scene() {
  Scene s;
  s.geometry.bodies.push_back({make_block_cloud({0.1, 0.1, 0.05}, 2, 2, 2), 1});
  s.geometry.bodies.push_back({make_block_cloud({0.05, 0.05, 0.05}, 1, 1, 1), 1});
  ActuatorGeom a;
  a.points = {{0, 0, 0}, {0, 0.01, 0}};
  a.radius = 0.005;
  s.geometry.actuators.push_back(a);
  return s;
}

ScenarioConfig small_fall(std::uint64_t seed) {
  ScenarioConfig c = standard_block_config(ScenarioKind::FallAndRebound, seed);
  c.steps = 20;
  c.test_steps = 20;
  c.train_sequences = 1;
  c.test_sequences = 5;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Text formats

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(io::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(io::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(io::fnv1a("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(io::hex64(0xabcULL), "0000000000000abc");
}

TEST(ParseDouble, EdgeCases) {
  EXPECT_TRUE(same_bits(io::parse_double(io::fmt(std::numeric_limits<double>::denorm_min()), "x"),
                        std::numeric_limits<double>::denorm_min()));
  EXPECT_TRUE(same_bits(io::parse_double("-0", "x"), -0.0));
  EXPECT_EQ(io::parse_double("1e308", "x"), 1e308);
  EXPECT_THROW(io::parse_double("1e999", "x"), ValidationError);
  EXPECT_THROW(io::parse_double("", "x"), ValidationError);
  EXPECT_THROW(io::parse_double(" 1", "x"), ValidationError);
  EXPECT_THROW(io::parse_double("1 ", "x"), ValidationError);
  EXPECT_THROW(io::parse_double("0x", "x"), ValidationError);
}

TEST(TrajectoryFile, RoundTripIsBitwise) {
  testutil::Rng rng(4);
  const Scene scene = two_body_scene();
  std::vector<SceneStated> states;
  for (int t = 0; t < 7; ++t) states.push_back(random_state(rng, 2, 1));
  states[3].bodies[0].twist.linear = {1e-300, -0.0, 0.1};
  states[4].bodies[1].pose.position = {std::numeric_limits<double>::denorm_min(), 1.0 / 3.0, -2e300};
  const std::vector<Camera> cams = {Camera::look_at({0.5, 0, 0.3}, {0, 0, 0}, {0, 0, 1}, 40, 30, 55.0),
                                    Camera::look_at({0, 0.5, 0.3}, {0, 0, 0}, {0, 0, 1}, 16, 16, 70.0)};
  const io::TrajectoryFile tf = io::make_trajectory_file(scene, states, 0.0025, cams);
  const std::string text = io::trajectory_csv(tf);
  const io::TrajectoryFile back = io::parse_trajectory(text);

  EXPECT_EQ(io::trajectory_csv(back), text);
  EXPECT_TRUE(same_bits(back.h, 0.0025));
  EXPECT_EQ(back.bodies, 2u);
  EXPECT_EQ(back.actuators, 1u);
  EXPECT_EQ(back.steps(), 6u);
  EXPECT_EQ(back.geometry_hash, io::geometry_hash(scene.geometry));
  ASSERT_EQ(back.states.size(), states.size());
  for (std::size_t t = 0; t < states.size(); ++t) {
    for (std::size_t b = 0; b < 2; ++b) {
      const auto& a = states[t].bodies[b];
      const auto& c = back.states[t].bodies[b];
      const double va[13] = {a.pose.position.x, a.pose.position.y, a.pose.position.z, a.pose.orientation.w,
                             a.pose.orientation.x, a.pose.orientation.y, a.pose.orientation.z, a.twist.linear.x,
                             a.twist.linear.y, a.twist.linear.z, a.twist.angular.x, a.twist.angular.y, a.twist.angular.z};
      const double vc[13] = {c.pose.position.x, c.pose.position.y, c.pose.position.z, c.pose.orientation.w,
                             c.pose.orientation.x, c.pose.orientation.y, c.pose.orientation.z, c.twist.linear.x,
                             c.twist.linear.y, c.twist.linear.z, c.twist.angular.x, c.twist.angular.y, c.twist.angular.z};
      for (int i = 0; i < 13; ++i) EXPECT_TRUE(same_bits(va[i], vc[i])) << "t=" << t << " b=" << b << " field " << i;
    }
    EXPECT_TRUE(same_bits(states[t].actuators[0].position.y, back.states[t].actuators[0].position.y));
    EXPECT_TRUE(same_bits(states[t].actuators[0].velocity.x, back.states[t].actuators[0].velocity.x));
  }
  ASSERT_EQ(back.cameras.size(), 2u);
  EXPECT_TRUE(same_bits(back.cameras[1].fx, cams[1].fx));
  EXPECT_TRUE(same_bits(back.cameras[0].T_cw.orientation.z, cams[0].T_cw.orientation.z));
  EXPECT_EQ(back.cameras[0].width, 40);
  EXPECT_EQ(back.cameras[0].height, 30);
}

TEST(TrajectoryFile, RowCountIsStepsPlusOnePerEntity) {
  testutil::Rng rng(1);
  std::vector<SceneStated> states;
  for (int t = 0; t < 5; ++t) states.push_back(random_state(rng, 2, 1));
  const std::string text = io::trajectory_csv(io::make_trajectory_file(two_body_scene(), states, 0.005));
  std::size_t rows = 0;
  bool header_seen = false;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      EXPECT_EQ(line, "t,body,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz");
      header_seen = true;
      continue;
    }
    ++rows;
  }
  EXPECT_EQ(rows, 5u * 3u);
}

TEST(TrajectoryFile, MalformedInputsRejected) {
  testutil::Rng rng(2);
  std::vector<SceneStated> states = {random_state(rng, 1, 0), random_state(rng, 1, 0)};
  Scene scene;
  scene.geometry.bodies.push_back({make_block_cloud({0.1, 0.1, 0.1}, 1, 1, 1), 1});
  const std::string good = io::trajectory_csv(io::make_trajectory_file(scene, states, 0.005));
  EXPECT_NO_THROW(io::parse_trajectory(good));

  auto replace = [&](const std::string& from, const std::string& to) {
    std::string s = good;
    const auto pos = s.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    s.replace(pos, from.size(), to);
    return s;
  };
  EXPECT_THROW(io::parse_trajectory(replace("trajectory v1", "trajectory v9")), ValidationError);
  EXPECT_THROW(io::parse_trajectory(replace("# h ", "# step ")), ValidationError);
  EXPECT_THROW(io::parse_trajectory(replace("t,body,", "time,body,")), ValidationError);
  EXPECT_THROW(io::parse_trajectory(replace("\n1,0,", "\n2,0,")), ValidationError);
  EXPECT_THROW(io::parse_trajectory(replace("\n1,0,", "\n1,1,")), ValidationError);
  EXPECT_THROW(io::parse_trajectory(replace("\n1,0,", "\n1,0,abc,")), ValidationError);
  EXPECT_THROW(io::parse_trajectory(replace("\n1,0,", "\n1,0,1.5x,")), ValidationError);
  EXPECT_THROW(io::parse_trajectory(good.substr(0, good.find("t,body"))), ValidationError);

  std::vector<SceneStated> wrong = states;
  wrong[1].bodies.push_back(wrong[1].bodies[0]);
  EXPECT_THROW(io::trajectory_csv(io::make_trajectory_file(scene, wrong, 0.005)), ValidationError);
}

TEST(ThetaFile, RoundTripIsBitwise) {
  const PhysParamsd p{{2.0, 0.1 + 0.2}, {{1e-3, 2e-3, 3e-3}, {0.5, 0.25, 1.0 / 7.0}}, {0.4, 0.3}, {2000.0, 1234.5678}, {20.0, 1e-9}};
  const std::string text = io::theta_text(p);
  const PhysParamsd q = io::parse_theta(text);
  EXPECT_EQ(io::theta_text(q), text);
  ASSERT_EQ(q.mass.size(), 2u);
  EXPECT_TRUE(same_bits(q.mass[1], 0.1 + 0.2));
  EXPECT_TRUE(same_bits(q.inertia[1].z, 1.0 / 7.0));
  EXPECT_TRUE(same_bits(q.damping[1], 1e-9));
  EXPECT_EQ(q.mu, p.mu);
  EXPECT_EQ(q.stiffness, p.stiffness);
}

TEST(ThetaFile, MalformedInputsRejected) {
  const std::string ok = "mass = 1\ninertia = 1 1 1\nmu = 0.4\nstiffness = 10\ndamping = 1\n";
  EXPECT_NO_THROW(io::parse_theta(ok));
  EXPECT_THROW(io::parse_theta("mass = 1\ninertia = 1 1 1\nmu = 0.4\nstiffness = 10\n"), ValidationError);
  EXPECT_THROW(io::parse_theta(ok + "mu = 0.5\n"), ValidationError);
  EXPECT_THROW(io::parse_theta(ok + "gravity = 9.8\n"), ValidationError);
  EXPECT_THROW(io::parse_theta("mass 1\n"), ValidationError);
  EXPECT_THROW(io::parse_theta("mass = 1\ninertia = 1 1\nmu = 0.4\nstiffness = 10\ndamping = 1\n"), ValidationError);
  EXPECT_THROW(io::parse_theta("mass = one\ninertia = 1 1 1\nmu = 0.4\nstiffness = 10\ndamping = 1\n"), ValidationError);
}

TEST(SphereTable, RoundTripIsBitwise) {
  testutil::Rng rng(9);
  const SphereCloudd c = testutil::random_cloud(rng, 13);
  const SphereCloudd d = io::parse_sphere_table(io::sphere_table_text(c));
  ASSERT_EQ(d.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_TRUE(same_bits(d.centers[i].x, c.centers[i].x));
    EXPECT_TRUE(same_bits(d.centers[i].z, c.centers[i].z));
    EXPECT_TRUE(same_bits(d.scales[i], c.scales[i]));
  }
  EXPECT_THROW(io::parse_sphere_table("2\n0 0 0 0.01\n"), ValidationError);
  EXPECT_THROW(io::parse_sphere_table("1\n0 0 0 -0.01\n"), ValidationError);
}

TEST(ActionsFile, RoundTripAndImpedanceRejected) {
  const fs::path dir = scratch_dir("a");
  const Scene scene = two_body_scene();
  std::vector<ActionInputd> acts(4, idle_action(scene));
  acts[1].actuator_velocity[0] = {0.1, -0.2, 1.0 / 3.0};
  io::write_text(dir / "a.csv", io::actions_csv(acts));
  const auto back = io::read_actions(dir / "a.csv", 4, 1);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_TRUE(same_bits(back[1].actuator_velocity[0].z, 1.0 / 3.0));
  EXPECT_EQ(back[3].actuator_velocity[0].x, 0.0);
  EXPECT_THROW(io::read_actions(dir / "a.csv", 2, 1), ValidationError);

  acts[2].impedance.push_back({});
  EXPECT_THROW(io::actions_csv(acts), ValidationError);
}

// ---------------------------------------------------------------------------
// Configs

TEST(ScenarioConfigFile, ShippedConfigsParse) {
  for (const char* name : {"identify_fall.json", "push_rendered.json", "golden_fall.json"}) {
    SCOPED_TRACE(name);
    EXPECT_NO_THROW(io::read_scenario(kSource / "configs" / name));
  }
  const ScenarioConfig c = io::read_scenario(kSource / "configs" / "push_rendered.json");
  EXPECT_EQ(c.kind, ScenarioKind::PushSlideSettle);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.cameras.size(), 2u);
  EXPECT_TRUE(c.render);
  EXPECT_DOUBLE_EQ(c.pusher.speed.lo, 0.1);
  EXPECT_EQ(c.cloud.size(), 8u);
  EXPECT_NO_THROW(io::read_mpc(kSource / "configs" / "mpc_push.json"));
}

TEST(ScenarioConfigFile, Errors) {
  const json base = json::parse(R"({"scenario": "fall_and_rebound", "seed": 3,
                                    "geometry": {"block": {"size": [0.1, 0.1, 0.05]}}})");
  EXPECT_NO_THROW(io::scenario_from_json(base, kSource));

  json no_seed = base;
  no_seed.erase("seed");
  EXPECT_THROW(io::scenario_from_json(no_seed, kSource), ValidationError);

  json unknown = base;
  unknown["stepz"] = 10;
  EXPECT_THROW(io::scenario_from_json(unknown, kSource), ValidationError);

  json bad_range = base;
  bad_range["ranges"] = {{"height", {0.2, 0.1}}};
  EXPECT_THROW(io::scenario_from_json(bad_range, kSource), ValidationError);

  json bad_kind = base;
  bad_kind["scenario"] = "juggle";
  EXPECT_THROW(io::scenario_from_json(bad_kind, kSource), ValidationError);

  json bad_geometry = base;
  bad_geometry["geometry"] = json::object();
  EXPECT_THROW(io::scenario_from_json(bad_geometry, kSource), ValidationError);

  json render_without_cameras = base;
  render_without_cameras["render"] = true;
  EXPECT_THROW(io::scenario_from_json(render_without_cameras, kSource), ValidationError);

  json missing_file = base;
  missing_file["geometry"] = {{"spheres", "no_such_file.txt"}};
  EXPECT_THROW(io::scenario_from_json(missing_file, kSource), ValidationError);

  const fs::path dir = scratch_dir("c");
  io::write_text(dir / "broken.json", "{\"seed\": 1,");
  EXPECT_THROW(io::read_scenario(dir / "broken.json"), ValidationError);
}

TEST(MpcConfigFile, Errors) {
  EXPECT_NO_THROW(io::mpc_from_json(json::parse(R"({"seed": 1})")));
  EXPECT_THROW(io::mpc_from_json(json::parse(R"({"horizon": 5})")), ValidationError);
  EXPECT_THROW(io::mpc_from_json(json::parse(R"({"seed": 1, "horizn": 5})")), ValidationError);
  const io::MpcTask t = io::mpc_from_json(json::parse(R"({"seed": 4, "horizon": 6, "steps": 12})"));
  EXPECT_EQ(t.seed, 4u);
  EXPECT_EQ(t.config.horizon, 6u);
  EXPECT_EQ(t.steps, 12u);
}

// ---------------------------------------------------------------------------
// Scenario generation

TEST(GenerateScenario, FallSequencesStartAboveGroundWithoutContact) {
  const ScenarioConfig cfg = small_fall(21);
  const GeneratedDataset g = generate_scenario(cfg);
  ASSERT_EQ(g.train.size(), 1u);
  ASSERT_EQ(g.test.size(), 5u);
  for (const auto& s : g.test) {
    ASSERT_EQ(s.trajectory.states.size(), cfg.test_steps + 1);
    const SceneStated& x0 = s.trajectory.states.front();
    EXPECT_GT(lowest_point(cfg.cloud, x0.bodies[0].pose), cfg.sdf.margin);
    const auto rec = step(g.scene, g.params, x0, idle_action(g.scene), cfg.h).second;
    EXPECT_EQ(rec.contacts.size(), 0u);
  }
}

TEST(GenerateScenario, PusherSpeedWithinRange) {
  ScenarioConfig cfg = standard_block_config(ScenarioKind::PushSlideSettle, 5);
  cfg.steps = 10;
  cfg.test_steps = 10;
  cfg.train_sequences = 3;
  cfg.test_sequences = 6;
  cfg.pusher.speed = {0.07, 0.09};
  const GeneratedDataset g = generate_scenario(cfg);
  for (const auto* set : {&g.train, &g.test}) {
    for (const auto& s : *set) {
      EXPECT_GE(s.pusher_speed, 0.07);
      EXPECT_LE(s.pusher_speed, 0.09);
      EXPECT_EQ(s.trajectory.actions.front().actuator_velocity[0].x, s.pusher_speed);
    }
  }
}

TEST(GenerateScenario, SameSeedGivesIdenticalFiles) {
  ScenarioConfig cfg = io::read_scenario(kSource / "configs" / "push_rendered.json");
  cfg.steps = 20;
  cfg.test_steps = 20;
  const fs::path a = scratch_dir("a"), b = scratch_dir("b"), c = scratch_dir("c");
  io::write_dataset(a, io::dataset_files(cfg, generate_scenario(cfg)));
  io::write_dataset(b, io::dataset_files(cfg, generate_scenario(cfg)));
  const auto sa = snapshot(a);
  EXPECT_EQ(sa, snapshot(b));
  EXPECT_TRUE(sa.count("train/seq_000.cam1.f32"));

  cfg.seed += 1;
  io::write_dataset(c, io::dataset_files(cfg, generate_scenario(cfg)));
  EXPECT_NE(sa.at("test/seq_000.csv"), snapshot(c).at("test/seq_000.csv"));
}

TEST(Dataset, RoundTripPreservesFilesAndObservations) {
  ScenarioConfig cfg = io::read_scenario(kSource / "configs" / "push_rendered.json");
  cfg.steps = 20;
  cfg.test_steps = 30;
  const fs::path a = scratch_dir("a"), b = scratch_dir("b");
  const GeneratedDataset g = generate_scenario(cfg);
  io::write_dataset(a, io::dataset_files(cfg, g));
  const io::DatasetFiles ds = io::read_dataset(a);
  io::write_dataset(b, ds);
  EXPECT_EQ(snapshot(a), snapshot(b));

  ASSERT_EQ(ds.train.size(), 1u);
  ASSERT_EQ(ds.test.size(), 1u);
  EXPECT_EQ(ds.scene.cameras.size(), 2u);
  EXPECT_EQ(ds.train[0].images.size(), 3u);  // frames 0, 10, 20
  EXPECT_EQ(ds.test[0].images.size(), 4u);
  // Frames are stored in single precision.
  const auto& stored = ds.train[0].images[2][1].data;
  const auto& rendered = g.train[0].images[2][1].data;
  ASSERT_EQ(stored.size(), rendered.size());
  for (std::size_t i = 0; i < stored.size(); ++i) ASSERT_EQ(stored[i], static_cast<double>(static_cast<float>(rendered[i])));
  EXPECT_EQ(ds.scene.params.mu, g.params.mu);

  const Dataset obs = ds.observations(false);
  ASSERT_EQ(obs.sequences.size(), 1u);
  EXPECT_EQ(obs.sequences[0].states.size(), 3u);
  EXPECT_EQ(obs.sequences[0].actions.size(), 20u);
  EXPECT_EQ(obs.sequences[0].states[2].bodies[0].pose.position.x, g.train[0].trajectory.states[20].bodies[0].pose.position.x);
}

TEST(Dataset, GeometryMismatchRejected) {
  const ScenarioConfig cfg = small_fall(3);
  const fs::path a = scratch_dir("a");
  io::write_dataset(a, io::dataset_files(cfg, generate_scenario(cfg)));
  io::write_sphere_table(a / "spheres_0.txt", make_block_cloud({0.1, 0.1, 0.06}, 2, 2, 2));
  EXPECT_THROW(io::read_dataset(a), ValidationError);
  EXPECT_THROW(io::read_dataset(scratch_dir("empty")), ValidationError);
}

TEST(Golden, FallConfigMatchesStoredFiles) {
  const ScenarioConfig cfg = io::read_scenario(kSource / "configs" / "golden_fall.json");
  const fs::path out = scratch_dir("golden");
  io::write_dataset(out, io::dataset_files(cfg, generate_scenario(cfg)));
  const auto expected = snapshot(kSource / "samples" / "golden_fall");
  const auto actual = snapshot(out);
  ASSERT_FALSE(expected.empty());
  ASSERT_EQ(actual.size(), expected.size());
  for (const auto& [name, bytes] : expected) {
    ASSERT_TRUE(actual.count(name)) << name;
    EXPECT_TRUE(actual.at(name) == bytes) << name << " differs from the stored golden file";
  }
}

// ---------------------------------------------------------------------------
// Manifests

TEST(Manifest, RecordsInputsSeedAndOutputs) {
  const fs::path dir = scratch_dir("m");
  io::write_text(dir / "in.txt", "hello");
  io::write_text(dir / "data" / "x.csv", "1,2\n");
  io::write_text(dir / "data" / "manifest.json", "ignored");
  const json m = io::make_manifest("simulate", {"simulate", "--out", "o"},
                                   {{"config", (dir / "in.txt").string()}, {"dataset", (dir / "data").string()}}, 42, 1.5,
                                   {"a.csv"});
  EXPECT_EQ(m["tool"], "diffcontact");
  EXPECT_EQ(m["version"], io::kToolVersion);
  EXPECT_EQ(m["format_version"], io::kFormatVersion);
  EXPECT_EQ(m["command"], "simulate");
  EXPECT_EQ(m["args"].size(), 3u);
  EXPECT_EQ(m["seed"], 42);
  EXPECT_EQ(m["wall_seconds"], 1.5);
  EXPECT_EQ(m["outputs"][0], "a.csv");
  EXPECT_EQ(m["inputs"]["config"]["fnv1a"], io::hex64(io::fnv1a("hello")));
  const std::uint64_t dir_hash = io::fnv1a("1,2\n", io::fnv1a("x.csv"));
  EXPECT_EQ(m["inputs"]["dataset"]["fnv1a"], io::hex64(dir_hash));

  // Changing only a manifest inside an input directory leaves its hash alone.
  io::write_text(dir / "data" / "manifest.json", "changed");
  const json m2 = io::make_manifest("x", {}, {{"dataset", (dir / "data").string()}}, std::nullopt, 0.0, {});
  EXPECT_EQ(m2["inputs"]["dataset"]["fnv1a"], m["inputs"]["dataset"]["fnv1a"]);
  EXPECT_TRUE(m2["seed"].is_null());
}

TEST(SeriesCsv, RaggedColumns) {
  const fs::path dir = scratch_dir("s");
  io::write_series_csv(dir / "loss.csv", {"loss", "best"}, {{3.0, 2.0, 1.0}, {3.0}});
  EXPECT_EQ(io::read_text(dir / "loss.csv"), "iteration,loss,best\n0,3,3\n1,2,\n2,1,\n");
}
