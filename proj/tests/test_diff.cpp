#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace diffcontact;
using testutil::Rng;

namespace {

struct FallCase {
  Scene scene;
  PhysParamsd params;
  SceneStated x0;
  std::vector<ActionInputd> actions;
  std::vector<SceneStated> observed;
};

/// A block thrown at the ground that bounces within 15 steps, observed with a
/// pose offset so the loss has a non-trivial gradient everywhere.
FallCase fall_case(Rng& rng, std::size_t steps = 15) {
  FallCase f;
  ScenarioConfig cfg = standard_block_config();
  f.scene = cfg.scene();
  f.params = cfg.params();
  BodyState<double> b;
  b.pose.orientation = axis_angle(normalized(Vec3d{rng.uniform(-1, 1), rng.uniform(-1, 1), 0}), rng.uniform(0.0, 0.3));
  b.pose.position = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0};
  b.pose.position.z = rng.uniform(0.015, 0.03) - lowest_point(cfg.cloud, b.pose);
  b.twist.linear = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), -rng.uniform(1.0, 2.0)};
  b.twist.angular = rng.vec(-1, 1);
  f.x0.bodies = {b};
  f.actions.assign(steps, idle_action(f.scene));
  const Trajectory tr = rollout(f.scene, f.params, f.x0, f.actions, cfg.h);
  for (const auto& s : tr.states) {
    SceneStated o = s;
    o.bodies[0].pose.position += rng.vec(-0.01, 0.01);
    o.bodies[0].pose.orientation = o.bodies[0].pose.orientation * axis_angle(rng.unit(), 0.05);
    f.observed.push_back(o);
  }
  return f;
}

bool touched_ground(const FallCase& f) {
  const Trajectory tr = rollout(f.scene, f.params, f.x0, f.actions, 0.005);
  const SphereCloudd& c = f.scene.geometry.bodies[0].cloud;
  for (const auto& s : tr.states)
    if (lowest_point(c, s.bodies[0].pose) < f.scene.geometry.sdf.margin) return true;
  return false;
}

}  // namespace

TEST(ParamLayout, PackUnpackRoundTrip) {
  ScenarioConfig cfg = standard_block_config();
  const Scene s = cfg.scene();
  PhysParamsd p = cfg.params();
  p.mu = {0.3, 0.7, 1.2};
  p.stiffness = {1500, 2500, 3500};
  const ParamVector th = pack_params(s, p, {true, true});
  for (const char* name : {"mass", "inertia", "mu", "K", "D", "centers", "scales", "init_pose", "init_twist"})
    EXPECT_TRUE(th.layout.has(name)) << name;
  EXPECT_EQ(th.layout.at("centers").size, 3 * cfg.cloud.size());
  const Model<double> m = unpack(th, s);
  EXPECT_NEAR(m.params.mass[0], p.mass[0], 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(m.params.mu[i], p.mu[i], 1e-12);
    EXPECT_NEAR(m.params.stiffness[i], p.stiffness[i], 1e-9);
    EXPECT_NEAR(m.params.damping[i], p.damping[i], 1e-12);
  }
  for (std::size_t i = 0; i < cfg.cloud.size(); ++i) {
    EXPECT_NEAR(m.clouds[0].scales[i], cfg.cloud.scales[i], 1e-15);
    EXPECT_EQ(m.clouds[0].centers[i].x, cfg.cloud.centers[i].x);
  }
  SceneStated x;
  x.bodies.push_back({{{0.1, 0.2, 0.3}, axis_angle({0, 0, 1}, 0.4)}, {{1, 2, 3}, {4, 5, 6}}});
  const SceneStated y = initial_state(x, th);  // zero offsets
  EXPECT_EQ(y.bodies[0].pose.position.z, 0.3);
  EXPECT_EQ(y.bodies[0].twist.angular.y, 5.0);
}

TEST(RolloutGrad, ZeroStepsGivesZeroGradient) {
  Rng rng(50);
  FallCase f = fall_case(rng, 0);
  const Vec3d p0 = f.x0.bodies[0].pose.position;
  auto obj = FrameObjective([p0](std::size_t, const auto& x, const FrameContext&) {
    using S = std::decay_t<decltype(x.bodies[0].pose.position.x)>;
    const auto d = x.bodies[0].pose.position - Vec3<S>(p0);
    return dot(d, d);
  });
  const ParamVector th = pack_params(f.scene, f.params, {false, true});
  const GradReport rep = rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj);
  EXPECT_EQ(rep.loss, 0.0);
  for (double g : rep.gradient) EXPECT_EQ(g, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rep.state0_gradient[i], 0.0);
}

TEST(RolloutGrad, ContactParametersUnusedInFreeFlight) {
  Rng rng(51);
  FallCase f = fall_case(rng);
  f.x0.bodies[0].pose.position.z += 5.0;
  for (auto& o : f.observed) o.bodies[0].pose.position.z += 5.0;
  PoseObjective obj;
  obj.observed = &f.observed;
  const ParamVector th = pack_params(f.scene, f.params, {true, true});
  const GradReport rep = rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj);
  for (const char* name : {"mu", "K", "D", "centers", "scales"}) {
    for (double g : rep.slice(name)) EXPECT_EQ(g, 0.0) << name;
  }
  double init = 0.0;
  for (double g : rep.slice("init_pose")) init += std::abs(g);
  EXPECT_GT(init, 0.0);
}

TEST(RolloutGrad, FifteenStepBounceMatchesFiniteDifferences) {
  Rng rng(52);
  int cases = 0;
  std::map<std::string, double> worst;
  while (cases < 20) {
    FallCase f = fall_case(rng);
    if (!touched_ground(f)) continue;
    PoseObjective obj;
    obj.observed = &f.observed;
    const ParamVector th = pack_params(f.scene, f.params, {true, true});
    GradReport rep;
    const auto per = check_rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj, rep);
    ASSERT_EQ(per.size(), 9u);
    for (const auto& [name, err] : per) {
      EXPECT_LE(err, 1e-3) << name << " case " << cases;
      worst[name] = std::max(worst[name], err);
    }
    ++cases;
  }
  for (const auto& [name, err] : worst) std::printf("  %-10s max rel err %.2e\n", name.c_str(), err);
}

TEST(RolloutGrad, ReversePassIsDeterministic) {
  Rng rng(53);
  FallCase f = fall_case(rng, 40);
  PoseObjective obj;
  obj.observed = &f.observed;
  const ParamVector th = pack_params(f.scene, f.params, {true, true});
  const GradReport a = rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj);
  const GradReport b = rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj);
  ASSERT_EQ(a.gradient.size(), b.gradient.size());
  for (std::size_t i = 0; i < a.gradient.size(); ++i) EXPECT_EQ(a.gradient[i], b.gradient[i]);
  for (std::size_t i = 0; i < a.state0_gradient.size(); ++i) EXPECT_EQ(a.state0_gradient[i], b.state0_gradient[i]);
}

TEST(RolloutGrad, LossMatchesForwardEvaluation) {
  Rng rng(54);
  FallCase f = fall_case(rng);
  PoseObjective obj;
  obj.observed = &f.observed;
  const ParamVector th = pack_params(f.scene, f.params);
  const GradReport rep = rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj);
  EXPECT_EQ(rep.loss, rollout_loss(f.scene, th, f.x0, f.actions, 0.005, obj));
  EXPECT_EQ(rep.trajectory.states.size(), 16u);
}

TEST(RolloutGrad, SilhouetteLossLeavesGeometryToDynamics) {
  // With no steps the geometry can only reach the loss through rendering,
  // which uses plain values, so its gradient is exactly zero.
  Rng rng(55);
  FallCase f = fall_case(rng, 0);
  const std::vector<Camera> cams{Camera::look_at({0.4, 0, 0.3}, {0, 0, 0.05}, {0, 0, 1}, 32, 32, 60)};
  const std::vector<SceneStated> frames{f.x0};
  std::vector<std::vector<SilhouetteImage>> obs = render_sequence(frames, f.scene.clouds(), cams);
  for (auto& px : obs[0][0].data) px = 1.0 - px;  // large mismatch
  SilhouetteObjective obj;
  obj.observed = &obs;
  obj.cameras = &cams;
  const ParamVector th = pack_params(f.scene, f.params, {true, true});
  const GradReport rep = rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj);
  EXPECT_GT(rep.loss, 0.1);
  for (double g : rep.slice("centers")) EXPECT_EQ(g, 0.0);
  for (double g : rep.slice("scales")) EXPECT_EQ(g, 0.0);
  double pose = 0.0;
  for (double g : rep.slice("init_pose")) pose += std::abs(g);
  EXPECT_GT(pose, 0.0);
}

TEST(RolloutGrad, ActionGradientsMatchFiniteDifferences) {
  ScenarioConfig cfg = standard_block_config(ScenarioKind::PushSlideSettle, 3);
  cfg.train_sequences = 1;
  cfg.test_sequences = 0;
  cfg.steps = 30;
  cfg.pusher.gap = 0.002;
  cfg.pusher.speed = {0.2, 0.2};
  const GeneratedDataset g = generate_scenario(cfg);
  const Trajectory& tr = g.train[0].trajectory;
  std::vector<SceneStated> target = tr.states;
  for (auto& s : target) s.bodies[0].pose.position.x += 0.01;
  PoseObjective obj;
  obj.observed = &target;
  const ParamVector th = pack_params(g.scene, g.params);
  const GradReport rep = rollout_grad(g.scene, th, tr.states[0], tr.actions, cfg.h, obj, GradOptions{true});
  ASSERT_EQ(rep.action_gradient.size(), 30u);
  // Later commands barely move the block (|dL/du| ~ 1e-10, below FD roundoff),
  // so errors are measured against a 1e-6 floor.
  double magnitude = 0.0;
  for (std::size_t t : {0u, 1u, 2u, 3u, 4u}) {
    for (int axis = 0; axis < 2; ++axis) {
      auto f = [&](const std::vector<double>& v) {
        std::vector<ActionInputd> acts = tr.actions;
        (axis == 0 ? acts[t].actuator_velocity[0].x : acts[t].actuator_velocity[0].y) = v[0];
        return rollout_loss(g.scene, th, tr.states[0], acts, cfg.h, obj);
      };
      const double u = axis == 0 ? tr.actions[t].actuator_velocity[0].x : tr.actions[t].actuator_velocity[0].y;
      const double an = axis == 0 ? rep.action_gradient[t][0].x : rep.action_gradient[t][0].y;
      const double num = testutil::central_diff(f, {u}, 0, 1e-6);
      EXPECT_LE(testutil::rel_err(an, num, 1e-6), 1e-4) << "t=" << t << " axis=" << axis;
      magnitude += std::abs(an);
    }
  }
  EXPECT_GT(magnitude, 0.0);
}

// ---------------------------------------------------------------------------
// Per-operation checks

TEST(OpGrad, ImpulseWithRespectToStiffnessAtGrazingContact) {
  Rng rng(56);
  for (int trial = 0; trial < 20; ++trial) {
    DualConeSystem<double> sys;
    sys.rows.resize(1);
    sys.rows[0].body_a = 0;
    for (auto& v : sys.rows[0].ja) v = rng.uniform(-1, 1);
    sys.rows[0].phi = rng.uniform(-1e-4, 1e-4);
    GenForce<double> b(1);
    for (auto& v : b[0]) v = rng.uniform(-0.05, 0.05);
    const double D = 20.0, h = 0.005;
    auto lam = [&](auto K) {
      using S = decltype(K);
      DualConeSystem<S> s;
      s.rows.resize(1);
      s.rows[0].body_a = 0;
      for (int k = 0; k < 6; ++k) s.rows[0].ja[k] = S(sys.rows[0].ja[k]);
      s.rows[0].phi = S(sys.rows[0].phi);
      GenForce<S> bb(1);
      for (int k = 0; k < 6; ++k) bb[0][k] = S(b[0][k]);
      return contact_impulse<S>(bb, s, std::vector<S>{K}, std::vector<S>{S(D)}, h)[0];
    };
    const double K0 = rng.uniform(500, 5000);
    std::vector<double> g;
    ad::value_and_gradient([&](const std::vector<ad::Var>& v) { return lam(v[0]); }, {K0}, g);
    const GradCheckResult r = grad_check([&](const std::vector<double>& v) { return lam(v[0]); }, {K0}, g, 1e-5, true);
    EXPECT_LE(r.max_rel_error, 1e-4);
  }
}

TEST(OpGrad, StepWithRespectToStateAndParameters) {
  // One step of the block near the ground, differentiated through contact
  // generation, cone rows, impulse and integration.
  Rng rng(57);
  for (int trial = 0; trial < 20; ++trial) {
    FallCase f = fall_case(rng, 1);
    f.x0.bodies[0].pose.position.z -= rng.uniform(0.015, 0.025);  // start in contact
    auto obj = FrameObjective([](std::size_t t, const auto& x, const FrameContext&) {
      using S = std::decay_t<decltype(x.bodies[0].pose.position.x)>;
      if (t == 0) return S(0.0);
      const auto& b = x.bodies[0];
      return b.pose.position.z * 3.0 + b.pose.position.x + b.twist.angular.x * 0.1 + b.pose.orientation.y;
    });
    const ParamVector th = pack_params(f.scene, f.params, {true, true});
    GradReport rep;
    const auto per = check_rollout_grad(f.scene, th, f.x0, f.actions, 0.005, obj, rep);
    for (const auto& [name, err] : per) EXPECT_LE(err, 1e-4) << name << " trial " << trial;
  }
}
