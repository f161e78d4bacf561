#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "diffcontact/control.hpp"
#include "test_util.hpp"

using namespace diffcontact;
using testutil::rel_err;

namespace {

MpcConfig config_for(const PushTask& task) {
  MpcConfig cfg;
  cfg.goal = task.goal;
  return cfg;
}

// Moves the paddle so that it just presses into the back face of the block.
SceneStated paddle_touching(const PushTask& task, double penetration) {
  SceneStated x = task.x0;
  const SphereCloudd& cloud = task.scene.geometry.bodies[0].cloud;
  double back = 1e9;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    back = std::min(back, pose_apply(x.bodies[0].pose, cloud.centers[i]).x - cloud.radius(i));
  x.actuators[0].position.x = back - task.scene.geometry.actuators[0].radius + penetration;
  return x;
}

double max_abs_action(const Plan& p, std::size_t actuator = 0) {
  double m = 0.0;
  for (const auto& a : p.actions) {
    const Vec3d& v = a.actuator_velocity[actuator];
    m = std::max({m, std::abs(v.x), std::abs(v.y), std::abs(v.z)});
  }
  return m;
}

}  // namespace

TEST(Plan, GoalAtCurrentPoseStaysIdle) {
  const PushTask task = make_push_task(0);
  MpcConfig cfg = config_for(task);
  cfg.goal = task.x0.bodies[0].pose;
  const Plan p = plan(task.scene, task.params, task.x0, cfg);
  ASSERT_EQ(p.actions.size(), cfg.horizon);
  EXPECT_LE(max_abs_action(p), 1e-3);
  EXPECT_FALSE(p.nonfinite);
}

TEST(Plan, SingleStepCostGradientMatchesFiniteDifferences) {
  const PushTask task = make_push_task(3);
  MpcConfig cfg = config_for(task);
  cfg.horizon = 1;
  cfg.replan_stride = 1;
  const SceneStated x = paddle_touching(task, 5e-4);
  const std::vector<double> u = {0.4, -0.3};

  const std::vector<ActionInputd> acts = expand_actions(task.scene, cfg, u);
  const GradReport rep = rollout_grad(task.scene, pack_params(task.scene, task.params), x, acts, cfg.h,
                                      MpcObjective{&cfg}, {.action_gradients = true});
  const Vec3d& ga = rep.action_gradient[0][0];
  const double du[2] = {ga.x * cfg.action_bound * (1.0 - std::tanh(u[0]) * std::tanh(u[0])),
                        ga.y * cfg.action_bound * (1.0 - std::tanh(u[1]) * std::tanh(u[1]))};
  EXPECT_NEAR(rep.loss, plan_cost(task.scene, task.params, x, cfg, u), 1e-12 * std::max(1.0, std::abs(rep.loss)));

  const double eps = 1e-6;
  for (int i = 0; i < 2; ++i) {
    std::vector<double> up = u, um = u;
    up[i] += eps;
    um[i] -= eps;
    const double fd =
        (plan_cost(task.scene, task.params, x, cfg, up) - plan_cost(task.scene, task.params, x, cfg, um)) / (2 * eps);
    EXPECT_LE(rel_err(du[i], fd, 1e-9), 1e-3) << "component " << i << " analytic " << du[i] << " fd " << fd;
  }
  // The pushing direction must actually be coupled to the cost.
  EXPECT_GT(std::abs(du[0]), 1e-4);
}

TEST(Plan, ActionsAlwaysWithinBounds) {
  const PushTask task = make_push_task(1);
  MpcConfig cfg = config_for(task);
  cfg.action_bound = 0.05;
  cfg.learning_rate = 5.0;
  const Plan p = plan(task.scene, task.params, task.x0, cfg);
  EXPECT_LE(max_abs_action(p), cfg.action_bound);
  for (double v : p.u) EXPECT_LE(std::abs(v), kMaxControl);

  std::vector<double> wild(2 * cfg.horizon);
  for (std::size_t i = 0; i < wild.size(); ++i) wild[i] = (i % 2 ? -1.0 : 1.0) * 1e6;
  for (const auto& a : expand_actions(task.scene, cfg, wild)) {
    EXPECT_LE(std::abs(a.actuator_velocity[0].x), cfg.action_bound);
    EXPECT_LE(std::abs(a.actuator_velocity[0].y), cfg.action_bound);
    EXPECT_EQ(a.actuator_velocity[0].z, 0.0);
  }
}

TEST(Plan, ExpandHoldsActionOverSubsteps) {
  const PushTask task = make_push_task(0);
  MpcConfig cfg = config_for(task);
  cfg.horizon = 2;
  cfg.substeps = 3;
  const auto acts = expand_actions(task.scene, cfg, {0.1, 0.2, -0.3, 0.0});
  ASSERT_EQ(acts.size(), 6u);
  for (int s = 0; s < 3; ++s) {
    EXPECT_DOUBLE_EQ(acts[s].actuator_velocity[0].x, 0.2 * std::tanh(0.1));
    EXPECT_DOUBLE_EQ(acts[3 + s].actuator_velocity[0].x, 0.2 * std::tanh(-0.3));
    EXPECT_EQ(acts[3 + s].actuator_velocity[0].y, 0.0);
  }
}

TEST(Plan, NonFiniteCostRaisesWarning) {
  const PushTask task = make_push_task(0);
  MpcConfig cfg = config_for(task);
  cfg.fallback_population = 4;
  cfg.fallback_iterations = 1;
  SceneStated x = task.x0;
  x.bodies[0].twist.linear = {1e308, 1e308, 0.0};
  const Plan p = plan(task.scene, task.params, x, cfg);
  EXPECT_TRUE(p.nonfinite);
  ASSERT_EQ(p.actions.size(), cfg.horizon);
  for (const auto& a : p.actions) {
    EXPECT_TRUE(std::isfinite(a.actuator_velocity[0].x));
    EXPECT_LE(std::abs(a.actuator_velocity[0].x), cfg.action_bound);
  }
}

TEST(Plan, WarmStartLengthChecked) {
  const PushTask task = make_push_task(0);
  const MpcConfig cfg = config_for(task);
  EXPECT_THROW(plan(task.scene, task.params, task.x0, cfg, std::vector<double>(3, 0.0)), ValidationError);
}

TEST(ShiftPlan, AdvancesAndRepeatsLast) {
  const std::vector<double> u = {1, 2, 3, 4, 5, 6};
  EXPECT_EQ(shift_plan(u, 0), u);
  EXPECT_EQ(shift_plan(u, 1), (std::vector<double>{3, 4, 5, 6, 5, 6}));
  EXPECT_EQ(shift_plan(u, 7), (std::vector<double>{5, 6, 5, 6, 5, 6}));
  EXPECT_TRUE(shift_plan({}, 1).empty());
}

TEST(WarmStart, MedianImprovementNonNegative) {
  std::vector<double> improvement;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PushTask task = make_push_task(seed);
    const MpcConfig cfg = config_for(task);
    const Plan first = plan(task.scene, task.params, task.x0, cfg);
    const SceneStated x1 = step(task.scene, task.params, task.x0, first.actions[0], cfg.h).first;
    const Plan cold = plan(task.scene, task.params, x1, cfg);
    const Plan warm = plan(task.scene, task.params, x1, cfg, shift_plan(first.u, 1));
    improvement.push_back(cold.cost - warm.cost);
  }
  std::sort(improvement.begin(), improvement.end());
  const double median = 0.5 * (improvement[9] + improvement[10]);
  EXPECT_GE(median, 0.0);
}

TEST(MpcConfig, Validation) {
  const PushTask task = make_push_task(0);
  const MpcConfig good = config_for(task);
  EXPECT_NO_THROW(good.validate(task.scene));
  auto expect_bad = [&](auto mutate) {
    MpcConfig c = good;
    mutate(c);
    EXPECT_THROW(c.validate(task.scene), ValidationError);
    EXPECT_THROW(run_mpc(task.scene, task.params, task.x0, c, 1), ValidationError);
  };
  expect_bad([](MpcConfig& c) { c.horizon = 0; });
  expect_bad([](MpcConfig& c) { c.action_bound = std::numeric_limits<double>::infinity(); });
  expect_bad([](MpcConfig& c) { c.action_bound = 0.0; });
  expect_bad([](MpcConfig& c) { c.replan_stride = c.horizon + 1; });
  expect_bad([](MpcConfig& c) { c.replan_stride = 0; });
  expect_bad([](MpcConfig& c) { c.w_act = -1.0; });
  expect_bad([](MpcConfig& c) { c.learning_rate = 0.0; });
  expect_bad([](MpcConfig& c) { c.body = 1; });
  expect_bad([](MpcConfig& c) { c.actuator = 2; });
  expect_bad([](MpcConfig& c) { c.substeps = 0; });
  expect_bad([](MpcConfig& c) { c.fallback_population = 1; });
}

TEST(RunMpc, ZeroStepsGivesEmptyTail) {
  const PushTask task = make_push_task(0);
  const MpcRun run = run_mpc(task.scene, task.params, task.x0, config_for(task), 0);
  ASSERT_EQ(run.trajectory.states.size(), 1u);
  EXPECT_TRUE(run.trajectory.actions.empty());
  EXPECT_TRUE(run.costs.empty());
  EXPECT_TRUE(run.plan_costs.empty());
}

TEST(RunMpc, Deterministic) {
  const PushTask task = make_push_task(5);
  MpcConfig cfg = config_for(task);
  cfg.replan_stride = 2;
  const MpcRun a = run_mpc(task.scene, task.params, task.x0, cfg, 15);
  const MpcRun b = run_mpc(task.scene, task.params, task.x0, cfg, 15);
  ASSERT_EQ(a.trajectory.states.size(), 16u);
  ASSERT_EQ(a.costs.size(), 15u);
  EXPECT_EQ(a.plan_costs.size(), 8u);
  for (std::size_t t = 0; t < a.trajectory.states.size(); ++t) {
    const auto& pa = a.trajectory.states[t].bodies[0].pose;
    const auto& pb = b.trajectory.states[t].bodies[0].pose;
    EXPECT_EQ(pa.position.x, pb.position.x);
    EXPECT_EQ(pa.position.y, pb.position.y);
    EXPECT_EQ(pa.orientation.w, pb.orientation.w);
    EXPECT_EQ(a.trajectory.states[t].actuators[0].position.x, b.trajectory.states[t].actuators[0].position.x);
  }
  EXPECT_EQ(a.costs, b.costs);
}

TEST(RunMpc, PushReachesGoal) {
  const PushTask task = make_push_task(0);
  const MpcConfig cfg = config_for(task);
  const MpcRun run = run_mpc(task.scene, task.params, task.x0, cfg, 100);
  ASSERT_EQ(run.trajectory.states.size(), 101u);
  const Vec3d err = run.trajectory.states.back().bodies[0].pose.position - task.goal.position;
  EXPECT_LE(norm(err), 0.02);
  EXPECT_LE(run.costs.back(), 0.2 * run.initial_cost);
  EXPECT_FALSE(run.warnings);
  // The block really moved; a stationary block would leave the full 0.1 m.
  const Vec3d moved = run.trajectory.states.back().bodies[0].pose.position - task.x0.bodies[0].pose.position;
  EXPECT_GT(moved.x, 0.05);
}

TEST(PushTask, SeedJitterWithinDocumentedRange) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PushTask task = make_push_task(seed);
    EXPECT_NEAR(task.goal.position.x - task.x0.bodies[0].pose.position.x, 0.1, 1e-15);
    EXPECT_LE(std::abs(task.x0.actuators[0].position.y), 0.005 + 1e-12);
    const Quatd& q = task.x0.bodies[0].pose.orientation;
    const double yaw = 2.0 * std::atan2(q.z, q.w);
    EXPECT_LE(std::abs(yaw), 5.0 * std::numbers::pi / 180.0 + 1e-3);
  }
}
