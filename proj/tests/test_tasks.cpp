#include <doctest.h>

#include <cmath>

#include "dyndiff/rng.hpp"
#include "dyndiff/tasks.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dyndiff;

namespace {

LqrTask default_task(const LtiSystem& sys, int T) {
  LqrTask task;
  task.Q = Eigen::Vector4d(10, 10, 1, 1).asDiagonal();
  task.R = Eigen::MatrixXd::Identity(sys.m(), sys.m());
  task.x_target = Eigen::Vector4d(2.0, -1.0, 0.0, 0.0);
  task.x_init = Eigen::Vector4d(0.5, 0.3, -0.2, 0.1);
  task.T = T;
  return task;
}

}  // namespace

TEST_CASE("lqr_policy matches the dense-QP oracle on a scalar system") {
  Eigen::MatrixXd A(1, 1), B(1, 1);
  A << 1.2;
  B << 0.7;
  const LtiSystem sys(A, B, 0.0);
  LqrTask task;
  task.Q = Eigen::MatrixXd::Constant(1, 1, 2.0);
  task.R = Eigen::MatrixXd::Constant(1, 1, 0.5);
  task.x_target = Eigen::VectorXd::Constant(1, 1.3);
  task.x_init = Eigen::VectorXd::Constant(1, -0.4);
  task.T = 4;

  const AffinePolicy riccati = lqr_policy(sys, task);
  const AffinePolicy brute = testutil::brute_force_lqr_policy(sys, task);
  for (int t = 0; t < task.T; ++t) {
    CHECK((riccati.gains[t] - brute.gains[t]).norm() < 1e-8);
    CHECK((riccati.offsets[t] - brute.offsets[t]).norm() < 1e-8);
  }
}

TEST_CASE("lqr_policy matches the dense-QP oracle on the planar system") {
  const LtiSystem sys = testutil::double_integrator();
  const LqrTask task = default_task(sys, 5);
  const AffinePolicy riccati = lqr_policy(sys, task);
  const AffinePolicy brute = testutil::brute_force_lqr_policy(sys, task);
  for (int t = 0; t < task.T; ++t) {
    CHECK((riccati.gains[t] - brute.gains[t]).norm() < 1e-8);
    CHECK((riccati.offsets[t] - brute.offsets[t]).norm() < 1e-8);
  }
}

TEST_CASE("terminal step has zero gain and offset (no terminal cost)") {
  const LtiSystem sys = testutil::double_integrator();
  const LqrTask task = default_task(sys, 8);
  const AffinePolicy policy = lqr_policy(sys, task);
  CHECK(policy.gains[7].norm() == 0.0);
  CHECK(policy.offsets[7].norm() == 0.0);
}

TEST_CASE("Riccati gain converges to the stationary gain over a long horizon") {
  const LtiSystem sys = testutil::double_integrator();
  const LqrTask task = default_task(sys, 500);
  const AffinePolicy policy = lqr_policy(sys, task);
  CHECK((policy.gains[0] - policy.gains[1]).norm() <= 1e-8);
}

TEST_CASE("local optimality: single-entry gain perturbations never lower the cost") {
  const LtiSystem sys = testutil::double_integrator();
  const LqrTask task = default_task(sys, 10);
  const AffinePolicy policy = lqr_policy(sys, task);
  const double optimal = testutil::lqr_rollout_cost(sys, task, policy);

  Rng rng(21);
  for (int probe = 0; probe < 10; ++probe) {
    AffinePolicy perturbed = policy;
    const int t = static_cast<int>(rng.uniform_int(0, task.T - 1));
    const int r = static_cast<int>(rng.uniform_int(0, sys.m() - 1));
    const int c = static_cast<int>(rng.uniform_int(0, sys.n() - 1));
    perturbed.gains[t](r, c) += rng.uniform() < 0.5 ? 1e-3 : -1e-3;
    CHECK(testutil::lqr_rollout_cost(sys, task, perturbed) >= optimal - 1e-12);
  }
}

TEST_CASE("lqr_policy rejects invalid inputs") {
  const LtiSystem sys = testutil::double_integrator();
  LqrTask task = default_task(sys, 5);
  task.R = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(lqr_policy(sys, task), std::invalid_argument);
  task = default_task(sys, 5);
  task.Q = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(lqr_policy(sys, task), std::invalid_argument);
}

TEST_CASE("rollout_policy: zero gains reduce to the open loop") {
  const LtiSystem sys = testutil::double_integrator();
  const int T = 6;
  AffinePolicy policy;
  for (int t = 0; t < T; ++t) {
    policy.gains.push_back(Eigen::MatrixXd::Zero(2, 4));
    policy.offsets.push_back(Eigen::Vector2d(0.3, -0.1));
  }
  const Eigen::Vector4d x0(1, 2, 0, 0);
  const Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(T, 4);
  const Trajectory closed = rollout_policy(sys, policy, x0, noise);

  Eigen::MatrixXd controls(T, 2);
  controls.rowwise() = Eigen::RowVector2d(0.3, -0.1);
  const Trajectory open = simulate(sys, x0, controls, noise);
  CHECK((closed.states - open.states).norm() < 1e-14);
  CHECK((closed.controls - open.controls).norm() < 1e-14);
}

TEST_CASE("waypoint_objective: hand-computed small example") {
  const LtiSystem sys = testutil::double_integrator();
  const int T = 3;
  WaypointTask task;
  task.T = T;
  task.x_init = Eigen::Vector4d::Zero();
  task.x_target = Eigen::Vector4d(1.0, 1.0, 0, 0);
  task.waypoints.resize(1, 2);
  task.waypoints << 0.5, 0.0;
  task.times = {2};
  task.obstacles.resize(1, 2);
  task.obstacles << 0.0, 0.1;
  task.radii = Eigen::VectorXd::Constant(1, 0.25);

  Trajectory traj;
  traj.states.resize(T + 1, 4);
  traj.states << 0, 0, 0, 0,
                 0.1, 0, 1, 0,
                 0.3, 0.1, 1, 1,
                 0.6, 0.4, 1, 1;
  traj.controls = Eigen::MatrixXd::Ones(T, 2) * 0.2;
  const Eigen::MatrixXd R = 2.0 * Eigen::MatrixXd::Identity(2, 2);

  double expected = 0.0;
  expected += std::pow(0.3 - 0.5, 2) + std::pow(0.1 - 0.0, 2);  // waypoint at t=2
  expected += std::pow(0.6 - 1.0, 2) + std::pow(0.4 - 1.0, 2);  // target at T
  for (int t = 0; t < T; ++t) expected += 2.0 * (0.04 + 0.04);  // u'Ru
  // Obstacle hinge: positions at t=0 (d=0.1) and t=1 (d=sqrt(0.02)) lie inside
  // the radius-0.25 disc; the position at t=2 (d=0.3) is outside and free.
  const double d0 = std::hypot(0.0 - 0.0, 0.0 - 0.1);
  const double d1 = std::hypot(0.1 - 0.0, 0.0 - 0.1);
  expected += std::pow(0.25 - d0, 2) + std::pow(0.25 - d1, 2);

  CHECK(waypoint_objective(traj, task, R) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("solve_waypoint approaches the waypoints on an obstacle-free instance") {
  const LtiSystem sys = testutil::double_integrator();
  WaypointTask task;
  task.T = 20;
  task.x_init = Eigen::Vector4d::Zero();
  task.x_target = Eigen::Vector4d(2.0, 0.0, 0, 0);
  task.waypoints.resize(1, 2);
  task.waypoints << 1.0, 1.0;
  task.times = {10};
  task.obstacles.resize(0, 2);
  task.radii.resize(0);

  const Eigen::MatrixXd R = 0.001 * Eigen::MatrixXd::Identity(2, 2);
  WaypointSolverConfig cfg;
  cfg.seed = 7;
  const WaypointSolution sol = solve_waypoint(sys, task, R, cfg);

  CHECK(sol.objective <= sol.initial_objective + 1e-12);
  const Eigen::Vector2d p10 = sol.trajectory.states.row(10).head(2).transpose();
  const Eigen::Vector2d pT = sol.trajectory.states.row(20).head(2).transpose();
  CHECK((p10 - Eigen::Vector2d(1.0, 1.0)).norm() < 0.15);
  CHECK((pT - Eigen::Vector2d(2.0, 0.0)).norm() < 0.15);
  CHECK(waypoint_objective(sol.trajectory, task, R) ==
        doctest::Approx(sol.objective).epsilon(1e-10));
}

TEST_CASE("solve_waypoint requires a noiseless system") {
  const LtiSystem sys = testutil::double_integrator(1.0);
  WaypointTask task;
  task.T = 5;
  task.x_init = Eigen::Vector4d::Zero();
  task.x_target = Eigen::Vector4d::Zero();
  task.waypoints.resize(0, 2);
  task.obstacles.resize(0, 2);
  task.radii.resize(0);
  CHECK_THROWS_AS(
      solve_waypoint(sys, task, Eigen::MatrixXd::Identity(2, 2), {}),
      std::invalid_argument);
}

TEST_CASE("waypoint condition codec round trip") {
  const int n = 4, T = 40, V_max = 4, O_max = 4;
  WaypointTask task;
  task.T = T;
  task.x_init = Eigen::Vector4d(0.1, -0.2, 0.3, 0.4);
  task.x_target = Eigen::Vector4d(1.0, 2.0, -0.5, 0.25);
  task.waypoints.resize(2, 2);
  task.waypoints << 1.5, -2.5, 3.0, 0.5;
  task.times = {5, 33};
  task.obstacles.resize(3, 2);
  task.obstacles << 1, 1, -2, 0.5, 0, -3;
  task.radii.resize(3);
  task.radii << 0.4, 0.9, 0.6;

  const Eigen::VectorXd cond = encode_waypoint_condition(task, V_max, O_max);
  CHECK(cond.size() == waypoint_cond_dim(n, V_max, O_max));
  const WaypointTask back = decode_waypoint_condition(cond, n, T, V_max, O_max);
  CHECK((back.x_init - task.x_init).norm() == 0.0);
  CHECK((back.x_target - task.x_target).norm() == 0.0);
  CHECK((back.waypoints - task.waypoints).norm() == 0.0);
  CHECK(back.times == task.times);
  CHECK((back.obstacles - task.obstacles).norm() == 0.0);
  CHECK((back.radii - task.radii).norm() == 0.0);
}

TEST_CASE("zero obstacles leave all obstacle present-flags at 0") {
  WaypointTask task;
  task.T = 10;
  task.x_init = Eigen::Vector4d::Zero();
  task.x_target = Eigen::Vector4d::Ones();
  task.waypoints.resize(1, 2);
  task.waypoints << 1.0, 1.0;
  task.times = {5};
  task.obstacles.resize(0, 2);
  task.radii.resize(0);
  const Eigen::VectorXd cond = encode_waypoint_condition(task, 4, 4);
  for (int j = 0; j < 4; ++j) CHECK(cond[8 + 16 + 4 * j + 3] == 0.0);
}

TEST_CASE("generate_lqr_dataset: per-record oracle and determinism") {
  const LtiSystem sys = testutil::double_integrator(1.0);
  LqrDatasetConfig cfg;
  cfg.N = 8;
  cfg.T = 10;
  cfg.Q = Eigen::Vector4d(10, 10, 1, 1).asDiagonal();
  cfg.R = Eigen::MatrixXd::Identity(2, 2);
  cfg.seed = 99;

  const Dataset ds = generate_lqr_dataset(sys, cfg);
  CHECK(ds.N() == 8);
  CHECK(ds.trajectories.cols() == flat_dim(4, 2, 10));
  CHECK(ds.cond_dim() == 8);
  CHECK((ds.scales.array() > 0.0).all());

  // Record 3 re-derived independently from its forked stream.
  const int idx = 3;
  Rng rng = Rng::fork(cfg.seed, idx);
  const Eigen::VectorXd x_init = rng.uniform_vector(4, -1.0, 1.0);
  const Eigen::VectorXd x_target = rng.uniform_vector(4, -4.0, 4.0);
  const Eigen::MatrixXd noise = rng.normal_matrix(10, 4);
  LqrTask task{cfg.Q, cfg.R, x_target, x_init, cfg.T};
  const Trajectory traj = rollout_policy(sys, lqr_policy(sys, task), x_init, noise);
  CHECK((ds.trajectories.row(idx).transpose() - flatten(traj)).norm() == 0.0);
  CHECK((ds.conditions.row(idx).transpose() -
         encode_lqr_condition(x_init, x_target))
            .norm() == 0.0);

  const Dataset again = generate_lqr_dataset(sys, cfg);
  CHECK((again.trajectories - ds.trajectories).norm() == 0.0);
  CHECK((again.conditions - ds.conditions).norm() == 0.0);

  cfg.seed = 100;
  const Dataset other = generate_lqr_dataset(sys, cfg);
  CHECK((other.trajectories - ds.trajectories).norm() > 0.0);
}

TEST_CASE("generate_waypoint_dataset: small run with fixed times") {
  const LtiSystem sys = testutil::double_integrator();
  WaypointDatasetConfig cfg;
  cfg.N = 3;
  cfg.T = 16;
  cfg.fixed_times = {4, 12};
  cfg.R_weight = 0.01 * Eigen::MatrixXd::Identity(2, 2);
  cfg.solver.restarts = 2;
  cfg.solver.max_iters = 60;
  cfg.seed = 5;

  const Dataset ds = generate_waypoint_dataset(sys, cfg);
  CHECK(ds.N() == 3);
  CHECK(ds.task_family == "waypoint");
  CHECK(ds.cond_dim() == waypoint_cond_dim(4, 4, 4));
  CHECK((ds.scales.array() > 0.0).all());
  CHECK(ds.trajectories.allFinite());

  // Fixed times are encoded for every record.
  for (int i = 0; i < ds.N(); ++i) {
    const WaypointTask task =
        decode_waypoint_condition(ds.conditions.row(i).transpose(), 4, 16, 4, 4);
    CHECK(task.times == std::vector<int>{4, 12});
  }

  const Dataset again = generate_waypoint_dataset(sys, cfg);
  CHECK((again.trajectories - ds.trajectories).norm() == 0.0);
}

TEST_CASE("normalization_scales: hand-computed and floored") {
  Eigen::MatrixXd rows(4, 2);
  rows << 1, 5,
          2, 5,
          3, 5,
          4, 5;
  const Eigen::VectorXd scales = normalization_scales(rows);
  CHECK(scales[0] == doctest::Approx(std::sqrt(1.25)).epsilon(1e-12));
  CHECK(scales[1] == 1e-6);  // constant column hits the floor
}
