#include <doctest.h>

#include <Eigen/Dense>

#include "dyndiff/lti.hpp"
#include "dyndiff/rng.hpp"
#include "test_util.hpp"

using namespace dyndiff;

TEST_CASE("simulate: scalar integrator accumulates inputs") {
  LtiSystem sys(Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1), 0.0);
  Eigen::MatrixXd controls(2, 1);
  controls << 1, 1;
  const Trajectory traj = simulate(sys, Eigen::VectorXd::Zero(1), controls,
                                   Eigen::MatrixXd::Zero(2, 1));
  CHECK(traj.states(0, 0) == 0.0);
  CHECK(traj.states(1, 0) == 1.0);
  CHECK(traj.states(2, 0) == 2.0);
}

TEST_CASE("simulate: double integrator holds position at zero velocity") {
  const LtiSystem sys = testutil::double_integrator();
  Eigen::VectorXd x0(4);
  x0 << 1, 1, 0, 0;
  const Trajectory traj = simulate(sys, x0, Eigen::MatrixXd::Zero(10, 2),
                                   Eigen::MatrixXd::Zero(10, 4));
  for (int t = 0; t <= 10; ++t) {
    CHECK(traj.states(t, 0) == doctest::Approx(1.0));
    CHECK(traj.states(t, 1) == doctest::Approx(1.0));
  }
}

TEST_CASE("simulate: random system matches naive step-by-step recomputation") {
  Rng rng(7);
  const Eigen::MatrixXd A = rng.normal_matrix(3, 3);
  const Eigen::MatrixXd B = rng.normal_matrix(3, 2);
  const LtiSystem sys(A, B, 1.0);
  const Eigen::VectorXd x0 = rng.normal_vector(3);
  const Eigen::MatrixXd controls = rng.normal_matrix(8, 2);
  const Eigen::MatrixXd noise = rng.normal_matrix(8, 3);

  const Trajectory traj = simulate(sys, x0, controls, noise);

  Eigen::VectorXd x = x0;
  for (int t = 0; t < 8; ++t) {
    x = A * x + B * controls.row(t).transpose() + noise.row(t).transpose();
    CHECK((traj.states.row(t + 1).transpose() - x).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("simulate: dimension mismatch is rejected") {
  const LtiSystem sys = testutil::double_integrator();
  CHECK_THROWS_AS(simulate(sys, Eigen::VectorXd::Zero(3),
                           Eigen::MatrixXd::Zero(5, 2), Eigen::MatrixXd::Zero(5, 4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(simulate(sys, Eigen::VectorXd::Zero(4),
                           Eigen::MatrixXd::Zero(5, 3), Eigen::MatrixXd::Zero(5, 4)),
                  std::invalid_argument);
}

TEST_CASE("LtiSystem validates its shape invariants") {
  CHECK_THROWS_AS(LtiSystem(Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(2, 1), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(LtiSystem(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(3, 1), 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(LtiSystem(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 1), -1.0),
                  std::invalid_argument);
}

TEST_CASE("response_matrices: scalar integrator, T=1, hand expansion") {
  LtiSystem sys(Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1), 0.0);
  const TrajectoryMap map = response_matrices(sys, 1);
  Eigen::MatrixXd expected(3, 2);
  expected << 1, 0,
              1, 1,
              0, 1;
  CHECK((map.F - expected).norm() == doctest::Approx(0.0));
  CHECK_THROWS_AS(response_matrices(sys, 0), std::invalid_argument);
}

TEST_CASE("response_matrices: shapes for the T=30 double integrator") {
  const LtiSystem sys = testutil::double_integrator();
  const TrajectoryMap map = response_matrices(sys, 30);
  CHECK(map.F.rows() == 184);
  CHECK(map.F.cols() == 64);
  CHECK(map.Fw.rows() == 184);
  CHECK(map.Fw.cols() == 120);
}

TEST_CASE("response_matrices: columns are unit-impulse simulations") {
  Rng rng(11);
  const Eigen::MatrixXd A = 0.5 * rng.normal_matrix(3, 3);
  const Eigen::MatrixXd B = rng.normal_matrix(3, 2);
  const LtiSystem sys(A, B, 0.0);
  const int T = 6;
  const TrajectoryMap map = response_matrices(sys, T);

  for (int j = 0; j < map.F.cols(); ++j) {
    Eigen::VectorXd input = Eigen::VectorXd::Zero(3 + T * 2);
    input[j] = 1.0;
    Eigen::MatrixXd controls(T, 2);
    for (int t = 0; t < T; ++t) controls.row(t) = input.segment(3 + t * 2, 2).transpose();
    const Trajectory traj =
        simulate(sys, input.head(3), controls, Eigen::MatrixXd::Zero(T, 3));
    CHECK((map.F.col(j) - flatten(traj)).norm() < 1e-12);
  }
}

TEST_CASE("flatten/unflatten: tiny example and round trip") {
  Trajectory traj;
  traj.states.resize(2, 1);
  traj.states << 2, 3;
  traj.controls.resize(1, 1);
  traj.controls << 5;
  const Eigen::VectorXd v = flatten(traj);
  CHECK(v[0] == 2.0);
  CHECK(v[1] == 3.0);
  CHECK(v[2] == 5.0);

  Rng rng(3);
  Trajectory random;
  random.states = rng.normal_matrix(8, 4);
  random.controls = rng.normal_matrix(7, 2);
  const Trajectory back = unflatten(flatten(random), 4, 2, 7);
  CHECK((back.states - random.states).norm() == 0.0);
  CHECK((back.controls - random.controls).norm() == 0.0);

  CHECK_THROWS_AS(unflatten(Eigen::VectorXd::Zero(10), 4, 2, 7), std::invalid_argument);
}

TEST_CASE("trajectory map reproduces simulations exactly") {
  Rng rng(13);
  const LtiSystem sys = testutil::double_integrator(1.0);
  const int T = 12;
  const TrajectoryMap map = response_matrices(sys, T);

  const Eigen::VectorXd x0 = rng.normal_vector(4);
  const Eigen::MatrixXd controls = rng.normal_matrix(T, 2);
  const Eigen::MatrixXd noise = rng.normal_matrix(T, 4);

  // Noiseless: flatten(tau) = F [x0; u].
  const Trajectory clean = simulate(sys, x0, controls, Eigen::MatrixXd::Zero(T, 4));
  Eigen::VectorXd input(4 + T * 2);
  input.head(4) = x0;
  for (int t = 0; t < T; ++t) input.segment(4 + t * 2, 2) = controls.row(t).transpose();
  CHECK((flatten(clean) - map.F * input).norm() / flatten(clean).norm() < 1e-10);

  // Noisy: flatten(tau) = F [x0; u] + Fw w.
  const Trajectory noisy = simulate(sys, x0, controls, noise);
  Eigen::VectorXd w(T * 4);
  for (int t = 0; t < T; ++t) w.segment(t * 4, 4) = noise.row(t).transpose();
  CHECK((flatten(noisy) - map.F * input - map.Fw * w).norm() < 1e-10);
}

TEST_CASE("F has full column rank") {
  Rng rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::MatrixXd A = rng.normal_matrix(3, 3);
    const Eigen::MatrixXd B = rng.normal_matrix(3, 2);
    const LtiSystem sys(A, B, 0.0);
    const TrajectoryMap map = response_matrices(sys, 5);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(map.F);
    CHECK(qr.rank() == map.F.cols());
  }
}
