#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dyndiff/lti.hpp"
#include "dyndiff/rng.hpp"

namespace dyndiff {

// Quadratic target-tracking task: stage costs
// ||x(t)-x_target||_Q^2 + ||u(t)||_R^2 for t = 0..T-1, no terminal cost.
struct LqrTask {
  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;
  Eigen::VectorXd x_target;
  Eigen::VectorXd x_init;
  int T = 0;
};

// Time-varying affine policy u(t) = K(t) x(t) + c(t).
struct AffinePolicy {
  std::vector<Eigen::MatrixXd> gains;    // T entries, m x n
  std::vector<Eigen::VectorXd> offsets;  // T entries, m

  int horizon() const { return static_cast<int>(gains.size()); }
};

// Waypoint tracking with circular obstacles; positions are the first two
// state coordinates. x_target acts as an extra waypoint at time T.
struct WaypointTask {
  Eigen::MatrixXd waypoints;  // V x 2
  std::vector<int> times;     // V, strictly increasing in (0, T]
  Eigen::MatrixXd obstacles;  // O x 2
  Eigen::VectorXd radii;      // O, nonnegative
  Eigen::VectorXd x_init;
  Eigen::VectorXd x_target;
  int T = 0;
};

struct Dataset {
  Eigen::MatrixXd trajectories;  // N x D, flattened, physical units
  Eigen::MatrixXd conditions;    // N x cond_dim
  Eigen::VectorXd scales;        // D, per-coordinate std floored at 1e-6
  std::string task_family;       // "lqr" or "waypoint"
  int n = 0, m = 0, T = 0;
  std::uint64_t seed = 0;
  double noise_std = 0.0;

  int N() const { return static_cast<int>(trajectories.rows()); }
  int cond_dim() const { return static_cast<int>(conditions.cols()); }
};

// Backward Riccati recursion with affine term for the tracking cost.
AffinePolicy lqr_policy(const LtiSystem& sys, const LqrTask& task);

// Closed-loop rollout of an affine policy under a given noise realization.
Trajectory rollout_policy(const LtiSystem& sys, const AffinePolicy& policy,
                          const Eigen::VectorXd& x_init,
                          const Eigen::MatrixXd& noise);

// Waypoint objective:
//   sum_i ||pos(x(t_i)) - v_i||^2 + sum_t (||u(t)||_R^2
//     + sum_j max(0, r_j - ||pos(x(t)) - o_j||)^2),
// with x_target's position as an extra waypoint at time T. The obstacle term
// is a hinge collision penalty, active only inside the disc. Lower is better.
double waypoint_objective(const Trajectory& traj, const WaypointTask& task,
                          const Eigen::MatrixXd& R_weight);

struct WaypointSolverConfig {
  int restarts = 5;
  int max_iters = 150;
  double max_step = 0.25;     // per-iteration cap on ||du||, the objective is
                              // indefinite so unbounded steps can run away
  double grad_tol = 1e-8;
  double init_noise = 0.5;    // std of the random-restart perturbations
  std::uint64_t seed = 0;
};

struct WaypointSolution {
  Trajectory trajectory;
  double objective = 0.0;
  double initial_objective = 0.0;  // objective of the best restart's init
};

// Multi-start gradient descent over u(0:T-1) with analytic adjoint
// gradients; the first restart starts from a least-squares fit to the
// straight-line waypoint interpolation, the rest from perturbations of it.
WaypointSolution solve_waypoint(const LtiSystem& sys, const WaypointTask& task,
                                const Eigen::MatrixXd& R_weight,
                                const WaypointSolverConfig& cfg);

struct LqrDatasetConfig {
  int N = 0;
  int T = 30;
  double init_halfwidth = 1.0;    // x_init ~ U[-a, a]^n
  double target_halfwidth = 4.0;  // x_target ~ U[-b, b]^n
  Eigen::MatrixXd Q;
  Eigen::MatrixXd R;
  std::uint64_t seed = 0;
};

// Condition layout: [x_init (n) | x_target (n)].
Eigen::VectorXd encode_lqr_condition(const Eigen::VectorXd& x_init,
                                     const Eigen::VectorXd& x_target);

Dataset generate_lqr_dataset(const LtiSystem& sys, const LqrDatasetConfig& cfg);

struct WaypointDatasetConfig {
  int N = 0;
  int T = 40;
  int waypoints_min = 1, waypoints_max = 3;
  int obstacles_min = 1, obstacles_max = 3;
  int V_max = 4, O_max = 4;
  std::vector<int> fixed_times;  // when nonempty, every instance uses these
                                 // waypoint times (and V = fixed_times.size())
  double init_halfwidth = 1.0;
  double target_halfwidth = 4.0;
  double waypoint_halfwidth = 4.0;
  double obstacle_halfwidth = 4.0;
  double radius_min = 0.3, radius_max = 1.0;
  Eigen::MatrixXd R_weight;
  WaypointSolverConfig solver;
  std::uint64_t seed = 0;
};

// Condition layout:
// [x_init (n) | x_target (n) | (vx, vy, t/T, flag) x V_max |
//  (ox, oy, r, flag) x O_max].
Eigen::VectorXd encode_waypoint_condition(const WaypointTask& task, int V_max,
                                          int O_max);
WaypointTask decode_waypoint_condition(const Eigen::VectorXd& cond, int n,
                                       int T, int V_max, int O_max);

int waypoint_cond_dim(int n, int V_max, int O_max);

// Sample a random task instance; exposed so test sets reuse the same law.
WaypointTask sample_waypoint_task(const WaypointDatasetConfig& cfg, int n, Rng& rng);

Dataset generate_waypoint_dataset(const LtiSystem& sys,
                                  const WaypointDatasetConfig& cfg);

// Per-coordinate std of the rows, floored at 1e-6.
Eigen::VectorXd normalization_scales(const Eigen::MatrixXd& rows);

}  // namespace dyndiff
