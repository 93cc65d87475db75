#include "dyndiff/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dyndiff {

namespace {

Eigen::Vector2d position_of(const Eigen::MatrixXd& states, int t) {
  return states.row(t).head(2).transpose();
}

// Objective and analytic gradient w.r.t. the stacked input sequence, states
// eliminated through a noiseless rollout (adjoint recursion).
struct ObjectiveEval {
  double value = 0.0;
  Eigen::MatrixXd grad;  // T x m
};

ObjectiveEval waypoint_objective_grad(const LtiSystem& sys,
                                      const WaypointTask& task,
                                      const Eigen::MatrixXd& R_weight,
                                      const Eigen::MatrixXd& controls) {
  const int n = sys.n();
  const int T = task.T;
  const Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(T, n);
  const Trajectory traj = simulate(sys, task.x_init, controls, noise);

  // Per-time gradient of the objective w.r.t. the state.
  Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(T + 1, n);
  double value = 0.0;

  auto add_waypoint = [&](int t, const Eigen::Vector2d& v) {
    const Eigen::Vector2d diff = position_of(traj.states, t) - v;
    value += diff.squaredNorm();
    gx.row(t).head(2) += 2.0 * diff.transpose();
  };
  for (int i = 0; i < task.waypoints.rows(); ++i)
    add_waypoint(task.times[static_cast<size_t>(i)], task.waypoints.row(i).transpose());
  add_waypoint(T, task.x_target.head(2));

  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd u = controls.row(t).transpose();
    value += u.dot(R_weight * u);
    const Eigen::Vector2d p = position_of(traj.states, t);
    for (int j = 0; j < task.obstacles.rows(); ++j) {
      const Eigen::Vector2d diff = p - task.obstacles.row(j).transpose();
      const double dist = diff.norm();
      const double intrusion = task.radii[j] - dist;
      if (intrusion <= 0.0) continue;  // outside the disc: penalty inactive
      value += intrusion * intrusion;
      if (dist > 1e-12)
        gx.row(t).head(2) -= (2.0 * intrusion / dist) * diff.transpose();
    }
  }

  ObjectiveEval eval;
  eval.value = value;
  eval.grad.resize(T, sys.m());
  Eigen::VectorXd lambda = gx.row(T).transpose();
  for (int t = T - 1; t >= 0; --t) {
    eval.grad.row(t) =
        (2.0 * R_weight * controls.row(t).transpose() + sys.B.transpose() * lambda)
            .transpose();
    lambda = gx.row(t).transpose() + sys.A.transpose() * lambda;
  }
  return eval;
}

// Least-squares input fit to the piecewise-linear position path through the
// waypoints (the straight-line initialization).
Eigen::MatrixXd straight_line_init(const LtiSystem& sys, const WaypointTask& task) {
  const int n = sys.n();
  const int m = sys.m();
  const int T = task.T;
  const TrajectoryMap map = response_matrices(sys, T);

  // Knots (time, position), endpoints included.
  std::vector<std::pair<int, Eigen::Vector2d>> knots;
  knots.emplace_back(0, task.x_init.head(2));
  for (int i = 0; i < task.waypoints.rows(); ++i)
    knots.emplace_back(task.times[static_cast<size_t>(i)],
                       task.waypoints.row(i).transpose());
  knots.emplace_back(T, task.x_target.head(2));
  std::sort(knots.begin(), knots.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  Eigen::MatrixXd ref(T + 1, 2);
  for (int t = 0; t <= T; ++t) {
    size_t k = 0;
    while (k + 1 < knots.size() && knots[k + 1].first < t) ++k;
    const auto& lo = knots[k];
    const auto& hi = knots[std::min(k + 1, knots.size() - 1)];
    if (hi.first == lo.first) {
      ref.row(t) = hi.second.transpose();
    } else {
      const double w = double(t - lo.first) / double(hi.first - lo.first);
      ref.row(t) = ((1.0 - w) * lo.second + w * hi.second).transpose();
    }
  }

  // Position rows of the trajectory map.
  Eigen::MatrixXd Cpos(2 * (T + 1), T * m);
  Eigen::VectorXd free_pos(2 * (T + 1));
  for (int t = 0; t <= T; ++t) {
    Cpos.middleRows(2 * t, 2) = map.forced_response.middleRows(t * n, 2);
    free_pos.segment(2 * t, 2) =
        map.free_response.middleRows(t * n, 2) * task.x_init;
  }
  Eigen::VectorXd target(2 * (T + 1));
  for (int t = 0; t <= T; ++t) target.segment(2 * t, 2) = ref.row(t).transpose();

  const double ridge = 1e-3;
  const Eigen::MatrixXd G =
      Cpos.transpose() * Cpos +
      ridge * Eigen::MatrixXd::Identity(T * m, T * m);
  const Eigen::VectorXd u_flat =
      G.ldlt().solve(Cpos.transpose() * (target - free_pos));

  Eigen::MatrixXd controls(T, m);
  for (int t = 0; t < T; ++t)
    controls.row(t) = u_flat.segment(t * m, m).transpose();
  return controls;
}

// Exact minimizer of the quadratic part of the waypoint objective
// (waypoint/target position terms + control effort, obstacles ignored).
// The objective is quadratic in the open-loop inputs, so this is a single
// normal-equations solve and the descent loop only has to trade off the
// obstacle terms against it.
Eigen::MatrixXd quadratic_init(const LtiSystem& sys, const WaypointTask& task,
                               const Eigen::MatrixXd& R_weight) {
  const int n = sys.n();
  const int m = sys.m();
  const int T = task.T;
  const TrajectoryMap map = response_matrices(sys, T);

  const int V = static_cast<int>(task.waypoints.rows());
  Eigen::MatrixXd C(2 * (V + 1), T * m);
  Eigen::VectorXd rhs(2 * (V + 1));
  auto add_hit = [&](int row, int t, const Eigen::Vector2d& target) {
    C.middleRows(2 * row, 2) = map.forced_response.middleRows(t * n, 2);
    rhs.segment(2 * row, 2) =
        target - map.free_response.middleRows(t * n, 2) * task.x_init;
  };
  for (int i = 0; i < V; ++i)
    add_hit(i, task.times[static_cast<size_t>(i)],
            task.waypoints.row(i).transpose());
  add_hit(V, T, Eigen::Vector2d(task.x_target.head(2)));

  Eigen::MatrixXd G = C.transpose() * C +
                      1e-12 * Eigen::MatrixXd::Identity(T * m, T * m);
  for (int t = 0; t < T; ++t)
    G.block(t * m, t * m, m, m) += R_weight;
  const Eigen::VectorXd u_flat = G.ldlt().solve(C.transpose() * rhs);

  Eigen::MatrixXd controls(T, m);
  for (int t = 0; t < T; ++t)
    controls.row(t) = u_flat.segment(t * m, m).transpose();
  return controls;
}

void validate_waypoint_task(const WaypointTask& task) {
  if (task.T < 1) throw std::invalid_argument("waypoint task: T must be >= 1");
  if (task.waypoints.rows() != static_cast<Eigen::Index>(task.times.size()))
    throw std::invalid_argument("waypoint task: waypoint/time count mismatch");
  int prev = 0;
  for (int t : task.times) {
    if (t <= 0 || t > task.T)
      throw std::invalid_argument("waypoint task: times must lie in (0, T]");
    if (t <= prev && prev != 0)
      throw std::invalid_argument("waypoint task: times must be strictly increasing");
    prev = t;
  }
  if (task.obstacles.rows() != task.radii.size())
    throw std::invalid_argument("waypoint task: obstacle/radius count mismatch");
  if ((task.radii.array() < 0.0).any())
    throw std::invalid_argument("waypoint task: radii must be nonnegative");
}

}  // namespace

AffinePolicy lqr_policy(const LtiSystem& sys, const LqrTask& task) {
  const int n = sys.n();
  const int m = sys.m();
  if (task.Q.rows() != n || task.Q.cols() != n)
    throw std::invalid_argument("lqr_policy: Q must be n x n");
  if (task.R.rows() != m || task.R.cols() != m)
    throw std::invalid_argument("lqr_policy: R must be m x m");
  if (task.T < 1) throw std::invalid_argument("lqr_policy: T must be >= 1");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(task.R);
  if (!lu.isInvertible())
    throw std::invalid_argument("lqr_policy: R is singular");

  // Value function V_t(x) = x'P x + 2 q'x + const, V_T = 0.
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(n);

  AffinePolicy policy;
  policy.gains.assign(task.T, Eigen::MatrixXd());
  policy.offsets.assign(task.T, Eigen::VectorXd());

  for (int t = task.T - 1; t >= 0; --t) {
    const Eigen::MatrixXd G = task.R + sys.B.transpose() * P * sys.B;
    const Eigen::LDLT<Eigen::MatrixXd> Gldlt(G);
    const Eigen::MatrixXd K = -Gldlt.solve(sys.B.transpose() * P * sys.A);
    const Eigen::VectorXd c = -Gldlt.solve(sys.B.transpose() * q);
    policy.gains[t] = K;
    policy.offsets[t] = c;

    const Eigen::MatrixXd Abar = sys.A + sys.B * K;
    const Eigen::VectorXd d = sys.B * c;
    const Eigen::VectorXd q_new = -task.Q * task.x_target + K.transpose() * task.R * c +
                                  Abar.transpose() * P * d + Abar.transpose() * q;
    Eigen::MatrixXd P_new =
        task.Q + K.transpose() * task.R * K + Abar.transpose() * P * Abar;
    P = 0.5 * (P_new + P_new.transpose());
    q = q_new;
  }
  return policy;
}

Trajectory rollout_policy(const LtiSystem& sys, const AffinePolicy& policy,
                          const Eigen::VectorXd& x_init,
                          const Eigen::MatrixXd& noise) {
  const int T = policy.horizon();
  const int n = sys.n();
  const int m = sys.m();
  if (noise.rows() != T || noise.cols() != n)
    throw std::invalid_argument("rollout_policy: noise must be T x n");

  Trajectory traj;
  traj.states.resize(T + 1, n);
  traj.controls.resize(T, m);
  Eigen::VectorXd x = x_init;
  traj.states.row(0) = x.transpose();
  for (int t = 0; t < T; ++t) {
    const Eigen::VectorXd u = policy.gains[t] * x + policy.offsets[t];
    traj.controls.row(t) = u.transpose();
    x = sys.A * x + sys.B * u + noise.row(t).transpose();
    traj.states.row(t + 1) = x.transpose();
  }
  return traj;
}

double waypoint_objective(const Trajectory& traj, const WaypointTask& task,
                          const Eigen::MatrixXd& R_weight) {
  validate_waypoint_task(task);
  if (traj.horizon() != task.T)
    throw std::invalid_argument("waypoint_objective: horizon mismatch");

  double value = 0.0;
  for (int i = 0; i < task.waypoints.rows(); ++i) {
    const Eigen::Vector2d diff =
        position_of(traj.states, task.times[static_cast<size_t>(i)]) -
        task.waypoints.row(i).transpose();
    value += diff.squaredNorm();
  }
  value += (position_of(traj.states, task.T) -
            Eigen::Vector2d(task.x_target.head(2)))
               .squaredNorm();

  for (int t = 0; t < task.T; ++t) {
    const Eigen::VectorXd u = traj.controls.row(t).transpose();
    value += u.dot(R_weight * u);
    for (int j = 0; j < task.obstacles.rows(); ++j) {
      const double dist =
          (position_of(traj.states, t) - Eigen::Vector2d(task.obstacles.row(j)))
              .norm();
      const double intrusion = task.radii[j] - dist;
      if (intrusion > 0.0) value += intrusion * intrusion;
    }
  }
  return value;
}

WaypointSolution solve_waypoint(const LtiSystem& sys, const WaypointTask& task,
                                const Eigen::MatrixXd& R_weight,
                                const WaypointSolverConfig& cfg) {
  validate_waypoint_task(task);
  if (sys.noise_std != 0.0)
    throw std::invalid_argument("solve_waypoint: requires a noiseless system");
  const int T = task.T;
  const int m = sys.m();

  const Eigen::MatrixXd base_init = quadratic_init(sys, task, R_weight);

  double best_value = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd best_controls;
  double straight_line_value = 0.0;

  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng = Rng::fork(cfg.seed, static_cast<std::uint64_t>(r));
    // Restart 0 starts at the quadratic optimum, restart 1 at the
    // straight-line fit; the rest perturb the quadratic optimum.
    Eigen::MatrixXd u = (r == 1 && cfg.restarts > 1)
                            ? straight_line_init(sys, task)
                            : base_init;
    if (r > 1) u += cfg.init_noise * rng.normal_matrix(T, m);

    ObjectiveEval eval = waypoint_objective_grad(sys, task, R_weight, u);
    if (r == 0) straight_line_value = eval.value;

    double step = cfg.max_step;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
      if (!std::isfinite(eval.value))
        throw std::runtime_error(
            "solve_waypoint: non-finite objective at restart " +
            std::to_string(r) + ", iteration " + std::to_string(iter));
      const double gnorm = eval.grad.norm();
      if (gnorm < cfg.grad_tol) break;

      // Descent step, norm-clamped; Armijo backtracking.
      double eta = std::min(step, cfg.max_step / gnorm);
      bool accepted = false;
      for (int bt = 0; bt < 30; ++bt) {
        const Eigen::MatrixXd u_try = u - eta * eval.grad;
        const ObjectiveEval trial = waypoint_objective_grad(sys, task, R_weight, u_try);
        if (std::isfinite(trial.value) &&
            trial.value <= eval.value - 1e-4 * eta * gnorm * gnorm) {
          u = u_try;
          eval = trial;
          step = eta * 2.0;
          accepted = true;
          break;
        }
        eta *= 0.5;
      }
      if (!accepted) break;
    }

    if (eval.value < best_value) {
      best_value = eval.value;
      best_controls = u;
    }
  }

  WaypointSolution sol;
  sol.trajectory = simulate(sys, task.x_init, best_controls,
                            Eigen::MatrixXd::Zero(T, sys.n()));
  sol.objective = best_value;
  sol.initial_objective = straight_line_value;
  return sol;
}

Eigen::VectorXd encode_lqr_condition(const Eigen::VectorXd& x_init,
                                     const Eigen::VectorXd& x_target) {
  Eigen::VectorXd cond(x_init.size() + x_target.size());
  cond << x_init, x_target;
  return cond;
}

Dataset generate_lqr_dataset(const LtiSystem& sys, const LqrDatasetConfig& cfg) {
  if (cfg.N < 1) throw std::invalid_argument("generate_lqr_dataset: N must be >= 1");
  const int n = sys.n();
  const int m = sys.m();
  const int D = flat_dim(n, m, cfg.T);

  Dataset ds;
  ds.task_family = "lqr";
  ds.n = n;
  ds.m = m;
  ds.T = cfg.T;
  ds.seed = cfg.seed;
  ds.noise_std = sys.noise_std;
  ds.trajectories.resize(cfg.N, D);
  ds.conditions.resize(cfg.N, 2 * n);

  for (int idx = 0; idx < cfg.N; ++idx) {
    Rng rng = Rng::fork(cfg.seed, static_cast<std::uint64_t>(idx));
    const Eigen::VectorXd x_init =
        rng.uniform_vector(n, -cfg.init_halfwidth, cfg.init_halfwidth);
    const Eigen::VectorXd x_target =
        rng.uniform_vector(n, -cfg.target_halfwidth, cfg.target_halfwidth);
    const Eigen::MatrixXd noise = sys.noise_std * rng.normal_matrix(cfg.T, n);

    LqrTask task{cfg.Q, cfg.R, x_target, x_init, cfg.T};
    const AffinePolicy policy = lqr_policy(sys, task);
    const Trajectory traj = rollout_policy(sys, policy, x_init, noise);
    ds.trajectories.row(idx) = flatten(traj).transpose();
    ds.conditions.row(idx) = encode_lqr_condition(x_init, x_target).transpose();
  }
  ds.scales = normalization_scales(ds.trajectories);
  return ds;
}

int waypoint_cond_dim(int n, int V_max, int O_max) {
  return 2 * n + 4 * V_max + 4 * O_max;
}

Eigen::VectorXd encode_waypoint_condition(const WaypointTask& task, int V_max,
                                          int O_max) {
  const int n = static_cast<int>(task.x_init.size());
  const int V = static_cast<int>(task.waypoints.rows());
  const int O = static_cast<int>(task.obstacles.rows());
  if (V > V_max || O > O_max)
    throw std::invalid_argument("encode_waypoint_condition: counts exceed padding");

  Eigen::VectorXd cond = Eigen::VectorXd::Zero(waypoint_cond_dim(n, V_max, O_max));
  cond.head(n) = task.x_init;
  cond.segment(n, n) = task.x_target;
  int off = 2 * n;
  for (int i = 0; i < V; ++i) {
    cond[off + 4 * i + 0] = task.waypoints(i, 0);
    cond[off + 4 * i + 1] = task.waypoints(i, 1);
    cond[off + 4 * i + 2] = double(task.times[static_cast<size_t>(i)]) / task.T;
    cond[off + 4 * i + 3] = 1.0;
  }
  off += 4 * V_max;
  for (int j = 0; j < O; ++j) {
    cond[off + 4 * j + 0] = task.obstacles(j, 0);
    cond[off + 4 * j + 1] = task.obstacles(j, 1);
    cond[off + 4 * j + 2] = task.radii[j];
    cond[off + 4 * j + 3] = 1.0;
  }
  return cond;
}

WaypointTask decode_waypoint_condition(const Eigen::VectorXd& cond, int n,
                                       int T, int V_max, int O_max) {
  if (cond.size() != waypoint_cond_dim(n, V_max, O_max))
    throw std::invalid_argument("decode_waypoint_condition: length mismatch");

  WaypointTask task;
  task.T = T;
  task.x_init = cond.head(n);
  task.x_target = cond.segment(n, n);
  int off = 2 * n;
  std::vector<Eigen::Vector2d> wps;
  for (int i = 0; i < V_max; ++i) {
    if (cond[off + 4 * i + 3] > 0.5) {
      wps.emplace_back(cond[off + 4 * i + 0], cond[off + 4 * i + 1]);
      task.times.push_back(
          static_cast<int>(std::lround(cond[off + 4 * i + 2] * T)));
    }
  }
  task.waypoints.resize(static_cast<Eigen::Index>(wps.size()), 2);
  for (size_t i = 0; i < wps.size(); ++i)
    task.waypoints.row(static_cast<Eigen::Index>(i)) = wps[i].transpose();
  off += 4 * V_max;
  std::vector<Eigen::Vector3d> obs;
  for (int j = 0; j < O_max; ++j)
    if (cond[off + 4 * j + 3] > 0.5)
      obs.emplace_back(cond[off + 4 * j + 0], cond[off + 4 * j + 1],
                       cond[off + 4 * j + 2]);
  task.obstacles.resize(static_cast<Eigen::Index>(obs.size()), 2);
  task.radii.resize(static_cast<Eigen::Index>(obs.size()));
  for (size_t j = 0; j < obs.size(); ++j) {
    task.obstacles.row(static_cast<Eigen::Index>(j)) = obs[j].head(2).transpose();
    task.radii[static_cast<Eigen::Index>(j)] = obs[j][2];
  }
  return task;
}

WaypointTask sample_waypoint_task(const WaypointDatasetConfig& cfg, int n, Rng& rng) {
  WaypointTask task;
  task.T = cfg.T;

  std::vector<int> times;
  if (!cfg.fixed_times.empty()) {
    times = cfg.fixed_times;
  } else {
    const int V =
        static_cast<int>(rng.uniform_int(cfg.waypoints_min, cfg.waypoints_max));
    const int lo = cfg.T / 6;
    const int hi = cfg.T - 1;
    // Without replacement by rejection, then sorted.
    while (static_cast<int>(times.size()) < V) {
      const int t = static_cast<int>(rng.uniform_int(lo, hi));
      if (std::find(times.begin(), times.end(), t) == times.end())
        times.push_back(t);
    }
    std::sort(times.begin(), times.end());
  }
  const int V = static_cast<int>(times.size());
  task.times = times;
  task.waypoints.resize(V, 2);
  for (int i = 0; i < V; ++i) {
    task.waypoints(i, 0) = rng.uniform(-cfg.waypoint_halfwidth, cfg.waypoint_halfwidth);
    task.waypoints(i, 1) = rng.uniform(-cfg.waypoint_halfwidth, cfg.waypoint_halfwidth);
  }

  const int O =
      static_cast<int>(rng.uniform_int(cfg.obstacles_min, cfg.obstacles_max));
  task.obstacles.resize(O, 2);
  task.radii.resize(O);
  for (int j = 0; j < O; ++j) {
    task.obstacles(j, 0) = rng.uniform(-cfg.obstacle_halfwidth, cfg.obstacle_halfwidth);
    task.obstacles(j, 1) = rng.uniform(-cfg.obstacle_halfwidth, cfg.obstacle_halfwidth);
    task.radii[j] = rng.uniform(cfg.radius_min, cfg.radius_max);
  }

  task.x_init = rng.uniform_vector(n, -cfg.init_halfwidth, cfg.init_halfwidth);
  task.x_target = rng.uniform_vector(n, -cfg.target_halfwidth, cfg.target_halfwidth);
  return task;
}

Dataset generate_waypoint_dataset(const LtiSystem& sys,
                                  const WaypointDatasetConfig& cfg) {
  if (cfg.N < 1)
    throw std::invalid_argument("generate_waypoint_dataset: N must be >= 1");
  const int n = sys.n();
  const int m = sys.m();
  const int D = flat_dim(n, m, cfg.T);

  Dataset ds;
  ds.task_family = "waypoint";
  ds.n = n;
  ds.m = m;
  ds.T = cfg.T;
  ds.seed = cfg.seed;
  ds.noise_std = sys.noise_std;
  ds.trajectories.resize(cfg.N, D);
  ds.conditions.resize(cfg.N, waypoint_cond_dim(n, cfg.V_max, cfg.O_max));

  for (int idx = 0; idx < cfg.N; ++idx) {
    Rng rng = Rng::fork(cfg.seed, static_cast<std::uint64_t>(idx));
    const WaypointTask task = sample_waypoint_task(cfg, n, rng);

    WaypointSolverConfig solver = cfg.solver;
    std::uint64_t sm = cfg.seed ^ (0xD1B54A32D192ED03ULL + idx);
    solver.seed = splitmix64_next(sm);

    const WaypointSolution sol = solve_waypoint(sys, task, cfg.R_weight, solver);
    ds.trajectories.row(idx) = flatten(sol.trajectory).transpose();
    ds.conditions.row(idx) =
        encode_waypoint_condition(task, cfg.V_max, cfg.O_max).transpose();
  }
  ds.scales = normalization_scales(ds.trajectories);
  return ds;
}

Eigen::VectorXd normalization_scales(const Eigen::MatrixXd& rows) {
  const Eigen::Index N = rows.rows();
  const Eigen::VectorXd mean = rows.colwise().mean();
  Eigen::VectorXd scales(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double var = (rows.col(c).array() - mean[c]).square().sum() / double(N);
    scales[c] = std::max(std::sqrt(var), 1e-6);
  }
  return scales;
}

}  // namespace dyndiff
