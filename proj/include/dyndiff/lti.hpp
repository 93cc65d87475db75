#pragma once

#include <Eigen/Dense>

namespace dyndiff {

// Stochastic discrete-time LTI system x(t+1) = A x(t) + B u(t) + w(t),
// with isotropic process noise w(t) ~ N(0, noise_std^2 I).
struct LtiSystem {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double noise_std = 0.0;

  LtiSystem(Eigen::MatrixXd A_in, Eigen::MatrixXd B_in, double noise_std_in);

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
};

// State-control trajectory: states x(0..T) stacked row-wise, controls
// u(0..T-1) row-wise.
struct Trajectory {
  Eigen::MatrixXd states;    // (T+1) x n
  Eigen::MatrixXd controls;  // T x m

  int n() const { return static_cast<int>(states.cols()); }
  int m() const { return static_cast<int>(controls.cols()); }
  int horizon() const { return static_cast<int>(controls.rows()); }
};

// Free/forced-response maps assembled into the trajectory map
//   tau = F [x(0); u(0:T-1)] + Fw w(0:T-1),
// with F = [free forced; 0 I] and Fw = [noise_resp; 0].
struct TrajectoryMap {
  Eigen::MatrixXd F;                // ((T+1)n + Tm) x (n + Tm)
  Eigen::MatrixXd Fw;               // ((T+1)n + Tm) x Tn
  Eigen::MatrixXd free_response;    // (T+1)n x n    (I; A; ...; A^T)
  Eigen::MatrixXd forced_response;  // (T+1)n x Tm   (lower block triangular)
  Eigen::MatrixXd noise_response;   // (T+1)n x Tn   (forced response with B -> I)
  int n = 0;
  int m = 0;
  int T = 0;
};

// Flattened trajectory length: all states first, then all controls.
inline int flat_dim(int n, int m, int T) { return (T + 1) * n + T * m; }

// Deterministic simulation; the caller supplies the noise realization
// (T x n, pass a zero matrix for the noiseless case).
Trajectory simulate(const LtiSystem& sys, const Eigen::VectorXd& x_init,
                    const Eigen::MatrixXd& controls,
                    const Eigen::MatrixXd& noise);

TrajectoryMap response_matrices(const LtiSystem& sys, int T);

Eigen::VectorXd flatten(const Trajectory& traj);
Trajectory unflatten(const Eigen::VectorXd& v, int n, int m, int T);

}  // namespace dyndiff
