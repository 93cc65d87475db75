#include "dyndiff/lti.hpp"

#include <stdexcept>
#include <string>

namespace dyndiff {

LtiSystem::LtiSystem(Eigen::MatrixXd A_in, Eigen::MatrixXd B_in,
                     double noise_std_in)
    : A(std::move(A_in)), B(std::move(B_in)), noise_std(noise_std_in) {
  if (A.rows() != A.cols()) throw std::invalid_argument("LtiSystem: A must be square");
  if (B.rows() != A.rows())
    throw std::invalid_argument("LtiSystem: B row count must match A dimension");
  if (noise_std < 0.0)
    throw std::invalid_argument("LtiSystem: noise_std must be nonnegative");
}

Trajectory simulate(const LtiSystem& sys, const Eigen::VectorXd& x_init,
                    const Eigen::MatrixXd& controls,
                    const Eigen::MatrixXd& noise) {
  const int n = sys.n();
  const int m = sys.m();
  const int T = static_cast<int>(controls.rows());
  if (x_init.size() != n) throw std::invalid_argument("simulate: x_init size mismatch");
  if (controls.cols() != m) throw std::invalid_argument("simulate: controls column mismatch");
  if (noise.rows() != T || noise.cols() != n)
    throw std::invalid_argument("simulate: noise must be T x n");

  Trajectory traj;
  traj.states.resize(T + 1, n);
  traj.controls = controls;
  traj.states.row(0) = x_init.transpose();
  Eigen::VectorXd x = x_init;
  for (int t = 0; t < T; ++t) {
    x = sys.A * x + sys.B * controls.row(t).transpose() + noise.row(t).transpose();
    traj.states.row(t + 1) = x.transpose();
  }
  return traj;
}

TrajectoryMap response_matrices(const LtiSystem& sys, int T) {
  if (T < 1) throw std::invalid_argument("response_matrices: T must be >= 1");
  const int n = sys.n();
  const int m = sys.m();

  TrajectoryMap map;
  map.n = n;
  map.m = m;
  map.T = T;

  // Powers of A by repeated multiplication; exact at desk-scale horizons.
  std::vector<Eigen::MatrixXd> Apow(T + 1);
  Apow[0] = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k <= T; ++k) Apow[k] = sys.A * Apow[k - 1];

  map.free_response.resize((T + 1) * n, n);
  for (int t = 0; t <= T; ++t) map.free_response.middleRows(t * n, n) = Apow[t];

  map.forced_response = Eigen::MatrixXd::Zero((T + 1) * n, T * m);
  map.noise_response = Eigen::MatrixXd::Zero((T + 1) * n, T * n);
  for (int t = 1; t <= T; ++t) {
    for (int j = 0; j < t; ++j) {
      map.forced_response.block(t * n, j * m, n, m) = Apow[t - j - 1] * sys.B;
      map.noise_response.block(t * n, j * n, n, n) = Apow[t - j - 1];
    }
  }

  const int D = flat_dim(n, m, T);
  map.F = Eigen::MatrixXd::Zero(D, n + T * m);
  map.F.topLeftCorner((T + 1) * n, n) = map.free_response;
  map.F.topRightCorner((T + 1) * n, T * m) = map.forced_response;
  map.F.bottomRightCorner(T * m, T * m) = Eigen::MatrixXd::Identity(T * m, T * m);

  map.Fw = Eigen::MatrixXd::Zero(D, T * n);
  map.Fw.topRows((T + 1) * n) = map.noise_response;
  return map;
}

Eigen::VectorXd flatten(const Trajectory& traj) {
  const int n = traj.n();
  const int m = traj.m();
  const int T = traj.horizon();
  if (traj.states.rows() != T + 1)
    throw std::invalid_argument("flatten: states must have T+1 rows");
  Eigen::VectorXd v(flat_dim(n, m, T));
  for (int t = 0; t <= T; ++t) v.segment(t * n, n) = traj.states.row(t).transpose();
  const int off = (T + 1) * n;
  for (int t = 0; t < T; ++t) v.segment(off + t * m, m) = traj.controls.row(t).transpose();
  return v;
}

Trajectory unflatten(const Eigen::VectorXd& v, int n, int m, int T) {
  if (v.size() != flat_dim(n, m, T))
    throw std::invalid_argument("unflatten: vector length " + std::to_string(v.size()) +
                                " does not match dims (expected " +
                                std::to_string(flat_dim(n, m, T)) + ")");
  Trajectory traj;
  traj.states.resize(T + 1, n);
  traj.controls.resize(T, m);
  for (int t = 0; t <= T; ++t) traj.states.row(t) = v.segment(t * n, n).transpose();
  const int off = (T + 1) * n;
  for (int t = 0; t < T; ++t) traj.controls.row(t) = v.segment(off + t * m, m).transpose();
  return traj;
}

}  // namespace dyndiff
