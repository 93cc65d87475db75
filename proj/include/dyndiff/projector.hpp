#pragma once

#include <string>

#include <Eigen/Dense>

#include "dyndiff/lti.hpp"

namespace dyndiff {

// Orthogonal projector onto the admissible-trajectory subspace, expressed in
// normalized coordinates (each physical coordinate divided by its scale).
// Built from an explicit orthonormal basis so P is symmetric and idempotent
// to machine precision.
struct Projector {
  Eigen::MatrixXd P;      // D x D
  Eigen::MatrixXd basis;  // D x rank, orthonormal columns
  int rank = 0;
  std::string source;     // "model" or "hankel"
  std::string warning;    // nonempty when rank fell below the expected value
};

// One long rollout of the system, used to build the data-driven projector.
struct Experiment {
  Eigen::MatrixXd states;    // (S+1) x n
  Eigen::MatrixXd controls;  // S x m

  int n() const { return static_cast<int>(states.cols()); }
  int m() const { return static_cast<int>(controls.cols()); }
  int S() const { return static_cast<int>(controls.rows()); }
};

// Projector onto image(D^-1 F) where D = diag(scales).
Projector model_projector(const TrajectoryMap& map, const Eigen::VectorXd& scales);

// Block-Hankel matrix of a K x d time series: depth*d rows, K-depth+1
// columns; column j stacks rows j..j+depth-1.
Eigen::MatrixXd hankel(const Eigen::MatrixXd& series, int depth);

// Projector onto the image of the stacked Hankel matrix
// [H_{T+1}(x); H_T(u)], rows scaled by 1/scales. The stacked row order is
// x(0..T) then u(0..T-1), identical to the flattened-trajectory layout.
Projector data_projector(const Experiment& exp, int T, const Eigen::VectorXd& scales);

struct PersistencyReport {
  bool is_pe = false;
  int rank = 0;
  int required_rank = 0;
};

// Persistency of excitation of the given order: H_order(u) full row rank.
PersistencyReport persistency_check(const Eigen::MatrixXd& controls, int order);

// Scaled projection (sqrt(1-beta) P + sqrt(beta) I) tau_hat. The residual
// orthogonal to the subspace contracts by exactly sqrt(beta).
Eigen::VectorXd scaled_project(const Projector& proj,
                               const Eigen::VectorXd& tau_hat, double beta);

}  // namespace dyndiff
