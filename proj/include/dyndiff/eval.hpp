#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dyndiff/lti.hpp"
#include "dyndiff/sampler.hpp"
#include "dyndiff/tasks.hpp"

namespace dyndiff {

// Gaussian over flattened trajectories induced by an affine policy under
// unit process noise, with full state-control cross-covariances.
struct TrajectoryGaussian {
  Eigen::VectorXd mean;  // D
  Eigen::MatrixXd cov;   // D x D, symmetric PSD
};

// Propagates state means/covariances through the closed loop and assembles
// the joint Gaussian including the control blocks. Warns (returns anyway)
// when noise_std != 1.
TrajectoryGaussian propagate_moments(const LtiSystem& sys,
                                     const AffinePolicy& policy,
                                     const Eigen::VectorXd& x_init,
                                     std::string* warning = nullptr);

struct MahalanobisResult {
  double distance = 0.0;        // squared distance on the support of cov
  double out_of_support = 0.0;  // energy of (tau - mean) off the support
};

// Squared Mahalanobis distance via eigendecomposition pseudo-inverse;
// eigenvalues below 1e-10 * lambda_max are treated as zero.
MahalanobisResult mahalanobis(const Eigen::VectorXd& tau,
                              const TrajectoryGaussian& g);

// Samples of one algorithm, aligned to oracle conditions by index.
struct AlgorithmSamples {
  std::string name;
  std::vector<int> condition_index;
  std::vector<Eigen::VectorXd> trajectories;  // flattened, physical units
};

struct ErrorReport {
  std::vector<std::string> algorithms;
  Eigen::MatrixXd state_error;    // (T+1) x n_alg, mean ||x(t)-x_oracle(t)||^2
  Eigen::MatrixXd control_error;  // T x n_alg
};

ErrorReport error_curves(const std::vector<AlgorithmSamples>& samples,
                         const std::vector<Eigen::VectorXd>& oracles, int n,
                         int m, int T);

// Mahalanobis distance of each retained denoising iterate, in physical
// coordinates; entry k corresponds to tau'_{L-k}.
Eigen::VectorXd theorem1_diagnostic(const SampleTrace& trace,
                                    const TrajectoryGaussian& g,
                                    const Eigen::VectorXd& scales);

void write_error_csv(const ErrorReport& report, const std::filesystem::path& path);

struct ResidualRow {
  std::string algorithm;
  int sample_id = 0;
  double rel_residual = 0.0;
  double x0_error = 0.0;
};
void write_residual_csv(const std::vector<ResidualRow>& rows,
                        const std::filesystem::path& path);

void write_theorem1_csv(const Eigen::VectorXd& mean_series,
                        const std::filesystem::path& path);

}  // namespace dyndiff
