#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dyndiff/denoiser.hpp"
#include "dyndiff/projector.hpp"

namespace dyndiff {

struct SamplerOptions {
  bool diagnostics = false;  // record per-step residual norms
  bool keep_steps = false;   // retain every intermediate trajectory
};

struct SampleTrace {
  Eigen::VectorXd trajectory;             // final tau'_0, physical units
  Eigen::VectorXd trajectory_normalized;  // same, normalized coordinates
  std::string algorithm;                  // "vanilla", "alg1" or "alg2"
  std::uint64_t seed = 0;

  // Per-step diagnostics, recorded for steps i = L..1 in loop order; entry k
  // describes the step producing tau'_{i-1} with i = L-k.
  bool has_diagnostics = false;
  Eigen::VectorXd residual_norm;        // ||(I-P) tau'_{i-1}||
  Eigen::VectorXd pred_residual_norm;   // ||(I-P) tau_hat_{i-1}||
  Eigen::VectorXd prediction_delta;     // ||tau_hat_{i-1} - tau'_{i-1}||

  // When keep_steps: row k holds tau'_{L-k} (normalized), k = 0..L.
  Eigen::MatrixXd per_step_states;
};

// Plain DDPM reverse process; no projection. The final step's noise
// injection is skipped so the output is the last predicted mean.
SampleTrace sample_vanilla(const Checkpoint& ckpt, const Eigen::VectorXd& cond,
                           std::uint64_t seed, const SamplerOptions& opts = {});

// Prediction-projection reverse process; with a model projector this is the
// known-dynamics generator, with a Hankel projector the unknown-dynamics
// one. Requires beta_0 = 0 so the final step is a pure projection.
SampleTrace sample_projected(const Checkpoint& ckpt, const Projector& proj,
                             const Eigen::VectorXd& cond, std::uint64_t seed,
                             const std::string& tag,
                             const SamplerOptions& opts = {});

// Deterministic fan-out: sample `per_condition` traces per condition row,
// each from its own stream derived from (seed, global index). `proj` may be
// null only for the vanilla algorithm.
std::vector<SampleTrace> batch_sample(const Checkpoint& ckpt,
                                      const Projector* proj,
                                      const std::string& algorithm,
                                      const Eigen::MatrixXd& conditions,
                                      int per_condition, std::uint64_t seed,
                                      const SamplerOptions& opts = {});

}  // namespace dyndiff
