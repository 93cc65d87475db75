#include "dyndiff/sampler.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dyndiff {

namespace {

// FNV-1a over the condition's bytes; per-sample streams keyed on condition
// content (not row position) make the fan-out permutation-equivariant.
std::uint64_t condition_hash(const Eigen::VectorXd& cond) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (Eigen::Index i = 0; i < cond.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &cond[i], sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFFu;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

void check_dims(const Checkpoint& ckpt, const Eigen::VectorXd& cond) {
  if (cond.size() != ckpt.params.config.cond_dim)
    throw std::invalid_argument("sampler: condition dimension mismatch");
  if (ckpt.scales.size() != ckpt.params.config.input_dim)
    throw std::invalid_argument("sampler: scales/input dimension mismatch");
}

}  // namespace

SampleTrace sample_vanilla(const Checkpoint& ckpt, const Eigen::VectorXd& cond,
                           std::uint64_t seed, const SamplerOptions& opts) {
  check_dims(ckpt, cond);
  const NoiseSchedule sched = ckpt.schedule();
  const int D = ckpt.params.config.input_dim;
  Rng rng(seed);

  SampleTrace trace;
  trace.algorithm = "vanilla";
  trace.seed = seed;

  Eigen::VectorXd tau = rng.normal_vector(D);
  if (opts.keep_steps) {
    trace.per_step_states.resize(sched.L + 1, D);
    trace.per_step_states.row(0) = tau.transpose();
  }
  for (int i = sched.L; i >= 1; --i) {
    Eigen::VectorXd mu = denoiser_forward(ckpt.params, tau, i, sched.L, cond);
    if (i > 1) {
      const Eigen::VectorXd eps = rng.normal_vector(D);
      mu += std::sqrt(sched.betas[i]) * eps;
    }
    tau = mu;
    if (opts.keep_steps) trace.per_step_states.row(sched.L - i + 1) = tau.transpose();
  }

  trace.trajectory_normalized = tau;
  trace.trajectory = tau.cwiseProduct(ckpt.scales);
  return trace;
}

SampleTrace sample_projected(const Checkpoint& ckpt, const Projector& proj,
                             const Eigen::VectorXd& cond, std::uint64_t seed,
                             const std::string& tag, const SamplerOptions& opts) {
  check_dims(ckpt, cond);
  const NoiseSchedule sched = ckpt.schedule();
  const int D = ckpt.params.config.input_dim;
  if (proj.P.rows() != D)
    throw std::invalid_argument("sample_projected: projector dimension mismatch");
  if (sched.betas[0] != 0.0)
    throw std::invalid_argument(
        "sample_projected: schedule must have beta_0 = 0 so the final step is a "
        "pure projection");
  Rng rng(seed);

  SampleTrace trace;
  trace.algorithm = tag;
  trace.seed = seed;
  if (opts.diagnostics) {
    trace.has_diagnostics = true;
    trace.residual_norm.resize(sched.L);
    trace.pred_residual_norm.resize(sched.L);
    trace.prediction_delta.resize(sched.L);
  }

  Eigen::VectorXd tau = rng.normal_vector(D);
  if (opts.keep_steps) {
    trace.per_step_states.resize(sched.L + 1, D);
    trace.per_step_states.row(0) = tau.transpose();
  }
  for (int i = sched.L; i >= 1; --i) {
    // Predict with the step-i noise, then contract the inadmissible
    // component by sqrt(beta_{i-1}).
    const Eigen::VectorXd eps = rng.normal_vector(D);
    const Eigen::VectorXd tau_hat =
        denoiser_forward(ckpt.params, tau, i, sched.L, cond) +
        std::sqrt(sched.betas[i]) * eps;
    tau = scaled_project(proj, tau_hat, sched.betas[i - 1]);

    if (opts.diagnostics) {
      const int k = sched.L - i;
      trace.residual_norm[k] = (tau - proj.P * tau).norm();
      trace.pred_residual_norm[k] = (tau_hat - proj.P * tau_hat).norm();
      trace.prediction_delta[k] = (tau_hat - tau).norm();
    }
    if (opts.keep_steps) trace.per_step_states.row(sched.L - i + 1) = tau.transpose();
  }

  trace.trajectory_normalized = tau;
  trace.trajectory = tau.cwiseProduct(ckpt.scales);
  return trace;
}

std::vector<SampleTrace> batch_sample(const Checkpoint& ckpt,
                                      const Projector* proj,
                                      const std::string& algorithm,
                                      const Eigen::MatrixXd& conditions,
                                      int per_condition, std::uint64_t seed,
                                      const SamplerOptions& opts) {
  if (algorithm != "vanilla" && proj == nullptr)
    throw std::invalid_argument("batch_sample: algorithm " + algorithm +
                                " requires a projector");

  std::vector<SampleTrace> traces;
  traces.reserve(static_cast<size_t>(conditions.rows()) * per_condition);
  for (Eigen::Index c = 0; c < conditions.rows(); ++c) {
    const Eigen::VectorXd cond = conditions.row(c).transpose();
    const std::uint64_t chash = condition_hash(cond);
    for (int s = 0; s < per_condition; ++s) {
      // Each sample owns a stream keyed on (seed, condition content, s), so
      // reordering the condition rows reorders the outputs identically.
      std::uint64_t sm =
          seed ^ chash ^ (0x9E3779B97F4A7C15ULL * (std::uint64_t(s) + 1));
      const std::uint64_t sample_seed = splitmix64_next(sm);
      traces.push_back(algorithm == "vanilla"
                           ? sample_vanilla(ckpt, cond, sample_seed, opts)
                           : sample_projected(ckpt, *proj, cond, sample_seed,
                                              algorithm, opts));
    }
  }
  return traces;
}

}  // namespace dyndiff
