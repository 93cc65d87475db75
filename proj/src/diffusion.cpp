#include "dyndiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dyndiff {

namespace {

NoiseSchedule finish(Eigen::VectorXd betas, bool truncated) {
  NoiseSchedule sched;
  sched.L = static_cast<int>(betas.size()) - 1;
  sched.betas = std::move(betas);
  sched.alphas = Eigen::VectorXd::Ones(sched.L + 1) - sched.betas;
  sched.alpha_bars.resize(sched.L + 1);
  double prod = 1.0;
  sched.alpha_bars[0] = 1.0;
  for (int i = 1; i <= sched.L; ++i) {
    prod *= sched.alphas[i];
    sched.alpha_bars[i] = prod;
  }
  sched.truncated = truncated;
  return sched;
}

void validate_common(const Eigen::VectorXd& betas) {
  const int L = static_cast<int>(betas.size()) - 1;
  if (L < 1) throw std::invalid_argument("schedule: need at least one step");
  if (betas[0] != 0.0) throw std::invalid_argument("schedule: beta_0 must be 0");
  for (int i = 0; i <= L; ++i) {
    if (betas[i] < 0.0 || betas[i] > 1.0)
      throw std::invalid_argument("schedule: beta_" + std::to_string(i) +
                                  " outside [0,1]");
    if (i > 0 && betas[i] < betas[i - 1])
      throw std::invalid_argument("schedule: betas must be nondecreasing");
  }
}

}  // namespace

NoiseSchedule linear_schedule(double k, int L) {
  if (L < 1) throw std::invalid_argument("linear_schedule: L must be >= 1");
  if (k < 0.0) throw std::invalid_argument("linear_schedule: k must be >= 0");
  if (k * L > 1.0 + 1e-12)
    throw std::invalid_argument("linear_schedule: k*L > 1 violates the bounded-noise condition");
  Eigen::VectorXd betas(L + 1);
  for (int i = 0; i <= L; ++i) betas[i] = std::min(k * i, 1.0);
  validate_common(betas);
  const bool truncated = betas[L] < 1.0;
  return finish(std::move(betas), truncated);
}

NoiseSchedule schedule_from_betas(const Eigen::VectorXd& betas) {
  validate_common(betas);
  const int L = static_cast<int>(betas.size()) - 1;
  if (betas[L] != 1.0)
    throw std::invalid_argument("schedule: beta_L must be 1");
  return finish(betas, false);
}

Eigen::VectorXd forward_sample(const Eigen::VectorXd& tau0, int i,
                               const Eigen::VectorXd& eps,
                               const NoiseSchedule& sched) {
  if (i < 0 || i > sched.L)
    throw std::invalid_argument("forward_sample: step index out of range");
  if (eps.size() != tau0.size())
    throw std::invalid_argument("forward_sample: eps size mismatch");
  const double abar = sched.alpha_bars[i];
  return std::sqrt(abar) * tau0 + std::sqrt(1.0 - abar) * eps;
}

Eigen::VectorXd posterior_mean(const Eigen::VectorXd& tau_i,
                               const Eigen::VectorXd& tau0, int i,
                               const NoiseSchedule& sched) {
  if (i < 1 || i > sched.L)
    throw std::invalid_argument("posterior_mean: step index must be in [1, L]");
  if (sched.alphas[i] == 0.0)
    throw std::invalid_argument("posterior_mean: alpha_i = 0, step is singular");
  if (tau_i.size() != tau0.size())
    throw std::invalid_argument("posterior_mean: size mismatch");
  const double beta = sched.betas[i];
  const double abar = sched.alpha_bars[i];
  return (tau_i - (beta / (1.0 - abar)) * (tau_i - std::sqrt(abar) * tau0)) /
         std::sqrt(sched.alphas[i]);
}

int max_trainable_step(const NoiseSchedule& sched) {
  return sched.betas[sched.L] >= 1.0 ? sched.L - 1 : sched.L;
}

}  // namespace dyndiff
