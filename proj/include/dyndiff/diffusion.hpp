#pragma once

#include <Eigen/Dense>

namespace dyndiff {

// Variance schedule of the forward noising chain. Index 0 holds beta_0 = 0 so
// that the projection step at i = 1 reads beta_0 exactly. alpha_bar[0] = 1.
struct NoiseSchedule {
  Eigen::VectorXd betas;       // length L+1
  Eigen::VectorXd alphas;     // 1 - beta
  Eigen::VectorXd alpha_bars;  // running products of alphas, index 0 = 1
  int L = 0;
  // True when the linear schedule stops short of beta_L = 1.
  bool truncated = false;
};

// Linear schedule beta_i = k*i for i = 0..L. Requires k*L <= 1.
NoiseSchedule linear_schedule(double k, int L);

// Build a schedule from explicit betas, validating the schedule conditions:
// beta_0 = 0 and beta_L = 1; beta_i in [0,1]; beta nondecreasing.
NoiseSchedule schedule_from_betas(const Eigen::VectorXd& betas);

// Closed-form forward draw tau_i = sqrt(abar_i) tau_0 + sqrt(1-abar_i) eps.
Eigen::VectorXd forward_sample(const Eigen::VectorXd& tau0, int i,
                               const Eigen::VectorXd& eps,
                               const NoiseSchedule& sched);

// Mean of q(tau_{i-1} | tau_i, tau_0). Rejects i = 0 and steps with
// alpha_i = 0 (the formula contains 1/sqrt(alpha_i)).
Eigen::VectorXd posterior_mean(const Eigen::VectorXd& tau_i,
                               const Eigen::VectorXd& tau0, int i,
                               const NoiseSchedule& sched);

// Largest step index usable in the training loss: L-1 when beta_L = 1
// (that step is singular for the posterior mean), otherwise L.
int max_trainable_step(const NoiseSchedule& sched);

}  // namespace dyndiff
