#include "dyndiff/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "dyndiff/io.hpp"

namespace dyndiff {

namespace {

struct SupportFactorization {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;        // D x rank, eigenvectors on the support
  Eigen::VectorXd eigenvalues;  // rank
};

SupportFactorization factorize(const TrajectoryGaussian& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g.cov);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("mahalanobis: eigendecomposition failed");
  const Eigen::VectorXd& vals = eig.eigenvalues();
  const double lambda_max = vals.size() > 0 ? vals[vals.size() - 1] : 0.0;
  const double cutoff = 1e-10 * std::max(lambda_max, 0.0);

  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (vals[i] > cutoff) keep.push_back(i);

  SupportFactorization f;
  f.mean = g.mean;
  f.basis.resize(g.cov.rows(), static_cast<Eigen::Index>(keep.size()));
  f.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
  for (size_t k = 0; k < keep.size(); ++k) {
    f.basis.col(static_cast<Eigen::Index>(k)) = eig.eigenvectors().col(keep[k]);
    f.eigenvalues[static_cast<Eigen::Index>(k)] = vals[keep[k]];
  }
  return f;
}

MahalanobisResult evaluate(const SupportFactorization& f, const Eigen::VectorXd& tau) {
  const Eigen::VectorXd delta = tau - f.mean;
  const Eigen::VectorXd proj = f.basis.transpose() * delta;
  MahalanobisResult result;
  result.distance = (proj.array().square() / f.eigenvalues.array()).sum();
  result.out_of_support = std::max(delta.squaredNorm() - proj.squaredNorm(), 0.0);
  return result;
}

void print_row(std::ofstream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

TrajectoryGaussian propagate_moments(const LtiSystem& sys,
                                     const AffinePolicy& policy,
                                     const Eigen::VectorXd& x_init,
                                     std::string* warning) {
  const int n = sys.n();
  const int m = sys.m();
  const int T = policy.horizon();
  if (x_init.size() != n)
    throw std::invalid_argument("propagate_moments: x_init size mismatch");
  if (warning && sys.noise_std != 1.0)
    *warning = "noise_std != 1: the linear-feedback sampling result assumes unit "
               "process noise; computing with the actual covariance";

  const double w_var = sys.noise_std * sys.noise_std;

  // Full state covariance across times, built blockwise from the closed loop.
  std::vector<Eigen::VectorXd> mean_x(T + 1);
  Eigen::MatrixXd cov_x = Eigen::MatrixXd::Zero((T + 1) * n, (T + 1) * n);
  mean_x[0] = x_init;

  auto X = [&](int t, int s) { return cov_x.block(t * n, s * n, n, n); };
  for (int t = 0; t < T; ++t) {
    const Eigen::MatrixXd Abar = sys.A + sys.B * policy.gains[t];
    mean_x[t + 1] = Abar * mean_x[t] + sys.B * policy.offsets[t];
    for (int s = 0; s <= t; ++s) {
      const Eigen::MatrixXd blk = Abar * X(t, s);
      cov_x.block((t + 1) * n, s * n, n, n) = blk;
      cov_x.block(s * n, (t + 1) * n, n, n) = blk.transpose();
    }
    cov_x.block((t + 1) * n, (t + 1) * n, n, n) =
        Abar * X(t, t) * Abar.transpose() +
        w_var * Eigen::MatrixXd::Identity(n, n);
  }

  const int D = flat_dim(n, m, T);
  const int off = (T + 1) * n;
  TrajectoryGaussian g;
  g.mean.resize(D);
  g.cov.resize(D, D);
  g.cov.topLeftCorner(off, off) = cov_x;

  for (int t = 0; t <= T; ++t) g.mean.segment(t * n, n) = mean_x[t];
  for (int t = 0; t < T; ++t)
    g.mean.segment(off + t * m, m) = policy.gains[t] * mean_x[t] + policy.offsets[t];

  // Control blocks follow from u(t) = K(t) x(t) + c(t) by linearity.
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s <= T; ++s) {
      const Eigen::MatrixXd blk = policy.gains[t] * X(t, s);
      g.cov.block(off + t * m, s * n, m, n) = blk;
      g.cov.block(s * n, off + t * m, n, m) = blk.transpose();
    }
    for (int s = 0; s < T; ++s)
      g.cov.block(off + t * m, off + s * m, m, m) =
          policy.gains[t] * X(t, s) * policy.gains[s].transpose();
  }
  g.cov = 0.5 * (g.cov + g.cov.transpose()).eval();
  return g;
}

MahalanobisResult mahalanobis(const Eigen::VectorXd& tau, const TrajectoryGaussian& g) {
  if (tau.size() != g.mean.size())
    throw std::invalid_argument("mahalanobis: dimension mismatch");
  return evaluate(factorize(g), tau);
}

ErrorReport error_curves(const std::vector<AlgorithmSamples>& samples,
                         const std::vector<Eigen::VectorXd>& oracles, int n,
                         int m, int T) {
  ErrorReport report;
  const auto n_alg = static_cast<Eigen::Index>(samples.size());
  report.state_error = Eigen::MatrixXd::Zero(T + 1, n_alg);
  report.control_error = Eigen::MatrixXd::Zero(T, n_alg);

  for (Eigen::Index a = 0; a < n_alg; ++a) {
    const AlgorithmSamples& alg = samples[static_cast<size_t>(a)];
    report.algorithms.push_back(alg.name);
    if (alg.condition_index.size() != alg.trajectories.size())
      throw std::invalid_argument("error_curves: index/trajectory count mismatch");
    if (alg.trajectories.empty())
      throw std::invalid_argument("error_curves: no samples for " + alg.name);

    for (size_t k = 0; k < alg.trajectories.size(); ++k) {
      const int c = alg.condition_index[k];
      if (c < 0 || c >= static_cast<int>(oracles.size()))
        throw std::invalid_argument("error_curves: missing oracle for condition " +
                                    std::to_string(c));
      const Trajectory sample = unflatten(alg.trajectories[k], n, m, T);
      const Trajectory oracle = unflatten(oracles[static_cast<size_t>(c)], n, m, T);
      for (int t = 0; t <= T; ++t)
        report.state_error(t, a) +=
            (sample.states.row(t) - oracle.states.row(t)).squaredNorm();
      for (int t = 0; t < T; ++t)
        report.control_error(t, a) +=
            (sample.controls.row(t) - oracle.controls.row(t)).squaredNorm();
    }
    const double count = static_cast<double>(alg.trajectories.size());
    report.state_error.col(a) /= count;
    report.control_error.col(a) /= count;
  }
  return report;
}

Eigen::VectorXd theorem1_diagnostic(const SampleTrace& trace,
                                    const TrajectoryGaussian& g,
                                    const Eigen::VectorXd& scales) {
  if (trace.per_step_states.rows() == 0)
    throw std::invalid_argument(
        "theorem1_diagnostic: trace has no per-step states (enable keep_steps)");
  const SupportFactorization f = factorize(g);
  Eigen::VectorXd series(trace.per_step_states.rows());
  for (Eigen::Index k = 0; k < trace.per_step_states.rows(); ++k) {
    const Eigen::VectorXd phys =
        trace.per_step_states.row(k).transpose().cwiseProduct(scales);
    series[k] = evaluate(f, phys).distance;
  }
  return series;
}

void write_error_csv(const ErrorReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "t";
  for (const auto& name : report.algorithms)
    out << ",state_err_" << name << ",ctrl_err_" << name;
  out << "\n";
  const Eigen::Index T1 = report.state_error.rows();
  for (Eigen::Index t = 0; t < T1; ++t) {
    out << t;
    for (Eigen::Index a = 0; a < report.state_error.cols(); ++a) {
      out << ",";
      print_row(out, report.state_error(t, a));
      out << ",";
      // No control at the final time; keep the column count fixed.
      print_row(out, t < report.control_error.rows()
                         ? report.control_error(t, a)
                         : std::nan(""));
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_residual_csv(const std::vector<ResidualRow>& rows,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "algorithm,sample_id,rel_residual,x0_error\n";
  for (const auto& row : rows) {
    out << row.algorithm << "," << row.sample_id << ",";
    print_row(out, row.rel_residual);
    out << ",";
    print_row(out, row.x0_error);
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_theorem1_csv(const Eigen::VectorXd& mean_series,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "i,mean_mahalanobis\n";
  // Entry k of the series holds step i = L - k.
  const Eigen::Index L = mean_series.size() - 1;
  for (Eigen::Index k = 0; k < mean_series.size(); ++k) {
    out << (L - k) << ",";
    print_row(out, mean_series[k]);
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dyndiff
