#include "dyndiff/projector.hpp"

#include <stdexcept>
#include <string>

namespace dyndiff {

namespace {

constexpr double kRankTolerance = 1e-8;  // relative to the largest pivot

// Orthonormal basis of the column space via column-pivoted QR.
Projector projector_from_columns(const Eigen::MatrixXd& columns,
                                 const std::string& source) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(columns);
  qr.setThreshold(kRankTolerance);
  const int rank = static_cast<int>(qr.rank());
  if (rank == 0)
    throw std::runtime_error("projector: rank collapse, column space is empty (" +
                             source + ")");
  const Eigen::Index D = columns.rows();
  Eigen::MatrixXd thin = Eigen::MatrixXd::Identity(D, rank);
  Eigen::MatrixXd basis = qr.householderQ() * thin;

  Projector proj;
  proj.basis = std::move(basis);
  proj.P = proj.basis * proj.basis.transpose();
  proj.rank = rank;
  proj.source = source;
  return proj;
}

Eigen::MatrixXd scale_rows(const Eigen::MatrixXd& mat, const Eigen::VectorXd& scales) {
  if (scales.size() != mat.rows())
    throw std::invalid_argument("projector: scales length must equal row count");
  if ((scales.array() <= 0.0).any())
    throw std::invalid_argument("projector: scales must be strictly positive");
  return scales.array().inverse().matrix().asDiagonal() * mat;
}

}  // namespace

Projector model_projector(const TrajectoryMap& map, const Eigen::VectorXd& scales) {
  Projector proj = projector_from_columns(scale_rows(map.F, scales), "model");
  const int expected = map.n + map.T * map.m;
  if (proj.rank < expected)
    proj.warning = "model projector rank " + std::to_string(proj.rank) +
                   " below expected " + std::to_string(expected);
  return proj;
}

Eigen::MatrixXd hankel(const Eigen::MatrixXd& series, int depth) {
  const int K = static_cast<int>(series.rows());
  const int d = static_cast<int>(series.cols());
  if (depth < 1) throw std::invalid_argument("hankel: depth must be >= 1");
  if (depth > K)
    throw std::invalid_argument("hankel: depth " + std::to_string(depth) +
                                " exceeds series length " + std::to_string(K));
  const int cols = K - depth + 1;
  Eigen::MatrixXd H(depth * d, cols);
  for (int j = 0; j < cols; ++j)
    for (int k = 0; k < depth; ++k)
      H.block(k * d, j, d, 1) = series.row(j + k).transpose();
  return H;
}

Projector data_projector(const Experiment& exp, int T, const Eigen::VectorXd& scales) {
  const int n = exp.n();
  const int m = exp.m();
  const int S = exp.S();
  if (exp.states.rows() != S + 1)
    throw std::invalid_argument("data_projector: states must have S+1 rows");
  const int min_S = n + T * m + T - 1;
  if (S <= T || S < min_S)
    throw std::invalid_argument(
        "data_projector: experiment length S=" + std::to_string(S) +
        " too short; need S >= " + std::to_string(min_S) +
        " so the stacked Hankel matrix has at least n+Tm columns");

  const Eigen::MatrixXd Hx = hankel(exp.states, T + 1);
  const Eigen::MatrixXd Hu = hankel(exp.controls, T);
  if (Hx.cols() != Hu.cols())
    throw std::runtime_error("data_projector: Hankel column mismatch");

  // Row order is x(0..T) then u(0..T-1), matching the flattened layout.
  Eigen::MatrixXd stacked(Hx.rows() + Hu.rows(), Hx.cols());
  stacked.topRows(Hx.rows()) = Hx;
  stacked.bottomRows(Hu.rows()) = Hu;

  Projector proj = projector_from_columns(scale_rows(stacked, scales), "hankel");
  const int expected = n + T * m;
  if (proj.rank < expected)
    proj.warning = "hankel projector rank " + std::to_string(proj.rank) +
                   " below expected " + std::to_string(expected) +
                   "; experiment may not be persistently exciting";
  return proj;
}

PersistencyReport persistency_check(const Eigen::MatrixXd& controls, int order) {
  const int S = static_cast<int>(controls.rows());
  const int m = static_cast<int>(controls.cols());
  if (order < 1) throw std::invalid_argument("persistency_check: order must be >= 1");
  if (order > S)
    throw std::invalid_argument("persistency_check: order exceeds signal length");
  const Eigen::MatrixXd H = hankel(controls, order);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(H);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? kRankTolerance * sv[0] : 0.0;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) ++rank;

  PersistencyReport report;
  report.rank = rank;
  report.required_rank = m * order;
  report.is_pe = rank == report.required_rank && H.cols() >= H.rows();
  return report;
}

Eigen::VectorXd scaled_project(const Projector& proj,
                               const Eigen::VectorXd& tau_hat, double beta) {
  if (beta < 0.0 || beta > 1.0)
    throw std::invalid_argument("scaled_project: beta must be in [0,1]");
  if (tau_hat.size() != proj.P.rows())
    throw std::invalid_argument("scaled_project: dimension mismatch");
  // Convex blend of the projection and the identity: admissible vectors are
  // fixed points and the orthogonal residual contracts by exactly sqrt(beta).
  // Summing sqrt(1-beta)*P + sqrt(beta)*I instead would scale the admissible
  // component by sqrt(1-beta)+sqrt(beta) >= 1, and iterating that over a
  // denoising chain amplifies injected noise without bound.
  return (1.0 - std::sqrt(beta)) * (proj.P * tau_hat) +
         std::sqrt(beta) * tau_hat;
}

}  // namespace dyndiff
