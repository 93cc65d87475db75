#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dyndiff/denoiser.hpp"
#include "dyndiff/io.hpp"
#include "dyndiff/rng.hpp"
#include "dyndiff/tasks.hpp"
#include "test_util.hpp"

using namespace dyndiff;
namespace fs = std::filesystem;

namespace {

DenoiserConfig small_config(std::uint64_t seed) {
  DenoiserConfig cfg;
  cfg.input_dim = 5;
  cfg.cond_dim = 3;
  cfg.time_embed_dim = 4;
  cfg.hidden_dim = 6;
  cfg.hidden_layers = 2;
  cfg.seed = seed;
  return cfg;
}

double loss_at(const DenoiserParams& params, const Eigen::MatrixXd& tau0,
               const Eigen::MatrixXd& cond, const NoiseSchedule& sched,
               std::uint64_t seed) {
  Rng rng(seed);  // fresh stream: identical step/noise draws every call
  return diffusion_loss(params, tau0, cond, sched, rng).loss;
}

}  // namespace

TEST_CASE("embed_time: explicit sinusoidal values") {
  const Eigen::VectorXd e = embed_time(7, 100, 4);
  CHECK(e[0] == doctest::Approx(std::sin(7.0)).epsilon(1e-15));
  CHECK(e[1] == doctest::Approx(std::cos(7.0)).epsilon(1e-15));
  const double omega = std::exp(-std::log(1e4) * 2.0 / 4.0);  // = 0.01
  CHECK(e[2] == doctest::Approx(std::sin(7.0 * omega)).epsilon(1e-15));
  CHECK(e[3] == doctest::Approx(std::cos(7.0 * omega)).epsilon(1e-15));

  CHECK_THROWS_AS(embed_time(1, 10, 5), std::invalid_argument);
  CHECK_THROWS_AS(embed_time(11, 10, 4), std::invalid_argument);
  CHECK_THROWS_AS(embed_time(-1, 10, 4), std::invalid_argument);
}

TEST_CASE("init_denoiser: shapes, bounds, determinism") {
  const DenoiserConfig cfg = small_config(3);
  const DenoiserParams params = init_denoiser(cfg);
  REQUIRE(params.weights.size() == 3);
  CHECK(params.weights[0].rows() == 5 + 4 + 3);
  CHECK(params.weights[0].cols() == 6);
  CHECK(params.weights[1].rows() == 6);
  CHECK(params.weights[2].cols() == 5);
  for (size_t l = 0; l < params.weights.size(); ++l) {
    const double bound = std::sqrt(
        6.0 / (params.weights[l].rows() + params.weights[l].cols()));
    CHECK(params.weights[l].array().abs().maxCoeff() <= bound);
    CHECK(params.biases[l].norm() == 0.0);
  }
  const DenoiserParams same = init_denoiser(cfg);
  for (size_t l = 0; l < params.weights.size(); ++l)
    CHECK((params.weights[l] - same.weights[l]).norm() == 0.0);
  DenoiserConfig other = cfg;
  other.seed = 4;
  CHECK((init_denoiser(other).weights[0] - params.weights[0]).norm() > 0.0);
}

TEST_CASE("zeroed weights reduce the network to the skip connection") {
  DenoiserParams params = init_denoiser(small_config(5));
  for (auto& w : params.weights) w.setZero();
  Rng rng(6);
  const Eigen::VectorXd tau = rng.normal_vector(5);
  const Eigen::VectorXd cond = rng.normal_vector(3);
  CHECK((denoiser_forward(params, tau, 3, 10, cond) - tau).norm() == 0.0);
}

TEST_CASE("skip-connection gain follows sqrt(1 - k*i)") {
  DenoiserConfig cfg = small_config(5);
  cfg.skip_scale_k = 0.1;
  DenoiserParams params = init_denoiser(cfg);
  for (auto& w : params.weights) w.setZero();
  Rng rng(7);
  const Eigen::VectorXd tau = rng.normal_vector(5);
  const Eigen::VectorXd cond = rng.normal_vector(3);
  for (int i : {1, 4, 9, 10}) {
    const double gain = std::sqrt(std::max(0.0, 1.0 - 0.1 * i));
    CHECK((denoiser_forward(params, tau, i, 10, cond) - gain * tau).norm() <=
          1e-15);
  }
}

TEST_CASE("batched forward equals per-row forward") {
  const DenoiserParams params = init_denoiser(small_config(7));
  Rng rng(8);
  const int batch = 4;
  const Eigen::MatrixXd tau = rng.normal_matrix(batch, 5);
  const Eigen::MatrixXd cond = rng.normal_matrix(batch, 3);
  Eigen::VectorXi steps(batch);
  steps << 1, 4, 7, 9;
  const Eigen::MatrixXd out = denoiser_forward_batch(params, tau, steps, 10, cond);
  for (int b = 0; b < batch; ++b) {
    const Eigen::VectorXd single = denoiser_forward(
        params, tau.row(b).transpose(), steps[b], 10, cond.row(b).transpose());
    CHECK((out.row(b).transpose() - single).norm() < 1e-14);
  }
}

TEST_CASE("forward rejects non-finite input and wrong dims") {
  const DenoiserParams params = init_denoiser(small_config(9));
  Eigen::VectorXd tau = Eigen::VectorXd::Zero(5);
  const Eigen::VectorXd cond = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(denoiser_forward(params, Eigen::VectorXd::Zero(4), 1, 10, cond),
                  std::invalid_argument);
  tau[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(denoiser_forward(params, tau, 1, 10, cond),
                  std::invalid_argument);
}

TEST_CASE("diffusion_loss gradients match central finite differences") {
  const NoiseSchedule sched = linear_schedule(0.1, 10);
  DenoiserParams params = init_denoiser(small_config(11));
  Rng data_rng(12);
  const Eigen::MatrixXd tau0 = data_rng.normal_matrix(3, 5);
  const Eigen::MatrixXd cond = data_rng.normal_matrix(3, 3);
  const std::uint64_t loss_seed = 13;

  Rng rng(loss_seed);
  const LossResult analytic = diffusion_loss(params, tau0, cond, sched, rng);

  const double h = 1e-5;
  Rng pick(14);
  for (size_t l = 0; l < params.weights.size(); ++l) {
    for (int probe = 0; probe < 6; ++probe) {
      const auto r = static_cast<Eigen::Index>(
          pick.uniform_int(0, params.weights[l].rows() - 1));
      const auto c = static_cast<Eigen::Index>(
          pick.uniform_int(0, params.weights[l].cols() - 1));
      const double saved = params.weights[l](r, c);
      params.weights[l](r, c) = saved + h;
      const double up = loss_at(params, tau0, cond, sched, loss_seed);
      params.weights[l](r, c) = saved - h;
      const double down = loss_at(params, tau0, cond, sched, loss_seed);
      params.weights[l](r, c) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double g = analytic.grad_weights[l](r, c);
      CHECK(std::abs(fd - g) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
    // A couple of bias entries per layer as well.
    for (int probe = 0; probe < 2; ++probe) {
      const auto i = static_cast<Eigen::Index>(
          pick.uniform_int(0, params.biases[l].size() - 1));
      const double saved = params.biases[l][i];
      params.biases[l][i] = saved + h;
      const double up = loss_at(params, tau0, cond, sched, loss_seed);
      params.biases[l][i] = saved - h;
      const double down = loss_at(params, tau0, cond, sched, loss_seed);
      params.biases[l][i] = saved;
      const double fd = (up - down) / (2.0 * h);
      CHECK(std::abs(fd - analytic.grad_biases[l][i]) <=
            1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("adam_step matches the hand-iterated update rule") {
  DenoiserConfig cfg = small_config(15);
  DenoiserParams params = init_denoiser(cfg);
  AdamState state = init_adam(params, 1e-2);

  const double g = 0.37;  // constant synthetic gradient on one entry
  LossResult grads;
  for (const auto& w : params.weights)
    grads.grad_weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : params.biases)
    grads.grad_biases.push_back(Eigen::VectorXd::Zero(b.size()));
  grads.grad_weights[0](0, 0) = g;

  const double before = params.weights[0](0, 0);
  double expect = before;
  double m = 0.0, v = 0.0;
  for (int step = 1; step <= 3; ++step) {
    adam_step(params, state, grads);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, step));
    const double vhat = v / (1.0 - std::pow(0.999, step));
    expect -= 1e-2 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(params.weights[0](0, 0) == doctest::Approx(expect).epsilon(1e-14));
  }
  // Untouched entries only move through their (zero) gradients.
  CHECK(params.weights[1].isApprox(init_denoiser(cfg).weights[1]));
}

TEST_CASE("checkpoint round trip is bit-exact and forward-equivalent") {
  const fs::path dir = fs::temp_directory_path() / "dyndiff_ckpt_test";
  fs::remove_all(dir);

  Checkpoint ckpt;
  ckpt.params = init_denoiser(small_config(17));
  ckpt.params.trained_steps = 42;
  ckpt.params.final_loss = 0.123;
  ckpt.schedule_k = 0.05;
  ckpt.schedule_L = 20;
  ckpt.scales = Eigen::VectorXd::LinSpaced(5, 0.5, 2.0);
  ckpt.task_family = "lqr";
  ckpt.n = 1;
  ckpt.m = 1;
  ckpt.T = 2;

  save_checkpoint(ckpt, dir);
  const std::uint64_t h1 = hash_file(dir / "weights.bin");
  const Checkpoint back = load_checkpoint(dir);
  save_checkpoint(back, dir);
  CHECK(hash_file(dir / "weights.bin") == h1);

  Rng rng(18);
  const Eigen::VectorXd tau = rng.normal_vector(5);
  const Eigen::VectorXd cond = rng.normal_vector(3);
  CHECK((denoiser_forward(ckpt.params, tau, 5, 20, cond) -
         denoiser_forward(back.params, tau, 5, 20, cond))
            .norm() == 0.0);
  CHECK(back.schedule_L == 20);
  CHECK((back.scales - ckpt.scales).norm() == 0.0);

  // Truncated weight file is rejected.
  const auto full = fs::file_size(dir / "weights.bin");
  fs::resize_file(dir / "weights.bin", full - 8);
  CHECK_THROWS_AS(load_checkpoint(dir), IoError);
  fs::remove_all(dir);
}

TEST_CASE("training reduces the loss on a small dataset") {
  const LtiSystem sys = testutil::double_integrator(1.0);
  LqrDatasetConfig dcfg;
  dcfg.N = 32;
  dcfg.T = 4;
  dcfg.Q = Eigen::Vector4d(10, 10, 1, 1).asDiagonal();
  dcfg.R = Eigen::MatrixXd::Identity(2, 2);
  dcfg.seed = 19;
  const Dataset ds = generate_lqr_dataset(sys, dcfg);

  const NoiseSchedule sched = linear_schedule(0.05, 20);
  DenoiserConfig cfg;
  cfg.time_embed_dim = 8;
  cfg.hidden_dim = 32;
  cfg.hidden_layers = 2;
  cfg.seed = 20;
  TrainConfig tcfg;
  tcfg.steps = 300;
  tcfg.batch_size = 16;
  tcfg.seed = 21;

  TrainLog log;
  const DenoiserParams params = train_denoiser(ds, sched, cfg, tcfg, &log);
  CHECK(params.trained_steps == 300);
  CHECK(std::isfinite(params.final_loss));
  CHECK(log.final_window_mean < log.initial_window_mean);
}
