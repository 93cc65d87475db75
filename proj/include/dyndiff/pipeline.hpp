#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dyndiff/denoiser.hpp"
#include "dyndiff/lti.hpp"
#include "dyndiff/projector.hpp"
#include "dyndiff/tasks.hpp"

namespace dyndiff {

// Everything one end-to-end run needs, serialized as flat JSON next to every
// stage's outputs. Defaults come from a (profile, task_family) pair; explicit
// config keys and CLI flags override them.
struct RunConfig {
  std::string profile = "desk";      // "desk" or "paper"
  std::string task_family = "lqr";   // "lqr" or "waypoint"
  std::uint64_t seed = 0;
  int threads = 0;                    // 0 = leave the runtime default

  // System.
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double noise_std = 1.0;

  // Dataset generation.
  LqrDatasetConfig lqr;
  WaypointDatasetConfig waypoint;
  int test_conditions = 100;

  // Diffusion schedule.
  double schedule_k = 0.005;
  int schedule_L = 200;

  // Denoiser + training; input/cond dims are filled from the dataset.
  DenoiserConfig denoiser;
  TrainConfig training;

  // Sampling.
  std::vector<std::string> algorithms{"vanilla", "alg1", "alg2"};
  int per_condition = 10;

  // Identification experiment for the data-driven projector: S random
  // inputs u ~ N(0, I) from x(0) = 0, with its own process-noise level.
  int experiment_S = 100;
  double experiment_noise_std = 0.0;

  // Evaluation: number of traced samples behind theorem1.csv.
  int theorem1_traces = 100;

  LtiSystem system() const;
};

RunConfig default_run_config(const std::string& profile,
                             const std::string& task_family);

nlohmann::json run_config_to_json(const RunConfig& cfg);
// Builds defaults from the json's profile/task_family keys (falling back to
// desk/lqr), then overrides whatever keys are present. Unknown keys are
// rejected so typos fail loudly.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Caps Eigen's internal parallelism; threads <= 0 falls back to the
// DYNDIFF_THREADS environment variable, and 0/unset leaves the default.
void apply_thread_cap(int threads);

// Stage outputs. Every stage writes resolved_config.json (full config plus
// stage name and input-file hashes) into its output directory.

struct GenDataPaths {
  std::filesystem::path train;       // training dataset directory
  std::filesystem::path test;        // test dataset directory (oracle rows)
  std::filesystem::path experiment;  // identification experiment directory
};

GenDataPaths run_gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Trains on data_dir/train and writes a checkpoint into out_dir.
std::filesystem::path run_train(const RunConfig& cfg,
                                const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir);

// Samples per_condition traces per test condition with one algorithm; the
// dump reuses the dataset directory format (record = trajectory + condition,
// ordered by condition then sample index) plus diagnostics.csv.
std::filesystem::path run_sample(const RunConfig& cfg,
                                 const std::filesystem::path& ckpt_dir,
                                 const std::filesystem::path& data_dir,
                                 const std::string& algorithm,
                                 const std::filesystem::path& out_dir);

// Writes errors.csv and residuals.csv from the sample dumps; for the LQR
// family with unit process noise it also re-traces Algorithm-1 samples and
// writes theorem1.csv.
std::filesystem::path run_eval(const RunConfig& cfg,
                               const std::filesystem::path& ckpt_dir,
                               const std::filesystem::path& data_dir,
                               const std::vector<std::filesystem::path>& sample_dirs,
                               const std::filesystem::path& out_dir);

struct ReproPaths {
  GenDataPaths data;
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> samples;
  std::filesystem::path report;
};

// gen-data -> train -> sample (each algorithm) -> eval under out_dir.
ReproPaths run_repro(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Shared helpers used by stages and tests.
Projector projector_for(const RunConfig& cfg, const std::string& algorithm,
                        const std::filesystem::path& experiment_dir,
                        const Eigen::VectorXd& scales);
Experiment generate_experiment(const LtiSystem& sys, int S, double noise_std,
                               std::uint64_t seed);

}  // namespace dyndiff
