#include "dyndiff/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>

#include "dyndiff/eval.hpp"
#include "dyndiff/io.hpp"
#include "dyndiff/sampler.hpp"

namespace dyndiff {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Decorrelated per-stage seeds derived from the run seed.
std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) {
  std::uint64_t sm = seed ^ (0xA0761D6478BD642FULL * (stage + 1));
  return splitmix64_next(sm);
}

Eigen::MatrixXd double_integrator_A() {
  Eigen::MatrixXd A(4, 4);
  A << 1, 0, 0.1, 0,
       0, 1, 0, 0.1,
       0, 0, 1, 0,
       0, 0, 0, 1;
  return A;
}

Eigen::MatrixXd double_integrator_B() {
  Eigen::MatrixXd B(4, 2);
  B << 0, 0,
       0, 0,
       0.1, 0,
       0, 0.1;
  return B;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw std::invalid_argument("config: unknown key \"" + item.key() +
                                  "\" in " + context);
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void maybe_matrix(const json& j, const char* key, Eigen::MatrixXd& out) {
  if (j.contains(key)) out = matrix_from_json(j.at(key));
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.profile != "desk" && cfg.profile != "paper")
    throw std::invalid_argument("config: profile must be desk or paper");
  if (cfg.task_family != "lqr" && cfg.task_family != "waypoint")
    throw std::invalid_argument("config: task_family must be lqr or waypoint");
  if (cfg.A.rows() == 0 || cfg.A.rows() != cfg.A.cols())
    throw std::invalid_argument("config: A must be square and nonempty");
  if (cfg.B.rows() != cfg.A.rows() || cfg.B.cols() < 1)
    throw std::invalid_argument("config: B must have n rows");
  if (cfg.noise_std < 0.0)
    throw std::invalid_argument("config: noise_std must be nonnegative");
  if (cfg.task_family == "waypoint" && cfg.noise_std != 0.0)
    throw std::invalid_argument(
        "config: the waypoint oracle requires a noiseless system");
  if (cfg.schedule_k <= 0.0 || cfg.schedule_L < 1)
    throw std::invalid_argument("config: schedule needs k > 0 and L >= 1");
  if (cfg.test_conditions < 1 || cfg.per_condition < 1)
    throw std::invalid_argument("config: test_conditions and per_condition must be >= 1");
  if (cfg.algorithms.empty())
    throw std::invalid_argument("config: at least one algorithm required");
  for (const std::string& a : cfg.algorithms)
    if (a != "vanilla" && a != "alg1" && a != "alg2")
      throw std::invalid_argument("config: unknown algorithm \"" + a + "\"");
  if (cfg.experiment_S < 1)
    throw std::invalid_argument("config: experiment_S must be >= 1");
  if (cfg.training.steps < 1 || cfg.training.batch_size < 1)
    throw std::invalid_argument("config: training steps and batch_size must be >= 1");
  const int N = cfg.task_family == "lqr" ? cfg.lqr.N : cfg.waypoint.N;
  if (N < 1) throw std::invalid_argument("config: dataset N must be >= 1");
}

void write_stage_config(const RunConfig& cfg, const std::string& stage,
                        const std::vector<fs::path>& inputs, const fs::path& dir,
                        const json& extra = json::object()) {
  json j = run_config_to_json(cfg);
  j["stage"] = stage;
  json hashes = json::object();
  // Keyed on the trailing <dir>/<file> components so two runs rooted at
  // different directories produce byte-identical resolved configs.
  for (const fs::path& p : inputs) {
    const std::string key =
        (p.parent_path().filename() / p.filename()).generic_string();
    hashes[key] = hash_file(p);
  }
  j["input_hashes"] = hashes;
  for (const auto& item : extra.items()) j[item.key()] = item.value();
  write_json_file(dir / "resolved_config.json", j);
}

std::vector<fs::path> dir_artifacts(const fs::path& dir) {
  return {dir / "manifest.json", dir / "data.bin"};
}

void append(std::vector<fs::path>& dst, const std::vector<fs::path>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

std::vector<fs::path> checkpoint_artifacts(const fs::path& dir) {
  return {dir / "header.json", dir / "weights.bin"};
}

}  // namespace

LtiSystem RunConfig::system() const { return LtiSystem(A, B, noise_std); }

RunConfig default_run_config(const std::string& profile,
                             const std::string& task_family) {
  RunConfig cfg;
  cfg.profile = profile;
  cfg.task_family = task_family;
  cfg.A = double_integrator_A();
  cfg.B = double_integrator_B();

  const bool paper = profile == "paper";
  const int N = paper ? 10000 : 2000;
  cfg.schedule_k = paper ? 0.001 : 0.005;
  cfg.schedule_L = paper ? 1000 : 200;
  cfg.training.steps = paper ? 30000 : 2000;
  cfg.training.batch_size = 64;
  cfg.training.lr = 1e-3;
  cfg.test_conditions = 100;
  cfg.per_condition = 10;
  cfg.experiment_S = 100;
  cfg.theorem1_traces = 100;

  cfg.lqr.N = N;
  cfg.lqr.T = 30;
  cfg.lqr.Q = Eigen::Vector4d(10, 10, 1, 1).asDiagonal();
  cfg.lqr.R = Eigen::MatrixXd::Identity(2, 2);

  cfg.waypoint.N = N;
  cfg.waypoint.T = 40;
  // Small effort weight: position "leverage" of one control step is O(dt^2),
  // so a large R would make the optimum barely chase the waypoints.
  cfg.waypoint.R_weight = 0.001 * Eigen::MatrixXd::Identity(2, 2);
  if (!paper) cfg.waypoint.fixed_times = {5, 33};

  if (task_family == "waypoint") {
    cfg.noise_std = 0.0;
    cfg.experiment_noise_std = 0.0;
    // T=40 needs a longer experiment: the stacked Hankel matrix must have at
    // least n + T*m = 84 columns and a PE input of order T + n needs
    // S >= (m+1)(T+n) - 1 = 131.
    cfg.experiment_S = 200;
  } else {
    cfg.noise_std = 1.0;
    // A noiseless identification experiment keeps the data-driven projector
    // exact; set > 0 to study degradation.
    cfg.experiment_noise_std = 0.0;
  }
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json solver = {
      {"restarts", cfg.waypoint.solver.restarts},
      {"max_iters", cfg.waypoint.solver.max_iters},
      {"max_step", cfg.waypoint.solver.max_step},
      {"grad_tol", cfg.waypoint.solver.grad_tol},
      {"init_noise", cfg.waypoint.solver.init_noise},
  };
  json dataset;
  if (cfg.task_family == "lqr") {
    dataset = {
        {"N", cfg.lqr.N},
        {"T", cfg.lqr.T},
        {"init_halfwidth", cfg.lqr.init_halfwidth},
        {"target_halfwidth", cfg.lqr.target_halfwidth},
        {"Q", matrix_to_json(cfg.lqr.Q)},
        {"R", matrix_to_json(cfg.lqr.R)},
    };
  } else {
    dataset = {
        {"N", cfg.waypoint.N},
        {"T", cfg.waypoint.T},
        {"waypoints_min", cfg.waypoint.waypoints_min},
        {"waypoints_max", cfg.waypoint.waypoints_max},
        {"obstacles_min", cfg.waypoint.obstacles_min},
        {"obstacles_max", cfg.waypoint.obstacles_max},
        {"V_max", cfg.waypoint.V_max},
        {"O_max", cfg.waypoint.O_max},
        {"fixed_times", cfg.waypoint.fixed_times},
        {"init_halfwidth", cfg.waypoint.init_halfwidth},
        {"target_halfwidth", cfg.waypoint.target_halfwidth},
        {"waypoint_halfwidth", cfg.waypoint.waypoint_halfwidth},
        {"obstacle_halfwidth", cfg.waypoint.obstacle_halfwidth},
        {"radius_min", cfg.waypoint.radius_min},
        {"radius_max", cfg.waypoint.radius_max},
        {"R_weight", matrix_to_json(cfg.waypoint.R_weight)},
        {"solver", solver},
    };
  }

  return json{
      {"profile", cfg.profile},
      {"task_family", cfg.task_family},
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"A", matrix_to_json(cfg.A)},
      {"B", matrix_to_json(cfg.B)},
      {"noise_std", cfg.noise_std},
      {"dataset", dataset},
      {"test_conditions", cfg.test_conditions},
      {"schedule", {{"k", cfg.schedule_k}, {"L", cfg.schedule_L}}},
      {"denoiser",
       {{"time_embed_dim", cfg.denoiser.time_embed_dim},
        {"hidden_dim", cfg.denoiser.hidden_dim},
        {"hidden_layers", cfg.denoiser.hidden_layers},
        {"activation", cfg.denoiser.activation}}},
      {"training",
       {{"steps", cfg.training.steps},
        {"batch_size", cfg.training.batch_size},
        {"lr", cfg.training.lr},
        {"log_every", cfg.training.log_every}}},
      {"sampler",
       {{"algorithms", cfg.algorithms}, {"per_condition", cfg.per_condition}}},
      {"experiment",
       {{"S", cfg.experiment_S}, {"noise_std", cfg.experiment_noise_std}}},
      {"eval", {{"theorem1_traces", cfg.theorem1_traces}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  std::string profile = "desk";
  std::string family = "lqr";
  maybe(j, "profile", profile);
  maybe(j, "task_family", family);
  if (family != "lqr" && family != "waypoint")
    throw std::invalid_argument("config: task_family must be lqr or waypoint");
  if (profile != "desk" && profile != "paper")
    throw std::invalid_argument("config: profile must be desk or paper");
  RunConfig cfg = default_run_config(profile, family);

  reject_unknown_keys(j,
                      {"profile", "task_family", "seed", "threads", "A", "B",
                       "noise_std", "dataset", "test_conditions", "schedule",
                       "denoiser", "training", "sampler", "experiment", "eval",
                       "stage", "input_hashes", "algorithm", "training_result"},
                      "top level");
  maybe(j, "seed", cfg.seed);
  maybe(j, "threads", cfg.threads);
  maybe_matrix(j, "A", cfg.A);
  maybe_matrix(j, "B", cfg.B);
  maybe(j, "noise_std", cfg.noise_std);
  maybe(j, "test_conditions", cfg.test_conditions);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    if (family == "lqr") {
      reject_unknown_keys(
          d, {"N", "T", "init_halfwidth", "target_halfwidth", "Q", "R"},
          "dataset (lqr)");
      maybe(d, "N", cfg.lqr.N);
      maybe(d, "T", cfg.lqr.T);
      maybe(d, "init_halfwidth", cfg.lqr.init_halfwidth);
      maybe(d, "target_halfwidth", cfg.lqr.target_halfwidth);
      maybe_matrix(d, "Q", cfg.lqr.Q);
      maybe_matrix(d, "R", cfg.lqr.R);
    } else {
      reject_unknown_keys(
          d,
          {"N", "T", "waypoints_min", "waypoints_max", "obstacles_min",
           "obstacles_max", "V_max", "O_max", "fixed_times", "init_halfwidth",
           "target_halfwidth", "waypoint_halfwidth", "obstacle_halfwidth",
           "radius_min", "radius_max", "R_weight", "solver"},
          "dataset (waypoint)");
      maybe(d, "N", cfg.waypoint.N);
      maybe(d, "T", cfg.waypoint.T);
      maybe(d, "waypoints_min", cfg.waypoint.waypoints_min);
      maybe(d, "waypoints_max", cfg.waypoint.waypoints_max);
      maybe(d, "obstacles_min", cfg.waypoint.obstacles_min);
      maybe(d, "obstacles_max", cfg.waypoint.obstacles_max);
      maybe(d, "V_max", cfg.waypoint.V_max);
      maybe(d, "O_max", cfg.waypoint.O_max);
      maybe(d, "fixed_times", cfg.waypoint.fixed_times);
      maybe(d, "init_halfwidth", cfg.waypoint.init_halfwidth);
      maybe(d, "target_halfwidth", cfg.waypoint.target_halfwidth);
      maybe(d, "waypoint_halfwidth", cfg.waypoint.waypoint_halfwidth);
      maybe(d, "obstacle_halfwidth", cfg.waypoint.obstacle_halfwidth);
      maybe(d, "radius_min", cfg.waypoint.radius_min);
      maybe(d, "radius_max", cfg.waypoint.radius_max);
      maybe_matrix(d, "R_weight", cfg.waypoint.R_weight);
      if (d.contains("solver")) {
        const json& s = d.at("solver");
        reject_unknown_keys(
            s, {"restarts", "max_iters", "max_step", "grad_tol", "init_noise"},
            "dataset.solver");
        maybe(s, "restarts", cfg.waypoint.solver.restarts);
        maybe(s, "max_iters", cfg.waypoint.solver.max_iters);
        maybe(s, "max_step", cfg.waypoint.solver.max_step);
        maybe(s, "grad_tol", cfg.waypoint.solver.grad_tol);
        maybe(s, "init_noise", cfg.waypoint.solver.init_noise);
      }
    }
  }

  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown_keys(s, {"k", "L"}, "schedule");
    maybe(s, "k", cfg.schedule_k);
    maybe(s, "L", cfg.schedule_L);
  }
  if (j.contains("denoiser")) {
    const json& d = j.at("denoiser");
    reject_unknown_keys(
        d, {"time_embed_dim", "hidden_dim", "hidden_layers", "activation"},
        "denoiser");
    maybe(d, "time_embed_dim", cfg.denoiser.time_embed_dim);
    maybe(d, "hidden_dim", cfg.denoiser.hidden_dim);
    maybe(d, "hidden_layers", cfg.denoiser.hidden_layers);
    maybe(d, "activation", cfg.denoiser.activation);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    reject_unknown_keys(t, {"steps", "batch_size", "lr", "log_every"}, "training");
    maybe(t, "steps", cfg.training.steps);
    maybe(t, "batch_size", cfg.training.batch_size);
    maybe(t, "lr", cfg.training.lr);
    maybe(t, "log_every", cfg.training.log_every);
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    reject_unknown_keys(s, {"algorithms", "per_condition"}, "sampler");
    maybe(s, "algorithms", cfg.algorithms);
    maybe(s, "per_condition", cfg.per_condition);
  }
  if (j.contains("experiment")) {
    const json& e = j.at("experiment");
    reject_unknown_keys(e, {"S", "noise_std"}, "experiment");
    maybe(e, "S", cfg.experiment_S);
    maybe(e, "noise_std", cfg.experiment_noise_std);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown_keys(e, {"theorem1_traces"}, "eval");
    maybe(e, "theorem1_traces", cfg.theorem1_traces);
  }

  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(read_json_file(path));
}

void apply_thread_cap(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("DYNDIFF_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) threads = v;
    }
  }
  if (threads > 0) Eigen::setNbThreads(threads);
}

Experiment generate_experiment(const LtiSystem& sys, int S, double noise_std,
                               std::uint64_t seed) {
  if (S < 1) throw std::invalid_argument("generate_experiment: S must be >= 1");
  Rng rng(seed);
  const Eigen::MatrixXd controls = rng.normal_matrix(S, sys.m());
  const Eigen::MatrixXd noise = noise_std * rng.normal_matrix(S, sys.n());
  const Trajectory traj =
      simulate(sys, Eigen::VectorXd::Zero(sys.n()), controls, noise);
  Experiment exp;
  exp.states = traj.states;
  exp.controls = traj.controls;
  return exp;
}

Projector projector_for(const RunConfig& cfg, const std::string& algorithm,
                        const fs::path& experiment_dir,
                        const Eigen::VectorXd& scales) {
  const int T = cfg.task_family == "lqr" ? cfg.lqr.T : cfg.waypoint.T;
  if (algorithm == "alg1")
    return model_projector(response_matrices(cfg.system(), T), scales);
  if (algorithm == "alg2") {
    if (!fs::exists(experiment_dir / "manifest.json"))
      throw std::invalid_argument(
          "algorithm alg2 builds its projector from the identification "
          "experiment (the long rollout Gamma); no experiment found at " +
          experiment_dir.string());
    return data_projector(load_experiment(experiment_dir), T, scales);
  }
  throw std::invalid_argument("no projector for algorithm \"" + algorithm + "\"");
}

GenDataPaths run_gen_data(const RunConfig& cfg, const fs::path& out_dir) {
  validate_run_config(cfg);
  fs::create_directories(out_dir);
  const LtiSystem sys = cfg.system();

  GenDataPaths paths{out_dir / "train", out_dir / "test", out_dir / "experiment"};

  if (cfg.task_family == "lqr") {
    LqrDatasetConfig c = cfg.lqr;
    c.seed = stage_seed(cfg.seed, 0);
    save_dataset(generate_lqr_dataset(sys, c), paths.train);
    c.N = cfg.test_conditions;
    c.seed = stage_seed(cfg.seed, 1);
    save_dataset(generate_lqr_dataset(sys, c), paths.test);
  } else {
    WaypointDatasetConfig c = cfg.waypoint;
    c.seed = stage_seed(cfg.seed, 0);
    save_dataset(generate_waypoint_dataset(sys, c), paths.train);
    c.N = cfg.test_conditions;
    c.seed = stage_seed(cfg.seed, 1);
    save_dataset(generate_waypoint_dataset(sys, c), paths.test);
  }

  const std::uint64_t exp_seed = stage_seed(cfg.seed, 2);
  LtiSystem exp_sys(cfg.A, cfg.B, cfg.experiment_noise_std);
  save_experiment(
      generate_experiment(exp_sys, cfg.experiment_S, cfg.experiment_noise_std,
                          exp_seed),
      cfg.experiment_noise_std, exp_seed, paths.experiment);

  write_stage_config(cfg, "gen-data", {}, out_dir);
  return paths;
}

fs::path run_train(const RunConfig& cfg, const fs::path& data_dir,
                   const fs::path& out_dir) {
  validate_run_config(cfg);
  const fs::path train_dir = data_dir / "train";
  const Dataset ds = load_dataset(train_dir);
  if (ds.task_family != cfg.task_family)
    throw std::invalid_argument("train: dataset family " + ds.task_family +
                                " does not match config family " + cfg.task_family);

  DenoiserConfig dc = cfg.denoiser;
  dc.input_dim = static_cast<int>(ds.trajectories.cols());
  dc.cond_dim = ds.cond_dim();
  dc.skip_scale_k = cfg.schedule_k;
  dc.seed = stage_seed(cfg.seed, 3);

  TrainConfig tc = cfg.training;
  tc.seed = stage_seed(cfg.seed, 4);

  const NoiseSchedule sched = linear_schedule(cfg.schedule_k, cfg.schedule_L);
  TrainLog log;
  DenoiserParams params = train_denoiser(ds, sched, dc, tc, &log);

  Checkpoint ckpt;
  ckpt.params = std::move(params);
  ckpt.schedule_k = cfg.schedule_k;
  ckpt.schedule_L = cfg.schedule_L;
  ckpt.scales = ds.scales;
  ckpt.task_family = ds.task_family;
  ckpt.n = ds.n;
  ckpt.m = ds.m;
  ckpt.T = ds.T;

  fs::create_directories(out_dir);
  save_checkpoint(ckpt, out_dir);
  write_stage_config(cfg, "train", dir_artifacts(train_dir), out_dir,
                     {{"training_result",
                       {{"initial_window_mean", log.initial_window_mean},
                        {"final_window_mean", log.final_window_mean}}}});
  return out_dir;
}

fs::path run_sample(const RunConfig& cfg, const fs::path& ckpt_dir,
                    const fs::path& data_dir, const std::string& algorithm,
                    const fs::path& out_dir) {
  validate_run_config(cfg);
  if (algorithm != "vanilla" && algorithm != "alg1" && algorithm != "alg2")
    throw std::invalid_argument("sample: unknown algorithm \"" + algorithm + "\"");

  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const fs::path test_dir = data_dir / "test";
  const Dataset test = load_dataset(test_dir);
  if (test.cond_dim() != ckpt.params.config.cond_dim)
    throw std::invalid_argument(
        "sample: test-set condition dim " + std::to_string(test.cond_dim()) +
        " does not match checkpoint cond dim " +
        std::to_string(ckpt.params.config.cond_dim));
  if (test.n != ckpt.n || test.m != ckpt.m || test.T != ckpt.T)
    throw std::invalid_argument("sample: test-set dims do not match checkpoint");

  Projector proj;
  const Projector* pp = nullptr;
  if (algorithm != "vanilla") {
    proj = projector_for(cfg, algorithm, data_dir / "experiment", ckpt.scales);
    pp = &proj;
  }

  SamplerOptions opts;
  opts.diagnostics = true;
  const std::vector<SampleTrace> traces =
      batch_sample(ckpt, pp, algorithm, test.conditions, cfg.per_condition,
                   stage_seed(cfg.seed, 5), opts);

  Dataset dump;
  dump.task_family = ckpt.task_family;
  dump.n = ckpt.n;
  dump.m = ckpt.m;
  dump.T = ckpt.T;
  dump.seed = stage_seed(cfg.seed, 5);
  dump.noise_std = cfg.noise_std;
  dump.scales = ckpt.scales;
  dump.trajectories.resize(static_cast<Eigen::Index>(traces.size()),
                           ckpt.scales.size());
  dump.conditions.resize(static_cast<Eigen::Index>(traces.size()),
                         test.cond_dim());
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const Eigen::Index row = static_cast<Eigen::Index>(k);
    dump.trajectories.row(row) = traces[k].trajectory.transpose();
    dump.conditions.row(row) =
        test.conditions.row(static_cast<Eigen::Index>(k) / cfg.per_condition);
  }
  fs::create_directories(out_dir);
  save_dataset(dump, out_dir);

  if (pp != nullptr) {
    std::ofstream csv(out_dir / "diagnostics.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write diagnostics.csv in " + out_dir.string());
    csv << "sample_id,i,residual,prediction_delta\n";
    char buf[128];
    const int L = ckpt.schedule_L;
    for (std::size_t k = 0; k < traces.size(); ++k) {
      const SampleTrace& tr = traces[k];
      for (Eigen::Index s = 0; s < tr.residual_norm.size(); ++s) {
        std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g\n", k,
                      L - static_cast<int>(s), tr.residual_norm[s],
                      tr.prediction_delta[s]);
        csv << buf;
      }
    }
  }

  std::vector<fs::path> inputs = checkpoint_artifacts(ckpt_dir);
  append(inputs, dir_artifacts(test_dir));
  if (algorithm == "alg2") append(inputs, dir_artifacts(data_dir / "experiment"));
  write_stage_config(cfg, "sample", inputs, out_dir, {{"algorithm", algorithm}});
  return out_dir;
}

fs::path run_eval(const RunConfig& cfg, const fs::path& ckpt_dir,
                  const fs::path& data_dir,
                  const std::vector<fs::path>& sample_dirs,
                  const fs::path& out_dir) {
  validate_run_config(cfg);
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  const fs::path test_dir = data_dir / "test";
  const Dataset test = load_dataset(test_dir);

  // Error curves compare against the expert solution of each test condition.
  // For the waypoint family the stored test trajectory already is that
  // (noiseless solver output); for LQR the stored rollout carries a process-
  // noise realization, so the oracle is the noiseless optimal-policy rollout.
  std::vector<Eigen::VectorXd> oracles;
  oracles.reserve(static_cast<std::size_t>(test.N()));
  if (cfg.task_family == "lqr") {
    const LtiSystem sys = cfg.system();
    const Eigen::MatrixXd zero_noise =
        Eigen::MatrixXd::Zero(ckpt.T, sys.n());
    for (int i = 0; i < test.N(); ++i) {
      LqrTask task;
      task.Q = cfg.lqr.Q;
      task.R = cfg.lqr.R;
      task.x_init = test.conditions.row(i).head(ckpt.n).transpose();
      task.x_target = test.conditions.row(i).tail(ckpt.n).transpose();
      task.T = ckpt.T;
      const AffinePolicy policy = lqr_policy(sys, task);
      oracles.push_back(
          flatten(rollout_policy(sys, policy, task.x_init, zero_noise)));
    }
  } else {
    for (int i = 0; i < test.N(); ++i)
      oracles.push_back(test.trajectories.row(i).transpose());
  }

  // Residuals are measured against the model projector for every algorithm
  // so the admissibility metric is shared.
  const Projector model_proj =
      model_projector(response_matrices(cfg.system(), ckpt.T), ckpt.scales);

  std::vector<AlgorithmSamples> all_samples;
  std::vector<ResidualRow> residual_rows;
  std::vector<fs::path> inputs = checkpoint_artifacts(ckpt_dir);
  append(inputs, dir_artifacts(test_dir));

  for (const fs::path& dir : sample_dirs) {
    const json meta = read_json_file(dir / "resolved_config.json");
    const std::string algorithm = meta.at("algorithm").get<std::string>();
    const Dataset dump = load_dataset(dir);
    if (dump.N() != test.N() * cfg.per_condition)
      throw std::invalid_argument("eval: sample dump " + dir.string() +
                                  " does not match test set x per_condition");
    AlgorithmSamples as;
    as.name = algorithm;
    for (int k = 0; k < dump.N(); ++k) {
      const Eigen::VectorXd traj = dump.trajectories.row(k).transpose();
      as.condition_index.push_back(k / cfg.per_condition);
      as.trajectories.push_back(traj);

      const Eigen::VectorXd normalized = traj.cwiseQuotient(ckpt.scales);
      const double denom = normalized.norm();
      const double res = (normalized - model_proj.P * normalized).norm();
      ResidualRow row;
      row.algorithm = algorithm;
      row.sample_id = k;
      row.rel_residual = denom > 0.0 ? res / denom : 0.0;
      const Eigen::VectorXd x_init =
          dump.conditions.row(k).head(ckpt.n).transpose();
      row.x0_error = (traj.head(ckpt.n) - x_init).norm();
      residual_rows.push_back(std::move(row));
    }
    all_samples.push_back(std::move(as));
    append(inputs, dir_artifacts(dir));
  }

  fs::create_directories(out_dir);
  const ErrorReport report =
      error_curves(all_samples, oracles, ckpt.n, ckpt.m, ckpt.T);
  write_error_csv(report, out_dir / "errors.csv");
  write_residual_csv(residual_rows, out_dir / "residuals.csv");

  json extra = json::object();
  if (cfg.task_family == "lqr" && cfg.noise_std == 1.0 && cfg.theorem1_traces > 0) {
    // Mean Mahalanobis distance of Algorithm-1 iterates under the
    // moment-propagated Gaussian, one trace per test condition.
    const LtiSystem sys = cfg.system();
    const int traces = std::min(cfg.theorem1_traces, test.N());
    Eigen::VectorXd mean_series;
    const std::uint64_t seed = stage_seed(cfg.seed, 6);
    SamplerOptions opts;
    opts.keep_steps = true;
    for (int c = 0; c < traces; ++c) {
      const Eigen::VectorXd cond = test.conditions.row(c).transpose();
      const Eigen::VectorXd x_init = cond.head(ckpt.n);
      const Eigen::VectorXd x_target = cond.segment(ckpt.n, ckpt.n);
      LqrTask task{cfg.lqr.Q, cfg.lqr.R, x_target, x_init, ckpt.T};
      const AffinePolicy policy = lqr_policy(sys, task);
      const TrajectoryGaussian g = propagate_moments(sys, policy, x_init);

      std::uint64_t sm = seed ^ (0x9E3779B97F4A7C15ULL * (c + 1));
      const SampleTrace trace = sample_projected(
          ckpt, model_proj, cond, splitmix64_next(sm), "alg1", opts);
      const Eigen::VectorXd series = theorem1_diagnostic(trace, g, ckpt.scales);
      if (mean_series.size() == 0) mean_series = Eigen::VectorXd::Zero(series.size());
      mean_series += series;
    }
    mean_series /= double(traces);
    write_theorem1_csv(mean_series, out_dir / "theorem1.csv");
    extra["theorem1_traces_used"] = traces;
  }

  write_stage_config(cfg, "eval", inputs, out_dir, extra);
  return out_dir;
}

ReproPaths run_repro(const RunConfig& cfg, const fs::path& out_dir) {
  validate_run_config(cfg);
  fs::create_directories(out_dir);
  ReproPaths paths;
  paths.data = run_gen_data(cfg, out_dir / "data");
  paths.checkpoint = run_train(cfg, out_dir / "data", out_dir / "checkpoint");
  for (const std::string& alg : cfg.algorithms)
    paths.samples.push_back(run_sample(cfg, paths.checkpoint, out_dir / "data",
                                       alg, out_dir / ("samples_" + alg)));
  paths.report = run_eval(cfg, paths.checkpoint, out_dir / "data", paths.samples,
                          out_dir / "eval");
  return paths;
}

}  // namespace dyndiff
