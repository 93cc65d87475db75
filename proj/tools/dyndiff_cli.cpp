#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dyndiff/io.hpp"
#include "dyndiff/pipeline.hpp"

namespace fs = std::filesystem;
using dyndiff::RunConfig;

namespace {

// Exit codes: 1 usage, 2 validation, 3 numerical failure, 4 I/O.
constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kNumerical = 3;
constexpr int kIo = 4;

struct CommonFlags {
  std::string config;
  std::string profile;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool threads_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool out_required = true) {
  cmd->add_option("--config", flags.config, "JSON config file");
  cmd->add_option("--profile", flags.profile, "Preset scale: paper or desk");
  auto* out = cmd->add_option("--out", flags.out, "Output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", flags.seed, "Run seed")
      ->each([&flags](const std::string&) { flags.seed_set = true; });
  cmd->add_option("--threads", flags.threads,
                  "Thread cap (fallback: DYNDIFF_THREADS)")
      ->each([&flags](const std::string&) { flags.threads_set = true; });
}

RunConfig resolve_config(const CommonFlags& flags) {
  nlohmann::json j = nlohmann::json::object();
  if (!flags.config.empty()) j = dyndiff::read_json_file(flags.config);
  if (!flags.profile.empty()) j["profile"] = flags.profile;
  if (flags.seed_set) j["seed"] = flags.seed;
  if (flags.threads_set) j["threads"] = flags.threads;
  RunConfig cfg = dyndiff::run_config_from_json(j);
  dyndiff::apply_thread_cap(cfg.threads);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamics-aware diffusion for linear-system trajectories"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, sample_flags, eval_flags, repro_flags;
  std::string train_data, sample_data, sample_ckpt, sample_alg = "alg1";
  std::string eval_data, eval_ckpt;
  std::vector<std::string> eval_samples;

  CLI::App* gen = app.add_subcommand("gen-data",
                                     "Generate train/test datasets and the "
                                     "identification experiment");
  add_common(gen, gen_flags);

  CLI::App* train = app.add_subcommand("train", "Train the denoiser");
  add_common(train, train_flags);
  train->add_option("--data", train_data, "gen-data output directory")
      ->required();

  CLI::App* sample = app.add_subcommand("sample", "Sample trajectories");
  add_common(sample, sample_flags);
  sample->add_option("--checkpoint", sample_ckpt, "Checkpoint directory")
      ->required();
  sample->add_option("--data", sample_data, "gen-data output directory")
      ->required();
  sample->add_option("--algorithm", sample_alg, "vanilla, alg1 or alg2");

  CLI::App* eval = app.add_subcommand("eval", "Write evaluation reports");
  add_common(eval, eval_flags);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")
      ->required();
  eval->add_option("--data", eval_data, "gen-data output directory")
      ->required();
  eval->add_option("--samples", eval_samples, "Sample dump directories")
      ->required();

  CLI::App* repro =
      app.add_subcommand("repro", "Full pipeline: gen-data, train, sample, eval");
  add_common(repro, repro_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (gen->parsed()) {
      dyndiff::run_gen_data(resolve_config(gen_flags), gen_flags.out);
      std::cout << "datasets written to " << gen_flags.out << "\n";
    } else if (train->parsed()) {
      dyndiff::run_train(resolve_config(train_flags), train_data, train_flags.out);
      std::cout << "checkpoint written to " << train_flags.out << "\n";
    } else if (sample->parsed()) {
      dyndiff::run_sample(resolve_config(sample_flags), sample_ckpt, sample_data,
                          sample_alg, sample_flags.out);
      std::cout << "samples written to " << sample_flags.out << "\n";
    } else if (eval->parsed()) {
      std::vector<fs::path> dirs(eval_samples.begin(), eval_samples.end());
      dyndiff::run_eval(resolve_config(eval_flags), eval_ckpt, eval_data, dirs,
                        eval_flags.out);
      std::cout << "reports written to " << eval_flags.out << "\n";
    } else if (repro->parsed()) {
      dyndiff::run_repro(resolve_config(repro_flags), repro_flags.out);
      std::cout << "pipeline artifacts written to " << repro_flags.out << "\n";
    }
  } catch (const dyndiff::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  }
  return 0;
}
