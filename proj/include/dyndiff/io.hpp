#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include <json.hpp>

#include "dyndiff/projector.hpp"
#include "dyndiff/tasks.hpp"

namespace dyndiff {

// I/O failures carry their own type so the CLI can map them to exit code 4.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raw little-endian doubles (the build asserts a little-endian target).
void write_doubles(const std::filesystem::path& path, const double* data,
                   std::size_t count);
std::vector<double> read_doubles(const std::filesystem::path& path);
std::vector<double> read_doubles_exact(const std::filesystem::path& path,
                                       std::size_t expected);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

// FNV-1a over a file's bytes; used to pin stage inputs in resolved configs.
std::uint64_t hash_file(const std::filesystem::path& path);

// Dataset directory: manifest.json + data.bin, each record a flattened
// trajectory followed by its condition vector.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Experiment directory: manifest.json + data.bin (states then controls).
void save_experiment(const Experiment& exp, double noise_std, std::uint64_t seed,
                     const std::filesystem::path& dir);
Experiment load_experiment(const std::filesystem::path& dir);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

}  // namespace dyndiff
