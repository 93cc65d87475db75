#include "dyndiff/io.hpp"

#include <bit>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian");

namespace dyndiff {

void write_doubles(const std::filesystem::path& path, const double* data,
                   std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<double> read_doubles(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open: " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(double) != 0)
    throw IoError("file size is not a multiple of 8 bytes: " + path.string());
  std::vector<double> data(bytes / sizeof(double));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + path.string());
  return data;
}

std::vector<double> read_doubles_exact(const std::filesystem::path& path,
                                       std::size_t expected) {
  std::vector<double> data = read_doubles(path);
  if (data.size() != expected)
    throw IoError("unexpected length in " + path.string() + ": got " +
                  std::to_string(data.size()) + " doubles, expected " +
                  std::to_string(expected));
  return data;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
    if (!in) break;
  }
  return h;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i];
  return v;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols)
      throw IoError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c];
  }
  return m;
}

namespace {

// Row-major copy for on-disk layouts.
std::vector<double> to_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), m.rows(), m.cols()) = m;
  return data;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int D = static_cast<int>(ds.trajectories.cols());
  const int cond_dim = ds.cond_dim();

  nlohmann::json manifest = {
      {"format_version", 1},
      {"task_family", ds.task_family},
      {"n", ds.n},
      {"m", ds.m},
      {"T", ds.T},
      {"N", ds.N()},
      {"flat_dim", D},
      {"cond_dim", cond_dim},
      {"condition_layout",
       ds.task_family == "lqr"
           ? "x_init(n) | x_target(n)"
           : "x_init(n) | x_target(n) | (vx,vy,t/T,flag)xV_max | (ox,oy,r,flag)xO_max"},
      {"scales", vector_to_json(ds.scales)},
      {"seed", ds.seed},
      {"noise_std", ds.noise_std},
      {"record", "flattened trajectory then condition vector, float64 LE row-major"},
  };
  write_json_file(dir / "manifest.json", manifest);

  Eigen::MatrixXd records(ds.N(), D + cond_dim);
  records << ds.trajectories, ds.conditions;
  const std::vector<double> data = to_row_major(records);
  write_doubles(dir / "data.bin", data.data(), data.size());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_json_file(dir / "manifest.json");
  if (manifest.at("format_version").get<int>() != 1)
    throw IoError("unsupported dataset format version in " + dir.string());

  Dataset ds;
  ds.task_family = manifest.at("task_family").get<std::string>();
  ds.n = manifest.at("n").get<int>();
  ds.m = manifest.at("m").get<int>();
  ds.T = manifest.at("T").get<int>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.noise_std = manifest.at("noise_std").get<double>();
  ds.scales = vector_from_json(manifest.at("scales"));
  const int N = manifest.at("N").get<int>();
  const int D = manifest.at("flat_dim").get<int>();
  const int cond_dim = manifest.at("cond_dim").get<int>();

  const std::vector<double> data = read_doubles_exact(
      dir / "data.bin", static_cast<std::size_t>(N) * (D + cond_dim));
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                       Eigen::RowMajor>>
      records(data.data(), N, D + cond_dim);
  ds.trajectories = records.leftCols(D);
  ds.conditions = records.rightCols(cond_dim);
  return ds;
}

void save_experiment(const Experiment& exp, double noise_std, std::uint64_t seed,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"format_version", 1},
      {"n", exp.n()},
      {"m", exp.m()},
      {"S", exp.S()},
      {"noise_std", noise_std},
      {"seed", seed},
      {"record", "states (S+1)xn then controls Sxm, float64 LE row-major"},
  };
  write_json_file(dir / "manifest.json", manifest);

  std::vector<double> data = to_row_major(exp.states);
  const std::vector<double> ctrl = to_row_major(exp.controls);
  data.insert(data.end(), ctrl.begin(), ctrl.end());
  write_doubles(dir / "data.bin", data.data(), data.size());
}

Experiment load_experiment(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_json_file(dir / "manifest.json");
  const int n = manifest.at("n").get<int>();
  const int m = manifest.at("m").get<int>();
  const int S = manifest.at("S").get<int>();

  const std::size_t state_count = static_cast<std::size_t>(S + 1) * n;
  const std::vector<double> data = read_doubles_exact(
      dir / "data.bin", state_count + static_cast<std::size_t>(S) * m);

  Experiment exp;
  exp.states = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                              Eigen::RowMajor>>(data.data(), S + 1, n);
  exp.controls = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                Eigen::Dynamic, Eigen::RowMajor>>(
      data.data() + state_count, S, m);
  return exp;
}

}  // namespace dyndiff
