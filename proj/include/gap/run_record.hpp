#pragma once

// On-disk run directory: config.json, losses.csv, state.bin, eval.csv.
//
// state.bin layout (little-endian):
//   "GAPM"  u32 version  u32 kind  u32 n_layers  u32 n_meta  u32 meta_layer × n_meta
//   then per tensor (W₀, b₀, W₁, b₁, …, φ₀, φ₁, …):
//   u32 rank  u32 dim × rank  f64 × prod(dims)

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gap/evaluation.hpp"
#include "gap/metaloop.hpp"

namespace gap {

/// Invalid configuration document; `field` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& why)
      : std::invalid_argument(field + ": " + why), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Missing, truncated or malformed state file.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Train config plus run-level settings carried in the same JSON document.
struct CliConfig {
  TrainConfig train;
  std::string out;
  std::size_t workers = 1;
  std::string format = "markdown";
};

namespace detail {

template <typename T>
T json_get(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(key, std::string("wrong type (") + e.what() + ")");
  }
}

inline std::size_t json_count(const nlohmann::json& j, const std::string& key) {
  const nlohmann::json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(key, "must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::vector<std::size_t> json_counts(const nlohmann::json& j, const std::string& key) {
  const nlohmann::json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(key, "must be an array of non-negative integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 0)
      throw ConfigError(key, "must be an array of non-negative integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"shots", c.shots},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"alpha", c.alpha},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"k_train", c.k_train},
          {"k_test", c.k_test},
          {"meta_gradient", to_string(c.meta_gradient)},
          {"seed", c.seed},
          {"query_size_train", c.query_size_train},
          {"query_size_eval", c.query_size_eval},
          {"hidden", c.hidden},
          {"preconditioned_layers", c.preconditioned_layers},
          {"log_every", c.log_every}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline CliConfig parse_cli_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  static const std::set<std::string> known = {
      "kind",   "shots",           "batch_size",       "iterations",      "alpha",  "beta1",
      "beta2",  "k_train",         "k_test",           "meta_gradient",   "seed",   "query_size_train",
      "hidden", "query_size_eval", "preconditioned_layers", "log_every",  "out",    "workers",
      "format"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError(key, "unknown key");

  CliConfig cc;
  TrainConfig& c = cc.train;
  if (j.contains("kind")) {
    const auto k = parse_precond_kind(detail::json_get<std::string>(j, "kind"));
    if (!k) throw ConfigError("kind", "expected identity|maml|gap|approx_gap|meta_sgd|meta_sgd_pd");
    c.kind = *k;
  }
  if (j.contains("meta_gradient")) {
    const auto g = parse_meta_gradient(detail::json_get<std::string>(j, "meta_gradient"));
    if (!g) throw ConfigError("meta_gradient", "expected first_order|factor_frozen|full_svd");
    c.meta_gradient = *g;
  }
  const std::pair<const char*, std::size_t*> counts[] = {
      {"shots", &c.shots},         {"batch_size", &c.batch_size},
      {"iterations", &c.iterations}, {"k_train", &c.k_train},
      {"k_test", &c.k_test},       {"query_size_train", &c.query_size_train},
      {"query_size_eval", &c.query_size_eval}, {"log_every", &c.log_every},
      {"workers", &cc.workers}};
  for (const auto& [key, dst] : counts)
    if (j.contains(key)) *dst = detail::json_count(j, key);
  const std::pair<const char*, double*> reals[] = {{"alpha", &c.alpha}, {"beta1", &c.beta1}, {"beta2", &c.beta2}};
  for (const auto& [key, dst] : reals) {
    if (!j.contains(key)) continue;
    if (!j.at(key).is_number()) throw ConfigError(key, "must be a number");
    *dst = j.at(key).get<double>();
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed", "must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("hidden")) c.hidden = detail::json_counts(j, "hidden");
  if (j.contains("preconditioned_layers")) c.preconditioned_layers = detail::json_counts(j, "preconditioned_layers");
  if (j.contains("out")) cc.out = detail::json_get<std::string>(j, "out");
  if (j.contains("format")) {
    cc.format = detail::json_get<std::string>(j, "format");
    if (cc.format != "markdown" && cc.format != "csv") throw ConfigError("format", "expected markdown|csv");
  }
  if (cc.workers < 1) throw ConfigError("workers", "must be ≥ 1");

  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw ConfigError(msg.substr(0, colon), colon == std::string::npos ? msg : msg.substr(colon + 2));
  }
  return cc;
}

inline CliConfig load_cli_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
  }
  return parse_cli_config(j);
}

// ---- state.bin ----

inline constexpr std::array<char, 4> kStateMagic = {'G', 'A', 'P', 'M'};
inline constexpr std::uint32_t kStateVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw StateError("state.bin truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw StateError("state.bin truncated");
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = bits << 8 | b[i];
  return std::bit_cast<double>(bits);
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_f64(os, v);
}

inline Tensor get_tensor(std::istream& is) {
  const std::uint32_t rank = get_u32(is);
  if (rank > 8) throw StateError("state.bin: implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = get_u32(is);
    if (d == 0 || d > (1u << 20)) throw StateError("state.bin: bad tensor dimension");
    count *= d;
  }
  if (count > (1u << 26)) throw StateError("state.bin: tensor too large");
  std::vector<double> v(count);
  for (double& x : v) x = get_f64(is);
  return rank == 0 ? Tensor::scalar(v[0]) : Tensor(shape, std::move(v));
}

}  // namespace detail

inline void write_state(std::ostream& os, const MetaState& s) {
  os.write(kStateMagic.data(), 4);
  detail::put_u32(os, kStateVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(s.kind));
  detail::put_u32(os, static_cast<std::uint32_t>(s.theta.layers.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(s.phi.size()));
  for (const LayerMeta& m : s.phi) detail::put_u32(os, static_cast<std::uint32_t>(m.layer));
  for (const Layer& l : s.theta.layers) {
    detail::put_tensor(os, l.weight);
    detail::put_tensor(os, l.bias);
  }
  for (const LayerMeta& m : s.phi) detail::put_tensor(os, m.values);
}

inline MetaState read_state(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kStateMagic) throw StateError("state.bin: bad magic");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kStateVersion) throw StateError("state.bin: unsupported version " + std::to_string(version));
  MetaState s;
  const std::uint32_t kind = detail::get_u32(is);
  if (kind > static_cast<std::uint32_t>(PrecondKind::kMetaSgdPd)) throw StateError("state.bin: unknown kind");
  s.kind = static_cast<PrecondKind>(kind);
  const std::uint32_t n_layers = detail::get_u32(is);
  const std::uint32_t n_meta = detail::get_u32(is);
  if (n_layers == 0 || n_layers > 64 || n_meta > n_layers) throw StateError("state.bin: bad layer counts");
  std::vector<std::size_t> meta_layers(n_meta);
  for (auto& l : meta_layers) {
    l = detail::get_u32(is);
    if (l >= n_layers) throw StateError("state.bin: meta layer out of range");
  }
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    Tensor w = detail::get_tensor(is);
    Tensor b = detail::get_tensor(is);
    s.theta.layers.push_back({std::move(w), std::move(b)});
  }
  for (std::size_t l : meta_layers) s.phi.push_back({l, detail::get_tensor(is)});
  if (is.peek() != std::char_traits<char>::eof()) throw StateError("state.bin: trailing bytes");
  try {
    s.theta.validate();
  } catch (const std::exception& e) {
    throw StateError(std::string("state.bin: inconsistent network: ") + e.what());
  }
  if (s.kind == PrecondKind::kIdentity && !s.phi.empty()) throw StateError("state.bin: identity kind with meta");
  for (const LayerMeta& m : s.phi) {
    const Tensor expect = identity_meta(s.kind, s.theta.layers[m.layer].weight);
    if (m.values.shape() != expect.shape()) throw StateError("state.bin: meta shape does not match its layer");
  }
  return s;
}

inline void save_state(const std::filesystem::path& path, const MetaState& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_state(os, s);
}

inline MetaState load_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw StateError("cannot open " + path.string());
  return read_state(is);
}

// ---- CSV ----

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_losses_csv(const std::filesystem::path& path, const std::vector<LossPoint>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "iteration,mean_outer_loss\n";
  for (const LossPoint& p : curve) os << p.iteration << ',' << format_double(p.mean_outer_loss) << '\n';
}

inline void write_eval_csv(const std::filesystem::path& path, const EvalResult& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "task_index,A,omega,b,mse\n";
  for (const TaskResult& t : r.tasks) {
    os << t.task_index << ',' << format_double(t.task.amplitude) << ',' << format_double(t.task.frequency) << ','
       << format_double(t.task.phase) << ',' << format_double(t.mse) << '\n';
  }
}

/// Reads the mse column back; used to recompute summary statistics.
inline std::vector<double> read_eval_mse(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "task_index,A,omega,b,mse") throw std::runtime_error("eval.csv: unexpected header");
  std::vector<double> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

// ---- run directory ----

inline void write_run(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainResult& r) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "config.json");
    if (!os) throw std::runtime_error("cannot write " + (dir / "config.json").string());
    os << to_json(cfg).dump(2) << '\n';
  }
  write_losses_csv(dir / "losses.csv", r.curve);
  save_state(dir / "state.bin", r.state);
}

/// Config stored in a run directory (run-level keys ignored).
inline TrainConfig load_run_config(const std::filesystem::path& dir) {
  return load_cli_config(dir / "config.json").train;
}

}  // namespace gap
