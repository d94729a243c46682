#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "paramrel/error.hpp"
#include "paramrel/model.hpp"
#include "paramrel/objective.hpp"
#include "paramrel/pipeline.hpp"
#include "paramrel/schedule.hpp"

namespace paramrel::io {

enum class ValueType { integer, unsigned_integer, real, choice, text };

struct KeySpec {
  const char* key;
  const char* default_value;
  ValueType type;
  std::vector<std::string> choices{};
  const char* help = "";
};

inline const std::vector<KeySpec>& config_schema() {
  static const std::vector<KeySpec> schema = {
      {"schedule.kind", "continuous", ValueType::choice, {"continuous", "discrete"}, "data type of the flow"},
      {"schedule.T", "10", ValueType::integer, {}, "number of flow steps"},
      {"schedule.sigma1", "0.02", ValueType::real, {}, "continuous: final standard deviation"},
      {"schedule.beta1", "4.0", ValueType::real, {}, "discrete: final accumulated accuracy"},

      {"data.source", "synthetic", ValueType::choice, {"synthetic", "idx"}},
      {"data.synthetic", "auto", ValueType::choice, {"auto", "blobs_continuous", "shapes_binary"},
       "auto picks the dataset matching schedule.kind"},
      {"data.N", "2000", ValueType::unsigned_integer},
      {"data.seed", "0", ValueType::unsigned_integer},
      {"data.idx_images", "", ValueType::text},
      {"data.idx_labels", "", ValueType::text},
      {"data.classes", "2", ValueType::unsigned_integer},

      {"model.latent_dim", "8", ValueType::unsigned_integer},
      {"model.hidden", "128", ValueType::unsigned_integer},
      {"model.encoder_layers", "2", ValueType::unsigned_integer},
      {"model.decoder_blocks", "2", ValueType::unsigned_integer},
      {"model.groups", "4", ValueType::unsigned_integer},
      {"model.time_dim", "16", ValueType::unsigned_integer},
      {"model.z_mode", "prior", ValueType::choice, {"prior", "encoder"}, "latent source during generation"},

      {"loss.mi_weight", "0.95", ValueType::real},
      {"loss.tc_weight", "0.1", ValueType::real},
      {"loss.mmd_bandwidth", "0", ValueType::real, {}, "0 selects sqrt(latent_dim)"},
      {"loss.mmd_kernel", "rbf", ValueType::choice, {"rbf", "median_rbf"}},
      {"loss.n_mc", "16", ValueType::unsigned_integer, {}, "discrete flow-KL Monte Carlo draws"},

      {"train.epochs", "5", ValueType::unsigned_integer},
      {"train.batch_size", "32", ValueType::unsigned_integer},
      {"train.max_steps", "0", ValueType::unsigned_integer, {}, "0 means no cap"},
      {"train.lr", "1e-4", ValueType::real},
      {"train.adam_beta1", "0.9", ValueType::real},
      {"train.adam_beta2", "0.999", ValueType::real},
      {"train.adam_eps", "1e-8", ValueType::real},
      {"train.seed", "0", ValueType::unsigned_integer},

      {"eval.t_probe", "-1", ValueType::integer, {}, "-1 selects T/2"},
      {"eval.folds", "5", ValueType::unsigned_integer},
      {"eval.probe_factor", "auto", ValueType::text, {}, "auto: intensity for blobs, shape for shapes"},
      {"eval.n_samples", "16", ValueType::unsigned_integer},
  };
  return schema;
}

inline const KeySpec* find_key(const std::string& key) {
  for (const KeySpec& k : config_schema())
    if (key == k.key) return &k;
  return nullptr;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

inline void check_value(const KeySpec& spec, const std::string& v) {
  auto bad = [&](const std::string& why) {
    throw ConfigError("config key '" + std::string(spec.key) + "': " + why + " (got '" + v + "')");
  };
  switch (spec.type) {
    case ValueType::integer: {
      long long x;
      if (!parse_number(v, x)) bad("expected an integer");
      break;
    }
    case ValueType::unsigned_integer: {
      unsigned long long x;
      if (!parse_number(v, x)) bad("expected a nonnegative integer");
      break;
    }
    case ValueType::real: {
      double x;
      if (!parse_number(v, x) || !std::isfinite(x)) bad("expected a finite number");
      break;
    }
    case ValueType::choice: {
      bool ok = false;
      for (const auto& c : spec.choices) ok = ok || c == v;
      if (!ok) {
        std::string list;
        for (const auto& c : spec.choices) list += (list.empty() ? "" : ", ") + c;
        bad("expected one of {" + list + "}");
      }
      break;
    }
    case ValueType::text:
      break;
  }
}

}  // namespace detail

// Flat key=value run configuration. Every key has a default; unknown keys are
// rejected; when a key repeats, the last assignment wins and a warning is kept.
class RunConfig {
 public:
  RunConfig() {
    for (const KeySpec& k : config_schema()) values_[k.key] = k.default_value;
  }

  void set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError("unknown config key '" + key + "'");
    detail::check_value(*spec, value);
    values_[key] = value;
  }

  // One "key=value" assignment; origin is used in messages.
  void apply(const std::string& assignment, const std::string& origin) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ": expected key=value, got '" + assignment + "'");
    const std::string key = detail::trim(assignment.substr(0, eq));
    if (assigned_.count(key)) warnings_.push_back(origin + ": key '" + key + "' assigned again; the last value wins");
    assigned_.insert({key, origin});
    set(key, detail::trim(assignment.substr(eq + 1)));
  }

  static RunConfig parse(const std::string& text, const std::vector<std::string>& overrides = {},
                         const std::string& source = "config") {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      cfg.apply(line, source + ":" + std::to_string(n));
    }
    for (const std::string& o : overrides) cfg.apply(o, "override");
    cfg.validate();
    return cfg;
  }

  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {}) {
    std::string text;
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) throw IoError("cannot open config '" + path + "'");
      std::ostringstream ss;
      ss << in.rdbuf();
      text = ss.str();
    }
    return parse(text, overrides, path.empty() ? "config" : path);
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key) const { return number<long long>(key); }
  std::uint64_t get_uint(const std::string& key) const { return number<unsigned long long>(key); }
  std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_uint(key)); }
  double get_double(const std::string& key) const { return number<double>(key); }

  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  // Canonical resolved form: every key, sorted, one "key=value" per line.
  std::string resolved_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  // 64-bit FNV-1a of the resolved text.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : resolved_text()) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }

  DataKind kind() const { return get("schedule.kind") == "continuous" ? DataKind::continuous : DataKind::discrete; }

  int T() const { return static_cast<int>(get_int("schedule.T")); }

  AccuracySchedule schedule() const {
    try {
      return kind() == DataKind::continuous ? AccuracySchedule::continuous(T(), get_double("schedule.sigma1"))
                                            : AccuracySchedule::discrete(T(), get_double("schedule.beta1"));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("schedule.*: ") + e.what());
    }
  }

  ModelConfig model_config(std::size_t data_dim) const {
    ModelConfig m;
    m.kind = kind();
    m.data_dim = data_dim;
    m.classes = get_size("data.classes");
    m.latent_dim = get_size("model.latent_dim");
    m.hidden = get_size("model.hidden");
    m.encoder_layers = get_size("model.encoder_layers");
    m.decoder_blocks = get_size("model.decoder_blocks");
    m.groups = get_size("model.groups");
    m.time_dim = get_size("model.time_dim");
    m.T = T();
    m.validate();
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = get_size("train.epochs");
    t.batch_size = get_size("train.batch_size");
    t.max_steps = get_size("train.max_steps");
    t.seed = get_uint("train.seed");
    t.adam.lr = get_double("train.lr");
    t.adam.beta1 = get_double("train.adam_beta1");
    t.adam.beta2 = get_double("train.adam_beta2");
    t.adam.eps = get_double("train.adam_eps");
    t.objective.weights = {get_double("loss.mi_weight"), get_double("loss.tc_weight"), T()};
    t.objective.kernel = get("loss.mmd_kernel") == "rbf" ? MmdKernel::rbf : MmdKernel::median_rbf;
    t.objective.bandwidth = get_double("loss.mmd_bandwidth");
    t.objective.n_mc = get_size("loss.n_mc");
    return t;
  }

  ZMode z_mode() const { return get("model.z_mode") == "prior" ? ZMode::prior : ZMode::encoder; }

  int t_probe() const {
    const long long t = get_int("eval.t_probe");
    return t < 0 ? T() / 2 : static_cast<int>(t);
  }

  // Range and cross-key constraints; data-dependent checks (latent_dim
  // against the data dimension) run again once the data is known.
  void validate() const {
    if (get_int("schedule.T") < 1) throw ConfigError("config key 'schedule.T' must be >= 1");
    const double s1 = get_double("schedule.sigma1");
    if (!(s1 > 0.0 && s1 < 1.0)) throw ConfigError("config key 'schedule.sigma1' must lie in (0, 1)");
    if (!(get_double("schedule.beta1") > 0.0)) throw ConfigError("config key 'schedule.beta1' must be positive");
    const double mi = get_double("loss.mi_weight");
    if (!(mi >= 0.0 && mi < 1.0)) throw ConfigError("config key 'loss.mi_weight' must lie in [0, 1)");
    if (!(get_double("loss.tc_weight") > 0.0)) throw ConfigError("config key 'loss.tc_weight' must be positive");
    if (get_double("loss.mmd_bandwidth") < 0.0) throw ConfigError("config key 'loss.mmd_bandwidth' must be >= 0");
    if (get_uint("loss.n_mc") < 1) throw ConfigError("config key 'loss.n_mc' must be >= 1");
    if (get_uint("train.batch_size") < 2) throw ConfigError("config key 'train.batch_size' must be >= 2");
    if (get_uint("train.epochs") < 1) throw ConfigError("config key 'train.epochs' must be >= 1");
    if (get_double("train.lr") < 0.0) throw ConfigError("config key 'train.lr' must be >= 0");
    if (get_uint("eval.folds") < 2) throw ConfigError("config key 'eval.folds' must be >= 2");
    if (get_int("eval.t_probe") > get_int("schedule.T")) throw ConfigError("config key 'eval.t_probe' exceeds schedule.T");
    if (get_uint("data.classes") < 2) throw ConfigError("config key 'data.classes' must be >= 2");
    if (get("data.source") == "idx" && get("data.idx_images").empty()) {
      throw ConfigError("config key 'data.idx_images' is required when data.source=idx");
    }
    const std::string syn = get("data.synthetic");
    if ((syn == "blobs_continuous" && kind() != DataKind::continuous) || (syn == "shapes_binary" && kind() != DataKind::discrete)) {
      throw ConfigError("config key 'data.synthetic'=" + syn + " does not match schedule.kind=" + get("schedule.kind"));
    }
    const std::size_t L = get_size("model.latent_dim");
    if (L < 1) throw ConfigError("config key 'model.latent_dim' must be >= 1");
    if (get("data.source") == "synthetic" && 2 * L > 64) {
      throw ConfigError("config key 'model.latent_dim'=" + std::to_string(L) + " exceeds D/2 = 32");
    }
  }

 private:
  template <typename T>
  T number(const std::string& key) const {
    T v{};
    if (!detail::parse_number(get(key), v)) throw ConfigError("config key '" + key + "' is not numeric");
    return v;
  }

  std::map<std::string, std::string> values_;
  std::multimap<std::string, std::string> assigned_;
  std::vector<std::string> warnings_;
};

}  // namespace paramrel::io
