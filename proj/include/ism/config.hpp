#pragma once

// Training configuration and its flat key=value text form.

#include "ism/data.hpp"
#include "ism/nets.hpp"
#include "ism/objectives.hpp"
#include "ism/sot.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::string profile = "desk";
  DatasetSpec dataset;
  std::size_t batch_size = 128;
  std::size_t ot_scale = 4;
  PoolMatching ot_matching = PoolMatching::Global;
  int base_steps = 128;
  double w_max = 3.5;
  double w_grid_step = 0.25;
  double t_interval = 0.3;
  bool interval_on_consistency = true;
  std::size_t wavelet_levels = 4;
  double alpha = 1, beta = 1, gamma = 1;
  double consistency_fraction = 0.8;
  double label_dropout = 0.1;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double ema_target_decay = 0.95;
  double ema_infer_decay = 0.9999;
  double grad_clip = 10.0;
  std::uint64_t total_steps = 20000;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 256, depth = 4, embed_dim = 64, freq_dim = 16;
  std::uint64_t log_interval = 100;
  std::uint64_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::string checkpoint_path = "checkpoint.ismc";
  std::string metrics_path = "metrics.csv";

  /// Table-scale settings: lr 1e-4, 800k steps, K=32, L=5, no clipping.
  static TrainConfig paper() {
    TrainConfig c;
    c.profile = "paper";
    c.learning_rate = 1e-4;
    c.total_steps = 800000;
    c.ot_scale = 32;
    c.wavelet_levels = 5;
    c.grad_clip = 0;
    c.batch_size = 256;
    return c;
  }

  NetConfig net() const {
    NetConfig n;
    n.input_dim = data_dim(dataset);
    n.hidden_dim = hidden_dim;
    n.depth = depth;
    n.num_classes = dataset.classes;
    n.embed_dim = embed_dim;
    n.freq_dim = freq_dim;
    return n;
  }

  ScheduleConfig schedule() const {
    ScheduleConfig s;
    s.base_steps = base_steps;
    s.w_max = w_max;
    s.w_grid_step = w_grid_step;
    s.t_interval = t_interval;
    s.consistency_fraction = consistency_fraction;
    s.interval_on_consistency = interval_on_consistency;
    return s;
  }

  DistanceConfig distance() const {
    DistanceConfig d;
    d.grid = data_grid(dataset);
    d.wavelet_levels = d.grid ? wavelet_levels : 0;
    return d;
  }

  LossWeights weights() const { return {alpha, beta, gamma}; }

  void validate() const {
    ism::validate(dataset);
    schedule().validate();
    validate(net());
    auto positive = [](double v) { return v > 0; };
    auto unit = [](double v) { return v >= 0 && v <= 1; };
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (ot_scale < 1) throw ConfigError("ot_scale must be >= 1");
    if (!positive(alpha) || !positive(beta) || !positive(gamma)) throw ConfigError("loss weights must be > 0");
    if (!unit(label_dropout)) throw ConfigError("label_dropout must be in [0,1]");
    if (!positive(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
      throw ConfigError("adam betas must be in [0,1)");
    }
    if (!positive(adam_eps)) throw ConfigError("adam_eps must be > 0");
    if (!unit(ema_target_decay) || !unit(ema_infer_decay)) throw ConfigError("EMA decays must be in [0,1]");
    if (grad_clip < 0) throw ConfigError("grad_clip must be >= 0");
    if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
    if (auto g = data_grid(dataset); g && wavelet_levels > 0) {
      const std::size_t block = std::size_t{1} << wavelet_levels;
      if (g->height % block != 0 || g->width % block != 0) {
        throw ConfigError("wavelet_levels " + std::to_string(wavelet_levels) + " needs H, W divisible by " +
                          std::to_string(block));
      }
    }
  }

 private:
  static void validate(const NetConfig& n) {
    try {
      ism::validate(n);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline const char* matching_name(PoolMatching m) {
  switch (m) {
    case PoolMatching::Global: return "global";
    case PoolMatching::PerClass: return "per_class";
    case PoolMatching::None: return "none";
  }
  return "global";
}

template <class V>
V parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    V out{};
    if constexpr (std::is_same_v<V, double>) {
      out = std::stod(value, &pos);
    } else {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<V>(std::stoull(value, &pos));
    }
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid value for " + key + ": '" + value + "'");
}

struct ConfigKey {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline const std::vector<std::pair<std::string, ConfigKey>>& config_keys() {
  using C = TrainConfig;
  static const std::vector<std::pair<std::string, ConfigKey>> keys = [] {
    std::vector<std::pair<std::string, ConfigKey>> k;
    auto real = [&k](const char* name, double C::*field) {
      k.push_back({name, {[field, name](C& c, const std::string& v) { c.*field = parse_number<double>(name, v); },
                          [field](const C& c) { return fmt(c.*field); }}});
    };
    auto size = [&k](const char* name, std::size_t C::*field) {
      k.push_back({name, {[field, name](C& c, const std::string& v) { c.*field = parse_number<std::size_t>(name, v); },
                          [field](const C& c) { return std::to_string(c.*field); }}});
    };
    auto u64 = [&k](const char* name, std::uint64_t C::*field) {
      k.push_back({name, {[field, name](C& c, const std::string& v) { c.*field = parse_number<std::uint64_t>(name, v); },
                          [field](const C& c) { return std::to_string(c.*field); }}});
    };
    auto text = [&k](const char* name, std::string C::*field) {
      k.push_back({name, {[field](C& c, const std::string& v) { c.*field = v; },
                          [field](const C& c) { return c.*field; }}});
    };
    k.push_back({"dataset", {[](C& c, const std::string& v) {
                               try {
                                 c.dataset = parse_dataset(v);
                               } catch (const DatasetError& e) {
                                 throw ConfigError(e.what());
                               }
                             },
                             [](const C& c) { return format_dataset(c.dataset); }}});
    size("batch_size", &C::batch_size);
    size("ot_scale", &C::ot_scale);
    k.push_back({"ot_matching", {[](C& c, const std::string& v) {
                                   if (v == "global") c.ot_matching = PoolMatching::Global;
                                   else if (v == "per_class") c.ot_matching = PoolMatching::PerClass;
                                   else if (v == "none") c.ot_matching = PoolMatching::None;
                                   else throw ConfigError("invalid value for ot_matching: '" + v + "'");
                                 },
                                 [](const C& c) { return std::string(matching_name(c.ot_matching)); }}});
    k.push_back({"base_steps", {[](C& c, const std::string& v) {
                                  c.base_steps = static_cast<int>(parse_number<std::uint64_t>("base_steps", v));
                                },
                                [](const C& c) { return std::to_string(c.base_steps); }}});
    real("w_max", &C::w_max);
    real("w_grid_step", &C::w_grid_step);
    real("t_interval", &C::t_interval);
    k.push_back({"interval_on_consistency",
                 {[](C& c, const std::string& v) { c.interval_on_consistency = parse_bool("interval_on_consistency", v); },
                  [](const C& c) { return std::string(c.interval_on_consistency ? "true" : "false"); }}});
    size("wavelet_levels", &C::wavelet_levels);
    real("alpha", &C::alpha);
    real("beta", &C::beta);
    real("gamma", &C::gamma);
    real("consistency_fraction", &C::consistency_fraction);
    real("label_dropout", &C::label_dropout);
    real("learning_rate", &C::learning_rate);
    real("adam_beta1", &C::adam_beta1);
    real("adam_beta2", &C::adam_beta2);
    real("adam_eps", &C::adam_eps);
    real("ema_target_decay", &C::ema_target_decay);
    real("ema_infer_decay", &C::ema_infer_decay);
    real("grad_clip", &C::grad_clip);
    u64("total_steps", &C::total_steps);
    u64("seed", &C::seed);
    size("hidden_dim", &C::hidden_dim);
    size("depth", &C::depth);
    size("embed_dim", &C::embed_dim);
    size("freq_dim", &C::freq_dim);
    u64("log_interval", &C::log_interval);
    u64("checkpoint_interval", &C::checkpoint_interval);
    text("checkpoint_path", &C::checkpoint_path);
    text("metrics_path", &C::metrics_path);
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies one key. `profile` resets every other key to that profile's defaults.
inline void set_config_key(TrainConfig& config, const std::string& key, const std::string& value) {
  if (key == "profile") {
    if (value == "desk") config = TrainConfig{};
    else if (value == "paper") config = TrainConfig::paper();
    else throw ConfigError("invalid value for profile: '" + value + "'");
    return;
  }
  for (const auto& [name, k] : detail::config_keys()) {
    if (name == key) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Splits "key = value" lines; '#' starts a comment.
inline ConfigEntries parse_config_entries(std::istream& in, const std::string& origin = "config") {
  ConfigEntries out;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    }
    out.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return out;
}

/// Defaults, then the profile (if any), then the remaining keys in order.
inline TrainConfig config_from_entries(const ConfigEntries& entries) {
  TrainConfig config;
  for (const auto& [k, v] : entries) {
    if (k == "profile") set_config_key(config, k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "profile") set_config_key(config, k, v);
  }
  return config;
}

inline TrainConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return config_from_entries(parse_config_entries(in));
}

inline ConfigEntries read_config_entries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_config_entries(in, path);
}

inline std::string config_to_text(const TrainConfig& config) {
  std::ostringstream os;
  os << "profile=" << config.profile << '\n';
  for (const auto& [name, k] : detail::config_keys()) os << name << '=' << k.get(config) << '\n';
  return os.str();
}

}  // namespace ism
