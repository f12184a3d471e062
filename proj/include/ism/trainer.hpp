#pragma once

// Training loop: sOT-matched pools, schedule draws, losses, Adam, twin EMA,
// checkpoints and metrics.
//
// Every random draw derives from (seed, stream, index): the pool for steps
// [pK, (p+1)K) from (seed, pool, p) and the per-step draws from
// (seed, step, s). A checkpoint therefore only needs the step counter to
// resume bit-exactly.

#include "ism/checkpoint.hpp"
#include "ism/config.hpp"
#include "ism/data.hpp"
#include "ism/ema.hpp"
#include "ism/nets.hpp"
#include "ism/objectives.hpp"
#include "ism/rng.hpp"
#include "ism/sot.hpp"
#include "ism/tensor.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::uint64_t step = 0;
};

template <class T>
AdamState<T> init_adam(const VelocityNetParams<T>& params) {
  AdamState<T> s;
  for (const auto& p : params.tensors) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

struct AdamSettings {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bias-corrected Adam, no weight decay.
template <class T>
void adam_step(VelocityNetParams<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const AdamSettings& s) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].shape() != params.tensors[k].shape()) {
      throw ShapeError("adam_step " + params.names[k], params.tensors[k].shape(), grads[k].shape());
    }
    for (T g : grads[k].values()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw TrainingError("adam_step: non-finite gradient in parameter '" + params.names[k] + "'");
      }
    }
  }
  ++state.step;
  const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(s.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(s.beta2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(s.lr), eps = static_cast<T>(s.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params.tensors[k].mutable_values();
    auto m = state.m[k].mutable_values();
    auto v = state.v[k].mutable_values();
    auto g = grads[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

struct MetricRow {
  std::uint64_t step = 0;
  double loss_velocity = 0, loss_guidance = 0, loss_consistency = 0, loss_total = 0;
  double grad_norm = 0;
  double wall_ms = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,loss_velocity,loss_guidance,loss_consistency,loss_total,grad_norm,wall_ms";

inline std::string metric_csv_row(const MetricRow& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.step << ',' << r.loss_velocity << ',' << r.loss_guidance << ',' << r.loss_consistency << ','
     << r.loss_total << ',' << r.grad_norm << ',' << r.wall_ms;
  return os.str();
}

template <class T>
struct TrainState {
  VelocityNetParams<T> online;
  TwinEmaState<T> ema;
  AdamState<T> adam;
  std::uint64_t step = 0;
};

template <class T>
TrainState<T> init_train_state(const TrainConfig& config) {
  config.validate();
  Rng rng = derive_rng(config.seed, streams::kInit);
  TrainState<T> st;
  st.online = init_params<T>(config.net(), rng);
  st.ema = init_twin(st.online, config.ema_target_decay, config.ema_infer_decay);
  st.adam = init_adam(st.online);
  return st;
}

namespace detail {

template <class T>
ObjectiveBatch<T> gather_objective(const MatchedBatch<T>& batch, const std::vector<ClassId>& labels,
                                   const std::vector<ScheduleSample>& sched, const std::vector<std::size_t>& rows) {
  ObjectiveBatch<T> out;
  if (rows.empty()) return out;
  out.x0 = gather_rows(batch.x0, rows);
  out.x1 = gather_rows(batch.x1, rows);
  for (std::size_t r : rows) {
    out.c.push_back(labels[r]);
    out.t.push_back(static_cast<T>(sched[r].t));
    out.d.push_back(static_cast<T>(sched[r].d));
    out.w.push_back(static_cast<T>(sched[r].w));
  }
  return out;
}

}  // namespace detail

template <class T = float>
class Trainer {
 public:
  explicit Trainer(TrainConfig config) : config_(std::move(config)), state_(init_train_state<T>(config_)) {}

  Trainer(TrainConfig config, TrainState<T> state) : config_(std::move(config)), state_(std::move(state)) {
    config_.validate();
  }

  const TrainConfig& config() const { return config_; }
  const TrainState<T>& state() const { return state_; }

  /// Matched batch for the current step (loads the pool on demand).
  const MatchedBatch<T>& current_batch() {
    const std::uint64_t pool = state_.step / config_.ot_scale;
    if (!pool_loaded_ || pool != pool_index_) load_pool(pool);
    return pool_[state_.step % config_.ot_scale];
  }

  /// One optimizer step.
  MetricRow step() {
    const auto started = std::chrono::steady_clock::now();
    const MatchedBatch<T>& batch = current_batch();
    Rng rng = derive_rng(config_.seed, streams::kStep, state_.step);

    std::vector<ClassId> labels(batch.labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = apply_label_dropout(batch.labels[i], config_.label_dropout, rng);
    }
    const auto sched = sample_schedule(rng, config_.schedule(), batch.size());
    std::vector<std::size_t> vel_rows, guide_rows, cons_rows;
    for (std::size_t i = 0; i < sched.size(); ++i) {
      if (sched[i].branch == Branch::Consistency) cons_rows.push_back(i);
      else if (sched[i].w > 0) guide_rows.push_back(i);
      else vel_rows.push_back(i);
    }
    const auto vel = detail::gather_objective(batch, labels, sched, vel_rows);
    const auto guide = detail::gather_objective(batch, labels, sched, guide_rows);
    const auto cons = detail::gather_objective(batch, labels, sched, cons_rows);

    MetricRow row;
    std::vector<Tensor<T>> grads;
    {
      Tape<T> tape;
      const auto tracked = track(state_.online, tape);
      const auto terms = total_loss(tracked, state_.ema.target, &vel, &guide, &cons, config_.base_steps,
                                    config_.weights(), config_.distance());
      row.step = state_.step + 1;
      row.loss_velocity = static_cast<double>(terms.velocity.item());
      row.loss_guidance = static_cast<double>(terms.guidance.item());
      row.loss_consistency = static_cast<double>(terms.consistency.item());
      row.loss_total = static_cast<double>(terms.total.item());
      if (!std::isfinite(row.loss_total)) {
        throw TrainingError("non-finite loss at step " + std::to_string(row.step) + ": " + metric_csv_row(row));
      }
      if (terms.total.requires_grad()) {
        const auto g = tape.backward(terms.total);
        for (const auto& p : tracked.tensors) grads.push_back(g.of(p));
      } else {
        for (const auto& p : state_.online.tensors) grads.emplace_back(p.shape());
      }
    }
    double norm2 = 0;
    for (const auto& g : grads) {
      for (T v : g.values()) norm2 += static_cast<double>(v) * static_cast<double>(v);
    }
    row.grad_norm = std::sqrt(norm2);
    if (config_.grad_clip > 0 && row.grad_norm > config_.grad_clip) {
      const T factor = static_cast<T>(config_.grad_clip / row.grad_norm);
      for (auto& g : grads) {
        for (T& v : g.mutable_values()) v *= factor;
      }
    }
    adam_step(state_.online, grads, state_.adam,
              {config_.learning_rate, config_.adam_beta1, config_.adam_beta2, config_.adam_eps});
    update_twin(state_.ema, state_.online);
    ++state_.step;
    row.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return row;
  }

 private:
  void load_pool(std::uint64_t pool) {
    Rng rng = derive_rng(config_.seed, streams::kPool, pool);
    const std::size_t m = config_.batch_size, k = config_.ot_scale;
    const DataBatch<T> all = generate<T>(config_.dataset, k * m, rng);
    std::vector<DataBatch<T>> batches(k);
    for (std::size_t b = 0; b < k; ++b) {
      std::vector<std::size_t> rows(m);
      for (std::size_t i = 0; i < m; ++i) rows[i] = b * m + i;
      batches[b].x1 = detail::gather_rows(all.x1, rows);
      batches[b].labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(b * m),
                               all.labels.begin() + static_cast<std::ptrdiff_t>((b + 1) * m));
    }
    pool_ = rematch_pool(batches, rng, config_.ot_matching);
    pool_index_ = pool;
    pool_loaded_ = true;
  }

  TrainConfig config_;
  TrainState<T> state_;
  std::vector<MatchedBatch<T>> pool_;
  std::uint64_t pool_index_ = 0;
  bool pool_loaded_ = false;
};

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

template <class T>
void append_params(CheckpointData& data, const std::string& prefix, const std::vector<std::string>& names,
                   const std::vector<Tensor<T>>& tensors) {
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    NamedArray e;
    e.name = prefix + "/" + names[k];
    e.shape = tensors[k].shape();
    e.values.assign(tensors[k].values().begin(), tensors[k].values().end());
    data.entries.push_back(std::move(e));
  }
}

template <class T>
std::vector<Tensor<T>> load_params(const CheckpointData& data, const std::string& prefix,
                                   const VelocityNetParams<T>& like) {
  std::vector<Tensor<T>> out;
  for (std::size_t k = 0; k < like.size(); ++k) {
    const NamedArray& e = data.find(prefix + "/" + like.names[k]);
    if (e.shape != like.tensors[k].shape()) {
      throw CheckpointError(CheckpointError::Kind::Malformed,
                            "checkpoint entry " + e.name + " has shape " + shape_string(e.shape) + ", expected " +
                                shape_string(like.tensors[k].shape()));
    }
    out.emplace_back(e.shape, std::vector<T>(e.values.begin(), e.values.end()));
  }
  return out;
}

inline std::string meta_value(const std::string& meta, const std::string& key) {
  std::istringstream in(meta);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  }
  throw CheckpointError(CheckpointError::Kind::Malformed, "checkpoint meta lacks '" + key + "'");
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const TrainConfig& config, const TrainState<T>& state) {
  CheckpointData data;
  data.meta = config_to_text(config) + "state.step=" + std::to_string(state.step) +
              "\nstate.adam_step=" + std::to_string(state.adam.step) + "\n";
  const auto& names = state.online.names;
  detail::append_params(data, "online", names, state.online.tensors);
  detail::append_params(data, "ema_target", names, state.ema.target.tensors);
  detail::append_params(data, "ema_infer", names, state.ema.infer.tensors);
  detail::append_params(data, "adam_m", names, state.adam.m);
  detail::append_params(data, "adam_v", names, state.adam.v);
  write_checkpoint(path, data);
}

template <class T>
struct LoadedCheckpoint {
  TrainConfig config;
  TrainState<T> state;
};

template <class T = float>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  const CheckpointData data = read_checkpoint(path);
  std::string config_text;
  {
    std::istringstream in(data.meta);
    for (std::string line; std::getline(in, line);) {
      if (line.rfind("state.", 0) != 0) config_text += line + "\n";
    }
  }
  LoadedCheckpoint<T> out;
  try {
    out.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::Malformed, path + ": bad config snapshot: " + e.what());
  }
  Rng unused(0);
  const auto like = init_params<T>(out.config.net(), unused);
  auto& st = out.state;
  st.online = like;
  st.online.tensors = detail::load_params(data, "online", like);
  st.ema.target = like;
  st.ema.target.role = ParamRole::EmaTarget;
  st.ema.target.tensors = detail::load_params(data, "ema_target", like);
  st.ema.target_decay = out.config.ema_target_decay;
  st.ema.infer = like;
  st.ema.infer.role = ParamRole::EmaInfer;
  st.ema.infer.tensors = detail::load_params(data, "ema_infer", like);
  st.ema.infer_decay = out.config.ema_infer_decay;
  st.adam.m = detail::load_params(data, "adam_m", like);
  st.adam.v = detail::load_params(data, "adam_v", like);
  try {
    st.step = std::stoull(detail::meta_value(data.meta, "state.step"));
    st.adam.step = std::stoull(detail::meta_value(data.meta, "state.adam_step"));
  } catch (const std::logic_error&) {
    throw CheckpointError(CheckpointError::Kind::Malformed, path + ": bad step counter");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole runs

struct TrainResult {
  std::vector<MetricRow> logged;  // one per log interval
  std::vector<std::string> checkpoints;
};

/// Runs from `state` until config.total_steps. Writes the metrics CSV
/// (interval means) and checkpoints; `on_step` sees every raw row.
template <class T = float>
TrainResult train(const TrainConfig& config, Trainer<T>& trainer,
                  const std::function<void(const MetricRow&)>& on_step = {}) {
  TrainResult result;
  std::ofstream metrics(config.metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics file " + config.metrics_path);
  metrics << kMetricsHeader << '\n';

  MetricRow acc;
  std::uint64_t in_interval = 0;
  while (trainer.state().step < config.total_steps) {
    const MetricRow row = trainer.step();
    if (on_step) on_step(row);
    acc.loss_velocity += row.loss_velocity;
    acc.loss_guidance += row.loss_guidance;
    acc.loss_consistency += row.loss_consistency;
    acc.loss_total += row.loss_total;
    acc.grad_norm += row.grad_norm;
    acc.wall_ms += row.wall_ms;
    ++in_interval;
    if (row.step % config.log_interval == 0) {
      const double n = static_cast<double>(in_interval);
      MetricRow mean{row.step,           acc.loss_velocity / n, acc.loss_guidance / n, acc.loss_consistency / n,
                     acc.loss_total / n, acc.grad_norm / n,     acc.wall_ms / n};
      metrics << metric_csv_row(mean) << '\n';
      result.logged.push_back(mean);
      acc = MetricRow{};
      in_interval = 0;
    }
    if (config.checkpoint_interval > 0 && row.step % config.checkpoint_interval == 0 &&
        row.step != config.total_steps) {
      const std::string path = config.checkpoint_path + ".step" + std::to_string(row.step);
      save_checkpoint(path, config, trainer.state());
      result.checkpoints.push_back(path);
    }
  }
  if (!metrics) throw IoError("write failed: " + config.metrics_path);
  save_checkpoint(config.checkpoint_path, config, trainer.state());
  result.checkpoints.push_back(config.checkpoint_path);
  return result;
}

template <class T = float>
TrainResult train(const TrainConfig& config) {
  Trainer<T> trainer(config);
  return train(config, trainer);
}

}  // namespace ism
