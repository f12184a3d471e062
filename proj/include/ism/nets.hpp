#pragma once

// Velocity network s(x_t, t, c, d, w).
//
// An MLP over x whose hidden pre-activations each receive a projection of
// the summed conditioning embedding e = silu(E_t(t) + E_d(d) + E_w(w) + C[c]).

#include "ism/rng.hpp"
#include "ism/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

/// Class label, or the null condition.
class ClassId {
 public:
  constexpr ClassId() = default;
  constexpr explicit ClassId(int value) : value_(value) {}
  static constexpr ClassId null() { return ClassId(); }

  constexpr bool is_null() const { return value_ < 0; }
  constexpr int value() const { return value_; }
  friend constexpr bool operator==(ClassId a, ClassId b) { return a.value_ == b.value_; }

 private:
  int value_ = -1;
};

struct NetConfig {
  std::size_t input_dim = 2;
  std::size_t hidden_dim = 256;
  std::size_t depth = 4;        // hidden layers
  std::size_t num_classes = 1;  // table has num_classes + 1 rows; the last is the null row
  std::size_t embed_dim = 64;
  std::size_t freq_dim = 16;    // sin/cos features per conditioning scalar
};

enum class ParamRole { Online, EmaTarget, EmaInfer, Other };

inline const char* role_name(ParamRole role) {
  switch (role) {
    case ParamRole::Online: return "online";
    case ParamRole::EmaTarget: return "ema_target";
    case ParamRole::EmaInfer: return "ema_infer";
    case ParamRole::Other: break;
  }
  return "other";
}

template <class T>
struct VelocityNetParams {
  NetConfig config;
  ParamRole role = ParamRole::Online;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  std::size_t size() const { return tensors.size(); }
};

namespace net_layout {
inline constexpr std::size_t kEmbedT = 0;
inline constexpr std::size_t kEmbedD = 2;
inline constexpr std::size_t kEmbedW = 4;
inline constexpr std::size_t kClassTable = 6;
inline constexpr std::size_t kFirstLayer = 7;
inline std::size_t layer(std::size_t l) { return kFirstLayer + 3 * l; }
inline std::size_t output(const NetConfig& c) { return kFirstLayer + 3 * c.depth; }
inline std::size_t count(const NetConfig& c) { return output(c) + 2; }
}  // namespace net_layout

/// Interleaved [sin(v f_0), cos(v f_0), sin(v f_1), ...] with f_k = 2^k.
template <class T = double>
std::vector<T> embed_scalar(T value, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw std::invalid_argument("embed_scalar: dim must be even and positive, got " + std::to_string(dim));
  }
  std::vector<T> out(dim);
  T freq = 1;
  for (std::size_t k = 0; k < dim / 2; ++k) {
    out[2 * k] = std::sin(value * freq);
    out[2 * k + 1] = std::cos(value * freq);
    freq *= 2;
  }
  return out;
}

inline void validate(const NetConfig& c) {
  if (c.input_dim == 0 || c.hidden_dim == 0 || c.depth == 0 || c.num_classes == 0 || c.embed_dim == 0) {
    throw std::invalid_argument("NetConfig: dimensions must be positive");
  }
  if (c.freq_dim == 0 || c.freq_dim % 2 != 0) throw std::invalid_argument("NetConfig: freq_dim must be even");
}

/// Uniform fan-in initialization; the output layer starts at zero.
template <class T>
VelocityNetParams<T> init_params(const NetConfig& config, Rng& rng) {
  validate(config);
  VelocityNetParams<T> p;
  p.config = config;
  auto add = [&](std::string name, Shape shape, double bound) {
    std::vector<T> values(numel_of(shape));
    if (bound > 0) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& v : values) v = static_cast<T>(dist(rng));
    }
    p.names.push_back(std::move(name));
    p.tensors.emplace_back(std::move(shape), std::move(values));
  };
  const std::size_t E = config.embed_dim, H = config.hidden_dim, F = config.freq_dim;
  const double fan_in_f = std::sqrt(3.0 / static_cast<double>(F));
  for (const char* which : {"t", "d", "w"}) {
    add(std::string("embed_") + which + ".weight", {F, E}, fan_in_f);
    add(std::string("embed_") + which + ".bias", {E}, 0.0);
  }
  add("class_table", {config.num_classes + 1, E}, std::sqrt(3.0));
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::size_t in = l == 0 ? config.input_dim : H;
    const std::string prefix = "layer" + std::to_string(l);
    add(prefix + ".weight", {in, H}, std::sqrt(3.0 / static_cast<double>(in)));
    add(prefix + ".bias", {H}, 0.0);
    add(prefix + ".cond", {E, H}, std::sqrt(3.0 / static_cast<double>(E)));
  }
  add("out.weight", {H, config.input_dim}, 0.0);
  add("out.bias", {config.input_dim}, 0.0);
  return p;
}

/// Copy whose tensors are leaves of `tape`.
template <class T>
VelocityNetParams<T> track(const VelocityNetParams<T>& params, Tape<T>& tape) {
  VelocityNetParams<T> out = params;
  for (auto& t : out.tensors) t = tape.leaf(t.detached());
  return out;
}

template <class T>
VelocityNetParams<T> detach(const VelocityNetParams<T>& params) {
  VelocityNetParams<T> out = params;
  for (auto& t : out.tensors) t = t.detached();
  return out;
}

/// Deep copy with fresh storage (no sharing with `params`).
template <class T>
VelocityNetParams<T> clone(const VelocityNetParams<T>& params, ParamRole role) {
  VelocityNetParams<T> out = detach(params);
  out.role = role;
  for (auto& t : out.tensors) t = Tensor<T>(t.shape(), std::vector<T>(t.values().begin(), t.values().end()));
  return out;
}

template <class U, class T>
VelocityNetParams<U> cast_params(const VelocityNetParams<T>& params) {
  VelocityNetParams<U> out;
  out.config = params.config;
  out.role = params.role;
  out.names = params.names;
  for (const auto& t : params.tensors) {
    std::vector<U> values(t.values().begin(), t.values().end());
    out.tensors.emplace_back(t.shape(), std::move(values));
  }
  return out;
}

/// The (x_t, t, c, d, w) tuple for a batch; conditioning is per row.
template <class T>
struct ShortcutInput {
  Tensor<T> x;  // [B, D] or [D]
  std::vector<T> t, d, w;
  std::vector<ClassId> c;

  std::size_t batch() const { return x.rank() == 1 ? 1 : x.dim(0); }

  static ShortcutInput uniform(Tensor<T> x, T t, ClassId c, T d, T w) {
    ShortcutInput in;
    in.x = std::move(x);
    const std::size_t b = in.batch();
    in.t.assign(b, t);
    in.d.assign(b, d);
    in.w.assign(b, w);
    in.c.assign(b, c);
    return in;
  }
};

// Instrumentation hook: observers see every predict() call on this thread.
struct PredictEvent {
  ParamRole role;
  std::size_t batch;
};
using PredictObserver = std::function<void(const PredictEvent&)>;

namespace detail {
inline std::vector<PredictObserver>& predict_observers() {
  thread_local std::vector<PredictObserver> observers;
  return observers;
}
}  // namespace detail

class ScopedPredictObserver {
 public:
  explicit ScopedPredictObserver(PredictObserver fn) { detail::predict_observers().push_back(std::move(fn)); }
  ~ScopedPredictObserver() { detail::predict_observers().pop_back(); }
  ScopedPredictObserver(const ScopedPredictObserver&) = delete;
  ScopedPredictObserver& operator=(const ScopedPredictObserver&) = delete;
};

namespace detail {
template <class T>
Tensor<T> embedding_matrix(std::span<const T> values, std::size_t dim) {
  std::vector<T> out;
  out.reserve(values.size() * dim);
  for (T v : values) {
    auto row = embed_scalar<T>(v, dim);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor<T>(Shape{values.size(), dim}, std::move(out));
}
}  // namespace detail

template <class T>
Tensor<T> predict(const VelocityNetParams<T>& params, const ShortcutInput<T>& in) {
  const NetConfig& cfg = params.config;
  const bool single = in.x.rank() == 1;
  const std::size_t batch = in.batch();
  const std::size_t dim = single ? in.x.dim(0) : (in.x.rank() == 2 ? in.x.dim(1) : 0);
  if (dim != cfg.input_dim) throw ShapeError("predict", in.x.shape(), Shape{batch, cfg.input_dim});
  if (in.t.size() != batch || in.d.size() != batch || in.w.size() != batch || in.c.size() != batch) {
    throw std::invalid_argument("predict: conditioning vectors must have one entry per row");
  }
  std::vector<std::size_t> rows(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const ClassId c = in.c[i];
    if (c.is_null()) {
      rows[i] = cfg.num_classes;
    } else if (static_cast<std::size_t>(c.value()) < cfg.num_classes) {
      rows[i] = static_cast<std::size_t>(c.value());
    } else {
      throw std::out_of_range("predict: class index " + std::to_string(c.value()) + " out of range (" +
                              std::to_string(cfg.num_classes) + " classes)");
    }
  }
  for (const auto& obs : detail::predict_observers()) obs(PredictEvent{params.role, batch});

  namespace L = net_layout;
  const auto& P = params.tensors;
  Tensor<T> e = add(add(linear(detail::embedding_matrix<T>(in.t, cfg.freq_dim), P[L::kEmbedT], P[L::kEmbedT + 1]),
                        linear(detail::embedding_matrix<T>(in.d, cfg.freq_dim), P[L::kEmbedD], P[L::kEmbedD + 1])),
                    add(linear(detail::embedding_matrix<T>(in.w, cfg.freq_dim), P[L::kEmbedW], P[L::kEmbedW + 1]),
                        table_lookup(P[L::kClassTable], std::span<const std::size_t>(rows))));
  e = silu(e);

  Tensor<T> h = single ? reshape(in.x, Shape{1, dim}) : in.x;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t k = L::layer(l);
    h = silu(add(linear(h, P[k], P[k + 1]), matmul(e, P[k + 2])));
  }
  const std::size_t o = L::output(cfg);
  Tensor<T> out = linear(h, P[o], P[o + 1]);
  return single ? reshape(out, Shape{dim}) : out;
}

}  // namespace ism
