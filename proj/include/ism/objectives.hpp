#pragma once

// Training objectives: velocity (flow matching at d=0, w=0), intrinsic
// guidance (d=0, w>0), guided self-consistency (d>0), their weighted sum,
// the interval-guidance rule and the (t, d, w) schedule.

#include "ism/nets.hpp"
#include "ism/rng.hpp"
#include "ism/tensor.hpp"
#include "ism/wavelet.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

struct GridShape {
  std::size_t channels = 1, height = 0, width = 0;
  std::size_t numel() const { return channels * height * width; }
};

/// Distance used by every loss: multi-level wavelet loss on grid-shaped data
/// when levels > 0, plain MSE otherwise.
struct DistanceConfig {
  std::size_t wavelet_levels = 0;
  std::optional<GridShape> grid;
};

struct ScheduleConfig {
  int base_steps = 128;
  double w_max = 3.5;
  double w_grid_step = 0.25;
  double t_interval = 0.3;
  double consistency_fraction = 0.8;
  bool interval_on_consistency = true;

  void validate() const {
    if (base_steps < 2 || (base_steps & (base_steps - 1)) != 0) {
      throw std::invalid_argument("base_steps must be a power of two >= 2, got " + std::to_string(base_steps));
    }
    if (!(w_max >= 0)) throw std::invalid_argument("w_max must be >= 0");
    if (!(w_grid_step > 0)) throw std::invalid_argument("w_grid_step must be > 0");
    if (!(t_interval >= 0 && t_interval < 1)) throw std::invalid_argument("t_interval must be in [0,1)");
    if (!(consistency_fraction >= 0 && consistency_fraction <= 1)) {
      throw std::invalid_argument("consistency_fraction must be in [0,1]");
    }
  }
};

enum class Branch { Empirical, Consistency };

struct ScheduleSample {
  double t = 0, d = 0, w = 0;
  Branch branch = Branch::Empirical;
};

struct LossWeights {
  double alpha = 1, beta = 1, gamma = 1;
};

/// Rows of matched (x0, x1, c) with their schedule draw.
template <class T>
struct ObjectiveBatch {
  Tensor<T> x0, x1;  // [B, D]
  std::vector<ClassId> c;
  std::vector<T> t, d, w;

  std::size_t size() const { return c.size(); }
};

/// All step sizes {1/N, 2/N, ..., 1/2, 1}.
inline std::vector<double> shortcut_lengths(int base_steps) {
  std::vector<double> out;
  for (int s = 1; s <= base_steps; s *= 2) out.push_back(static_cast<double>(s) / base_steps);
  return out;
}

/// Guidance is zero below t_interval.
inline double effective_w(double t, double w, double t_interval) { return t >= t_interval ? w : 0.0; }

template <class T>
Tensor<T> interpolate(const Tensor<T>& x0, const Tensor<T>& x1, T t) {
  if (x0.shape() != x1.shape()) throw ShapeError("interpolate", x0.shape(), x1.shape());
  std::vector<T> out(x0.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1 - t) * x0[i] + t * x1[i];
  return Tensor<T>(x0.shape(), std::move(out));
}

/// Per-row times for a [B, ...] batch.
template <class T>
Tensor<T> interpolate_rows(const Tensor<T>& x0, const Tensor<T>& x1, std::span<const T> t) {
  if (x0.shape() != x1.shape()) throw ShapeError("interpolate", x0.shape(), x1.shape());
  if (x0.rank() == 0 || x0.dim(0) != t.size()) throw ShapeError("interpolate", x0.shape(), Shape{t.size()});
  const std::size_t row = x0.numel() / t.size();
  std::vector<T> out(x0.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T ti = t[i / row];
    out[i] = (1 - ti) * x0[i] + ti * x1[i];
  }
  return Tensor<T>(x0.shape(), std::move(out));
}

template <class T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& x1) {
  if (x0.shape() != x1.shape()) throw ShapeError("velocity_target", x0.shape(), x1.shape());
  return sub(x1.detached(), x0.detached());
}

template <class T>
Tensor<T> loss_distance(const Tensor<T>& pred, const Tensor<T>& target, const DistanceConfig& dist) {
  if (dist.wavelet_levels == 0 || !dist.grid) return mse(pred, target);
  const GridShape& g = *dist.grid;
  const std::size_t batch = pred.rank() == 2 ? pred.dim(0) : 1;
  const Shape grid{batch, g.channels, g.height, g.width};
  return multilevel_wavelet_loss(reshape(pred, grid), reshape(target, grid), dist.wavelet_levels);
}

/// s(x_t, t, c, 0, 0) - s(x_t, t, null, 0, 0). Callers detach it before use.
template <class T>
Tensor<T> guidance_direction(const VelocityNetParams<T>& params, const Tensor<T>& x_t, std::span<const T> t,
                             std::span<const ClassId> c) {
  ShortcutInput<T> cond;
  cond.x = x_t;
  cond.t.assign(t.begin(), t.end());
  cond.d.assign(t.size(), T{0});
  cond.w.assign(t.size(), T{0});
  cond.c.assign(c.begin(), c.end());
  ShortcutInput<T> uncond = cond;
  uncond.c.assign(c.size(), ClassId::null());
  return sub(predict(params, cond), predict(params, uncond));
}

template <class T>
Tensor<T> loss_velocity(const VelocityNetParams<T>& params, const ObjectiveBatch<T>& batch,
                        const DistanceConfig& dist = {}) {
  ShortcutInput<T> in;
  in.x = interpolate_rows(batch.x0, batch.x1, std::span<const T>(batch.t));
  in.t = batch.t;
  in.d.assign(batch.size(), T{0});
  in.w.assign(batch.size(), T{0});
  in.c = batch.c;
  return loss_distance(predict(params, in), velocity_target(batch.x0, batch.x1), dist);
}

/// Regresses s(x_t, t, c, 0, w) onto v + w * sg(s_g). `batch.w` must already
/// have the interval rule applied.
template <class T>
Tensor<T> loss_guidance(const VelocityNetParams<T>& params, const ObjectiveBatch<T>& batch,
                        const DistanceConfig& dist = {}) {
  const Tensor<T> x_t = interpolate_rows(batch.x0, batch.x1, std::span<const T>(batch.t));
  const Tensor<T> s_g = stop_gradient(guidance_direction(params, x_t, std::span<const T>(batch.t),
                                                         std::span<const ClassId>(batch.c)));
  const Tensor<T> target = add(velocity_target(batch.x0, batch.x1), scale_rows(s_g, std::span<const T>(batch.w)));
  ShortcutInput<T> in;
  in.x = x_t;
  in.t = batch.t;
  in.d.assign(batch.size(), T{0});
  in.w = batch.w;
  in.c = batch.c;
  return loss_distance(predict(params, in), target, dist);
}

/// Same as loss_guidance but with the guidance direction supplied as a
/// constant, for checking stop-gradient semantics.
template <class T>
Tensor<T> loss_guidance_with_direction(const VelocityNetParams<T>& params, const ObjectiveBatch<T>& batch,
                                       const Tensor<T>& s_g, const DistanceConfig& dist = {}) {
  const Tensor<T> x_t = interpolate_rows(batch.x0, batch.x1, std::span<const T>(batch.t));
  const Tensor<T> target = add(velocity_target(batch.x0, batch.x1), scale_rows(s_g, std::span<const T>(batch.w)));
  ShortcutInput<T> in;
  in.x = x_t;
  in.t = batch.t;
  in.d.assign(batch.size(), T{0});
  in.w = batch.w;
  in.c = batch.c;
  return loss_distance(predict(params, in), target, dist);
}

/// Step size the network is queried at: the smallest grid size maps to d=0.
inline double query_step(double d, int base_steps) {
  return d <= 1.0 / base_steps + 1e-12 ? 0.0 : d;
}

/// Two guided d-steps: x' = x_t + s_online(x_t, t, d) d, target =
/// (s_ema(x_t, t, d) + s_ema(x', t + d, d)) / 2. The models are callables
/// ShortcutInput<T> -> Tensor<T>; the result is detached.
template <class T, class OnlineFn, class TargetFn>
Tensor<T> consistency_target_with(OnlineFn&& online, TargetFn&& target, const Tensor<T>& x_t, std::span<const T> t,
                                  std::span<const ClassId> c, std::span<const T> d, std::span<const T> w,
                                  int base_steps) {
  const std::size_t b = t.size();
  if (c.size() != b || d.size() != b || w.size() != b) {
    throw std::invalid_argument("consistency_target: conditioning vectors must have one entry per row");
  }
  ShortcutInput<T> first;
  first.x = x_t.detached();
  first.t.assign(t.begin(), t.end());
  first.c.assign(c.begin(), c.end());
  first.w.assign(w.begin(), w.end());
  first.d.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (!(d[i] > 0)) throw std::invalid_argument("consistency_target: d must be positive");
    if (t[i] + 2 * d[i] > 1 + 1e-9) {
      throw std::invalid_argument("consistency_target: t + 2d exceeds 1 (t=" + std::to_string(t[i]) +
                                  ", d=" + std::to_string(d[i]) + ")");
    }
    first.d[i] = static_cast<T>(query_step(d[i], base_steps));
  }
  const Tensor<T> step = stop_gradient(online(first));
  ShortcutInput<T> second = first;
  second.x = add(first.x, scale_rows(step, d));
  for (std::size_t i = 0; i < b; ++i) second.t[i] = t[i] + d[i];
  const Tensor<T> a = target(first);
  const Tensor<T> z = target(second);
  return stop_gradient(scale(add(a, z), T{0.5}));
}

template <class T>
Tensor<T> consistency_target(const VelocityNetParams<T>& online, const VelocityNetParams<T>& ema_target,
                             const Tensor<T>& x_t, std::span<const T> t, std::span<const ClassId> c,
                             std::span<const T> d, std::span<const T> w, int base_steps) {
  const VelocityNetParams<T> frozen = detach(online);
  const VelocityNetParams<T> target_params = detach(ema_target);
  return consistency_target_with<T>([&](const ShortcutInput<T>& in) { return predict(frozen, in); },
                                    [&](const ShortcutInput<T>& in) { return predict(target_params, in); }, x_t, t,
                                    c, d, w, base_steps);
}

template <class T>
Tensor<T> loss_consistency(const VelocityNetParams<T>& online, const VelocityNetParams<T>& ema_target,
                           const ObjectiveBatch<T>& batch, int base_steps, const DistanceConfig& dist = {}) {
  const Tensor<T> x_t = interpolate_rows(batch.x0, batch.x1, std::span<const T>(batch.t));
  const Tensor<T> target =
      consistency_target(online, ema_target, x_t, std::span<const T>(batch.t), std::span<const ClassId>(batch.c),
                         std::span<const T>(batch.d), std::span<const T>(batch.w), base_steps);
  ShortcutInput<T> in;
  in.x = x_t;
  in.t = batch.t;
  in.c = batch.c;
  in.w = batch.w;
  in.d.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) in.d[i] = 2 * batch.d[i];
  return loss_distance(predict(online, in), target, dist);
}

template <class T>
struct LossTerms {
  Tensor<T> velocity = Tensor<T>::scalar(0);
  Tensor<T> guidance = Tensor<T>::scalar(0);
  Tensor<T> consistency = Tensor<T>::scalar(0);
  Tensor<T> total = Tensor<T>::scalar(0);
};

template <class T>
Tensor<T> total_loss(const Tensor<T>& velocity, const Tensor<T>& guidance, const Tensor<T>& consistency,
                     const LossWeights& weights) {
  return add(add(scale(velocity, static_cast<T>(weights.alpha)), scale(guidance, static_cast<T>(weights.beta))),
             scale(consistency, static_cast<T>(weights.gamma)));
}

/// Evaluates the three sub-batches (any may be empty) and their weighted sum.
template <class T>
LossTerms<T> total_loss(const VelocityNetParams<T>& online, const VelocityNetParams<T>& ema_target,
                        const ObjectiveBatch<T>* velocity_rows, const ObjectiveBatch<T>* guidance_rows,
                        const ObjectiveBatch<T>* consistency_rows, int base_steps, const LossWeights& weights,
                        const DistanceConfig& dist = {}) {
  LossTerms<T> terms;
  if (velocity_rows && velocity_rows->size() > 0) terms.velocity = loss_velocity(online, *velocity_rows, dist);
  if (guidance_rows && guidance_rows->size() > 0) terms.guidance = loss_guidance(online, *guidance_rows, dist);
  if (consistency_rows && consistency_rows->size() > 0) {
    terms.consistency = loss_consistency(online, ema_target, *consistency_rows, base_steps, dist);
  }
  terms.total = total_loss(terms.velocity, terms.guidance, terms.consistency, weights);
  return terms;
}

/// Uniform draw from {0, step, 2 step, ..., w_max}.
inline double draw_w(Rng& rng, const ScheduleConfig& cfg) {
  const auto levels = static_cast<int>(std::floor(cfg.w_max / cfg.w_grid_step + 1e-9));
  std::uniform_int_distribution<int> pick(0, levels);
  return pick(rng) * cfg.w_grid_step;
}

inline std::vector<ScheduleSample> sample_schedule(Rng& rng, const ScheduleConfig& cfg, std::size_t batch_size) {
  cfg.validate();
  const int n = cfg.base_steps;
  const int log2n = static_cast<int>(std::lround(std::log2(n)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ScheduleSample> out(batch_size);
  for (auto& s : out) {
    const double w = draw_w(rng, cfg);
    if (unit(rng) < cfg.consistency_fraction) {
      s.branch = Branch::Consistency;
      // d = 2^j / N for j in [0, log2 N - 1], i.e. d in {1/N, ..., 1/2}
      const int j = std::uniform_int_distribution<int>(0, log2n - 1)(rng);
      const int span = 1 << j;
      s.d = static_cast<double>(span) / n;
      const int slots = n / span - 2;  // t = k d with t + 2d <= 1
      s.t = std::uniform_int_distribution<int>(0, slots)(rng) * s.d;
      s.w = cfg.interval_on_consistency ? effective_w(s.t, w, cfg.t_interval) : w;
    } else {
      s.branch = Branch::Empirical;
      s.d = 0;
      s.t = static_cast<double>(std::uniform_int_distribution<int>(0, n - 1)(rng)) / n;
      s.w = effective_w(s.t, w, cfg.t_interval);
    }
  }
  return out;
}

}  // namespace ism
