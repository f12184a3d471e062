#pragma once

// Euler-style shortcut sampling on the uniform grid i/steps.
//
// shortcut_sample: one evaluation per step, guidance scale fed to the model.
// external_cfg_sample: conditional + unconditional evaluation at w=0 per
// step, combined as s_c + w (s_c - s_null).
//
// Both accept any callable ShortcutInput<T> -> Tensor<T>; the overloads
// taking parameters wrap predict().

#include "ism/data.hpp"
#include "ism/log.hpp"
#include "ism/nets.hpp"
#include "ism/objectives.hpp"
#include "ism/rng.hpp"
#include "ism/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

struct SampleRequest {
  int steps = 1;
  double w = 0;
  ClassId c = ClassId::null();
  std::vector<ClassId> labels;  // per-sample classes; overrides c when non-empty
  std::size_t count = 1;
  std::uint64_t seed = 0;
  bool use_interval = true;
  double t_interval = 0.3;
  int base_steps = 128;
  bool record_trajectory = false;
  double w_trained_max = 3.5;  // only used for the out-of-range warning

  void validate() const {
    if (base_steps < 1 || (base_steps & (base_steps - 1)) != 0) {
      throw std::invalid_argument("sample: base_steps must be a power of two, got " + std::to_string(base_steps));
    }
    if (steps < 1 || (steps & (steps - 1)) != 0 || steps > base_steps || base_steps % steps != 0) {
      throw std::invalid_argument("sample: steps must be a power of two dividing " + std::to_string(base_steps) +
                                  ", got " + std::to_string(steps));
    }
    if (!(w >= 0)) throw std::invalid_argument("sample: w must be >= 0");
    if (count < 1) throw std::invalid_argument("sample: count must be >= 1");
    if (!labels.empty() && labels.size() != count) {
      throw std::invalid_argument("sample: labels must have one entry per sample");
    }
  }

  std::vector<ClassId> classes() const { return labels.empty() ? std::vector<ClassId>(count, c) : labels; }
};

template <class T>
struct SampleResult {
  Tensor<T> samples;                 // [count, D]
  std::vector<Tensor<T>> trajectory;  // steps + 1 states when recorded
  std::vector<ClassId> labels;
  std::size_t nfe = 0;
};

namespace detail {

template <class T>
void check_model_output(const Tensor<T>& v, const Tensor<T>& x) {
  if (v.shape() != x.shape()) throw ShapeError("sample: model output", v.shape(), x.shape());
}

template <class T>
Tensor<T> axpy(const Tensor<T>& x, const Tensor<T>& v, T d) {
  std::vector<T> out(x.numel());
  auto xv = x.values();
  auto vv = v.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + vv[i] * d;
  return Tensor<T>(x.shape(), std::move(out));
}

inline void warn_w_range(const SampleRequest& req) {
  if (req.w > req.w_trained_max + 1e-12) {
    log::warn("sample: w=" + std::to_string(req.w) + " is outside the trained range [0, " +
              std::to_string(req.w_trained_max) + "]");
  }
}

}  // namespace detail

template <class T>
Tensor<T> initial_noise(const SampleRequest& req, std::size_t dim) {
  Rng rng = derive_rng(req.seed, streams::kSample);
  return sample_noise<T>(Shape{req.count, dim}, rng);
}

template <class T, class Model>
SampleResult<T> shortcut_sample(Model&& model, const SampleRequest& req, std::size_t dim) {
  req.validate();
  detail::warn_w_range(req);
  SampleResult<T> res;
  res.labels = req.classes();
  Tensor<T> x = initial_noise<T>(req, dim);
  if (req.record_trajectory) res.trajectory.push_back(x);
  const double d = 1.0 / req.steps;
  for (int i = 0; i < req.steps; ++i) {
    const double t = i * d;
    const double w = req.use_interval ? effective_w(t, req.w, req.t_interval) : req.w;
    ShortcutInput<T> in;
    in.x = x;
    in.t.assign(req.count, static_cast<T>(t));
    in.d.assign(req.count, static_cast<T>(query_step(d, req.base_steps)));
    in.w.assign(req.count, static_cast<T>(w));
    in.c = res.labels;
    const Tensor<T> v = model(in);
    ++res.nfe;
    detail::check_model_output(v, x);
    x = detail::axpy(x, v, static_cast<T>(d));
    if (req.record_trajectory) res.trajectory.push_back(x);
  }
  res.samples = x;
  return res;
}

template <class T>
SampleResult<T> shortcut_sample(const VelocityNetParams<T>& params, const SampleRequest& req) {
  return shortcut_sample<T>([&](const ShortcutInput<T>& in) { return predict(params, in); }, req,
                            params.config.input_dim);
}

template <class T, class Model>
SampleResult<T> external_cfg_sample(Model&& model, const SampleRequest& req, std::size_t dim) {
  req.validate();
  detail::warn_w_range(req);
  SampleResult<T> res;
  res.labels = req.classes();
  Tensor<T> x = initial_noise<T>(req, dim);
  if (req.record_trajectory) res.trajectory.push_back(x);
  const double d = 1.0 / req.steps;
  for (int i = 0; i < req.steps; ++i) {
    const double t = i * d;
    const T w = static_cast<T>(req.use_interval ? effective_w(t, req.w, req.t_interval) : req.w);
    ShortcutInput<T> cond;
    cond.x = x;
    cond.t.assign(req.count, static_cast<T>(t));
    cond.d.assign(req.count, static_cast<T>(query_step(d, req.base_steps)));
    cond.w.assign(req.count, T{0});
    cond.c = res.labels;
    ShortcutInput<T> uncond = cond;
    uncond.c.assign(req.count, ClassId::null());
    const Tensor<T> sc = model(cond);
    const Tensor<T> su = model(uncond);
    res.nfe += 2;
    detail::check_model_output(sc, x);
    detail::check_model_output(su, x);
    std::vector<T> v(x.numel());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = sc[k] + w * (sc[k] - su[k]);
    x = detail::axpy(x, Tensor<T>(x.shape(), std::move(v)), static_cast<T>(d));
    if (req.record_trajectory) res.trajectory.push_back(x);
  }
  res.samples = x;
  return res;
}

template <class T>
SampleResult<T> external_cfg_sample(const VelocityNetParams<T>& params, const SampleRequest& req) {
  return external_cfg_sample<T>([&](const ShortcutInput<T>& in) { return predict(params, in); }, req,
                                params.config.input_dim);
}

}  // namespace ism
