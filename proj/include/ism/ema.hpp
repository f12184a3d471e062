#pragma once

#include "ism/nets.hpp"

#include <stdexcept>
#include <string>

namespace ism {

/// Fast-decay shadow for self-consistency targets, slow-decay shadow for
/// sampling.
template <class T>
struct TwinEmaState {
  VelocityNetParams<T> target;
  double target_decay = 0.95;
  VelocityNetParams<T> infer;
  double infer_decay = 0.9999;
};

inline void check_decay(double decay) {
  if (!(decay >= 0 && decay <= 1)) throw std::invalid_argument("EMA decay must be in [0,1], got " + std::to_string(decay));
}

/// shadow <- decay * shadow + (1 - decay) * online, elementwise.
template <class T>
void ema_update(VelocityNetParams<T>& shadow, const VelocityNetParams<T>& online, double decay) {
  check_decay(decay);
  if (shadow.size() != online.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
  const T keep = static_cast<T>(decay);
  const T take = static_cast<T>(1.0 - decay);
  for (std::size_t k = 0; k < shadow.size(); ++k) {
    if (shadow.tensors[k].shape() != online.tensors[k].shape()) {
      throw ShapeError("ema_update " + shadow.names[k], shadow.tensors[k].shape(), online.tensors[k].shape());
    }
    auto s = shadow.tensors[k].mutable_values();
    auto o = online.tensors[k].values();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = keep * s[i] + take * o[i];
  }
}

template <class T>
TwinEmaState<T> init_twin(const VelocityNetParams<T>& online, double target_decay = 0.95,
                          double infer_decay = 0.9999) {
  check_decay(target_decay);
  check_decay(infer_decay);
  return {clone(online, ParamRole::EmaTarget), target_decay, clone(online, ParamRole::EmaInfer), infer_decay};
}

template <class T>
void update_twin(TwinEmaState<T>& state, const VelocityNetParams<T>& online) {
  ema_update(state.target, online, state.target_decay);
  ema_update(state.infer, online, state.infer_decay);
}

}  // namespace ism
