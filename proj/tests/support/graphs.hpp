#pragma once

// Random differentiable graphs for gradient checks: small velocity networks
// under the training losses, and free-form compositions of primitive ops.

#include "ism/ism.hpp"
#include "oracles.hpp"

#include <functional>
#include <random>
#include <vector>

namespace graphs {

using ism::Shape;
using TensorD = ism::Tensor<double>;

struct LossGraph {
  std::vector<TensorD> leaves;
  std::function<TensorD(const std::vector<TensorD>&)> loss;
};

inline TensorD random_tensor(ism::Rng& rng, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(ism::numel_of(shape));
  for (double& x : v) x = n(rng);
  return TensorD(std::move(shape), std::move(v));
}

inline ism::NetConfig random_net_config(ism::Rng& rng, std::size_t input_dim) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  ism::NetConfig c;
  c.input_dim = input_dim;
  c.hidden_dim = pick(3, 8);
  c.depth = pick(1, 3);
  c.num_classes = pick(1, 3);
  c.embed_dim = pick(2, 6);
  c.freq_dim = 2 * pick(1, 3);
  return c;
}

/// Parameters with a non-zero output layer so every path carries gradient.
inline ism::VelocityNetParams<double> random_params(ism::Rng& rng, const ism::NetConfig& c) {
  auto p = ism::init_params<double>(c, rng);
  const std::size_t o = ism::net_layout::output(c);
  p.tensors[o] = random_tensor(rng, p.tensors[o].shape(), 0.5);
  p.tensors[o + 1] = random_tensor(rng, p.tensors[o + 1].shape(), 0.5);
  return p;
}

inline ism::ObjectiveBatch<double> random_batch(ism::Rng& rng, std::size_t b, std::size_t dim, std::size_t classes) {
  ism::ObjectiveBatch<double> batch;
  batch.x0 = random_tensor(rng, {b, dim});
  batch.x1 = random_tensor(rng, {b, dim});
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> cls(-1, static_cast<int>(classes) - 1);
  for (std::size_t i = 0; i < b; ++i) {
    batch.t.push_back(u(rng) * 0.5);
    batch.d.push_back(0.125 * std::uniform_int_distribution<int>(1, 2)(rng));
    batch.w.push_back(3.5 * u(rng));
    batch.c.push_back(ism::ClassId(cls(rng)));
  }
  return batch;
}

/// kind 0: velocity loss; 1: guidance loss with a frozen direction;
/// 2: shortcut prediction at 2d on grid data under the wavelet distance;
/// 3: primitive-op composition.
inline LossGraph random_loss_graph(ism::Rng& rng, int kind) {
  LossGraph g;
  std::uniform_int_distribution<std::size_t> batch_size(2, 4);
  if (kind == 0 || kind == 1) {
    const auto cfg = random_net_config(rng, 2);
    const auto params = random_params(rng, cfg);
    const auto batch = random_batch(rng, batch_size(rng), 2, cfg.num_classes);
    const TensorD s_g = random_tensor(rng, {batch.size(), 2});
    g.leaves = params.tensors;
    g.loss = [params, batch, s_g, kind](const std::vector<TensorD>& leaves) {
      auto p = params;
      p.tensors = leaves;
      return kind == 0 ? ism::loss_velocity(p, batch) : ism::loss_guidance_with_direction(p, batch, s_g);
    };
  } else if (kind == 2) {
    const std::size_t side = 4;
    const auto cfg = random_net_config(rng, side * side);
    const auto params = random_params(rng, cfg);
    const auto batch = random_batch(rng, batch_size(rng), side * side, cfg.num_classes);
    const TensorD target = random_tensor(rng, {batch.size(), side * side});
    ism::DistanceConfig dist;
    dist.grid = ism::GridShape{1, side, side};
    dist.wavelet_levels = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    g.leaves = params.tensors;
    g.loss = [params, batch, target, dist](const std::vector<TensorD>& leaves) {
      auto p = params;
      p.tensors = leaves;
      ism::ShortcutInput<double> in;
      in.x = ism::interpolate_rows(batch.x0, batch.x1, std::span<const double>(batch.t));
      in.t = batch.t;
      in.c = batch.c;
      in.w = batch.w;
      for (double d : batch.d) in.d.push_back(2 * d);
      return ism::loss_distance(ism::predict(p, in), target, dist);
    };
  } else {
    const std::size_t m = batch_size(rng), k = batch_size(rng), n = batch_size(rng);
    g.leaves = {random_tensor(rng, {m, k}), random_tensor(rng, {k, n}), random_tensor(rng, {n}),
                random_tensor(rng, {m, n}), random_tensor(rng, {3, n})};
    const int variant = std::uniform_int_distribution<int>(0, 3)(rng);
    const std::vector<double> row_scale = [&] {
      std::vector<double> v;
      for (std::size_t i = 0; i < m; ++i) v.push_back(std::normal_distribution<double>(0, 1)(rng));
      return v;
    }();
    const std::vector<std::size_t> lookup = {2, 0, 1, 1};
    g.loss = [variant, m, n, row_scale, lookup](const std::vector<TensorD>& L) {
      using namespace ism;
      TensorD h = silu(linear(L[0], L[1], L[2]));                   // [m, n]
      h = add(mul(h, L[3]), scale(square(L[3]), 0.3));               // [m, n]
      h = scale_rows(h, std::span<const double>(row_scale));
      TensorD e = table_lookup(L[4], std::span<const std::size_t>(lookup));  // [4, n]
      switch (variant) {
        case 0:
          return add(mean(square(h)), sum(mul(e, e)));
        case 1: {
          TensorD both = concat(std::vector<TensorD>{h, e}, 0);      // [m + 4, n]
          TensorD part = slice(both, 0, 1, m + 2);
          return mse(silu(part), part);
        }
        case 2: {
          TensorD r = reshape(h, Shape{m * n});
          return add(sum(matmul(reshape(L[0], Shape{m, L[0].numel() / m}), L[1])), mean(mul(r, r)));
        }
        default:
          return sub(mean(silu(sub(h, matmul(L[0], L[1])))), scale(sum(e), 0.1));
      }
    };
  }
  return g;
}

struct CheckResult {
  double max_rel_err = 0;
  std::size_t coords = 0;
};

/// Analytic gradients of every leaf against central differences.
inline CheckResult gradient_check(const LossGraph& g, double h = 1e-5,
                                  ism::Traversal traversal = ism::Traversal::ReverseRecording) {
  ism::Tape<double> tape;
  std::vector<TensorD> tracked;
  for (const auto& v : g.leaves) tracked.push_back(tape.leaf(TensorD(v.shape(), std::vector<double>(v.values().begin(), v.values().end()))));
  const auto grads = tape.backward(g.loss(tracked), traversal);

  CheckResult res;
  for (std::size_t li = 0; li < g.leaves.size(); ++li) {
    const auto analytic = grads.of(tracked[li]);
    std::vector<double> x(g.leaves[li].values().begin(), g.leaves[li].values().end());
    auto f = [&](const std::vector<double>& xv) {
      std::vector<TensorD> leaves = g.leaves;
      leaves[li] = TensorD(g.leaves[li].shape(), xv);
      return g.loss(leaves).item();
    };
    const auto numeric = oracle::finite_difference(f, x, h);
    std::vector<double> a(analytic.values().begin(), analytic.values().end());
    res.max_rel_err = std::max(res.max_rel_err, oracle::max_relative_error(a, numeric));
    res.coords += x.size();
  }
  return res;
}

}  // namespace graphs
