#include "graphs.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using ism::Shape;
using T = ism::Tensor<double>;

namespace {

ism::NetConfig tiny() {
  ism::NetConfig c;
  c.hidden_dim = 4;
  c.depth = 1;
  c.num_classes = 2;
  c.embed_dim = 2;
  c.freq_dim = 2;
  return c;
}

}  // namespace

TEST(Ema, MatchesGeometricClosedForm) {
  ism::Rng rng(1);
  const auto online = graphs::random_params(rng, tiny());
  auto start = graphs::random_params(rng, tiny());
  for (double decay : {0.0, 0.5, 0.95, 0.9999, 1.0}) {
    auto shadow = ism::clone(start, ism::ParamRole::EmaTarget);
    for (int n = 1; n <= 100; ++n) {
      ism::ema_update(shadow, online, decay);
      for (std::size_t k = 0; k < shadow.size(); ++k) {
        for (std::size_t i = 0; i < shadow.tensors[k].numel(); ++i) {
          const double expect = oracle::ema_closed_form(start.tensors[k][i], online.tensors[k][i], decay, n);
          ASSERT_NEAR(shadow.tensors[k][i], expect, 1e-12) << "decay " << decay << " n " << n;
        }
      }
    }
  }
}

TEST(Ema, TwinKeepsFastShadowCloser) {
  ism::Rng rng(2);
  auto online = graphs::random_params(rng, tiny());
  auto twin = ism::init_twin(online, 0.95, 0.9999);
  EXPECT_EQ(twin.target.role, ism::ParamRole::EmaTarget);
  EXPECT_EQ(twin.infer.role, ism::ParamRole::EmaInfer);
  auto gap = [&](const ism::VelocityNetParams<double>& s) {
    double d = 0;
    for (std::size_t k = 0; k < s.size(); ++k)
      for (std::size_t i = 0; i < s.tensors[k].numel(); ++i) {
        const double e = s.tensors[k][i] - online.tensors[k][i];
        d += e * e;
      }
    return d;
  };
  std::normal_distribution<double> noise(0, 0.01);
  for (int step = 0; step < 200; ++step) {
    for (auto& t : online.tensors)
      for (double& v : t.mutable_values()) v += noise(rng) + 0.001;
    ism::update_twin(twin, online);
  }
  EXPECT_LT(gap(twin.target), gap(twin.infer));
}

TEST(Ema, UpdateDoesNotAliasOnline) {
  ism::Rng rng(3);
  const auto online = graphs::random_params(rng, tiny());
  auto twin = ism::init_twin(online);
  const double before = online.tensors[0][0];
  auto other = graphs::random_params(rng, tiny());
  ism::update_twin(twin, other);
  EXPECT_EQ(online.tensors[0][0], before);
}

TEST(Ema, Errors) {
  ism::Rng rng(4);
  auto a = ism::init_params<double>(tiny(), rng);
  auto cfg = tiny();
  cfg.hidden_dim = 5;
  const auto b = ism::init_params<double>(cfg, rng);
  EXPECT_THROW(ism::ema_update(a, b, 0.5), ism::ShapeError);
  EXPECT_THROW(ism::ema_update(a, a, 1.5), std::invalid_argument);
  EXPECT_THROW(ism::init_twin(a, -0.1, 0.5), std::invalid_argument);
}
