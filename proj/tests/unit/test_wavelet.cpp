#include "graphs.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using ism::Shape;
using T = ism::Tensor<double>;

namespace {

double sum_sq(const T& x) {
  double s = 0;
  for (double v : x.values()) s += v * v;
  return s;
}

}  // namespace

TEST(Haar, MatchesSeparableOracle) {
  ism::Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const T x = graphs::random_tensor(rng, {1, 8, 6});
    const auto bands = ism::dwt2_haar(x);
    std::vector<double> img(x.values().begin(), x.values().end());
    const auto ref = oracle::haar2d(img, 8, 6);
    const T* got[4] = {&bands.ll, &bands.lh, &bands.hl, &bands.hh};
    for (int b = 0; b < 4; ++b) {
      ASSERT_EQ(got[b]->shape(), (Shape{1, 4, 3}));
      for (std::size_t i = 0; i < ref[b].size(); ++i) EXPECT_NEAR((*got[b])[i], ref[b][i], 1e-14) << "band " << b;
    }
  }
}

TEST(Haar, BlockFormula) {
  // one 2x2 block [[a, b], [c, d]]
  const double a = 1, b = 2, c = 4, d = 8;
  const auto s = ism::dwt2_haar(T(Shape{1, 2, 2}, {a, b, c, d}));
  EXPECT_DOUBLE_EQ(s.ll[0], (a + b + c + d) / 2);
  EXPECT_DOUBLE_EQ(s.lh[0], (-a - b + c + d) / 2);
  EXPECT_DOUBLE_EQ(s.hl[0], (-a + b - c + d) / 2);
  EXPECT_DOUBLE_EQ(s.hh[0], (a - b - c + d) / 2);
}

TEST(Haar, PerfectReconstruction) {
  ism::Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const T x = graphs::random_tensor(rng, {2, 3, 16, 16});
    const T y = ism::idwt2_haar(ism::dwt2_haar(x));
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_NEAR(x[i], y[i], 1e-12);
  }
}

TEST(Haar, ParsevalPerLevel) {
  ism::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    T x = graphs::random_tensor(rng, {1, 16, 16});
    const double e0 = sum_sq(x);
    for (int level = 0; level < 4; ++level) {
      x = ism::concatenated_dwt(x);
      EXPECT_NEAR(sum_sq(x), e0, 1e-9 * e0);
    }
  }
}

TEST(Haar, OddExtentThrows) {
  EXPECT_THROW(ism::dwt2_haar(T(Shape{1, 3, 4})), ism::ShapeError);
  EXPECT_THROW(ism::dwt2_haar(T(Shape{4, 4})), ism::ShapeError);
}

TEST(WaveletLoss, ZeroLevelsIsMse) {
  ism::Rng rng(4);
  const T p = graphs::random_tensor(rng, {2, 1, 8, 8});
  const T q = graphs::random_tensor(rng, {2, 1, 8, 8});
  EXPECT_EQ(ism::multilevel_wavelet_loss(p, q, 0).item(), ism::mse(p, q).item());
}

TEST(WaveletLoss, ConstantOffsetGivesDeltaSquared) {
  ism::Rng rng(5);
  const double delta = 0.37;
  const T q = graphs::random_tensor(rng, {1, 16, 16});
  const T p = ism::add(q, T::scalar(delta));
  for (std::size_t levels = 1; levels <= 4; ++levels) {
    EXPECT_NEAR(ism::multilevel_wavelet_loss(p, q, levels).item(), delta * delta, 1e-9);
  }
}

// Every level is an orthonormal map of the full stack, so each term equals
// the signal-domain MSE.
TEST(WaveletLoss, EveryLevelPreservesMse) {
  ism::Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const T p = graphs::random_tensor(rng, {3, 2, 16, 16});
    const T q = graphs::random_tensor(rng, {3, 2, 16, 16});
    const double m = ism::mse(p, q).item();
    for (std::size_t levels = 1; levels <= 4; ++levels) {
      EXPECT_NEAR(ism::multilevel_wavelet_loss(p, q, levels).item(), m, 1e-12 * m);
    }
  }
}

TEST(WaveletLoss, Errors) {
  const T p(Shape{1, 12, 12}), q(Shape{1, 12, 12});
  EXPECT_NO_THROW(ism::multilevel_wavelet_loss(p, q, 2));
  EXPECT_THROW(ism::multilevel_wavelet_loss(p, q, 3), ism::ShapeError);
  EXPECT_THROW(ism::multilevel_wavelet_loss(p, T(Shape{1, 12, 10}), 1), ism::ShapeError);
}

TEST(WaveletLoss, GradientMatchesFiniteDifferences) {
  ism::Rng rng(7);
  const T q = graphs::random_tensor(rng, {1, 8, 8});
  graphs::LossGraph g;
  g.leaves = {graphs::random_tensor(rng, {1, 8, 8})};
  g.loss = [q](const std::vector<T>& l) { return ism::multilevel_wavelet_loss(l[0], q, 3); };
  EXPECT_LT(graphs::gradient_check(g).max_rel_err, 1e-6);
  graphs::LossGraph inv;
  inv.leaves = {graphs::random_tensor(rng, {1, 4, 4}), graphs::random_tensor(rng, {1, 4, 4}),
                graphs::random_tensor(rng, {1, 4, 4}), graphs::random_tensor(rng, {1, 4, 4})};
  inv.loss = [](const std::vector<T>& l) {
    const T x = ism::idwt2_haar(ism::SubBands<double>{l[0], l[1], l[2], l[3]});
    return ism::sum(ism::silu(x));
  };
  EXPECT_LT(graphs::gradient_check(inv).max_rel_err, 1e-6);
}
