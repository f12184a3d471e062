#include "graphs.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using ism::Shape;
using ism::Tape;
using ism::Traversal;
using T = ism::Tensor<double>;

namespace {

T t2(std::vector<double> v, std::size_t r, std::size_t c) { return T(Shape{r, c}, std::move(v)); }

std::vector<double> vec(const T& x) { return {x.values().begin(), x.values().end()}; }

}  // namespace

TEST(Tensor, ConstructionValidatesShape) {
  EXPECT_THROW(T(Shape{2, 2}, {1, 2, 3}), ism::ShapeError);
  EXPECT_THROW(T(Shape{0, 2}, {}), ism::ShapeError);
  EXPECT_EQ(T::scalar(3).item(), 3);
  EXPECT_THROW(t2({1, 2}, 1, 2).item(), ism::ShapeError);
  EXPECT_THROW(t2({1, 2}, 1, 2).dim(2), ism::ShapeError);
}

TEST(Tensor, MutableValuesCopiesSharedStorage) {
  T a = t2({1, 2, 3, 4}, 2, 2);
  T b = a;
  EXPECT_EQ(a.storage_id(), b.storage_id());
  b.mutable_values()[0] = 9;
  EXPECT_NE(a.storage_id(), b.storage_id());
  EXPECT_EQ(a[0], 1);
  EXPECT_EQ(b[0], 9);
}

TEST(Tensor, MutatingDetachesFromTape) {
  Tape<double> tape;
  T x = tape.leaf(t2({1, 2}, 1, 2));
  T y = ism::scale(x, 2.0);
  EXPECT_TRUE(y.requires_grad());
  y.mutable_values()[0] = 0;
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, ForwardValues) {
  const T a = t2({1, -2, 3, 0.5}, 2, 2);
  const T b = t2({2, 1, -1, 4}, 2, 2);
  EXPECT_EQ(vec(ism::add(a, b)), (std::vector<double>{3, -1, 2, 4.5}));
  EXPECT_EQ(vec(ism::sub(a, b)), (std::vector<double>{-1, -3, 4, -3.5}));
  EXPECT_EQ(vec(ism::mul(a, b)), (std::vector<double>{2, -2, -3, 2}));
  EXPECT_EQ(vec(ism::matmul(a, b)), (std::vector<double>{1 * 2 + -2 * -1, 1 * 1 + -2 * 4, 3 * 2 + 0.5 * -1, 3 * 1 + 0.5 * 4}));
  EXPECT_DOUBLE_EQ(ism::mse(a, b).item(), (1 + 9 + 16 + 12.25) / 4);
  EXPECT_DOUBLE_EQ(ism::silu(T::scalar(1.0)).item(), 1 / (1 + std::exp(-1.0)));
  EXPECT_EQ(vec(ism::add(a, T::scalar(1.0))), (std::vector<double>{2, -1, 4, 1.5}));
  const T w = t2({1, 0, 0, 1, 1, 1}, 2, 3);
  const T bias(Shape{3}, {0.5, 0.5, 0.5});
  EXPECT_EQ(vec(ism::linear(a, w, bias)), (std::vector<double>{-0.5, -1.5, -1.5, 4, 1, 1}));
}

TEST(Tensor, ShapeErrors) {
  const T a = t2({1, 2, 3, 4}, 2, 2);
  const T b = t2({1, 2, 3, 4, 5, 6}, 3, 2);
  EXPECT_THROW(ism::add(a, b), ism::ShapeError);
  EXPECT_THROW(ism::matmul(a, b), ism::ShapeError);
  EXPECT_THROW(ism::reshape(a, Shape{3}), ism::ShapeError);
  EXPECT_THROW(ism::slice(a, 0, 1, 1), ism::ShapeError);
  EXPECT_THROW(ism::slice(a, 2, 0, 1), ism::ShapeError);
  EXPECT_THROW(ism::concat(std::vector<T>{a, t2({1, 2, 3}, 1, 3)}, 0), ism::ShapeError);
  const std::vector<std::size_t> bad = {2};
  EXPECT_THROW(ism::table_lookup(a, std::span<const std::size_t>(bad)), ism::ShapeError);
}

TEST(Tensor, ConcatSliceRoundTrip) {
  const T a = t2({1, 2, 3, 4}, 2, 2);
  const T b = t2({5, 6}, 2, 1);
  const T c = ism::concat(std::vector<T>{a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(vec(c), (std::vector<double>{1, 2, 5, 3, 4, 6}));
  EXPECT_EQ(vec(ism::slice(c, 1, 0, 2)), vec(a));
  EXPECT_EQ(vec(ism::slice(c, 1, 2, 3)), vec(b));
}

TEST(Autodiff, SimpleGradients) {
  Tape<double> tape;
  T x = tape.leaf(T(Shape{3}, {1, 2, 3}));
  // sum(x * x) + 3 sum(x)
  T loss = ism::add(ism::sum(ism::mul(x, x)), ism::scale(ism::sum(x), 3.0));
  auto g = tape.backward(loss).of(x);
  EXPECT_EQ(vec(g), (std::vector<double>{5, 7, 9}));
}

TEST(Autodiff, ReusedTensorAccumulates) {
  Tape<double> tape;
  T x = tape.leaf(T::scalar(2.0));
  T y = ism::mul(x, x);
  T z = ism::add(ism::mul(y, x), y);  // x^3 + x^2
  EXPECT_DOUBLE_EQ(tape.backward(z).of(x).item(), 3 * 4 + 2 * 2);
}

TEST(Autodiff, StopGradientBlocksFlow) {
  Tape<double> tape;
  T x = tape.leaf(T(Shape{2}, {1, -1}));
  T frozen = ism::stop_gradient(ism::scale(x, 5.0));
  EXPECT_FALSE(frozen.requires_grad());
  EXPECT_EQ(vec(frozen), (std::vector<double>{5, -5}));
  T loss = ism::sum(ism::mul(x, frozen));
  EXPECT_EQ(vec(tape.backward(loss).of(x)), (std::vector<double>{5, -5}));
}

TEST(Autodiff, UnreachedLeafHasZeroGradient) {
  Tape<double> tape;
  T x = tape.leaf(T(Shape{2}, {1, 2}));
  T y = tape.leaf(T(Shape{2}, {3, 4}));
  auto g = tape.backward(ism::sum(x));
  EXPECT_FALSE(g.reached(y));
  EXPECT_EQ(vec(g.of(y)), (std::vector<double>{0, 0}));
}

TEST(Autodiff, Errors) {
  Tape<double> tape, other;
  T x = tape.leaf(T(Shape{2}, {1, 2}));
  EXPECT_THROW(tape.leaf(x), ism::AutodiffError);
  EXPECT_THROW(tape.backward(x), ism::ShapeError);
  T y = other.leaf(T(Shape{2}, {1, 2}));
  EXPECT_THROW(ism::add(x, y), ism::AutodiffError);
  auto g = tape.backward(ism::sum(x));
  EXPECT_THROW(g.of(y), ism::AutodiffError);
  EXPECT_THROW(other.backward(ism::sum(x)), ism::AutodiffError);
}

TEST(Autodiff, PrimitiveGraphsMatchFiniteDifferences) {
  for (int seed = 0; seed < 40; ++seed) {
    ism::Rng rng(seed);
    const auto g = graphs::random_loss_graph(rng, 3);
    const auto res = graphs::gradient_check(g);
    EXPECT_LT(res.max_rel_err, 1e-4) << "seed " << seed;
  }
}

TEST(Autodiff, TraversalOrdersAgree) {
  for (int kind = 0; kind < 4; ++kind) {
    ism::Rng rng(100 + kind);
    const auto g = graphs::random_loss_graph(rng, kind);
    std::vector<std::vector<double>> grads[2];
    for (int k = 0; k < 2; ++k) {
      Tape<double> tape;
      std::vector<T> leaves;
      for (const auto& v : g.leaves) leaves.push_back(tape.leaf(v.detached()));
      auto gr = tape.backward(g.loss(leaves), k == 0 ? Traversal::ReverseRecording : Traversal::DepthFirst);
      for (const auto& l : leaves) grads[k].push_back(vec(gr.of(l)));
    }
    ASSERT_EQ(grads[0].size(), grads[1].size());
    for (std::size_t i = 0; i < grads[0].size(); ++i) {
      for (std::size_t j = 0; j < grads[0][i].size(); ++j) {
        EXPECT_NEAR(grads[0][i][j], grads[1][i][j], 1e-12 * (1 + std::abs(grads[0][i][j])));
      }
    }
  }
}

TEST(Autodiff, FloatTensorsWork) {
  ism::Tape<float> tape;
  ism::Tensor<float> x = tape.leaf(ism::Tensor<float>(Shape{2}, {1.f, 2.f}));
  auto g = tape.backward(ism::sum(ism::square(x))).of(x);
  EXPECT_FLOAT_EQ(g[0], 2.f);
  EXPECT_FLOAT_EQ(g[1], 4.f);
}
