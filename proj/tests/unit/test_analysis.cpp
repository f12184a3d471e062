#include "graphs.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using ism::ClassId;
using ism::Shape;
using ism::Vec2;
using T = ism::Tensor<double>;

TEST(Compounding, ClosedForms) {
  EXPECT_NEAR(ism::compounded_scale(1.5, 128), 17.0859375, 1e-12);
  EXPECT_NEAR(std::pow(1.5, 7), 17.09, 5e-3);
  for (int n : {1, 2, 4, 8, 64, 128}) {
    for (double w : {0.5, 1.0, 1.5, 2.0, 3.5}) {
      EXPECT_NEAR(ism::compounded_scale(w, n), ism::compounded_scale_recursive(w, n), 1e-12);
    }
  }
  EXPECT_EQ(ism::compounded_scale(1.0, 128), 1.0);
  EXPECT_THROW(ism::compounded_scale(1.5, 12), std::invalid_argument);
  EXPECT_THROW(ism::compounded_scale(1.5, 0), std::invalid_argument);
}

TEST(IdealModel, ConstantBaseLevelsFollowClosedForm) {
  const Vec2 a{0.7, -0.2}, b{-0.3, 0.4};
  for (double w : {1.0, 1.5, 2.0}) {
    const auto model = ism::build_ideal_model(8, w, ism::constant_base(a, b), {8, 3.0});
    for (int level = 0; level <= 3; ++level) {
      const Vec2 expect = ism::constant_level_closed_form(a, b, w, level);
      const Vec2 got = model.velocity({0.3, 1.1}, 0.0, true, level);
      EXPECT_NEAR(got[0], expect[0], 1e-12);
      EXPECT_NEAR(got[1], expect[1], 1e-12);
      const Vec2 u = model.velocity({0.3, 1.1}, 0.0, false, level);
      EXPECT_NEAR(u[0], b[0], 1e-12);
    }
  }
}

TEST(IdealModel, Prop1HoldsForConstantFields) {
  ism::Rng rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int n : {2, 4, 8}) {
    for (double w : {1.0, 1.5, 2.0}) {
      const auto model =
          ism::build_ideal_model(n, w, ism::constant_base({u(rng), u(rng)}, {u(rng), u(rng)}), {16, 3.0});
      const auto rep = ism::verify_prop1(model, {u(rng), u(rng)});
      EXPECT_LE(rep.max_abs_err, 1e-9) << "N=" << n << " w=" << w;
      EXPECT_NEAR(rep.compounded_w, std::pow(w, std::log2(n)), 1e-12);
    }
  }
}

TEST(IdealModel, Prop1HoldsForAffineFields) {
  for (int seed = 0; seed < 5; ++seed) {
    ism::Rng rng(seed);
    const auto model = ism::build_ideal_model(8, 1.5, ism::affine_base(rng), {16, 3.0});
    EXPECT_LE(ism::verify_prop1(model, {0.4, -0.8}).max_abs_err, 1e-9);
  }
}

TEST(IdealModel, Prop1ForSmoothFieldsIsInterpolationLimited) {
  ism::Rng rng(2);
  const auto model = ism::build_ideal_model(8, 1.5, ism::smooth_base(rng));
  const auto rep = ism::verify_prop1(model, {0.5, -0.5});
  EXPECT_LE(rep.max_abs_err, 1e-3);
  // a coarser lattice is measurably worse
  ism::Rng again(2);
  const auto coarse = ism::build_ideal_model(8, 1.5, ism::smooth_base(again), {8, 3.0});
  EXPECT_GT(ism::verify_prop1(coarse, {0.5, -0.5}).max_abs_err, rep.max_abs_err);
}

TEST(IdealModel, Prop1FailsWithoutCompounding) {
  // the plain w on the right-hand side does not reproduce the 1-step output
  const Vec2 a{1, 0}, b{0, 1};
  const auto model = ism::build_ideal_model(8, 1.5, ism::constant_base(a, b), {8, 3.0});
  const Vec2 lhs = model.velocity({0, 0}, 0, true, 3);
  const Vec2 plain = model.guided({0, 0}, 0, 0, 1.5);
  EXPECT_GT(std::abs(lhs[0] - plain[0]), 1.0);
}

TEST(IdealModel, Errors) {
  EXPECT_THROW(ism::build_ideal_model(6, 1.0, ism::constant_base({0, 0}, {0, 0})), std::invalid_argument);
  const auto model = ism::build_ideal_model(4, 1.0, ism::constant_base({0, 0}, {0, 0}), {4, 1.0});
  EXPECT_THROW(model.velocity({0, 0}, 0.25, true, 2), std::invalid_argument);
  EXPECT_THROW(model.velocity({0, 0}, 0.0, true, 3), std::out_of_range);
  EXPECT_THROW(ism::build_ideal_model(4, 1.0, ism::constant_base({0, 0}, {0, 0}), {1, 1.0}), std::invalid_argument);
}

TEST(EnergyDistance, MatchesOracleAndBasics) {
  ism::Rng rng(3);
  const T a = graphs::random_tensor(rng, {30, 2});
  const T b = graphs::random_tensor(rng, {40, 2}, 1.5);
  auto rows = [](const T& x) {
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < x.dim(0); ++i) out.push_back({x[2 * i], x[2 * i + 1]});
    return out;
  };
  EXPECT_NEAR(ism::energy_distance(a, b), oracle::energy_distance(rows(a), rows(b)), 1e-12);
  EXPECT_NEAR(ism::energy_distance(a, a), 0.0, 1e-12);
  EXPECT_NEAR(ism::energy_distance(a, b), ism::energy_distance(b, a), 1e-12);
  // two points: 2|p-q| - 0 - 0 = 2|p-q| with single-sample sets
  EXPECT_NEAR(ism::energy_distance(T(Shape{1, 2}, {0, 0}), T(Shape{1, 2}, {3, 4})), 10.0, 1e-12);
  EXPECT_THROW(ism::energy_distance(a, T(Shape{2, 3})), ism::ShapeError);
}

TEST(Trajectories, CurvatureExamples) {
  // straight uniform motion has zero curvature; one kink contributes |2 dx|^2
  std::vector<T> straight = {T(Shape{1, 2}, {0, 0}), T(Shape{1, 2}, {1, 1}), T(Shape{1, 2}, {2, 2})};
  EXPECT_EQ(ism::mean_curvature(straight), 0.0);
  std::vector<T> kink = {T(Shape{2, 2}, {0, 0, 0, 0}), T(Shape{2, 2}, {1, 0, 1, 0}), T(Shape{2, 2}, {1, 1, 2, 0})};
  // row 0: (1,1) - 2(1,0) + (0,0) = (-1, 1) -> 2 ; row 1: straight -> 0
  EXPECT_DOUBLE_EQ(ism::mean_curvature(kink), 1.0);
}

TEST(Trajectories, CrossingsMatchBruteForce) {
  ism::Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<T> traj;
    for (int s = 0; s < 5; ++s) traj.push_back(graphs::random_tensor(rng, {6, 2}));
    std::size_t expect = 0;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = i + 1; j < 6; ++j)
        for (std::size_t s = 0; s < 4; ++s)
          for (std::size_t u = 0; u < 4; ++u)
            expect += oracle::segments_intersect({traj[s][2 * i], traj[s][2 * i + 1]},
                                                 {traj[s + 1][2 * i], traj[s + 1][2 * i + 1]},
                                                 {traj[u][2 * j], traj[u][2 * j + 1]},
                                                 {traj[u + 1][2 * j], traj[u + 1][2 * j + 1]});
    EXPECT_EQ(ism::trajectory_crossings(traj), expect);
  }
  // a single step reduces to the pair count
  const T a = graphs::random_tensor(rng, {15, 2}), b = graphs::random_tensor(rng, {15, 2});
  EXPECT_EQ(ism::trajectory_crossings(std::vector<T>{a, b}), ism::crossing_count(a, b));
  EXPECT_EQ(ism::pair_stats(a, b).crossing_count, ism::crossing_count(a, b));
}

TEST(PairingStudy, OrderingAndSharedSamples) {
  const auto spec = ism::parse_dataset("bimodal");
  const auto rows = ism::pairing_study(spec, 32, {1, 4}, 4);
  ASSERT_EQ(rows.size(), 12u);
  double random = 0, k1 = 0, k4 = 0, c1 = 0, c4 = 0;
  for (const auto& r : rows) {
    if (r.method == "random") random += r.mean_crossings;
    else if (r.k == 1) k1 += r.mean_crossings, c1 += r.mean_cost;
    else k4 += r.mean_crossings, c4 += r.mean_cost;
  }
  EXPECT_GT(random, k1);
  EXPECT_LE(c4, c1 + 1e-9);
  EXPECT_THROW(ism::pairing_study(spec, 32, {3, 4}, 1), std::invalid_argument);
  EXPECT_THROW(ism::pairing_study(ism::parse_dataset("patterns:2:1:4:4"), 8, {1}, 1), std::invalid_argument);
}

TEST(Probe, SummaryStatistics) {
  const std::vector<Vec2> centers = {{0, 0}, {10, 0}};
  const T x(Shape{4, 2}, {1, 0, -1, 0, 10, 2, 10, -2});
  const std::vector<ClassId> labels = {ClassId(0), ClassId(0), ClassId(1), ClassId(1)};
  const auto row = ism::summarize_probe(2.0, x, labels, centers);
  EXPECT_DOUBLE_EQ(row.mean_distance, (1 + 1 + 2 + 2) / 4.0);
  EXPECT_DOUBLE_EQ(row.mean_std, (1 + 2) / 2.0);
}

TEST(Probe, RunsOnNetwork) {
  ism::NetConfig cfg;
  cfg.hidden_dim = 8;
  cfg.depth = 1;
  cfg.num_classes = 4;
  cfg.embed_dim = 4;
  cfg.freq_dim = 4;
  ism::Rng rng(5);
  const auto p = ism::init_params<double>(cfg, rng);  // zero output: samples are the noise
  ism::ProbeOptions opt;
  opt.steps = 4;
  opt.per_class = 50;
  const auto centers = ism::probe_centers(ism::parse_dataset("mixture:4"));
  const auto rows = ism::guidance_probe(p, centers, {0.0, 2.0}, opt);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].mean_distance, rows[1].mean_distance);
  EXPECT_NEAR(rows[0].mean_std, std::sqrt(2.0), 0.3);
  EXPECT_THROW(ism::guidance_probe(p, {{0, 0}}, {0.0}, opt), std::invalid_argument);
}
