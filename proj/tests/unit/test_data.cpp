#include "ism/ism.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using ism::ClassId;
using ism::DatasetKind;
using ism::Shape;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ism_test_data_" + name)).string();
}

}  // namespace

TEST(Dataset, ParseAndFormat) {
  for (const char* text : {"bimodal", "checkerboard", "mixture:4", "mixture:1", "patterns:3:1:16:16"}) {
    EXPECT_EQ(ism::format_dataset(ism::parse_dataset(text)), text);
  }
  const auto p = ism::parse_dataset("patterns:2:3:8:4");
  EXPECT_EQ(p.kind, DatasetKind::PatternImages);
  EXPECT_EQ(ism::data_dim(p), 96u);
  EXPECT_EQ(ism::data_grid(p)->channels, 3u);
  EXPECT_FALSE(ism::data_grid(ism::parse_dataset("bimodal")));
  for (const char* bad : {"", "mixture", "mixture:0", "mixture:x", "bimodal:2", "patterns:2:1:6:8", "spiral"}) {
    EXPECT_THROW(ism::parse_dataset(bad), ism::DatasetError) << bad;
  }
}

TEST(Dataset, MixtureStatistics) {
  auto spec = ism::parse_dataset("mixture:4");
  ism::Rng rng(1);
  const auto batch = ism::generate<double>(spec, 20000, rng);
  const auto centers = ism::class_centers(spec);
  std::vector<double> sx(4), sy(4), sq(4), n(4);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int k = batch.labels[i].value();
    ASSERT_GE(k, 0);
    ASSERT_LT(k, 4);
    const double dx = batch.x1[2 * i] - centers[k][0], dy = batch.x1[2 * i + 1] - centers[k][1];
    sx[k] += dx, sy[k] += dy, sq[k] += dx * dx + dy * dy, n[k] += 1;
  }
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(n[k] / 20000, 0.25, 0.02);
    EXPECT_NEAR(sx[k] / n[k], 0, 0.01);
    EXPECT_NEAR(sy[k] / n[k], 0, 0.01);
    EXPECT_NEAR(std::sqrt(sq[k] / (2 * n[k])), spec.mixture_std, 0.005);
  }
  EXPECT_NEAR(centers[1][1], spec.mixture_radius, 1e-12);
}

TEST(Dataset, BimodalAndCheckerboard) {
  ism::Rng rng(2);
  const auto bi = ism::generate<double>(ism::parse_dataset("bimodal"), 2000, rng);
  for (std::size_t i = 0; i < bi.size(); ++i) {
    const double sign = bi.labels[i].value() == 0 ? -1 : 1;
    EXPECT_GT(sign * bi.x1[2 * i], 0);
  }
  const auto cb = ism::generate<double>(ism::parse_dataset("checkerboard"), 2000, rng);
  for (std::size_t i = 0; i < cb.size(); ++i) {
    const double x = cb.x1[2 * i], y = cb.x1[2 * i + 1];
    ASSERT_TRUE(x >= -2 && x <= 2 && y >= -2 && y <= 2);
    const int col = static_cast<int>(std::floor(x + 2)), row = static_cast<int>(std::floor(y + 2));
    EXPECT_EQ((col + row) % 2, 0);
    EXPECT_EQ(cb.labels[i], ClassId(0));
  }
}

TEST(Dataset, PatternImagesAreNoisyClassPatterns) {
  const auto spec = ism::parse_dataset("patterns:3:1:8:8");
  ism::Rng rng(3);
  const auto batch = ism::generate<double>(spec, 50, rng);
  EXPECT_EQ(batch.x1.shape(), (Shape{50, 64}));
  for (std::size_t i = 0; i < 50; ++i) {
    const auto base = ism::pattern_base(spec, static_cast<std::size_t>(batch.labels[i].value()));
    double err = 0;
    for (std::size_t j = 0; j < 64; ++j) err += std::pow(batch.x1[i * 64 + j] - base[j], 2);
    EXPECT_LT(std::sqrt(err / 64), 4 * spec.pixel_noise_std);
  }
}

TEST(Dataset, DeterministicForSeed) {
  const auto spec = ism::parse_dataset("mixture:3");
  ism::Rng a(9), b(9);
  const auto x = ism::generate<double>(spec, 10, a);
  const auto y = ism::generate<double>(spec, 10, b);
  EXPECT_TRUE(std::equal(x.x1.values().begin(), x.x1.values().end(), y.x1.values().begin()));
  EXPECT_EQ(x.labels, y.labels);
}

TEST(LabelDropout, RateAndEdges) {
  ism::Rng rng(4);
  int dropped = 0;
  for (int i = 0; i < 20000; ++i) dropped += ism::apply_label_dropout(ClassId(1), 0.1, rng).is_null();
  EXPECT_NEAR(dropped / 20000.0, 0.1, 0.01);
  EXPECT_EQ(ism::apply_label_dropout(ClassId(2), 0.0, rng), ClassId(2));
  EXPECT_TRUE(ism::apply_label_dropout(ClassId(2), 1.0, rng).is_null());
  EXPECT_THROW(ism::apply_label_dropout(ClassId(0), 1.5, rng), std::invalid_argument);
}

TEST(DataIo, PointsCsvRoundTrip) {
  ism::Rng rng(5);
  const auto batch = ism::generate<double>(ism::parse_dataset("mixture:4"), 30, rng);
  auto labels = batch.labels;
  labels[3] = ClassId::null();
  const auto path = tmp_path("points.csv");
  ism::write_points_csv(path, batch.x1, labels);
  const auto back = ism::read_points_csv<double>(path);
  EXPECT_EQ(back.labels, labels);
  for (std::size_t i = 0; i < batch.x1.numel(); ++i) EXPECT_EQ(back.x1[i], batch.x1[i]);
  std::filesystem::remove(path);
}

TEST(DataIo, TensorFileRoundTrip) {
  ism::Rng rng(6);
  const auto batch = ism::generate<float>(ism::parse_dataset("patterns:2:1:4:4"), 7, rng);
  const auto path = tmp_path("x.ismt");
  ism::write_tensor_file(path, batch.x1, batch.labels);
  const auto back = ism::read_tensor_file<float>(path);
  EXPECT_EQ(back.x1.shape(), batch.x1.shape());
  EXPECT_EQ(back.labels, batch.labels);
  for (std::size_t i = 0; i < batch.x1.numel(); ++i) EXPECT_EQ(back.x1[i], batch.x1[i]);
  std::filesystem::remove(path);
}

TEST(DataIo, Errors) {
  EXPECT_THROW(ism::read_points_csv<double>(tmp_path("missing.csv")), ism::IoError);
  const auto path = tmp_path("bad.csv");
  {
    std::ofstream(path) << "x,y,label\n1,2\n";
  }
  EXPECT_THROW(ism::read_points_csv<double>(path), ism::IoError);
  {
    std::ofstream(path) << "a,b\n";
  }
  EXPECT_THROW(ism::read_points_csv<double>(path), ism::IoError);
  {
    std::ofstream(path) << "JUNKJUNK";
  }
  EXPECT_THROW(ism::read_tensor_file<double>(path), ism::IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(ism::write_points_csv("/nonexistent-dir/x.csv", ism::Tensor<double>(Shape{1, 2}), {ClassId(0)}),
               ism::IoError);
}
