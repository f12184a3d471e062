#pragma once

// Synthetic datasets, noise and label dropout, plus CSV / binary tensor I/O.

#include "ism/nets.hpp"
#include "ism/objectives.hpp"
#include "ism/rng.hpp"
#include "ism/sot.hpp"
#include "ism/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

enum class DatasetKind { Bimodal2D, Checkerboard2D, ClassMixture2D, PatternImages };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::ClassMixture2D;
  std::size_t classes = 4;
  std::size_t channels = 1, height = 16, width = 16;  // PatternImages only
  std::uint64_t seed = 0;

  // Mixture constants (overridable).
  double bimodal_offset = 1.5;
  double bimodal_std = 0.2;
  double mixture_radius = 2.0;
  double mixture_std = 0.15;
  double pixel_noise_std = 0.05;
};

class DatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate(const DatasetSpec& spec) {
  if (spec.classes < 1) throw DatasetError("dataset: class count must be >= 1");
  if (spec.kind == DatasetKind::Bimodal2D && spec.classes != 2) throw DatasetError("bimodal has exactly 2 classes");
  if (spec.kind == DatasetKind::PatternImages) {
    auto pow2 = [](std::size_t v) { return v > 0 && (v & (v - 1)) == 0; };
    if (spec.channels < 1 || !pow2(spec.height) || !pow2(spec.width)) {
      throw DatasetError("pattern images need C >= 1 and power-of-two H, W");
    }
  }
}

/// Parses "bimodal", "checkerboard", "mixture:K" or "patterns:K:C:H:W".
inline DatasetSpec parse_dataset(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.empty()) throw DatasetError("empty dataset spec");
  auto num = [&](std::size_t i) -> std::size_t {
    try {
      std::size_t pos = 0;
      const long v = std::stol(parts.at(i), &pos);
      if (pos != parts[i].size() || v < 1) throw std::invalid_argument("");
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw DatasetError("bad dataset spec '" + text + "'");
    }
  };
  DatasetSpec spec;
  if (parts[0] == "bimodal" && parts.size() == 1) {
    spec.kind = DatasetKind::Bimodal2D;
    spec.classes = 2;
  } else if (parts[0] == "checkerboard" && parts.size() == 1) {
    spec.kind = DatasetKind::Checkerboard2D;
    spec.classes = 1;
  } else if (parts[0] == "mixture" && parts.size() == 2) {
    spec.kind = DatasetKind::ClassMixture2D;
    spec.classes = num(1);
  } else if (parts[0] == "patterns" && parts.size() == 5) {
    spec.kind = DatasetKind::PatternImages;
    spec.classes = num(1);
    spec.channels = num(2);
    spec.height = num(3);
    spec.width = num(4);
  } else {
    throw DatasetError("unknown dataset spec '" + text + "'");
  }
  validate(spec);
  return spec;
}

inline std::string format_dataset(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetKind::Bimodal2D: return "bimodal";
    case DatasetKind::Checkerboard2D: return "checkerboard";
    case DatasetKind::ClassMixture2D: return "mixture:" + std::to_string(spec.classes);
    case DatasetKind::PatternImages:
      return "patterns:" + std::to_string(spec.classes) + ":" + std::to_string(spec.channels) + ":" +
             std::to_string(spec.height) + ":" + std::to_string(spec.width);
  }
  return {};
}

inline std::size_t data_dim(const DatasetSpec& spec) {
  return spec.kind == DatasetKind::PatternImages ? spec.channels * spec.height * spec.width : 2;
}

inline std::optional<GridShape> data_grid(const DatasetSpec& spec) {
  if (spec.kind != DatasetKind::PatternImages) return std::nullopt;
  return GridShape{spec.channels, spec.height, spec.width};
}

/// Mean of each 2D class component (empty for images and checkerboard).
inline std::vector<std::array<double, 2>> class_centers(const DatasetSpec& spec) {
  std::vector<std::array<double, 2>> out;
  if (spec.kind == DatasetKind::Bimodal2D) {
    out.push_back({-spec.bimodal_offset, 0.0});
    out.push_back({spec.bimodal_offset, 0.0});
  } else if (spec.kind == DatasetKind::ClassMixture2D) {
    for (std::size_t k = 0; k < spec.classes; ++k) {
      const double a = 2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.classes);
      out.push_back({spec.mixture_radius * std::cos(a), spec.mixture_radius * std::sin(a)});
    }
  }
  return out;
}

/// Noise-free stripe pattern for class k on a [-1,1]^2 grid: orientation
/// and period depend on the class.
inline std::vector<double> pattern_base(const DatasetSpec& spec, std::size_t k) {
  const double angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.classes);
  const double period = 0.5 + 0.25 * static_cast<double>(k % 3);
  std::vector<double> out(spec.channels * spec.height * spec.width);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t i = 0; i < spec.height; ++i) {
      for (std::size_t j = 0; j < spec.width; ++j) {
        const double y = -1 + 2 * (static_cast<double>(i) + 0.5) / static_cast<double>(spec.height);
        const double x = -1 + 2 * (static_cast<double>(j) + 0.5) / static_cast<double>(spec.width);
        const double phase = static_cast<double>(c) * std::numbers::pi / 4;
        out[(c * spec.height + i) * spec.width + j] =
            std::sin(2 * std::numbers::pi * (x * std::cos(angle) + y * std::sin(angle)) / period + phase);
      }
    }
  }
  return out;
}

template <class T>
struct LabeledSample {
  Tensor<T> x1;
  ClassId c;
};

/// n samples with labels; x1 is [n, D] (images flattened as C*H*W).
template <class T>
DataBatch<T> generate(const DatasetSpec& spec, std::size_t n, Rng& rng) {
  validate(spec);
  if (n < 1) throw DatasetError("generate: n must be >= 1");
  const std::size_t dim = data_dim(spec);
  std::vector<T> values(n * dim);
  std::vector<ClassId> labels(n);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_class(0, spec.classes - 1);
  const auto centers = class_centers(spec);

  switch (spec.kind) {
    case DatasetKind::Bimodal2D:
    case DatasetKind::ClassMixture2D: {
      const double sd = spec.kind == DatasetKind::Bimodal2D ? spec.bimodal_std : spec.mixture_std;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = pick_class(rng);
        labels[i] = ClassId(static_cast<int>(k));
        values[2 * i] = static_cast<T>(centers[k][0] + sd * normal(rng));
        values[2 * i + 1] = static_cast<T>(centers[k][1] + sd * normal(rng));
      }
      break;
    }
    case DatasetKind::Checkerboard2D: {
      // Uniform over the dark cells of a 4x4 board on [-2,2]^2.
      std::uniform_int_distribution<int> cell(0, 7);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        const int c = cell(rng);
        const int row = c / 2;
        const int col = 2 * (c % 2) + (row % 2);
        labels[i] = ClassId(0);
        values[2 * i] = static_cast<T>(-2 + col + unit(rng));
        values[2 * i + 1] = static_cast<T>(-2 + row + unit(rng));
      }
      break;
    }
    case DatasetKind::PatternImages: {
      std::vector<std::vector<double>> bases;
      for (std::size_t k = 0; k < spec.classes; ++k) bases.push_back(pattern_base(spec, k));
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = pick_class(rng);
        labels[i] = ClassId(static_cast<int>(k));
        for (std::size_t j = 0; j < dim; ++j) {
          values[i * dim + j] = static_cast<T>(bases[k][j] + spec.pixel_noise_std * normal(rng));
        }
      }
      break;
    }
  }
  return {Tensor<T>(Shape{n, dim}, std::move(values)), std::move(labels)};
}

template <class T>
Tensor<T> sample_noise(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> values(numel_of(shape));
  for (T& v : values) v = static_cast<T>(normal(rng));
  return Tensor<T>(shape, std::move(values));
}

inline ClassId apply_label_dropout(ClassId c, double p, Rng& rng) {
  if (!(p >= 0 && p <= 1)) throw std::invalid_argument("label dropout must be in [0,1]");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return unit(rng) < p ? ClassId::null() : c;
}

// ---------------------------------------------------------------------------
// I/O

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "x,y,label" with label -1 for the null condition.
template <class T>
void write_points_csv(const std::string& path, const Tensor<T>& points, const std::vector<ClassId>& labels) {
  if (points.rank() != 2 || points.dim(1) != 2) throw ShapeError("write_points_csv", points.shape(), "expected [n,2]");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(std::numeric_limits<T>::max_digits10);
  out << "x,y,label\n";
  for (std::size_t i = 0; i < points.dim(0); ++i) {
    out << points[2 * i] << ',' << points[2 * i + 1] << ',' << (i < labels.size() ? labels[i].value() : -1) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

template <class T>
DataBatch<T> read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "x,y,label") throw IoError(path + ": missing header 'x,y,label'");
  std::vector<T> values;
  std::vector<ClassId> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
      throw IoError(path + ": malformed row '" + line + "'");
    }
    try {
      values.push_back(static_cast<T>(std::stod(a)));
      values.push_back(static_cast<T>(std::stod(b)));
      labels.emplace_back(std::stoi(c));
    } catch (const std::exception&) {
      throw IoError(path + ": malformed row '" + line + "'");
    }
  }
  if (labels.empty()) throw IoError(path + ": no rows");
  return {Tensor<T>(Shape{labels.size(), 2}, std::move(values)), std::move(labels)};
}

// Binary tensor file: "ISMT", u16 version, u32 rank, u64 dims[rank],
// u64 label count, i32 labels[count], f32 values. Little-endian.
inline constexpr char kTensorMagic[4] = {'I', 'S', 'M', 'T'};
inline constexpr std::uint16_t kTensorVersion = 1;

namespace detail {
template <class V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V get(std::istream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError(path + ": truncated file");
  return v;
}
}  // namespace detail

template <class T>
void write_tensor_file(const std::string& path, const Tensor<T>& x, const std::vector<ClassId>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kTensorMagic, 4);
  detail::put<std::uint16_t>(out, kTensorVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(x.rank()));
  for (std::size_t d : x.shape()) detail::put<std::uint64_t>(out, d);
  detail::put<std::uint64_t>(out, labels.size());
  for (ClassId c : labels) detail::put<std::int32_t>(out, c.value());
  for (T v : x.values()) detail::put<float>(out, static_cast<float>(v));
  if (!out) throw IoError("write failed: " + path);
}

template <class T>
DataBatch<T> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) throw IoError(path + ": bad magic");
  if (detail::get<std::uint16_t>(in, path) != kTensorVersion) throw IoError(path + ": unsupported version");
  const auto rank = detail::get<std::uint32_t>(in, path);
  Shape shape(rank);
  for (auto& d : shape) d = detail::get<std::uint64_t>(in, path);
  const auto count = detail::get<std::uint64_t>(in, path);
  std::vector<ClassId> labels;
  for (std::uint64_t i = 0; i < count; ++i) labels.emplace_back(detail::get<std::int32_t>(in, path));
  std::vector<T> values(numel_of(shape));
  for (T& v : values) v = static_cast<T>(detail::get<float>(in, path));
  return {Tensor<T>(std::move(shape), std::move(values)), std::move(labels)};
}

}  // namespace ism
