#pragma once

// Verification and study tools: a tabulated, exactly self-consistent
// shortcut model for checking the compounded-guidance identity, trajectory
// statistics, energy distance and a guidance-strength probe.
//
// Guided output in the ideal model: g^w = w s_c + (1 - w) s_null, so w = 1
// is the plain conditional field. (The trained network's w input uses
// s_c + w (s_c - s_null), i.e. this w minus one.)

#include "ism/data.hpp"
#include "ism/nets.hpp"
#include "ism/sampler.hpp"
#include "ism/sot.hpp"
#include "ism/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

using Vec2 = std::array<double, 2>;

inline int exact_log2(int n, const char* what) {
  if (n < 1 || (n & (n - 1)) != 0) throw std::invalid_argument(std::string(what) + " must be a power of two");
  int j = 0;
  while ((1 << j) < n) ++j;
  return j;
}

/// w^{log2 N}.
inline double compounded_scale(double w, int n) { return std::pow(w, exact_log2(n, "N")); }

/// Same value through the doubling recursion scale(2a) = w * scale(a).
inline double compounded_scale_recursive(double w, int n) {
  exact_log2(n, "N");
  return n == 1 ? 1.0 : w * compounded_scale_recursive(w, n / 2);
}

/// Smallest-step velocities s(x, t, c, 1/N) and s(x, t, null, 1/N).
struct BaseField {
  std::function<Vec2(Vec2, double)> cond, uncond;
};

inline BaseField constant_base(Vec2 a, Vec2 b) {
  return {[a](Vec2, double) { return a; }, [b](Vec2, double) { return b; }};
}

/// s(x, t) = (A0 + t A1) x + b0 + t b1 with small random matrices. Every
/// level of the ideal model stays affine in x, so bilinear tables are exact.
inline BaseField affine_base(Rng& rng, double scale = 0.3) {
  std::uniform_real_distribution<double> u(-scale, scale);
  auto draw = [&] {
    std::array<double, 12> p;
    for (double& v : p) v = u(rng);
    return p;
  };
  auto field = [](std::array<double, 12> p) {
    return [p](Vec2 x, double t) {
      return Vec2{(p[0] + t * p[4]) * x[0] + (p[1] + t * p[5]) * x[1] + p[8] + t * p[10],
                  (p[2] + t * p[6]) * x[0] + (p[3] + t * p[7]) * x[1] + p[9] + t * p[11]};
    };
  };
  auto c = draw();
  auto n = draw();
  return {field(c), field(n)};
}

/// Sum of a few low-frequency random Fourier modes per component.
inline BaseField smooth_base(Rng& rng, int modes = 4, double max_freq = 0.4, double amplitude = 0.25) {
  std::uniform_real_distribution<double> freq(-max_freq, max_freq), phase(0.0, 2 * M_PI), amp(-amplitude, amplitude);
  struct Mode {
    double kx, ky, kt, phi, a;
  };
  auto draw = [&] {
    std::array<std::vector<Mode>, 2> m;
    for (auto& comp : m) {
      for (int i = 0; i < modes; ++i) comp.push_back({freq(rng), freq(rng), freq(rng), phase(rng), amp(rng)});
    }
    return m;
  };
  auto field = [](std::array<std::vector<Mode>, 2> m) {
    return [m](Vec2 x, double t) {
      Vec2 v{0, 0};
      for (int k = 0; k < 2; ++k) {
        for (const Mode& md : m[k]) v[k] += md.a * std::sin(md.kx * x[0] + md.ky * x[1] + md.kt * t + md.phi);
      }
      return v;
    };
  };
  auto c = draw();
  auto n = draw();
  return {field(c), field(n)};
}

struct IdealModelOptions {
  std::size_t lattice = 64;  // points per axis
  double box = 3.0;          // lattice covers [-box, box]^2
};

/// Shortcut model whose larger-step tables satisfy the two ideal
/// self-consistency conditions exactly at every lattice point:
///   s(x,t,c,2d)    = (g^w(x,t,c,d) + g^w(x',t+d,c,d)) / 2
///   s(x,t,null,2d) = (s(x,t,null,d) + s(x',t+d,null,d)) / 2
/// where x' is the conditional smallest-step rollout from x over d.
/// Level 0 (d = 1/N) is the base field itself; level j has d = 2^j / N and
/// is tabulated at times k 2^j / N with bilinear interpolation in x.
class IdealModel {
 public:
  IdealModel(int n, double w, BaseField base, IdealModelOptions opt)
      : n_(n), levels_(exact_log2(n, "N")), w_(w), base_(std::move(base)), opt_(opt) {
    if (opt_.lattice < 2) throw std::invalid_argument("IdealModel: lattice must have >= 2 points per axis");
    if (!(opt_.box > 0)) throw std::invalid_argument("IdealModel: box must be positive");
    tables_.resize(levels_ + 1);
    for (int j = 1; j <= levels_; ++j) build_level(j);
  }

  int base_steps() const { return n_; }
  int levels() const { return levels_; }
  double w() const { return w_; }
  const BaseField& base() const { return base_; }

  double lattice_coord(std::size_t i) const {
    return -opt_.box + 2 * opt_.box * static_cast<double>(i) / static_cast<double>(opt_.lattice - 1);
  }

  /// s at level j (d = 2^j / N); t must be a multiple of that d.
  Vec2 velocity(Vec2 x, double t, bool conditional, int level) const {
    if (level < 0 || level > levels_) throw std::out_of_range("IdealModel: level out of range");
    if (level == 0) return conditional ? base_.cond(x, t) : base_.uncond(x, t);
    return interpolate(level, slice_of(t, level), conditional ? 0 : 1, x);
  }

  /// v s_c + (1 - v) s_null at level j.
  Vec2 guided(Vec2 x, double t, int level, double v) const {
    const Vec2 c = velocity(x, t, true, level);
    const Vec2 u = velocity(x, t, false, level);
    return {v * c[0] + (1 - v) * u[0], v * c[1] + (1 - v) * u[1]};
  }

  /// `steps` smallest conditional steps from (x, t).
  Vec2 rollout(Vec2 x, double t, int steps) const {
    const double d = 1.0 / n_;
    for (int i = 0; i < steps; ++i) {
      const Vec2 v = base_.cond(x, t + i * d);
      x = {x[0] + v[0] * d, x[1] + v[1] * d};
    }
    return x;
  }

  /// Model callable for samplers and consistency targets: d <= 1/N is the
  /// base level; the w input is ignored (the tables are built for w()).
  template <class T>
  Tensor<T> operator()(const ShortcutInput<T>& in) const {
    if (in.x.rank() != 2 || in.x.dim(1) != 2) throw ShapeError("IdealModel", in.x.shape(), "expects [B,2]");
    const std::size_t b = in.batch();
    std::vector<T> out(2 * b);
    for (std::size_t i = 0; i < b; ++i) {
      const double d = static_cast<double>(in.d[i]);
      int level = 0;
      if (d > 1.0 / n_ + 1e-12) level = exact_log2(static_cast<int>(std::lround(d * n_)), "d*N");
      const Vec2 v = velocity({static_cast<double>(in.x[2 * i]), static_cast<double>(in.x[2 * i + 1])},
                              static_cast<double>(in.t[i]), !in.c[i].is_null(), level);
      out[2 * i] = static_cast<T>(v[0]);
      out[2 * i + 1] = static_cast<T>(v[1]);
    }
    return Tensor<T>(Shape{b, 2}, std::move(out));
  }

 private:
  std::size_t slice_of(double t, int level) const {
    const double span = static_cast<double>(1 << level) / n_;
    const double k = t / span;
    const double kr = std::round(k);
    if (std::abs(k - kr) > 1e-9 || kr < 0 || kr >= static_cast<double>(n_ >> level)) {
      throw std::invalid_argument("IdealModel: t=" + std::to_string(t) + " is not on the level-" +
                                  std::to_string(level) + " time grid");
    }
    return static_cast<std::size_t>(kr);
  }

  std::size_t index(std::size_t slice, int which, std::size_t iy, std::size_t ix) const {
    const std::size_t r = opt_.lattice;
    return (((slice * 2 + static_cast<std::size_t>(which)) * r + iy) * r + ix) * 2;
  }

  Vec2 interpolate(int level, std::size_t slice, int which, Vec2 x) const {
    const std::size_t r = opt_.lattice;
    const double h = 2 * opt_.box / static_cast<double>(r - 1);
    auto locate = [&](double v, std::size_t& i0, double& f) {
      // outside the box the edge cell is extended linearly
      const double s = (v + opt_.box) / h;
      i0 = static_cast<std::size_t>(std::clamp(std::floor(s), 0.0, static_cast<double>(r - 2)));
      f = s - static_cast<double>(i0);
    };
    std::size_t ix, iy;
    double fx, fy;
    locate(x[0], ix, fx);
    locate(x[1], iy, fy);
    const auto& tab = tables_[level];
    Vec2 out{};
    for (int k = 0; k < 2; ++k) {
      const double v00 = tab[index(slice, which, iy, ix) + k], v01 = tab[index(slice, which, iy, ix + 1) + k];
      const double v10 = tab[index(slice, which, iy + 1, ix) + k], v11 = tab[index(slice, which, iy + 1, ix + 1) + k];
      out[k] = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    }
    return out;
  }

  void build_level(int j) {
    const std::size_t r = opt_.lattice;
    const int half = 1 << (j - 1);  // smallest steps per level-(j-1) step
    const double dh = static_cast<double>(half) / n_;
    const std::size_t slices = static_cast<std::size_t>(n_ >> j);
    auto& tab = tables_[j];
    tab.assign(slices * 2 * r * r * 2, 0.0);
    for (std::size_t s = 0; s < slices; ++s) {
      const double t = static_cast<double>(s) * 2 * dh;
      for (std::size_t iy = 0; iy < r; ++iy) {
        for (std::size_t ix = 0; ix < r; ++ix) {
          const Vec2 x{lattice_coord(ix), lattice_coord(iy)};
          const Vec2 xp = rollout(x, t, half);
          const Vec2 g0 = guided(x, t, j - 1, w_), g1 = guided(xp, t + dh, j - 1, w_);
          const Vec2 u0 = velocity(x, t, false, j - 1), u1 = velocity(xp, t + dh, false, j - 1);
          for (int k = 0; k < 2; ++k) {
            tab[index(s, 0, iy, ix) + k] = 0.5 * (g0[k] + g1[k]);
            tab[index(s, 1, iy, ix) + k] = 0.5 * (u0[k] + u1[k]);
          }
        }
      }
    }
  }

  int n_;
  int levels_;
  double w_;
  BaseField base_;
  IdealModelOptions opt_;
  std::vector<std::vector<double>> tables_;  // [level][slice][cond|uncond][y][x][2]
};

inline IdealModel build_ideal_model(int n, double w, BaseField base, IdealModelOptions opt = {}) {
  return IdealModel(n, w, std::move(base), opt);
}

/// Conditional level-j value for constant base fields a (cond), b (uncond).
inline Vec2 constant_level_closed_form(Vec2 a, Vec2 b, double w, int level) {
  const double s = std::pow(w, level);
  return {b[0] + s * (a[0] - b[0]), b[1] + s * (a[1] - b[1])};
}

struct Prop1Report {
  Vec2 lhs{}, rhs{};
  double max_abs_err = 0;
  double compounded_w = 0;
};

/// LHS s(x0, 0, c, 1); RHS (1/N) sum_i g^{w^{log2 N}}(x'_i, i/N, c, 1/N)
/// along the smallest-step conditional rollout x'.
inline Prop1Report verify_prop1(const IdealModel& model, Vec2 x0) {
  const int n = model.base_steps();
  Prop1Report rep;
  rep.compounded_w = compounded_scale(model.w(), n);
  rep.lhs = model.velocity(x0, 0.0, true, model.levels());
  Vec2 x = x0;
  Vec2 sum{0, 0};
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / n;
    const Vec2 g = model.guided(x, t, 0, rep.compounded_w);
    sum[0] += g[0];
    sum[1] += g[1];
    x = model.rollout(x, t, 1);
  }
  rep.rhs = {sum[0] / n, sum[1] / n};
  rep.max_abs_err = std::max(std::abs(rep.lhs[0] - rep.rhs[0]), std::abs(rep.lhs[1] - rep.rhs[1]));
  return rep;
}

// ---------------------------------------------------------------------------
// Sample-set statistics

/// V-statistic: 2 E|A-B| - E|A-A'| - E|B-B'| over all pairs (self-pairs
/// included).
template <class T>
double energy_distance(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) throw ShapeError("energy_distance", a.shape(), b.shape());
  const std::size_t na = a.dim(0), nb = b.dim(0), dim = a.dim(1);
  auto mean_dist = [dim](std::span<const T> p, std::size_t np, std::span<const T> q, std::size_t nq, bool same) {
    double total = 0;
    for (std::size_t i = 0; i < np; ++i) {
      double row = 0;
      for (std::size_t j = same ? i + 1 : 0; j < nq; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < dim; ++k) {
          const double d = static_cast<double>(p[i * dim + k]) - static_cast<double>(q[j * dim + k]);
          s += d * d;
        }
        row += std::sqrt(s);
      }
      total += row;
    }
    if (same) total *= 2;
    return total / (static_cast<double>(np) * static_cast<double>(nq));
  };
  const double ab = mean_dist(a.values(), na, b.values(), nb, false);
  const double aa = mean_dist(a.values(), na, a.values(), na, true);
  const double bb = mean_dist(b.values(), nb, b.values(), nb, true);
  return std::max(0.0, 2 * ab - aa - bb);
}

struct TrajectoryStats {
  std::size_t crossing_count = 0;
  double mean_curvature = 0;
  double endpoint_energy_distance = 0;
};

/// Segment crossings between different 2D polylines. `trajectory` holds
/// the states [n, 2] at each recorded time.
template <class T>
std::size_t trajectory_crossings(const std::vector<Tensor<T>>& trajectory) {
  if (trajectory.size() < 2) return 0;
  const std::size_t n = trajectory.front().dim(0);
  for (const auto& s : trajectory) {
    if (s.rank() != 2 || s.dim(1) != 2 || s.dim(0) != n) {
      throw ShapeError("trajectory_crossings", s.shape(), "states must be [n,2] with equal n");
    }
  }
  const std::size_t segs = trajectory.size() - 1;
  // per-segment bounding boxes for pruning
  struct Seg {
    double ax, ay, bx, by, lox, loy, hix, hiy;
  };
  std::vector<Seg> all(n * segs);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < segs; ++s) {
      const double ax = trajectory[s][2 * i], ay = trajectory[s][2 * i + 1];
      const double bx = trajectory[s + 1][2 * i], by = trajectory[s + 1][2 * i + 1];
      all[i * segs + s] = {ax, ay, bx, by, std::min(ax, bx), std::min(ay, by), std::max(ax, bx), std::max(ay, by)};
    }
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t s = 0; s < segs; ++s) {
        const Seg& p = all[i * segs + s];
        for (std::size_t u = 0; u < segs; ++u) {
          const Seg& q = all[j * segs + u];
          if (p.hix < q.lox || q.hix < p.lox || p.hiy < q.loy || q.hiy < p.loy) continue;
          if (segments_cross(p.ax, p.ay, p.bx, p.by, q.ax, q.ay, q.bx, q.by)) ++count;
        }
      }
    }
  }
  return count;
}

/// Mean over trajectories of sum_i |x_{i+1} - 2 x_i + x_{i-1}|^2.
template <class T>
double mean_curvature(const std::vector<Tensor<T>>& trajectory) {
  if (trajectory.empty()) return 0;
  const Shape& shape = trajectory.front().shape();
  if (shape.size() != 2) throw ShapeError("mean_curvature", shape, "states must be [n,D]");
  for (const auto& s : trajectory) {
    if (s.shape() != shape) throw ShapeError("mean_curvature", s.shape(), shape);
  }
  const std::size_t n = shape[0], dim = shape[1];
  double total = 0;
  for (std::size_t k = 1; k + 1 < trajectory.size(); ++k) {
    auto a = trajectory[k - 1].values();
    auto b = trajectory[k].values();
    auto c = trajectory[k + 1].values();
    for (std::size_t i = 0; i < n * dim; ++i) {
      const double v = static_cast<double>(c[i]) - 2 * static_cast<double>(b[i]) + static_cast<double>(a[i]);
      total += v * v;
    }
  }
  return total / static_cast<double>(n);
}

/// Statistics of recorded reverse trajectories; the endpoint distance is
/// computed against `reference` when given.
template <class T>
TrajectoryStats trajectory_stats(const std::vector<Tensor<T>>& trajectory, const Tensor<T>* reference = nullptr) {
  TrajectoryStats st;
  if (trajectory.empty()) throw std::invalid_argument("trajectory_stats: empty trajectory");
  if (trajectory.front().rank() == 2 && trajectory.front().dim(1) == 2) st.crossing_count = trajectory_crossings(trajectory);
  st.mean_curvature = mean_curvature(trajectory);
  if (reference) st.endpoint_energy_distance = energy_distance(trajectory.back(), *reference);
  return st;
}

/// Forward pairs x0 -> x1 are straight segments: zero curvature.
template <class T>
TrajectoryStats pair_stats(const Tensor<T>& x0, const Tensor<T>& x1, const Tensor<T>* reference = nullptr) {
  TrajectoryStats st;
  st.crossing_count = crossing_count(x0, x1);
  if (reference) st.endpoint_energy_distance = energy_distance(x1, *reference);
  return st;
}

// ---------------------------------------------------------------------------
// Forward pairing study

struct PairingRow {
  std::string method;  // "random", "ot"
  std::size_t k = 0;   // pool size in batches (0 for random)
  std::uint64_t seed = 0;
  double mean_crossings = 0;  // per M-pair batch
  double mean_cost = 0;       // per M-pair batch
};

/// For each seed: draws max(ks) batches of M data points and as many
/// noises, then pairs them randomly and with pooled OT for every K in `ks`.
/// All methods see the same noises and data; K must divide max(ks).
template <class T = double>
std::vector<PairingRow> pairing_study(const DatasetSpec& spec, std::size_t m, const std::vector<std::size_t>& ks,
                                      std::size_t seeds, std::uint64_t base_seed = 0) {
  if (ks.empty() || m < 2) throw std::invalid_argument("pairing_study: need M >= 2 and at least one K");
  if (data_dim(spec) != 2) throw std::invalid_argument("pairing_study: dataset must be 2D");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  for (std::size_t k : ks) {
    if (k == 0 || kmax % k != 0) throw std::invalid_argument("pairing_study: every K must divide max(K)");
  }
  std::vector<PairingRow> rows;
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    Rng rng = derive_rng(seed, streams::kHeldOut);
    std::vector<DataBatch<T>> batches;
    for (std::size_t b = 0; b < kmax; ++b) batches.push_back(generate<T>(spec, m, rng));
    const Tensor<T> noises = sample_noise<T>(Shape{kmax * m, 2}, rng);
    auto noise_block = [&](std::size_t first, std::size_t count) { return slice(noises, 0, first * m, (first + count) * m); };

    auto summarize = [&](const std::string& method, std::size_t k, const std::vector<MatchedBatch<T>>& out) {
      PairingRow row{method, k, seed, 0, 0};
      for (const auto& mb : out) {
        row.mean_crossings += static_cast<double>(crossing_count(mb.x0, mb.x1));
        row.mean_cost += mb.cost;
      }
      row.mean_crossings /= static_cast<double>(out.size());
      row.mean_cost /= static_cast<double>(out.size());
      rows.push_back(row);
    };

    std::vector<MatchedBatch<T>> random;
    for (std::size_t b = 0; b < kmax; ++b) {
      auto part = match_pool(noise_block(b, 1), {batches[b]}, PoolMatching::None);
      random.push_back(std::move(part.front()));
    }
    summarize("random", 0, random);
    for (std::size_t k : ks) {
      std::vector<MatchedBatch<T>> all;
      for (std::size_t g = 0; g < kmax / k; ++g) {
        std::vector<DataBatch<T>> group(batches.begin() + static_cast<std::ptrdiff_t>(g * k),
                                        batches.begin() + static_cast<std::ptrdiff_t>((g + 1) * k));
        for (auto& mb : match_pool(noise_block(g * k, k), group, PoolMatching::Global)) all.push_back(std::move(mb));
      }
      summarize("ot", k, all);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Guidance probe

struct ProbeRow {
  double w = 0;
  double mean_distance = 0;  // mean |x - center_c| over all samples
  double mean_std = 0;       // per-class sqrt(mean |x - mean_c|^2), averaged over classes
};

struct ProbeOptions {
  int steps = 128;
  std::size_t per_class = 256;
  std::uint64_t seed = 0;
  int base_steps = 128;
  double t_interval = 0.3;
  bool use_interval = true;
};

/// Distance/spread summary of a labelled 2D sample set.
template <class T>
ProbeRow summarize_probe(double w, const Tensor<T>& samples, const std::vector<ClassId>& labels,
                         const std::vector<Vec2>& centers) {
  ProbeRow row;
  row.w = w;
  const std::size_t k = centers.size();
  std::vector<Vec2> mean(k, Vec2{0, 0});
  std::vector<std::size_t> count(k, 0);
  double dist = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = static_cast<std::size_t>(labels[i].value());
    const double x = samples[2 * i], y = samples[2 * i + 1];
    dist += std::hypot(x - centers[c][0], y - centers[c][1]);
    mean[c][0] += x;
    mean[c][1] += y;
    ++count[c];
  }
  row.mean_distance = dist / static_cast<double>(labels.size());
  std::vector<double> var(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c]) mean[c] = {mean[c][0] / count[c], mean[c][1] / count[c]};
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = static_cast<std::size_t>(labels[i].value());
    const double dx = samples[2 * i] - mean[c][0], dy = samples[2 * i + 1] - mean[c][1];
    var[c] += dx * dx + dy * dy;
  }
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (!count[c]) continue;
    row.mean_std += std::sqrt(var[c] / count[c]);
    ++used;
  }
  if (used) row.mean_std /= static_cast<double>(used);
  return row;
}

/// Samples `per_class` points for each class at every w and reports
/// distance to the true class center and per-class spread.
template <class T>
std::vector<ProbeRow> guidance_probe(const VelocityNetParams<T>& params, const std::vector<Vec2>& centers,
                                     const std::vector<double>& w_list, const ProbeOptions& opt = {}) {
  if (params.config.input_dim != 2) throw std::invalid_argument("guidance_probe: model must be 2D");
  if (centers.size() != params.config.num_classes) {
    throw std::invalid_argument("guidance_probe: need one center per class");
  }
  std::vector<ProbeRow> rows;
  for (double w : w_list) {
    SampleRequest req;
    req.steps = opt.steps;
    req.w = w;
    req.seed = opt.seed;
    req.base_steps = opt.base_steps;
    req.t_interval = opt.t_interval;
    req.use_interval = opt.use_interval;
    req.count = opt.per_class * centers.size();
    for (std::size_t c = 0; c < centers.size(); ++c) {
      for (std::size_t i = 0; i < opt.per_class; ++i) req.labels.push_back(ClassId(static_cast<int>(c)));
    }
    const auto res = shortcut_sample(params, req);
    rows.push_back(summarize_probe(w, res.samples, res.labels, centers));
  }
  return rows;
}

inline std::vector<Vec2> probe_centers(const DatasetSpec& spec) {
  std::vector<Vec2> out;
  for (const auto& c : class_centers(spec)) out.push_back({c[0], c[1]});
  return out;
}

}  // namespace ism
