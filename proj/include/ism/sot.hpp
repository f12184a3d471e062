#pragma once

// Scaling optimal transport: one exact assignment over K pooled mini-batches
// of noise and data under squared Euclidean cost.

#include "ism/nets.hpp"
#include "ism/rng.hpp"
#include "ism/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <utility>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace ism {

/// Dense row-major matrix of doubles.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows * cols) throw std::invalid_argument("CostMatrix: size mismatch");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
  const double* row(std::size_t i) const { return values_.data() + i * cols_; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> values_;
};

struct AssignmentPlan {
  std::vector<std::size_t> perm;  // noise i pairs with data perm[i]
  double total_cost = 0;
};

/// C[i][j] = |noise_i - data_j|^2 over flattened rows of [n, ...] tensors.
template <class T>
CostMatrix cost_matrix(const Tensor<T>& noises, const Tensor<T>& datas) {
  if (noises.rank() < 1 || datas.rank() < 1) throw ShapeError("cost_matrix", noises.shape(), datas.shape());
  const std::size_t n = noises.dim(0), m = datas.dim(0);
  const std::size_t dim = noises.numel() / n;
  if (datas.numel() / m != dim) throw ShapeError("cost_matrix", noises.shape(), datas.shape());
  CostMatrix c(n, m);
  auto a = noises.values();
  auto b = datas.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = static_cast<double>(a[i * dim + k]) - static_cast<double>(b[j * dim + k]);
        s += diff * diff;
      }
      c(i, j) = s;
    }
  }
  return c;
}

namespace detail {

// Shortest augmenting path from free row `start` over reduced costs
// c_ij - v_j. Scratch is kept in scan order: position k holds column
// cols[k] with its distance, predecessor row and dual, so the relaxation
// loop is contiguous. [0, lo) ready, [lo, hi) on the frontier, [hi, n) to scan.
struct PathSearch {
  std::vector<std::size_t> cols, pred, pos_pred;
  std::vector<double> dist, duals;

  explicit PathSearch(std::size_t n) : cols(n), pred(n), pos_pred(n), dist(n), duals(n) {}

  void swap_pos(std::size_t a, std::size_t b) {
    std::swap(cols[a], cols[b]);
    std::swap(dist[a], dist[b]);
    std::swap(pos_pred[a], pos_pred[b]);
    std::swap(duals[a], duals[b]);
  }

  double min_from(std::size_t lo) const {
    const std::size_t n = dist.size();
    double m = dist[lo];
    std::size_t k = lo + 1;
#if defined(__AVX512F__)
    if (k + 8 <= n) {
      __m512d acc = _mm512_loadu_pd(dist.data() + k);
      for (k += 8; k + 8 <= n; k += 8) acc = _mm512_min_pd(acc, _mm512_loadu_pd(dist.data() + k));
      m = std::min(m, _mm512_reduce_min_pd(acc));
    }
#endif
    for (; k < n; ++k) m = std::min(m, dist[k]);
    return m;
  }

  // returns the free column reached; pred[] then traces the path back
  std::size_t run(const CostMatrix& cost, std::size_t start, const std::vector<std::size_t>& col_row,
                  std::vector<double>& v) {
    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    const std::size_t n = cost.rows();
    const double* c0 = cost.row(start);
    for (std::size_t k = 0; k < n; ++k) {
      cols[k] = k;
      duals[k] = v[k];
      dist[k] = c0[k] - v[k];
      pos_pred[k] = start;
    }
    std::size_t lo = 0, hi = 0, ready = 0, found = kNone;
    double mind = 0;
    while (found == kNone) {
      if (lo == hi) {
        ready = lo;
        mind = min_from(lo);
        std::size_t k = lo;
#if defined(__AVX512F__)
        const __m512d mv = _mm512_set1_pd(mind);
        for (; k + 8 <= n; k += 8) {
          __mmask8 eq = _mm512_cmp_pd_mask(_mm512_loadu_pd(dist.data() + k), mv, _CMP_EQ_OQ);
          // swaps only touch positions <= the current one
          for (; eq; eq &= eq - 1) swap_pos(k + static_cast<std::size_t>(__builtin_ctz(eq)), hi++);
        }
#endif
        for (; k < n; ++k) {
          if (dist[k] == mind) swap_pos(k, hi++);
        }
        for (std::size_t k = lo; k < hi; ++k) {
          if (col_row[cols[k]] == kNone) {
            found = k;
            break;
          }
        }
        if (found != kNone) break;
      }
      while (lo != hi && found == kNone) {
        const std::size_t k0 = lo++;
        const std::size_t i = col_row[cols[k0]];
        const double* ci = cost.row(i);
        const double h = ci[cols[k0]] - duals[k0] - mind;
        bool tie = false;
        std::size_t k = hi;
#if defined(__AVX512F__)
        const __m512d hv = _mm512_set1_pd(h), mv = _mm512_set1_pd(mind);
        const __m512i iv = _mm512_set1_epi64(static_cast<long long>(i));
        __mmask8 ties = 0;
        for (; k + 8 <= n; k += 8) {
          const __m512i idx = _mm512_loadu_si512(cols.data() + k);
          const __m512d reduced = _mm512_sub_pd(
              _mm512_sub_pd(_mm512_i64gather_pd(idx, ci, 8), _mm512_loadu_pd(duals.data() + k)), hv);
          ties |= _mm512_cmp_pd_mask(reduced, mv, _CMP_EQ_OQ);
          const __mmask8 lt = _mm512_cmp_pd_mask(reduced, _mm512_loadu_pd(dist.data() + k), _CMP_LT_OQ);
          _mm512_mask_storeu_pd(dist.data() + k, lt, reduced);
          _mm512_mask_storeu_epi64(pos_pred.data() + k, lt, iv);
        }
        tie = ties != 0;
#endif
        for (; k < n; ++k) {
          const double reduced = ci[cols[k]] - duals[k] - h;
          tie |= reduced == mind;
          if (reduced < dist[k]) {
            dist[k] = reduced;
            pos_pred[k] = i;
          }
        }
        if (!tie) continue;
        for (std::size_t k = hi; k < n; ++k) {
          if (dist[k] != mind) continue;
          const bool free_col = col_row[cols[k]] == kNone;
          swap_pos(k, hi);
          if (free_col) {
            found = hi;
            break;
          }
          ++hi;
        }
      }
    }
    const double last = dist[found];
    for (std::size_t k = 0; k < ready; ++k) v[cols[k]] += dist[k] - last;
    for (std::size_t k = 0; k < n; ++k) pred[cols[k]] = pos_pred[k];
    return cols[found];
  }
};

}  // namespace detail

/// Exact square assignment (Jonker-Volgenant: column reduction, then one
/// shortest augmenting path per unassigned row). O(n^3) worst case.
inline AssignmentPlan solve_assignment(const CostMatrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw std::invalid_argument("solve_assignment: cost matrix must be square, got " + std::to_string(cost.rows()) +
                                "x" + std::to_string(cost.cols()));
  }
  const std::size_t n = cost.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(cost(i, j))) {
        throw std::invalid_argument("solve_assignment: non-finite cost at (" + std::to_string(i) + "," +
                                    std::to_string(j) + ")");
      }
    }
  }
  AssignmentPlan plan;
  if (n == 0) return plan;

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> row_col(n, kNone), col_row(n, kNone);
  std::vector<double> v(n);
  // column reduction
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (cost(i, j) < cost(best, j)) best = i;
    }
    v[j] = cost(best, j);
    if (row_col[best] == kNone) {
      row_col[best] = j;
      col_row[j] = best;
    }
  }
  std::vector<std::size_t> free_rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (row_col[i] == kNone) free_rows.push_back(i);
  }
  detail::PathSearch search(n);
  for (std::size_t start : free_rows) {
    std::size_t j = search.run(cost, start, col_row, v);
    for (;;) {
      const std::size_t i = search.pred[j];
      col_row[j] = i;
      std::swap(j, row_col[i]);
      if (i == start) break;
    }
  }

  plan.perm = row_col;
  for (std::size_t i = 0; i < n; ++i) plan.total_cost += cost(i, plan.perm[i]);
  return plan;
}

template <class T>
struct DataBatch {
  Tensor<T> x1;  // [M, ...]
  std::vector<ClassId> labels;

  std::size_t size() const { return labels.size(); }
};

template <class T>
struct MatchedBatch {
  Tensor<T> x0, x1;  // [M, ...]
  std::vector<ClassId> labels;
  double cost = 0;   // sum of squared distances of this batch's pairs

  std::size_t size() const { return labels.size(); }
};

enum class PoolMatching { Global, PerClass, None };

namespace detail {

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  const std::size_t row = x.numel() / x.dim(0);
  std::vector<T> out(rows.size() * row);
  auto v = x.values();
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(v.data() + rows[r] * row, row, out.data() + r * row);
  Shape shape = x.shape();
  shape[0] = rows.size();
  return Tensor<T>(std::move(shape), std::move(out));
}

template <class T>
double pair_cost(std::span<const T> a, std::span<const T> b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Solves one assignment between `noises` [K*M, ...] and the K pooled
/// batches, then splits the matched pairs back into K batches of M (noise
/// row order is kept). PerClass restricts matching to same-label data
/// (noise is allotted to classes in row order); None keeps row-aligned
/// pairing.
template <class T>
std::vector<MatchedBatch<T>> match_pool(const Tensor<T>& noises, const std::vector<DataBatch<T>>& batches,
                                        PoolMatching mode = PoolMatching::Global) {
  if (batches.empty()) throw std::invalid_argument("match_pool: no batches");
  const std::size_t m = batches.front().size();
  const Shape row_shape(batches.front().x1.shape().begin() + 1, batches.front().x1.shape().end());
  for (const auto& b : batches) {
    if (b.size() != m || b.x1.dim(0) != m) {
      throw std::invalid_argument("match_pool: ragged batch sizes (" + std::to_string(b.size()) + " vs " +
                                  std::to_string(m) + ")");
    }
    if (Shape(b.x1.shape().begin() + 1, b.x1.shape().end()) != row_shape) {
      throw ShapeError("match_pool", b.x1.shape(), batches.front().x1.shape());
    }
  }
  const std::size_t k = batches.size();
  const std::size_t n = k * m;
  std::vector<Tensor<T>> parts;
  std::vector<ClassId> labels;
  for (const auto& b : batches) {
    parts.push_back(b.x1);
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
  }
  const Tensor<T> datas = concat(parts, 0);
  const std::size_t row = datas.numel() / n;
  if (noises.shape() != datas.shape()) throw ShapeError("match_pool: noise", noises.shape(), datas.shape());

  std::vector<std::size_t> perm(n);
  if (mode == PoolMatching::Global) {
    perm = solve_assignment(cost_matrix(noises, datas)).perm;
  } else if (mode == PoolMatching::None) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t j = 0; j < n; ++j) by_class[labels[j].value()].push_back(j);
    std::size_t next_noise = 0;
    for (const auto& [label, data_rows] : by_class) {
      std::vector<std::size_t> noise_rows(data_rows.size());
      for (auto& r : noise_rows) r = next_noise++;
      const auto sub = solve_assignment(
          cost_matrix(detail::gather_rows(noises, noise_rows), detail::gather_rows(datas, data_rows)));
      for (std::size_t i = 0; i < noise_rows.size(); ++i) perm[noise_rows[i]] = data_rows[sub.perm[i]];
    }
  }

  std::vector<MatchedBatch<T>> out(k);
  for (std::size_t b = 0; b < k; ++b) {
    std::vector<std::size_t> noise_rows(m), data_rows(m);
    for (std::size_t i = 0; i < m; ++i) {
      noise_rows[i] = b * m + i;
      data_rows[i] = perm[b * m + i];
    }
    out[b].x0 = detail::gather_rows(noises, noise_rows);
    out[b].x1 = detail::gather_rows(datas, data_rows);
    out[b].labels.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      out[b].labels[i] = labels[data_rows[i]];
      out[b].cost += detail::pair_cost(out[b].x0.values().subspan(i * row, row),
                                       out[b].x1.values().subspan(i * row, row));
    }
  }
  return out;
}

/// Draws K*M standard normal noises from `rng` and matches them to the
/// pooled batches (see match_pool).
template <class T>
std::vector<MatchedBatch<T>> rematch_pool(const std::vector<DataBatch<T>>& batches, Rng& rng,
                                          PoolMatching mode = PoolMatching::Global) {
  if (batches.empty()) throw std::invalid_argument("rematch_pool: no batches");
  Shape shape = batches.front().x1.shape();
  shape[0] *= batches.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> values(numel_of(shape));
  for (T& v : values) v = static_cast<T>(normal(rng));
  return match_pool(Tensor<T>(shape, std::move(values)), batches, mode);
}

namespace detail {
inline double orient(double ax, double ay, double bx, double by, double cx, double cy) {
  return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
}
}  // namespace detail

/// Proper intersection of segments ab and cd (touching or collinear overlap
/// does not count).
inline bool segments_cross(double ax, double ay, double bx, double by, double cx, double cy, double dx, double dy) {
  const double o1 = detail::orient(ax, ay, bx, by, cx, cy);
  const double o2 = detail::orient(ax, ay, bx, by, dx, dy);
  const double o3 = detail::orient(cx, cy, dx, dy, ax, ay);
  const double o4 = detail::orient(cx, cy, dx, dy, bx, by);
  return ((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0));
}

/// Number of unordered pairs of segments x0[i] -> x1[i] whose interiors
/// properly intersect. Both tensors are [n, 2].
template <class T>
std::size_t crossing_count(const Tensor<T>& x0, const Tensor<T>& x1) {
  if (x0.shape() != x1.shape()) throw ShapeError("crossing_count", x0.shape(), x1.shape());
  if (x0.rank() != 2 || x0.dim(1) != 2) throw ShapeError("crossing_count", x0.shape(), "segments must be 2D");
  const std::size_t n = x0.dim(0);
  auto p = x0.values();
  auto q = x1.values();
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ax = p[2 * i], ay = p[2 * i + 1], bx = q[2 * i], by = q[2 * i + 1];
    for (std::size_t j = i + 1; j < n; ++j) {
      if (segments_cross(ax, ay, bx, by, p[2 * j], p[2 * j + 1], q[2 * j], q[2 * j + 1])) ++count;
    }
  }
  return count;
}

}  // namespace ism
