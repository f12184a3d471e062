#pragma once

// Orthonormal 2D Haar transform over the last two axes and the multi-level
// wavelet loss built on it. Tensors are [..., C, H, W]; every leading axis
// is treated as a batch axis.

#include "ism/tensor.hpp"

#include <stdexcept>
#include <string>

namespace ism {

template <class T>
struct SubBands {
  Tensor<T> ll, lh, hl, hh;
};

namespace detail {

struct GridLayout {
  std::size_t lead = 1;  // product of axes before the channel axis
  std::size_t channels = 0, height = 0, width = 0;
};

inline GridLayout grid_layout(const char* op, const Shape& s) {
  if (s.size() < 3) throw ShapeError(op, s, "expected [..., C, H, W]");
  GridLayout g;
  for (std::size_t i = 0; i + 3 < s.size(); ++i) g.lead *= s[i];
  g.channels = s[s.size() - 3];
  g.height = s[s.size() - 2];
  g.width = s[s.size() - 1];
  return g;
}

// One block: a top-left, b top-right, c bottom-left, d bottom-right.
template <class T>
void haar_forward(const GridLayout& g, const T* src, T* dst) {
  const std::size_t h2 = g.height / 2, w2 = g.width / 2, band = g.channels * h2 * w2;
  for (std::size_t n = 0; n < g.lead; ++n) {
    const T* in = src + n * g.channels * g.height * g.width;
    T* out = dst + n * 4 * band;
    for (std::size_t ch = 0; ch < g.channels; ++ch) {
      for (std::size_t i = 0; i < h2; ++i) {
        for (std::size_t j = 0; j < w2; ++j) {
          const T* row0 = in + (ch * g.height + 2 * i) * g.width + 2 * j;
          const T* row1 = row0 + g.width;
          const T a = row0[0], b = row0[1], c = row1[0], d = row1[1];
          const std::size_t o = (ch * h2 + i) * w2 + j;
          out[o] = (a + b + c + d) / 2;
          out[band + o] = (-a - b + c + d) / 2;
          out[2 * band + o] = (-a + b - c + d) / 2;
          out[3 * band + o] = (a - b - c + d) / 2;
        }
      }
    }
  }
}

// Exact inverse (and adjoint) of haar_forward; `g` describes the output grid.
template <class T>
void haar_inverse(const GridLayout& g, const T* src, T* dst, bool accumulate) {
  const std::size_t h2 = g.height / 2, w2 = g.width / 2, band = g.channels * h2 * w2;
  for (std::size_t n = 0; n < g.lead; ++n) {
    const T* in = src + n * 4 * band;
    T* out = dst + n * g.channels * g.height * g.width;
    for (std::size_t ch = 0; ch < g.channels; ++ch) {
      for (std::size_t i = 0; i < h2; ++i) {
        for (std::size_t j = 0; j < w2; ++j) {
          const std::size_t o = (ch * h2 + i) * w2 + j;
          const T ll = in[o], lh = in[band + o], hl = in[2 * band + o], hh = in[3 * band + o];
          T* row0 = out + (ch * g.height + 2 * i) * g.width + 2 * j;
          T* row1 = row0 + g.width;
          const T a = (ll - lh - hl + hh) / 2;
          const T b = (ll - lh + hl - hh) / 2;
          const T c = (ll + lh - hl - hh) / 2;
          const T d = (ll + lh + hl + hh) / 2;
          if (accumulate) {
            row0[0] += a;
            row0[1] += b;
            row1[0] += c;
            row1[1] += d;
          } else {
            row0[0] = a;
            row0[1] = b;
            row1[0] = c;
            row1[1] = d;
          }
        }
      }
    }
  }
}

}  // namespace detail

/// [..., C, H, W] -> [..., 4C, H/2, W/2], bands stacked ll, lh, hl, hh on the
/// channel axis. Differentiable.
template <class T>
Tensor<T> concatenated_dwt(const Tensor<T>& x) {
  const auto g = detail::grid_layout("dwt2_haar", x.shape());
  if (g.height % 2 != 0 || g.width % 2 != 0) throw ShapeError("dwt2_haar", x.shape(), "odd spatial extent");
  Shape shape = x.shape();
  shape[shape.size() - 3] *= 4;
  shape[shape.size() - 2] /= 2;
  shape[shape.size() - 1] /= 2;
  std::vector<T> out(x.numel());
  detail::haar_forward(g, x.values().data(), out.data());
  return detail::record_op(Tensor<T>(std::move(shape), std::move(out)), {&x},
                           [g](std::span<const T> grad, std::span<T* const> pg) {
                             if (T* gx = pg[0]) detail::haar_inverse(g, grad.data(), gx, true);
                           });
}

template <class T>
SubBands<T> dwt2_haar(const Tensor<T>& x) {
  const Tensor<T> stacked = concatenated_dwt(x);
  const std::size_t axis = x.rank() - 3;
  const std::size_t c = x.dim(axis);
  return {slice(stacked, axis, 0, c), slice(stacked, axis, c, 2 * c), slice(stacked, axis, 2 * c, 3 * c),
          slice(stacked, axis, 3 * c, 4 * c)};
}

/// Channel-axis concatenation in the order ll, lh, hl, hh.
template <class T>
Tensor<T> concat_bands(const SubBands<T>& bands) {
  const Shape& s = bands.ll.shape();
  if (bands.lh.shape() != s || bands.hl.shape() != s || bands.hh.shape() != s) {
    throw ShapeError("concat_bands", s, bands.hh.shape());
  }
  detail::grid_layout("concat_bands", s);
  return concat(std::vector<Tensor<T>>{bands.ll, bands.lh, bands.hl, bands.hh}, s.size() - 3);
}

template <class T>
Tensor<T> idwt2_haar(const SubBands<T>& bands) {
  const Tensor<T> stacked = concat_bands(bands);
  Shape shape = bands.ll.shape();
  shape[shape.size() - 2] *= 2;
  shape[shape.size() - 1] *= 2;
  const auto g = detail::grid_layout("idwt2_haar", shape);
  std::vector<T> out(stacked.numel());
  detail::haar_inverse(g, stacked.values().data(), out.data(), false);
  return detail::record_op(Tensor<T>(std::move(shape), std::move(out)), {&stacked},
                           [g](std::span<const T> grad, std::span<T* const> pg) {
                             if (T* gs = pg[0]) {
                               std::vector<T> tmp(grad.size());
                               detail::haar_forward(g, grad.data(), tmp.data());
                               for (std::size_t i = 0; i < tmp.size(); ++i) gs[i] += tmp[i];
                             }
                           });
}

/// MSE in the signal domain plus MSE after each of `levels` recursive
/// decompositions of the full band stack, averaged over the levels + 1 terms.
template <class T>
Tensor<T> multilevel_wavelet_loss(const Tensor<T>& pred, const Tensor<T>& target, std::size_t levels) {
  if (pred.shape() != target.shape()) throw ShapeError("multilevel_wavelet_loss", pred.shape(), target.shape());
  if (levels > 0) {
    const auto g = detail::grid_layout("multilevel_wavelet_loss", pred.shape());
    const std::size_t block = std::size_t{1} << levels;
    if (g.height % block != 0 || g.width % block != 0) {
      throw ShapeError("multilevel_wavelet_loss", pred.shape(),
                       "spatial extents must be divisible by 2^" + std::to_string(levels));
    }
  }
  Tensor<T> total = mse(pred, target);
  Tensor<T> p = pred, q = target;
  for (std::size_t level = 0; level < levels; ++level) {
    p = concatenated_dwt(p);
    q = concatenated_dwt(q);
    total = add(total, mse(p, q));
  }
  return scale(total, T{1} / static_cast<T>(levels + 1));
}

}  // namespace ism
