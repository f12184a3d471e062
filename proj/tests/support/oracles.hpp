#pragma once

// Independent reference implementations used as test oracles. Each one is
// written differently from the library code it checks.

#include "ism/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

/// Central differences of f at every coordinate of x.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(1, |a_i|), with a the analytic side
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(1.0, std::abs(a[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

/// Minimum over all n! permutations.
inline double brute_force_assignment(const std::vector<std::vector<double>>& c) {
  std::vector<std::size_t> p(c.size());
  std::iota(p.begin(), p.end(), 0);
  double best = INFINITY;
  do {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c[i][p[i]];
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

/// Textbook Adam on flat vectors, tracking beta powers incrementally.
struct ReferenceAdam {
  double lr, b1, b2, eps;
  std::vector<double> m, v;
  double b1_pow = 1, b2_pow = 1;

  void step(std::vector<double>& theta, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    b1_pow *= b1;
    b2_pow *= b2;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - b1_pow);
      const double vh = v[i] / (1 - b2_pow);
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

/// Plain double loop over all ordered pairs, including i == j.
inline double energy_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  auto dist = [](const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0;
    for (std::size_t k = 0; k < p.size(); ++k) s += (p[k] - q[k]) * (p[k] - q[k]);
    return std::sqrt(s);
  };
  double ab = 0, aa = 0, bb = 0;
  for (const auto& p : a)
    for (const auto& q : b) ab += dist(p, q);
  for (const auto& p : a)
    for (const auto& q : a) aa += dist(p, q);
  for (const auto& p : b)
    for (const auto& q : b) bb += dist(p, q);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  return 2 * ab / (na * nb) - aa / (na * na) - bb / (nb * nb);
}

/// Segment intersection by solving p + s r = q + u e for (s, u) and
/// requiring both strictly inside (0, 1).
inline bool segments_intersect(std::array<double, 2> p, std::array<double, 2> p2, std::array<double, 2> q,
                               std::array<double, 2> q2) {
  const double rx = p2[0] - p[0], ry = p2[1] - p[1];
  const double ex = q2[0] - q[0], ey = q2[1] - q[1];
  const double den = rx * ey - ry * ex;
  if (den == 0) return false;
  const double qpx = q[0] - p[0], qpy = q[1] - p[1];
  const double s = (qpx * ey - qpy * ex) / den;
  const double u = (qpx * ry - qpy * rx) / den;
  return s > 0 && s < 1 && u > 0 && u < 1;
}

/// One-level 2D Haar by separable orthonormal 1D transforms: rows then
/// columns, each pair (a, b) -> ((a + b)/sqrt2, (b - a)/sqrt2).
/// Returns {LL, LH, HL, HH} for an H x W image (row-major), where LH is
/// low along x and high along y.
inline std::array<std::vector<double>, 4> haar2d(const std::vector<double>& img, std::size_t h, std::size_t w) {
  const double r = 1 / std::sqrt(2.0);
  // along x
  std::vector<double> lo(h * w / 2), hi(h * w / 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w / 2; ++x) {
      const double a = img[y * w + 2 * x], b = img[y * w + 2 * x + 1];
      lo[y * (w / 2) + x] = (a + b) * r;
      hi[y * (w / 2) + x] = (b - a) * r;
    }
  }
  // along y
  auto down = [&](const std::vector<double>& src, std::vector<double>& l, std::vector<double>& hgh) {
    l.assign(h / 2 * w / 2, 0);
    hgh.assign(h / 2 * w / 2, 0);
    for (std::size_t y = 0; y < h / 2; ++y) {
      for (std::size_t x = 0; x < w / 2; ++x) {
        const double a = src[2 * y * (w / 2) + x], b = src[(2 * y + 1) * (w / 2) + x];
        l[y * (w / 2) + x] = (a + b) * r;
        hgh[y * (w / 2) + x] = (b - a) * r;
      }
    }
  };
  std::array<std::vector<double>, 4> out;
  down(lo, out[0], out[1]);
  down(hi, out[2], out[3]);
  return out;
}

/// EMA after n updates toward a fixed target: theta* + decay^n (s0 - theta*).
inline double ema_closed_form(double s0, double target, double decay, int n) {
  return target + std::pow(decay, n) * (s0 - target);
}

}  // namespace oracle
