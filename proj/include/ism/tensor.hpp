#pragma once

// Dense tensors with a per-step reverse-mode tape.
//
// A Tensor is a shape plus shared, copy-on-write storage. A tensor that is
// recorded on a Tape carries a pointer to it and its node index; everything
// else is a plain value. Ops record a node only when at least one input is
// tracked, so forward passes over untracked parameters cost nothing extra.


#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ism {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, const Shape& a, const Shape& b)
      : std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                              shape_string(b)) {}
  ShapeError(std::string_view op, const Shape& a, std::string_view detail)
      : std::invalid_argument(std::string(op) + ": invalid shape " + shape_string(a) + " (" +
                              std::string(detail) + ")") {}
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <class T>
class Tape;

template <class T>
class Tensor {
 public:
  using value_type = T;

  /// Scalar zero.
  Tensor() : data_(std::make_shared<std::vector<T>>(1, T{})) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(numel_of(shape_), T{})) {}

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
    for (std::size_t extent : shape_) {
      if (extent == 0) throw ShapeError("Tensor", shape_, "extents must be positive");
    }
    if (numel_of(shape_) != data_->size()) {
      throw ShapeError("Tensor", shape_, "expected " + std::to_string(numel_of(shape_)) +
                                             " values, got " + std::to_string(data_->size()));
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor full(Shape shape, T value) {
    std::vector<T> values(numel_of(shape), value);
    return Tensor(std::move(shape), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_->size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ShapeError("dim", shape_, "axis out of range");
    return shape_[axis];
  }

  std::span<const T> values() const noexcept { return {data_->data(), data_->size()}; }

  /// Writable view. Detaches from any tape and copies shared storage first.
  std::span<T> mutable_values() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
    tape_ = nullptr;
    node_ = 0;
    return {data_->data(), data_->size()};
  }

  T operator[](std::size_t i) const { return (*data_)[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item", shape_, "tensor is not a scalar");
    return (*data_)[0];
  }

  bool requires_grad() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  /// Same storage, no tape participation.
  Tensor detached() const {
    Tensor out = *this;
    out.tape_ = nullptr;
    out.node_ = 0;
    return out;
  }

  /// Storage identity, used by tests and copy-on-write checks.
  const void* storage_id() const noexcept { return data_.get(); }

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Gradients of a scalar with respect to the leaves of one tape.
template <class T>
class Gradients {
 public:
  Tensor<T> of(const Tensor<T>& leaf) const {
    auto it = grads_.find(leaf.node());
    if (leaf.tape() == nullptr || leaf.tape() != owner_) {
      throw AutodiffError("Gradients::of: tensor is not a leaf of the differentiated tape");
    }
    if (it == grads_.end()) return Tensor<T>(leaf.shape());
    return Tensor<T>(leaf.shape(), it->second);
  }

  bool reached(const Tensor<T>& leaf) const { return grads_.count(leaf.node()) != 0; }

 private:
  friend class Tape<T>;
  const Tape<T>* owner_ = nullptr;
  std::unordered_map<std::size_t, std::vector<T>> grads_;
};

enum class Traversal {
  ReverseRecording,  // reverse insertion order
  DepthFirst,        // reverse post-order of a DFS from the loss
};

template <class T>
class Tape {
 public:
  /// Receives the output gradient and one accumulation buffer per parent
  /// (nullptr for parents that are not on the tape). Must accumulate (+=).
  using BackwardFn = std::function<void(std::span<const T> grad_out, std::span<T* const> parent_grads)>;

  static constexpr std::size_t kNoParent = std::numeric_limits<std::size_t>::max();

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a gradient-requiring leaf sharing `value`'s storage.
  Tensor<T> leaf(const Tensor<T>& value) {
    if (value.tape() != nullptr) throw AutodiffError("Tape::leaf: tensor is already tracked");
    Node node;
    node.numel = value.numel();
    node.is_leaf = true;
    nodes_.push_back(std::move(node));
    Tensor<T> out = value;
    out.tape_ = this;
    out.node_ = nodes_.size() - 1;
    return out;
  }

  /// Records `result` as a function of `parents`. Returns the tracked result.
  Tensor<T> record(Tensor<T> result, std::span<const Tensor<T>* const> parents, BackwardFn backward) {
    Node node;
    node.numel = result.numel();
    node.backward = std::move(backward);
    node.parents.reserve(parents.size());
    for (const Tensor<T>* p : parents) {
      if (p->tape() == this) {
        node.parents.push_back(p->node());
      } else if (p->tape() == nullptr) {
        node.parents.push_back(kNoParent);
      } else {
        throw AutodiffError("Tape::record: inputs recorded on different tapes");
      }
    }
    nodes_.push_back(std::move(node));
    result.tape_ = this;
    result.node_ = nodes_.size() - 1;
    return result;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  Gradients<T> backward(const Tensor<T>& loss, Traversal traversal = Traversal::ReverseRecording) const {
    if (loss.tape() != this) throw AutodiffError("backward: loss is not recorded on this tape");
    if (loss.numel() != 1) throw ShapeError("backward", loss.shape(), "loss must be a scalar");

    std::vector<std::vector<T>> grads(nodes_.size());
    grads[loss.node()].assign(1, T{1});

    auto visit = [&](std::size_t id) {
      if (grads[id].empty()) return;
      const Node& node = nodes_[id];
      if (node.is_leaf) return;
      std::vector<T*> parent_ptrs(node.parents.size(), nullptr);
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const std::size_t p = node.parents[k];
        if (p == kNoParent) continue;
        if (grads[p].empty()) grads[p].assign(nodes_[p].numel, T{});
        parent_ptrs[k] = grads[p].data();
      }
      node.backward(std::span<const T>(grads[id]), std::span<T* const>(parent_ptrs));
      std::vector<T>().swap(grads[id]);
    };

    if (traversal == Traversal::ReverseRecording) {
      for (std::size_t id = loss.node() + 1; id-- > 0;) visit(id);
    } else {
      for (std::size_t id : depth_first_order(loss.node())) visit(id);
    }

    Gradients<T> out;
    out.owner_ = this;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (nodes_[id].is_leaf && !grads[id].empty()) out.grads_.emplace(id, std::move(grads[id]));
    }
    return out;
  }

 private:
  struct Node {
    std::vector<std::size_t> parents;
    std::size_t numel = 0;
    BackwardFn backward;
    bool is_leaf = false;
  };

  // Reverse post-order from `root`, visiting parents last-to-first so the
  // result differs from reverse recording order on branching graphs.
  std::vector<std::size_t> depth_first_order(std::size_t root) const {
    std::vector<std::size_t> post;
    std::vector<char> state(nodes_.size(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
    state[root] = 1;
    while (!stack.empty()) {
      auto& [id, next] = stack.back();
      const auto& parents = nodes_[id].parents;
      if (next < parents.size()) {
        const std::size_t p = parents[parents.size() - 1 - next];
        ++next;
        if (p != kNoParent && state[p] == 0) {
          state[p] = 1;
          stack.emplace_back(p, 0);
        }
      } else {
        post.push_back(id);
        stack.pop_back();
      }
    }
    std::reverse(post.begin(), post.end());
    return post;
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
Tensor<T> record_op(Tensor<T> result, std::initializer_list<const Tensor<T>*> parents,
                    typename Tape<T>::BackwardFn backward) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* p : parents) {
    if (p->tape() == nullptr) continue;
    if (tape != nullptr && tape != p->tape()) {
      throw AutodiffError("inputs recorded on different tapes");
    }
    tape = p->tape();
  }
  if (tape == nullptr) return result;
  std::vector<const Tensor<T>*> list(parents);
  return tape->record(std::move(result), std::span<const Tensor<T>* const>(list), std::move(backward));
}

template <class T>
Tensor<T> record_op_list(Tensor<T> result, const std::vector<const Tensor<T>*>& parents,
                         typename Tape<T>::BackwardFn backward) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* p : parents) {
    if (p->tape() == nullptr) continue;
    if (tape != nullptr && tape != p->tape()) {
      throw AutodiffError("inputs recorded on different tapes");
    }
    tape = p->tape();
  }
  if (tape == nullptr) return result;
  return tape->record(std::move(result), std::span<const Tensor<T>* const>(parents), std::move(backward));
}

// Row-major products. Every output element accumulates over the inner
// index in a fixed order, so results never depend on buffer alignment or on
// the tiling below.

// c[m,n] += a[m,k] b[k,n]
template <class T>
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a, const T* __restrict b,
              T* __restrict c) {
  typedef T V __attribute__((vector_size(64)));
  constexpr std::size_t L = sizeof(V) / sizeof(T);  // lanes
  constexpr std::size_t R = 8;
  auto load = [](const T* x) {
    V v;
    std::memcpy(&v, x, sizeof v);
    return v;
  };
  std::size_t i = 0;
  for (; i + R <= m; i += R) {
    std::size_t j = 0;
    for (; j + 2 * L <= n; j += 2 * L) {
      V c0[R], c1[R];
      for (std::size_t r = 0; r < R; ++r) {
        c0[r] = load(c + (i + r) * n + j);
        c1[r] = load(c + (i + r) * n + j + L);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const V b0 = load(b + p * n + j), b1 = load(b + p * n + j + L);
        for (std::size_t r = 0; r < R; ++r) {
          const T s = a[(i + r) * k + p];
          c0[r] += s * b0;
          c1[r] += s * b1;
        }
      }
      for (std::size_t r = 0; r < R; ++r) {
        std::memcpy(c + (i + r) * n + j, &c0[r], sizeof(V));
        std::memcpy(c + (i + r) * n + j + L, &c1[r], sizeof(V));
      }
    }
    for (std::size_t r = i; r < i + R; ++r)
      for (std::size_t p = 0; p < k; ++p) {
        const T s = a[r * k + p];
        for (std::size_t q = j; q < n; ++q) c[r * n + q] += s * b[p * n + q];
      }
  }
  for (; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T s = a[i * k + p];
      for (std::size_t q = 0; q < n; ++q) c[i * n + q] += s * b[p * n + q];
    }
}

template <class T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) out[q * rows + r] = x[r * cols + q];
  return out;
}

// c[k,n] += a[m,k]^T g[m,n]
template <class T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* c) {
  const std::vector<T> at = transposed(a, m, k);
  gemm_acc(k, m, n, at.data(), g, c);
}

// c[m,k] += g[m,n] w[k,n]^T
template <class T>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* w, T* c) {
  const std::vector<T> wt = transposed(w, k, n);
  gemm_acc(m, n, k, g, wt.data(), c);
}

// Scalar-against-tensor broadcasting only.
inline Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (numel_of(a) == 1) return b;
  if (numel_of(b) == 1) return a;
  throw ShapeError(op, a, b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape shape = detail::broadcast_shape("add", a.shape(), b.shape());
  const std::size_t n = numel_of(shape);
  const bool a_scalar = a.numel() == 1 && n != 1;
  const bool b_scalar = b.numel() == 1 && n != 1;
  std::vector<T> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[a_scalar ? 0 : i] + bv[b_scalar ? 0 : i];
  return detail::record_op(Tensor<T>(shape, std::move(out)), {&a, &b},
                           [a_scalar, b_scalar](std::span<const T> g, std::span<T* const> pg) {
                             for (int k = 0; k < 2; ++k) {
                               T* dst = pg[k];
                               if (!dst) continue;
                               const bool scalar = k == 0 ? a_scalar : b_scalar;
                               if (scalar) {
                                 for (T gi : g) dst[0] += gi;
                               } else {
                                 for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                               }
                             }
                           });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape shape = detail::broadcast_shape("sub", a.shape(), b.shape());
  const std::size_t n = numel_of(shape);
  const bool a_scalar = a.numel() == 1 && n != 1;
  const bool b_scalar = b.numel() == 1 && n != 1;
  std::vector<T> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[a_scalar ? 0 : i] - bv[b_scalar ? 0 : i];
  return detail::record_op(Tensor<T>(shape, std::move(out)), {&a, &b},
                           [a_scalar, b_scalar](std::span<const T> g, std::span<T* const> pg) {
                             if (T* ga = pg[0]) {
                               if (a_scalar) {
                                 for (T gi : g) ga[0] += gi;
                               } else {
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               }
                             }
                             if (T* gb = pg[1]) {
                               if (b_scalar) {
                                 for (T gi : g) gb[0] -= gi;
                               } else {
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                               }
                             }
                           });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape shape = detail::broadcast_shape("mul", a.shape(), b.shape());
  const std::size_t n = numel_of(shape);
  const bool a_scalar = a.numel() == 1 && n != 1;
  const bool b_scalar = b.numel() == 1 && n != 1;
  std::vector<T> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[a_scalar ? 0 : i] * bv[b_scalar ? 0 : i];
  Tensor<T> a_val = a.detached();
  Tensor<T> b_val = b.detached();
  return detail::record_op(Tensor<T>(shape, std::move(out)), {&a, &b},
                           [a_val, b_val, a_scalar, b_scalar](std::span<const T> g, std::span<T* const> pg) {
                             auto av = a_val.values();
                             auto bv = b_val.values();
                             if (T* ga = pg[0]) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 ga[a_scalar ? 0 : i] += g[i] * bv[b_scalar ? 0 : i];
                               }
                             }
                             if (T* gb = pg[1]) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 gb[b_scalar ? 0 : i] += g[i] * av[a_scalar ? 0 : i];
                               }
                             }
                           });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.values().begin(), x.values().end());
  for (T& v : out) v *= factor;
  return detail::record_op(Tensor<T>(x.shape(), std::move(out)), {&x},
                           [factor](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gx = pg[0]) {
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
                             }
                           });
}

/// Multiplies row i (leading-axis slice) by a constant factor[i].
template <class T>
Tensor<T> scale_rows(const Tensor<T>& x, std::span<const T> factors) {
  if (x.rank() == 0 || x.dim(0) != factors.size()) {
    throw ShapeError("scale_rows", x.shape(), Shape{factors.size()});
  }
  const std::size_t rows = x.dim(0);
  const std::size_t row_len = x.numel() / rows;
  std::vector<T> f(factors.begin(), factors.end());
  std::vector<T> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < row_len; ++j) out[r * row_len + j] *= f[r];
  }
  return detail::record_op(Tensor<T>(x.shape(), std::move(out)), {&x},
                           [f = std::move(f), row_len](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gx = pg[0]) {
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += f[i / row_len] * g[i];
                             }
                           });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  Tensor<T> x_val = x.detached();
  return detail::record_op(Tensor<T>(x.shape(), std::move(out)), {&x},
                           [x_val](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gx = pg[0]) {
                               auto xv = x_val.values();
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += T{2} * xv[i] * g[i];
                             }
                           });
}

/// x * sigmoid(x)
template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  std::vector<T> sig(n);
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    sig[i] = T{1} / (T{1} + std::exp(-xv[i]));
    out[i] = xv[i] * sig[i];
  }
  Tensor<T> x_val = x.detached();
  return detail::record_op(Tensor<T>(x.shape(), std::move(out)), {&x},
                           [x_val, sig = std::move(sig)](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gx = pg[0]) {
                               auto xv = x_val.values();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 gx[i] += g[i] * sig[i] * (T{1} + xv[i] * (T{1} - sig[i]));
                               }
                             }
                           });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{};
  for (T v : x.values()) total += v;
  const std::size_t n = x.numel();
  return detail::record_op(Tensor<T>::scalar(total), {&x},
                           [n](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gx = pg[0]) {
                               for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
                             }
                           });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  T total{};
  for (T v : x.values()) total += v;
  const std::size_t n = x.numel();
  const T inv = T{1} / static_cast<T>(n);
  return detail::record_op(Tensor<T>::scalar(total * inv), {&x},
                           [n, inv](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gx = pg[0]) {
                               for (std::size_t i = 0; i < n; ++i) gx[i] += g[0] * inv;
                             }
                           });
}

/// Mean squared error over all elements.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse", a.shape(), b.shape());
  return mean(square(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n]; [m,k] x [k] -> [m].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || (b.rank() != 2 && b.rank() != 1) || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t n = b.rank() == 2 ? b.dim(1) : 1;
  std::vector<T> out(m * n);
  detail::gemm_acc(m, k, n, a.values().data(), b.values().data(), out.data());
  Shape shape = b.rank() == 2 ? Shape{m, n} : Shape{m};
  Tensor<T> a_val = a.detached();
  Tensor<T> b_val = b.detached();
  return detail::record_op(
      Tensor<T>(std::move(shape), std::move(out)), {&a, &b},
      [a_val, b_val, m, k, n](std::span<const T> g, std::span<T* const> pg) {
        if (T* ga = pg[0]) detail::gemm_nt_acc(m, n, k, g.data(), b_val.values().data(), ga);
        if (T* gb = pg[1]) detail::gemm_tn_acc(m, k, n, a_val.values().data(), g.data(), gb);
      });
}

/// x [B,in] * weight [in,out] + bias [out], with the bias added to every row.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw ShapeError("linear", x.shape(), weight.shape());
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(1)) throw ShapeError("linear", weight.shape(), bias.shape());
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  std::vector<T> out(m * n);
  detail::gemm_acc(m, k, n, x.values().data(), weight.values().data(), out.data());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  Tensor<T> x_val = x.detached();
  Tensor<T> w_val = weight.detached();
  return detail::record_op(
      Tensor<T>(Shape{m, n}, std::move(out)), {&x, &weight, &bias},
      [x_val, w_val, m, k, n](std::span<const T> g, std::span<T* const> pg) {
        if (T* gx = pg[0]) detail::gemm_nt_acc(m, n, k, g.data(), w_val.values().data(), gx);
        if (T* gw = pg[1]) detail::gemm_tn_acc(m, k, n, x_val.values().data(), g.data(), gw);
        if (T* gb = pg[2]) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Layout

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
  Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  return detail::record_op(std::move(out), {&x}, [](std::span<const T> g, std::span<T* const> pg) {
    if (T* gx = pg[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

namespace detail {
inline void split_axis(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}
}  // namespace detail

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", Shape{}, "no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat", first, "axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = first;
    if (a.size() != b.size()) throw ShapeError("concat", a, b);
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat", p.shape(), first);
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 0, inner = 0;
  detail::split_axis(first, axis, outer, inner);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t total_width = shape[axis] * inner;

  std::vector<T> out(outer * total_width);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * widths[k], widths[k], out.data() + o * total_width + offset);
    }
    offset += widths[k];
  }
  std::vector<const Tensor<T>*> parents;
  for (const auto& p : parts) parents.push_back(&p);
  return detail::record_op_list(
      Tensor<T>(std::move(shape), std::move(out)), parents,
      [widths, outer, total_width](std::span<const T> g, std::span<T* const> pg) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (T* dst = pg[k]) {
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = g.data() + o * total_width + offset;
              T* d = dst + o * widths[k];
              for (std::size_t i = 0; i < widths[k]; ++i) d[i] += src[i];
            }
          }
          offset += widths[k];
        }
      });
}

/// Half-open range [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice", x.shape(),
                     "axis " + std::to_string(axis) + " range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ")");
  }
  std::size_t outer = 0, inner = 0;
  detail::split_axis(x.shape(), axis, outer, inner);
  const std::size_t src_width = x.dim(axis) * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t offset = begin * inner;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  std::vector<T> out(outer * width);
  auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + o * src_width + offset, width, out.data() + o * width);
  }
  return detail::record_op(Tensor<T>(std::move(shape), std::move(out)), {&x},
                           [outer, width, src_width, offset](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gx = pg[0]) {
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t i = 0; i < width; ++i) {
                                   gx[o * src_width + offset + i] += g[o * width + i];
                                 }
                               }
                             }
                           });
}

/// Gathers rows of `table` [R,E] -> [indices.size(), E].
template <class T>
Tensor<T> table_lookup(const Tensor<T>& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) throw ShapeError("table_lookup", table.shape(), "table must be rank 2");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<T> out(idx.size() * width);
  auto tv = table.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) {
      throw ShapeError("table_lookup", table.shape(), "index " + std::to_string(idx[r]) + " out of range");
    }
    std::copy_n(tv.data() + idx[r] * width, width, out.data() + r * width);
  }
  Tensor<T> result(Shape{idx.size(), width}, std::move(out));
  return detail::record_op(std::move(result), {&table},
                           [idx = std::move(idx), width](std::span<const T> g, std::span<T* const> pg) {
                             if (T* gt = pg[0]) {
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 for (std::size_t j = 0; j < width; ++j) gt[idx[r] * width + j] += g[r * width + j];
                               }
                             }
                           });
}

/// Identity on values; nothing flows back through the result.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return x.detached();
}

}  // namespace ism
