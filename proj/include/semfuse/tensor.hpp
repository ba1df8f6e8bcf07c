#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "semfuse/rng.hpp"

namespace semfuse {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// One node of the reverse-mode tape. The tape is the implicit DAG formed by
// `parents`; backward() releases it after use.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;

  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backprop;  // accumulates into parents' grads

  std::size_t numel() const { return data.size(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major 64-bit float tensor with optional tape attachment.
// Value-semantics handle onto a shared node; ops on tensors whose inputs do not
// require gradients record nothing.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.impl_->data.assign(shape_numel(shape), 0.0);
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
      throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = rng.uniform(lo, hi);
    return t;
  }

  static Tensor normal(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = stddev * rng.normal();
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::item: tensor " + shape_str(shape()) + " is not scalar");
    }
    return impl_->data[0];
  }

  double at(std::size_t i) const { return impl_->data.at(i); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    impl_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw std::runtime_error("Tensor::grad: gradient not populated");
    return impl_->grad;
  }
  std::vector<double>& grad_mutable() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  bool all_finite() const {
    for (double v : impl_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  TensorImplPtr impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<TensorImplPtr> parents,
                          std::function<void(TensorImpl&)> backprop) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  bool needs = false;
  for (const auto& p : parents)
    if (p->requires_grad) needs = true;
  if (needs) {
    out.impl()->requires_grad = true;
    out.impl()->parents = std::move(parents);
    out.impl()->backprop = std::move(backprop);
  }
  return out;
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Broadcast layout: shapes are right-aligned; every dim must match or be 1.
struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> a_index;  // out linear index -> a linear index
  std::vector<std::size_t> b_index;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape ap(rank, 1), bp(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), ap.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), bp.begin() + (rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (ap[i] != bp[i] && ap[i] != 1 && bp[i] != 1) {
      throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " and " +
                                  shape_str(b));
    }
    out[i] = std::max(ap[i], bp[i]);
  }
  auto ast = row_major_strides(ap);
  auto bst = row_major_strides(bp);
  for (std::size_t i = 0; i < rank; ++i) {
    if (ap[i] == 1) ast[i] = 0;
    if (bp[i] == 1) bst[i] = 0;
  }
  BroadcastPlan plan;
  plan.out_shape = out;
  const std::size_t n = shape_numel(out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> coord(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia += coord[d] * ast[d];
      ib += coord[d] * bst[d];
    }
    plan.a_index[i] = ia;
    plan.b_index[i] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      if (++coord[d] < out[d]) break;
      coord[d] = 0;
    }
  }
  return plan;
}

enum class BinaryKind { Add, Sub, Mul };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinaryKind kind) {
  auto plan = broadcast_plan(a.shape(), b.shape());
  const std::size_t n = plan.a_index.size();
  std::vector<double> out(n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pa[plan.a_index[i]];
    const double y = pb[plan.b_index[i]];
    switch (kind) {
      case BinaryKind::Add: out[i] = x + y; break;
      case BinaryKind::Sub: out[i] = x - y; break;
      case BinaryKind::Mul: out[i] = x * y; break;
    }
  }
  auto ai = a.impl();
  auto bi = b.impl();
  Shape out_shape = plan.out_shape;  // read before the lambda capture moves `plan`
  return make_result(std::move(out_shape), std::move(out), {ai, bi},
                     [plan = std::move(plan), kind](TensorImpl& self) {
                       TensorImpl& A = *self.parents[0];
                       TensorImpl& B = *self.parents[1];
                       const bool ga = A.requires_grad;
                       const bool gb = B.requires_grad;
                       if (ga) A.ensure_grad();
                       if (gb) B.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         const double g = self.grad[i];
                         switch (kind) {
                           case BinaryKind::Add:
                             if (ga) A.grad[plan.a_index[i]] += g;
                             if (gb) B.grad[plan.b_index[i]] += g;
                             break;
                           case BinaryKind::Sub:
                             if (ga) A.grad[plan.a_index[i]] += g;
                             if (gb) B.grad[plan.b_index[i]] -= g;
                             break;
                           case BinaryKind::Mul:
                             if (ga) A.grad[plan.a_index[i]] += g * B.data[plan.b_index[i]];
                             if (gb) B.grad[plan.b_index[i]] += g * A.data[plan.a_index[i]];
                             break;
                         }
                       }
                     });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinaryKind::Add);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinaryKind::Sub);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinaryKind::Mul);
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return detail::make_result(a.shape(), std::move(out), {a.impl()}, [c](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += c * self.grad[i];
  });
}

// [B x K] * [K x N] -> [B x N]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const std::size_t B = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<double> out(B * N, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = pa[i * K + k];
      const double* brow = pb + k * N;
      double* orow = out.data() + i * N;
      for (std::size_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
    }
  }
  return detail::make_result({B, N}, std::move(out), {a.impl(), b.impl()},
                             [B, K, N](TensorImpl& self) {
                               TensorImpl& A = *self.parents[0];
                               TensorImpl& W = *self.parents[1];
                               if (A.requires_grad) {
                                 A.ensure_grad();
                                 // dA = dC * W^T
                                 for (std::size_t i = 0; i < B; ++i)
                                   for (std::size_t j = 0; j < N; ++j) {
                                     const double g = self.grad[i * N + j];
                                     if (g == 0.0) continue;
                                     for (std::size_t k = 0; k < K; ++k)
                                       A.grad[i * K + k] += g * W.data[k * N + j];
                                   }
                               }
                               if (W.requires_grad) {
                                 W.ensure_grad();
                                 // dW = A^T * dC
                                 for (std::size_t i = 0; i < B; ++i)
                                   for (std::size_t k = 0; k < K; ++k) {
                                     const double aik = A.data[i * K + k];
                                     if (aik == 0.0) continue;
                                     for (std::size_t j = 0; j < N; ++j)
                                       W.grad[k * N + j] += aik * self.grad[i * N + j];
                                   }
                               }
                             });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return detail::make_result(a.shape(), std::move(out), {a.impl()}, [](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (A.data[i] > 0.0) A.grad[i] += self.grad[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    // stable in both tails
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return detail::make_result(a.shape(), std::move(out), {a.impl()}, [](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      A.grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

namespace detail {

struct AxisLayout {
  std::size_t outer = 1, axis = 1, inner = 1;
};

inline AxisLayout axis_layout(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(s));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  l.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace detail

// Softmax along `axis`, computed with max subtraction. Rows sum to 1.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto l = detail::axis_layout(a.shape(), axis);
  std::vector<double> out(a.numel());
  const double* p = a.data();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.axis * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < l.axis; ++k) mx = std::max(mx, p[base + k * l.inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < l.axis; ++k) {
        const double e = std::exp(p[base + k * l.inner] - mx);
        out[base + k * l.inner] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < l.axis; ++k) out[base + k * l.inner] /= sum;
    }
  return detail::make_result(a.shape(), std::move(out), {a.impl()}, [l](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    // dx = y * (dy - sum(dy * y))
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.axis * l.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < l.axis; ++k) {
          const std::size_t i = base + k * l.inner;
          dot += self.grad[i] * self.data[i];
        }
        for (std::size_t k = 0; k < l.axis; ++k) {
          const std::size_t i = base + k * l.inner;
          A.grad[i] += self.data[i] * (self.grad[i] - dot);
        }
      }
  });
}

struct MaxPoolResult {
  Tensor values;                   // input shape with `axis` removed
  std::vector<std::size_t> argmax; // winner index along axis, per output element
};

// Max over one axis. Ties break toward the lowest index so backward is
// deterministic; gradient flows only to the argmax positions.
inline MaxPoolResult maxpool_over_axis(const Tensor& a, std::size_t axis) {
  const auto l = detail::axis_layout(a.shape(), axis);
  if (l.axis == 0) throw std::invalid_argument("maxpool_over_axis: empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.dim(i));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(l.outer * l.inner);
  std::vector<std::size_t> arg(l.outer * l.inner, 0);
  const double* p = a.data();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.axis * l.inner + in;
      double best = p[base];
      std::size_t bestk = 0;
      for (std::size_t k = 1; k < l.axis; ++k) {
        const double v = p[base + k * l.inner];
        if (v > best) {
          best = v;
          bestk = k;
        }
      }
      out[o * l.inner + in] = best;
      arg[o * l.inner + in] = bestk;
    }
  MaxPoolResult res;
  res.argmax = arg;
  res.values = detail::make_result(out_shape, std::move(out), {a.impl()},
                                   [l, arg = std::move(arg)](TensorImpl& self) {
                                     TensorImpl& A = *self.parents[0];
                                     if (!A.requires_grad) return;
                                     A.ensure_grad();
                                     for (std::size_t o = 0; o < l.outer; ++o)
                                       for (std::size_t in = 0; in < l.inner; ++in) {
                                         const std::size_t i = o * l.inner + in;
                                         const std::size_t src =
                                             o * l.axis * l.inner + arg[i] * l.inner + in;
                                         A.grad[src] += self.grad[i];
                                       }
                                   });
  return res;
}

inline Tensor max_over_axis(const Tensor& a, std::size_t axis) {
  return maxpool_over_axis(a, axis).values;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  }
  std::vector<double> out(a.values());
  return detail::make_result(std::move(shape), std::move(out), {a.impl()}, [](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
  });
}

// Concatenate two tensors along `axis` (all other dims must match).
inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank()) {
    throw std::invalid_argument("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw std::invalid_argument("concat: shapes " + shape_str(a.shape()) + " and " +
                                  shape_str(b.shape()) + " differ off axis " +
                                  std::to_string(axis));
    }
  const auto la = detail::axis_layout(a.shape(), axis);
  const auto lb = detail::axis_layout(b.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] += b.dim(axis);
  std::vector<double> out(shape_numel(out_shape));
  const std::size_t stripe_a = la.axis * la.inner;
  const std::size_t stripe_b = lb.axis * lb.inner;
  for (std::size_t o = 0; o < la.outer; ++o) {
    std::copy(a.data() + o * stripe_a, a.data() + (o + 1) * stripe_a,
              out.begin() + o * (stripe_a + stripe_b));
    std::copy(b.data() + o * stripe_b, b.data() + (o + 1) * stripe_b,
              out.begin() + o * (stripe_a + stripe_b) + stripe_a);
  }
  return detail::make_result(out_shape, std::move(out), {a.impl(), b.impl()},
                             [la, stripe_a, stripe_b](TensorImpl& self) {
                               TensorImpl& A = *self.parents[0];
                               TensorImpl& B = *self.parents[1];
                               if (A.requires_grad) A.ensure_grad();
                               if (B.requires_grad) B.ensure_grad();
                               for (std::size_t o = 0; o < la.outer; ++o) {
                                 const std::size_t base = o * (stripe_a + stripe_b);
                                 if (A.requires_grad)
                                   for (std::size_t i = 0; i < stripe_a; ++i)
                                     A.grad[o * stripe_a + i] += self.grad[base + i];
                                 if (B.requires_grad)
                                   for (std::size_t i = 0; i < stripe_b; ++i)
                                     B.grad[o * stripe_b + i] += self.grad[base + stripe_a + i];
                               }
                             });
}

// Repeat a rank-1 vector [C] into [rows x C].
inline Tensor expand_rows(const Tensor& v, std::size_t rows) {
  if (v.rank() != 1) {
    throw std::invalid_argument("expand_rows: expected rank-1 input, got " + shape_str(v.shape()));
  }
  const std::size_t C = v.dim(0);
  std::vector<double> out(rows * C);
  for (std::size_t r = 0; r < rows; ++r) std::copy(v.data(), v.data() + C, out.begin() + r * C);
  return detail::make_result({rows, C}, std::move(out), {v.impl()}, [rows, C](TensorImpl& self) {
    TensorImpl& V = *self.parents[0];
    if (!V.requires_grad) return;
    V.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) V.grad[c] += self.grad[r * C + c];
  });
}

// Rank-2 transpose.
inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expected rank-2 tensor, got " + shape_str(a.shape()));
  }
  const std::size_t R = a.dim(0), C = a.dim(1);
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = a.data()[r * C + c];
  return detail::make_result({C, R}, std::move(out), {a.impl()}, [R, C](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) A.grad[r * C + c] += self.grad[c * R + r];
  });
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  return detail::make_result({1}, {s}, {a.impl()}, [](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (auto& g : A.grad) g += self.grad[0];
  });
}

inline Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// Reverse-mode backward from a scalar loss. Populates .grad on every node that
// requires gradients, then releases the tape.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  // topological order via iterative DFS
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (!seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
  // consume the tape
  for (TensorImpl* node : order) {
    node->backprop = nullptr;
    node->parents.clear();
  }
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace semfuse
