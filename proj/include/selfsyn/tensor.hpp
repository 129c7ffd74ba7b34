// Copyright (c) 2026 selfsyn contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
//
// Tensors are cheap handles over shared storage, templated on the scalar so
// the same code runs in float for training and double for gradient checks.
// Free functions (matmul, softmax, rms_norm, ...) compute forward results and,
// when a Tape is active and an input requires gradients, record a backward
// closure. With no active tape every op is a pure forward computation.
//
// Execution is single threaded and uses fixed reduction orders, so repeated
// runs over identical inputs are bitwise identical.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "selfsyn/common.hpp"

namespace selfsyn {

template <class S>
using EigenMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct TensorData {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;

  Index numel() const { return static_cast<Index>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), S(0));
  }
  static Tensor full(Shape shape, S v) {
    return Tensor(std::move(shape), v);
  }
  static Tensor scalar(S v) {
    return Tensor(Shape{1}, v);
  }
  static Tensor from_vector(std::vector<S> values, Shape shape) {
    if (shape_numel(shape) != static_cast<Index>(values.size()))
      throw ShapeError(cat("from_vector: ", values.size(), " values vs shape ", shape));
    Tensor t;
    t.d_ = make_node(std::move(shape));
    t.d_->values = std::move(values);
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  Index rank() const { return static_cast<Index>(d_->shape.size()); }
  Index dim(Index i) const { return d_->shape[static_cast<size_t>(i)]; }
  Index numel() const { return d_->numel(); }

  S* data() { return d_->values.data(); }
  const S* data() const { return d_->values.data(); }
  std::vector<S>& values() { return d_->values; }
  const std::vector<S>& values() const { return d_->values; }

  S& operator()(Index i) { return d_->values[static_cast<size_t>(i)]; }
  S operator()(Index i) const { return d_->values[static_cast<size_t>(i)]; }
  S& operator()(Index i, Index j) {
    return d_->values[static_cast<size_t>(i * d_->shape.back() + j)];
  }
  S operator()(Index i, Index j) const {
    return d_->values[static_cast<size_t>(i * d_->shape.back() + j)];
  }

  S item() const {
    if (numel() != 1) throw ContractError(cat("item() on tensor of shape ", shape()));
    return d_->values[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool v) { d_->requires_grad = v; }

  bool has_grad() const { return d_ && d_->grad.size() == d_->values.size(); }
  const std::vector<S>& grad() const { return d_->grad; }
  std::vector<S>& grad() { return d_->grad; }
  void zero_grad() {
    if (d_) d_->grad.assign(d_->values.size(), S(0));
  }

  std::shared_ptr<TensorData<S>> node() const { return d_; }

  // Deep copy of values; no grad, no graph history.
  Tensor clone_values() const {
    Tensor t;
    t.d_ = make_node(d_->shape);
    t.d_->values = d_->values;
    return t;
  }

 private:
  Tensor(Shape shape, S fill) {
    d_ = make_node(std::move(shape));
    d_->values.assign(static_cast<size_t>(shape_numel(d_->shape)), fill);
  }

  static std::shared_ptr<TensorData<S>> make_node(Shape shape) {
    auto n = std::make_shared<TensorData<S>>();
    n->shape = std::move(shape);
    n->id = next_id();
    return n;
  }

  static std::uint64_t next_id() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

  std::shared_ptr<TensorData<S>> d_;
};

// ---------------------------------------------------------------------------
// Tape

template <class S>
class Tape {
 public:
  struct Entry {
    const char* op;
    std::vector<std::shared_ptr<TensorData<S>>> inputs;
    std::shared_ptr<TensorData<S>> output;
    std::function<void()> backward;
  };

  void record(const char* op, std::vector<std::shared_ptr<TensorData<S>>> inputs,
              std::shared_ptr<TensorData<S>> output, std::function<void()> backward) {
    entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
  }

  size_t size() const { return entries_.size(); }
  const Entry& entry(size_t i) const { return entries_[i]; }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded entry once, in
  // reverse order. Fan-out accumulates because closures += into input grads.
  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      throw ContractError(cat("backward: loss must be scalar, got shape ", loss.shape()));
    loss.node()->ensure_grad();
    loss.node()->grad[0] += S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->backward) it->backward();
    }
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

  // RAII: installs this tape as the recording target for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active()) { active() = &t; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

 private:
  std::vector<Entry> entries_;
};

namespace detail {

template <class S>
bool tracing(std::initializer_list<const Tensor<S>*> inputs) {
  if (Tape<S>::active() == nullptr) return false;
  for (const Tensor<S>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <class S>
void record(const char* op, std::initializer_list<const Tensor<S>*> inputs,
            const Tensor<S>& output, std::function<void()> fn) {
  std::vector<std::shared_ptr<TensorData<S>>> in;
  in.reserve(inputs.size());
  for (const Tensor<S>* t : inputs) in.push_back(t->node());
  output.node()->requires_grad = true;
  Tape<S>::active()->record(op, std::move(in), output.node(), std::move(fn));
}

template <class S>
using MatMap = Eigen::Map<EigenMatrix<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const EigenMatrix<S>>;

// Rows/cols view of a tensor interpreted as a 2-D matrix.
template <class S>
ConstMatMap<S> mat(const Tensor<S>& t, Index rows, Index cols) {
  return ConstMatMap<S>(t.data(), rows, cols);
}

template <class S>
MatMap<S> grad_mat(const Tensor<S>& t, Index rows, Index cols) {
  t.node()->ensure_grad();
  return MatMap<S>(t.node()->grad.data(), rows, cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic primitives

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError(cat("matmul: incompatible shapes ", a.shape(), " and ", b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m, n});
  detail::MatMap<S>(out.data(), m, n).noalias() = detail::mat(a, m, k) * detail::mat(b, k, n);
  if (detail::tracing<S>({&a, &b})) {
    detail::record<S>("matmul", {&a, &b}, out, [a, b, out, m, k, n]() {
      detail::ConstMatMap<S> dC(out.node()->grad.data(), m, n);
      if (a.requires_grad())
        detail::grad_mat(a, m, k).noalias() += dC * detail::mat(b, k, n).transpose();
      if (b.requires_grad())
        detail::grad_mat(b, k, n).noalias() += detail::mat(a, m, k).transpose() * dC;
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  if (x.rank() != 2) throw ShapeError(cat("transpose: want rank 2, got ", x.shape()));
  const Index m = x.dim(0), n = x.dim(1);
  Tensor<S> out = Tensor<S>::zeros({n, m});
  detail::MatMap<S>(out.data(), n, m).noalias() = detail::mat(x, m, n).transpose();
  if (detail::tracing<S>({&x})) {
    detail::record<S>("transpose", {&x}, out, [x, out, m, n]() {
      detail::ConstMatMap<S> dY(out.node()->grad.data(), n, m);
      detail::grad_mat(x, m, n).noalias() += dY.transpose();
    });
  }
  return out;
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(cat("add: shape mismatch ", a.shape(), " vs ", b.shape()));
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) out(i) = a(i) + b(i);
  if (detail::tracing<S>({&a, &b})) {
    detail::record<S>("add", {&a, &b}, out, [a, b, out, n]() {
      const auto& dY = out.node()->grad;
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        for (Index i = 0; i < n; ++i) a.node()->grad[i] += dY[i];
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        for (Index i = 0; i < n; ++i) b.node()->grad[i] += dY[i];
      }
    });
  }
  return out;
}

// y[i, :] = x[i, :] + bias
template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || x.shape().back() != bias.dim(0))
    throw ShapeError(cat("add_bias: ", x.shape(), " vs bias ", bias.shape()));
  const Index d = bias.dim(0), rows = x.numel() / d;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (Index r = 0; r < rows; ++r)
    for (Index j = 0; j < d; ++j) out(r * d + j) = x(r * d + j) + bias(j);
  if (detail::tracing<S>({&x, &bias})) {
    detail::record<S>("add_bias", {&x, &bias}, out, [x, bias, out, rows, d]() {
      const auto& dY = out.node()->grad;
      if (x.requires_grad()) {
        x.node()->ensure_grad();
        for (Index i = 0; i < rows * d; ++i) x.node()->grad[i] += dY[i];
      }
      if (bias.requires_grad()) {
        bias.node()->ensure_grad();
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < d; ++j) bias.node()->grad[j] += dY[r * d + j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(cat("mul: shape mismatch ", a.shape(), " vs ", b.shape()));
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const Index n = a.numel();
  for (Index i = 0; i < n; ++i) out(i) = a(i) * b(i);
  if (detail::tracing<S>({&a, &b})) {
    detail::record<S>("mul", {&a, &b}, out, [a, b, out, n]() {
      const auto& dY = out.node()->grad;
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        for (Index i = 0; i < n; ++i) a.node()->grad[i] += dY[i] * b(i);
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        for (Index i = 0; i < n; ++i) b.node()->grad[i] += dY[i] * a(i);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) out(i) = x(i) * c;
  if (detail::tracing<S>({&x})) {
    detail::record<S>("scale", {&x}, out, [x, out, c, n]() {
      x.node()->ensure_grad();
      for (Index i = 0; i < n; ++i) x.node()->grad[i] += out.node()->grad[i] * c;
    });
  }
  return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros({1});
  S acc = S(0);
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) acc += x(i);
  out(0) = acc;
  if (detail::tracing<S>({&x})) {
    detail::record<S>("sum", {&x}, out, [x, out, n]() {
      const S g = out.node()->grad[0];
      x.node()->ensure_grad();
      for (Index i = 0; i < n; ++i) x.node()->grad[i] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape surgery (rows/cols)

template <class S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError(cat("concat_rows: ", a.shape(), " vs ", b.shape()));
  const Index m1 = a.dim(0), m2 = b.dim(0), d = a.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m1 + m2, d});
  std::copy(a.data(), a.data() + m1 * d, out.data());
  std::copy(b.data(), b.data() + m2 * d, out.data() + m1 * d);
  if (detail::tracing<S>({&a, &b})) {
    detail::record<S>("concat_rows", {&a, &b}, out, [a, b, out, m1, m2, d]() {
      const auto& dY = out.node()->grad;
      if (a.requires_grad()) {
        a.node()->ensure_grad();
        for (Index i = 0; i < m1 * d; ++i) a.node()->grad[i] += dY[i];
      }
      if (b.requires_grad()) {
        b.node()->ensure_grad();
        for (Index i = 0; i < m2 * d; ++i) b.node()->grad[i] += dY[m1 * d + i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, Index row0, Index nrows) {
  if (x.rank() != 2 || row0 < 0 || nrows < 0 || row0 + nrows > x.dim(0))
    throw ShapeError(cat("slice_rows: rows [", row0, ",", row0 + nrows, ") of ", x.shape()));
  const Index d = x.dim(1);
  Tensor<S> out = Tensor<S>::zeros({nrows, d});
  std::copy(x.data() + row0 * d, x.data() + (row0 + nrows) * d, out.data());
  if (detail::tracing<S>({&x})) {
    detail::record<S>("slice_rows", {&x}, out, [x, out, row0, nrows, d]() {
      x.node()->ensure_grad();
      for (Index i = 0; i < nrows * d; ++i) x.node()->grad[row0 * d + i] += out.node()->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, Index col0, Index ncols) {
  if (x.rank() != 2 || col0 < 0 || ncols < 0 || col0 + ncols > x.dim(1))
    throw ShapeError(cat("slice_cols: cols [", col0, ",", col0 + ncols, ") of ", x.shape()));
  const Index m = x.dim(0), n = x.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m, ncols});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < ncols; ++j) out(i, j) = x(i, col0 + j);
  if (detail::tracing<S>({&x})) {
    detail::record<S>("slice_cols", {&x}, out, [x, out, col0, ncols, m, n]() {
      x.node()->ensure_grad();
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < ncols; ++j)
          x.node()->grad[i * n + col0 + j] += out.node()->grad[i * ncols + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index m = parts[0].dim(0);
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m)
      throw ShapeError(cat("concat_cols: row mismatch ", p.shape()));
    total += p.dim(1);
  }
  Tensor<S> out = Tensor<S>::zeros({m, total});
  Index off = 0;
  for (const auto& p : parts) {
    const Index w = p.dim(1);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < w; ++j) out(i, off + j) = p(i, j);
    off += w;
  }
  bool track = Tape<S>::active() != nullptr;
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (track && any_grad) {
    std::vector<std::shared_ptr<TensorData<S>>> in;
    for (const auto& p : parts) in.push_back(p.node());
    out.node()->requires_grad = true;
    auto parts_copy = parts;
    Tape<S>::active()->record("concat_cols", std::move(in), out.node(),
                              [parts_copy, out, m, total]() {
                                Index off2 = 0;
                                for (const auto& p : parts_copy) {
                                  const Index w = p.dim(1);
                                  if (p.requires_grad()) {
                                    p.node()->ensure_grad();
                                    for (Index i = 0; i < m; ++i)
                                      for (Index j = 0; j < w; ++j)
                                        p.node()->grad[i * w + j] +=
                                            out.node()->grad[i * total + off2 + j];
                                  }
                                  off2 += w;
                                }
                              });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

template <class S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
  const Index r = x.rank();
  if (axis < 0 || axis >= r) throw ShapeError(cat("softmax: axis ", axis, " for ", x.shape()));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= x.dim(i);
  const Index n = x.dim(axis);
  for (Index i = axis + 1; i < r; ++i) inner *= x.dim(i);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * n * inner + in;
      S mx = x(base);
      for (Index i = 1; i < n; ++i) mx = std::max(mx, x(base + i * inner));
      S denom = S(0);
      for (Index i = 0; i < n; ++i) {
        const S e = std::exp(x(base + i * inner) - mx);
        out(base + i * inner) = e;
        denom += e;
      }
      for (Index i = 0; i < n; ++i) out(base + i * inner) /= denom;
    }
  }
  if (detail::tracing<S>({&x})) {
    detail::record<S>("softmax", {&x}, out, [x, out, outer, n, inner]() {
      x.node()->ensure_grad();
      const auto& y = out.values();
      const auto& dY = out.node()->grad;
      for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
          const Index base = o * n * inner + in;
          S dot = S(0);
          for (Index i = 0; i < n; ++i) dot += dY[base + i * inner] * y[base + i * inner];
          for (Index i = 0; i < n; ++i)
            x.node()->grad[base + i * inner] +=
                y[base + i * inner] * (dY[base + i * inner] - dot);
        }
      }
    });
  }
  return out;
}

// Row-wise softmax over a [q x k] score matrix where row i may only see
// columns j <= i + (k - q). Masked-out entries are exactly zero; the mask is
// part of the op, so no infinities ever appear in tensor data.
template <class S>
Tensor<S> causal_softmax(const Tensor<S>& x) {
  if (x.rank() != 2 || x.dim(1) < x.dim(0))
    throw ShapeError(cat("causal_softmax: want [q x k], k >= q, got ", x.shape()));
  const Index q = x.dim(0), k = x.dim(1);
  const Index offset = k - q;
  Tensor<S> out = Tensor<S>::zeros({q, k});
  for (Index i = 0; i < q; ++i) {
    const Index vis = offset + i + 1;  // visible prefix length
    S mx = x(i, 0);
    for (Index j = 1; j < vis; ++j) mx = std::max(mx, x(i, j));
    S denom = S(0);
    for (Index j = 0; j < vis; ++j) {
      const S e = std::exp(x(i, j) - mx);
      out(i, j) = e;
      denom += e;
    }
    for (Index j = 0; j < vis; ++j) out(i, j) /= denom;
  }
  if (detail::tracing<S>({&x})) {
    detail::record<S>("causal_softmax", {&x}, out, [x, out, q, k, offset]() {
      x.node()->ensure_grad();
      for (Index i = 0; i < q; ++i) {
        const Index vis = offset + i + 1;
        S dot = S(0);
        for (Index j = 0; j < vis; ++j) dot += out.node()->grad[i * k + j] * out(i, j);
        for (Index j = 0; j < vis; ++j)
          x.node()->grad[i * k + j] += out(i, j) * (out.node()->grad[i * k + j] - dot);
      }
    });
  }
  return out;
}

// y = gamma * x / sqrt(mean(x^2) + eps), normalizing over the last dimension.
template <class S>
Tensor<S> rms_norm(const Tensor<S>& x, const Tensor<S>& gamma, S eps) {
  if (gamma.rank() != 1 || x.shape().back() != gamma.dim(0))
    throw ShapeError(cat("rms_norm: ", x.shape(), " vs gamma ", gamma.shape()));
  if (!(eps > S(0))) throw ContractError("rms_norm: eps must be > 0");
  const Index d = gamma.dim(0), rows = x.numel() / d;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  std::vector<S> rinv(static_cast<size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    S ms = S(0);
    for (Index j = 0; j < d; ++j) ms += x(r * d + j) * x(r * d + j);
    ms /= S(d);
    const S rv = S(1) / std::sqrt(ms + eps);
    rinv[static_cast<size_t>(r)] = rv;
    for (Index j = 0; j < d; ++j) out(r * d + j) = gamma(j) * x(r * d + j) * rv;
  }
  if (detail::tracing<S>({&x, &gamma})) {
    detail::record<S>("rms_norm", {&x, &gamma}, out, [x, gamma, out, rows, d, rinv]() {
      const auto& dY = out.node()->grad;
      if (gamma.requires_grad()) gamma.node()->ensure_grad();
      if (x.requires_grad()) x.node()->ensure_grad();
      for (Index r = 0; r < rows; ++r) {
        const S rv = rinv[static_cast<size_t>(r)];
        if (gamma.requires_grad()) {
          for (Index j = 0; j < d; ++j)
            gamma.node()->grad[j] += x(r * d + j) * rv * dY[r * d + j];
        }
        if (x.requires_grad()) {
          S t = S(0);
          for (Index j = 0; j < d; ++j) t += gamma(j) * x(r * d + j) * dY[r * d + j];
          const S c = rv * rv * rv * t / S(d);
          for (Index j = 0; j < d; ++j)
            x.node()->grad[r * d + j] += rv * gamma(j) * dY[r * d + j] - c * x(r * d + j);
        }
      }
    });
  }
  return out;
}

// Tanh-approximated GeLU:
//   gelu(x) = 0.5 * x * (1 + tanh(kGeluC0 * (x + kGeluC1 * x^3)))
// with kGeluC0 = sqrt(2/pi) = 0.7978845608028654 and kGeluC1 = 0.044715.
// Tests pin these constants.
inline constexpr double kGeluC0 = 0.7978845608028654;
inline constexpr double kGeluC1 = 0.044715;

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) {
    const double v = static_cast<double>(x(i));
    const double t = std::tanh(kGeluC0 * (v + kGeluC1 * v * v * v));
    out(i) = static_cast<S>(0.5 * v * (1.0 + t));
  }
  if (detail::tracing<S>({&x})) {
    detail::record<S>("gelu", {&x}, out, [x, out, n]() {
      x.node()->ensure_grad();
      for (Index i = 0; i < n; ++i) {
        const double v = static_cast<double>(x(i));
        const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * v * v);
        const double g = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        x.node()->grad[i] += out.node()->grad[i] * static_cast<S>(g);
      }
    });
  }
  return out;
}

// silu(x) = x * sigmoid(x)
template <class S>
Tensor<S> silu(const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) {
    const double v = static_cast<double>(x(i));
    out(i) = static_cast<S>(v / (1.0 + std::exp(-v)));
  }
  if (detail::tracing<S>({&x})) {
    detail::record<S>("silu", {&x}, out, [x, out, n]() {
      x.node()->ensure_grad();
      for (Index i = 0; i < n; ++i) {
        const double v = static_cast<double>(x(i));
        const double sg = 1.0 / (1.0 + std::exp(-v));
        const double g = sg * (1.0 + v * (1.0 - sg));
        x.node()->grad[i] += out.node()->grad[i] * static_cast<S>(g);
      }
    });
  }
  return out;
}

// Rotary position embedding over [seq x (heads * head_dim)] (a [seq, heads,
// head_dim] tensor has the same layout and is accepted too). Pair p of each
// head rotates by angle pos * base^(-2p/head_dim) with base 10000; position 0
// is the identity.
template <class S>
Tensor<S> rope_apply(const Tensor<S>& x, Index n_heads, std::span<const Index> positions,
                     double base = 10000.0) {
  Index seq, width;
  if (x.rank() == 2) {
    seq = x.dim(0);
    width = x.dim(1);
  } else if (x.rank() == 3) {
    seq = x.dim(0);
    width = x.dim(1) * x.dim(2);
    if (x.dim(1) != n_heads) throw ShapeError(cat("rope_apply: head dim mismatch ", x.shape()));
  } else {
    throw ShapeError(cat("rope_apply: want rank 2 or 3, got ", x.shape()));
  }
  if (width % n_heads != 0)
    throw ConfigError(cat("rope_apply: width ", width, " not divisible by ", n_heads, " heads"));
  const Index hd = width / n_heads;
  if (hd % 2 != 0) throw ConfigError(cat("rope_apply: head dim ", hd, " must be even"));
  if (static_cast<Index>(positions.size()) != seq)
    throw ShapeError(cat("rope_apply: ", positions.size(), " positions for seq ", seq));

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const Index half = hd / 2;
  std::vector<Index> pos(positions.begin(), positions.end());
  auto rotate = [seq, n_heads, half, hd, width, base](const std::vector<Index>& ps, bool inverse,
                                                      const S* src, S* dst) {
    for (Index i = 0; i < seq; ++i) {
      const double p_i = static_cast<double>(ps[static_cast<size_t>(i)]);
      for (Index h = 0; h < n_heads; ++h) {
        for (Index p = 0; p < half; ++p) {
          const double theta = p_i * std::pow(base, -2.0 * static_cast<double>(p) /
                                                        static_cast<double>(hd));
          const double cs = std::cos(theta);
          const double sn = inverse ? -std::sin(theta) : std::sin(theta);
          const Index k = i * width + h * hd + 2 * p;
          const double a = static_cast<double>(src[k]);
          const double b = static_cast<double>(src[k + 1]);
          dst[k] += static_cast<S>(a * cs - b * sn);
          dst[k + 1] += static_cast<S>(a * sn + b * cs);
        }
      }
    }
  };
  rotate(pos, false, x.data(), out.data());
  if (detail::tracing<S>({&x})) {
    detail::record<S>("rope_apply", {&x}, out, [x, out, rotate, pos]() {
      x.node()->ensure_grad();
      rotate(pos, true, out.node()->grad.data(), x.node()->grad.data());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup and masked cross entropy

template <class S>
Tensor<S> embedding(const Tensor<S>& table, const TokenSequence& ids) {
  if (table.rank() != 2) throw ShapeError(cat("embedding: table must be 2-D, got ", table.shape()));
  const Index v = table.dim(0), d = table.dim(1);
  const Index s = static_cast<Index>(ids.size());
  Tensor<S> out = Tensor<S>::zeros({s, d});
  for (Index i = 0; i < s; ++i) {
    const TokenId id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= v) throw ContractError(cat("embedding: id ", id, " outside vocab ", v));
    std::copy(table.data() + id * d, table.data() + (id + 1) * d, out.data() + i * d);
  }
  if (detail::tracing<S>({&table})) {
    TokenSequence ids_copy = ids;
    detail::record<S>("embedding", {&table}, out, [table, out, ids_copy, d]() {
      table.node()->ensure_grad();
      for (size_t i = 0; i < ids_copy.size(); ++i) {
        const Index row = ids_copy[i];
        for (Index j = 0; j < d; ++j)
          table.node()->grad[row * d + j] += out.node()->grad[static_cast<Index>(i) * d + j];
      }
    });
  }
  return out;
}

// Mean negative log-likelihood over mask-true positions. Image and PAD slots
// are masked out by the caller; they condition the model but contribute no
// loss.
template <class S>
Tensor<S> cross_entropy_masked(const Tensor<S>& logits, const TokenSequence& targets,
                               const std::vector<std::uint8_t>& mask) {
  if (logits.rank() != 2)
    throw ShapeError(cat("cross_entropy_masked: logits must be 2-D, got ", logits.shape()));
  const Index s = logits.dim(0), v = logits.dim(1);
  if (static_cast<Index>(targets.size()) != s || static_cast<Index>(mask.size()) != s)
    throw ContractError(cat("cross_entropy_masked: ", targets.size(), " targets / ", mask.size(),
                            " mask entries for ", s, " rows"));
  Index count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw EmptyLossError("cross_entropy_masked: every position masked out");

  Tensor<S> out = Tensor<S>::zeros({1});
  S acc = S(0);
  for (Index i = 0; i < s; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const TokenId t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= v)
      throw ContractError(cat("cross_entropy_masked: target ", t, " outside vocab ", v));
    S mx = logits(i, 0);
    for (Index j = 1; j < v; ++j) mx = std::max(mx, logits(i, j));
    S denom = S(0);
    for (Index j = 0; j < v; ++j) denom += std::exp(logits(i, j) - mx);
    acc += std::log(denom) + mx - logits(i, t);
  }
  out(0) = acc / S(count);
  if (detail::tracing<S>({&logits})) {
    TokenSequence tcopy = targets;
    std::vector<std::uint8_t> mcopy = mask;
    detail::record<S>("cross_entropy_masked", {&logits}, out,
                      [logits, out, tcopy, mcopy, s, v, count]() {
                        logits.node()->ensure_grad();
                        const S g = out.node()->grad[0] / S(count);
                        for (Index i = 0; i < s; ++i) {
                          if (!mcopy[static_cast<size_t>(i)]) continue;
                          S mx = logits(i, 0);
                          for (Index j = 1; j < v; ++j) mx = std::max(mx, logits(i, j));
                          S denom = S(0);
                          for (Index j = 0; j < v; ++j) denom += std::exp(logits(i, j) - mx);
                          for (Index j = 0; j < v; ++j) {
                            const S p = std::exp(logits(i, j) - mx) / denom;
                            const S one = (j == tcopy[static_cast<size_t>(i)]) ? S(1) : S(0);
                            logits.node()->grad[i * v + j] += g * (p - one);
                          }
                        }
                      });
  }
  return out;
}

}  // namespace selfsyn
