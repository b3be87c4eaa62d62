// Copyright 2026 The sroute Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Differentiable primitives over BasicTensor. Every op validates shapes,
// computes its value eagerly, and records one backward closure when the
// active tape is set and some input requires a gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sroute/errors.hpp"
#include "sroute/tensor.hpp"

namespace sroute {

// Additive mask value for disallowed attention entries. Finite so that no
// inf - inf can appear in a gradient.
inline constexpr double kMaskSentinel = -1e9;
inline constexpr double kRmsEpsilon = 1e-6;

namespace detail {

template <typename T, typename... Ts>
BasicTape<T>* recording_tape(const Ts&... inputs) {
  BasicTape<T>* tape = BasicTape<T>::active();
  if (tape == nullptr) return nullptr;
  return (inputs.requires_grad() || ...) ? tape : nullptr;
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const BasicTensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(a.shape()));
  }
}

template <typename T>
std::size_t leading(const BasicTensor<T>& t) {
  return t.rank() == 0 ? 1 : t.dim(0);
}

template <typename T>
std::size_t row_width(const BasicTensor<T>& t) {
  const std::size_t n = leading(t);
  return n == 0 ? 0 : t.numel() / n;
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// A_grad[m x k] += C_grad[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(const T* c, const T* b, T* a, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* crow = c + i * n;
    T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc{};
      for (std::size_t j = 0; j < n; ++j) acc += crow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// B_grad[k x n] += A[m x k]^T * C_grad[m x n]
template <typename T>
void gemm_tn(const T* a, const T* c, T* b, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{}) continue;
      T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * crow[j];
    }
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  // One branch keeps the function monotone in floating point; exp overflow
  // to +inf yields exactly 0.
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
T softplus_scalar(T x) {
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

// Shared plumbing for ops whose gradient is elementwise in one input.
template <typename T, typename Forward, typename Derivative>
BasicTensor<T> unary(const BasicTensor<T>& x, Forward fwd, Derivative deriv) {
  BasicTensor<T> out(x.shape());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i]);
  if (auto* tape = recording_tape<T>(x)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), on = out.node(), deriv] {
      if (on->grad.empty()) return;
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += on->grad[i] * deriv(xn->data[i], on->data[i]);
      }
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("add", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    out.set_requires_grad();
    tape->record([an = a.node(), bn = b.node(), on = out.node()] {
      if (on->grad.empty()) return;
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        auto& g = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    out.set_requires_grad();
    tape->record([an = a.node(), bn = b.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    out.set_requires_grad();
    tape->record([an = a.node(), bn = b.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return detail::unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T offset) {
  return detail::unary(
      x, [offset](T v) { return v + offset; }, [](T, T) { return T{1}; });
}

// x * s where s is a learnable single-value tensor.
template <typename T>
BasicTensor<T> scale_by(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  if (s.numel() != 1) throw DimensionError("scale_by: factor must hold one value, got " + shape_str(s.shape()));
  BasicTensor<T> out(x.shape());
  const T f = s[0];
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * f;
  if (auto* tape = detail::recording_tape<T>(x, s)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), sn = s.node(), on = out.node()] {
      if (on->grad.empty()) return;
      const T f = sn->data[0];
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * f;
      }
      if (sn->requires_grad) {
        T acc{};
        for (std::size_t i = 0; i < on->grad.size(); ++i) acc += on->grad[i] * xn->data[i];
        sn->ensure_grad()[0] += acc;
      }
    });
  }
  return out;
}

// x + s broadcast over every element, s a single-value tensor.
template <typename T>
BasicTensor<T> shift_by(const BasicTensor<T>& x, const BasicTensor<T>& s) {
  if (s.numel() != 1) throw DimensionError("shift_by: offset must hold one value, got " + shape_str(s.shape()));
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + s[0];
  if (auto* tape = detail::recording_tape<T>(x, s)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), sn = s.node(), on = out.node()] {
      if (on->grad.empty()) return;
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (sn->requires_grad) {
        T acc{};
        for (T v : on->grad) acc += v;
        sn->ensure_grad()[0] += acc;
      }
    });
  }
  return out;
}

// x[n x d] + bias[d] on every row.
template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  detail::require_rank("add_row", x, 2);
  if (bias.numel() != x.cols()) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " vs rows of " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  BasicTensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] + bias[c];
  if (auto* tape = detail::recording_tape<T>(x, bias)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), bn = bias.node(), on = out.node(), n, d] {
      if (on->grad.empty()) return;
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) g[c] += on->grad[r * d + c];
      }
    });
  }
  return out;
}

// Row r of x[n x d] multiplied by w[r]; w has n entries.
template <typename T>
BasicTensor<T> mul_rows(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  const std::size_t n = detail::leading(x), d = detail::row_width(x);
  if (w.numel() != n) {
    throw DimensionError("mul_rows: weights " + shape_str(w.shape()) + " vs rows of " + shape_str(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] * w[r];
  if (auto* tape = detail::recording_tape<T>(x, w)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), wn = w.node(), on = out.node(), n, d] {
      if (on->grad.empty()) return;
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) g[r * d + c] += on->grad[r * d + c] * wn->data[r];
      }
      if (wn->requires_grad) {
        auto& g = wn->ensure_grad();
        for (std::size_t r = 0; r < n; ++r) {
          T acc{};
          for (std::size_t c = 0; c < d; ++c) acc += on->grad[r * d + c] * xn->data[r * d + c];
          g[r] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::sigmoid_scalar(v); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v * detail::sigmoid_scalar(v); },
      [](T v, T) {
        const T s = detail::sigmoid_scalar(v);
        return s * (T{1} + v * (T{1} - s));
      });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!(x[i] > T{0})) throw DomainError("log: non-positive input " + std::to_string(static_cast<double>(x[i])));
  }
  return detail::unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& x) {
  return detail::unary(
      x, [](T v) { return detail::softplus_scalar(v); },
      [](T v, T) { return detail::sigmoid_scalar(v); });
}

// Identity forward; the result is detached so nothing flows back.
template <typename T>
BasicTensor<T> stop_gradient(const BasicTensor<T>& x) {
  return x.clone();
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T acc{};
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  auto out = BasicTensor<T>::scalar(acc);
  if (auto* tape = detail::recording_tape<T>(x)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), on = out.node()] {
      if (on->grad.empty()) return;
      auto& g = xn->ensure_grad();
      for (auto& v : g) v += on->grad[0];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

// mean(x^2) over every element.
template <typename T>
BasicTensor<T> mean_square(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean_square: empty tensor");
  T acc{};
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i] * x[i];
  const T inv = T{1} / static_cast<T>(x.numel());
  auto out = BasicTensor<T>::scalar(acc * inv);
  if (auto* tape = detail::recording_tape<T>(x)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), on = out.node(), inv] {
      if (on->grad.empty()) return;
      auto& g = xn->ensure_grad();
      const T go = on->grad[0] * T{2} * inv;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * xn->data[i];
    });
  }
  return out;
}

// Per-row mean of squares: [n x d] -> [n].
template <typename T>
BasicTensor<T> row_mean_square(const BasicTensor<T>& x) {
  detail::require_rank("row_mean_square", x, 2);
  const std::size_t n = x.rows(), d = x.cols();
  if (d == 0) throw DimensionError("row_mean_square: zero-width rows");
  const T inv = T{1} / static_cast<T>(d);
  BasicTensor<T> out(Shape{n});
  for (std::size_t r = 0; r < n; ++r) {
    T acc{};
    for (std::size_t c = 0; c < d; ++c) acc += x[r * d + c] * x[r * d + c];
    out[r] = acc * inv;
  }
  if (auto* tape = detail::recording_tape<T>(x)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), on = out.node(), n, d, inv] {
      if (on->grad.empty()) return;
      auto& g = xn->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        const T go = on->grad[r] * T{2} * inv;
        for (std::size_t c = 0; c < d; ++c) g[r * d + c] += go * xn->data[r * d + c];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& prediction, const BasicTensor<T>& target) {
  return mean_square(sub(prediction, target));
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
BasicTensor<T> concat_cols(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_rank("concat_cols", a, 2);
  detail::require_rank("concat_cols", b, 2);
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
  BasicTensor<T> out(Shape{n, p + q});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.ptr() + r * p, p, out.ptr() + r * (p + q));
    std::copy_n(b.ptr() + r * q, q, out.ptr() + r * (p + q) + p);
  }
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    out.set_requires_grad();
    tape->record([an = a.node(), bn = b.node(), on = out.node(), n, p, q] {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < p; ++c) g[r * p + c] += on->grad[r * (p + q) + c];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < q; ++c) g[r * q + c] += on->grad[r * (p + q) + p + c];
      }
    });
  }
  return out;
}

// Row t of the result is row t-1 of x; row 0 is zero.
template <typename T>
BasicTensor<T> shift_rows_down(const BasicTensor<T>& x) {
  detail::require_rank("shift_rows_down", x, 2);
  const std::size_t n = x.rows(), d = x.cols();
  BasicTensor<T> out(x.shape());
  if (n > 1) std::copy_n(x.ptr(), (n - 1) * d, out.ptr() + d);
  if (auto* tape = detail::recording_tape<T>(x)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), on = out.node(), n, d] {
      if (on->grad.empty() || n < 2) return;
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < (n - 1) * d; ++i) g[i] += on->grad[i + d];
    });
  }
  return out;
}

namespace detail {
inline void check_index_set(const char* op, std::span<const std::size_t> idx, std::size_t n) {
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) {
      throw IndexError(std::string(op) + ": index " + std::to_string(idx[i]) + " out of range for " +
                       std::to_string(n) + " rows");
    }
    if (i > 0 && idx[i] <= idx[i - 1]) {
      throw IndexError(std::string(op) + ": index set must be strictly ascending (duplicate or unsorted at " +
                       std::to_string(idx[i]) + ")");
    }
  }
}
}  // namespace detail

// Rows idx of x, in the order given. A rank-1 tensor is treated as width-1 rows.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> idx) {
  const std::size_t n = detail::leading(x), d = detail::row_width(x);
  detail::check_index_set("gather_rows", idx, n);
  Shape shape = x.shape();
  shape[0] = idx.size();
  BasicTensor<T> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.ptr() + idx[i] * d, d, out.ptr() + i * d);
  if (auto* tape = detail::recording_tape<T>(x)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), on = out.node(), ids = std::vector<std::size_t>(idx.begin(), idx.end()), d] {
      if (on->grad.empty()) return;
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) g[ids[i] * d + c] += on->grad[i * d + c];
    });
  }
  return out;
}

namespace detail {
template <typename T>
BasicTensor<T> scatter_impl(const char* op, const BasicTensor<T>& base, std::span<const std::size_t> idx,
                            const BasicTensor<T>& rows, bool accumulate) {
  const std::size_t n = leading(base), d = row_width(base);
  check_index_set(op, idx, n);
  if (leading(rows) != idx.size() || row_width(rows) != d) {
    throw DimensionError(std::string(op) + ": rows " + shape_str(rows.shape()) + " do not fit " +
                         std::to_string(idx.size()) + " rows of " + shape_str(base.shape()));
  }
  BasicTensor<T> out = base.clone();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    T* dst = out.ptr() + idx[i] * d;
    const T* src = rows.ptr() + i * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] = accumulate ? dst[c] + src[c] : src[c];
  }
  if (auto* tape = recording_tape<T>(base, rows)) {
    out.set_requires_grad();
    tape->record([bn = base.node(), rn = rows.node(), on = out.node(),
                  ids = std::vector<std::size_t>(idx.begin(), idx.end()), d, accumulate] {
      if (on->grad.empty()) return;
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        std::vector<char> replaced(on->grad.size() / std::max<std::size_t>(d, 1), 0);
        if (!accumulate)
          for (auto id : ids) replaced[id] = 1;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (!replaced[i / d]) g[i] += on->grad[i];
      }
      if (rn->requires_grad) {
        auto& g = rn->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t c = 0; c < d; ++c) g[i * d + c] += on->grad[ids[i] * d + c];
      }
    });
  }
  return out;
}
}  // namespace detail

// Copy of base with rows idx replaced by `rows`.
template <typename T>
BasicTensor<T> scatter_rows(const BasicTensor<T>& base, std::span<const std::size_t> idx,
                            const BasicTensor<T>& rows) {
  return detail::scatter_impl("scatter_rows", base, idx, rows, false);
}

// Copy of base with `rows` added onto rows idx; all other rows bit-identical.
template <typename T>
BasicTensor<T> scatter_add_rows(const BasicTensor<T>& base, std::span<const std::size_t> idx,
                                const BasicTensor<T>& rows) {
  return detail::scatter_impl("scatter_add_rows", base, idx, rows, true);
}

// ---------------------------------------------------------------------------
// Linear algebra and normalisation

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out(Shape{m, n});
  detail::gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (auto* tape = detail::recording_tape<T>(a, b)) {
    out.set_requires_grad();
    tape->record([an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
      if (on->grad.empty()) return;
      if (an->requires_grad) detail::gemm_nt(on->grad.data(), bn->data.data(), an->ensure_grad().data(), m, k, n);
      if (bn->requires_grad) detail::gemm_tn(an->data.data(), on->grad.data(), bn->ensure_grad().data(), m, k, n);
    });
  }
  return out;
}

// Row-wise softmax of x + mask. Entries whose mask is at or below half the
// sentinel are masked and come out exactly zero. An empty mask means no mask.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x, const BasicTensor<T>& mask) {
  detail::require_rank("softmax_rows", x, 2);
  const bool masked = mask.numel() != 0;
  if (masked) detail::require_same_shape("softmax_rows", x, mask);
  const std::size_t n = x.rows(), d = x.cols();
  const T cut = static_cast<T>(kMaskSentinel / 2);
  BasicTensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    T hi = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < d; ++c) {
      if (masked && mask[r * d + c] <= cut) continue;
      any = true;
      hi = std::max(hi, x[r * d + c] + (masked ? mask[r * d + c] : T{}));
    }
    if (!any) throw DomainError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    T z{};
    for (std::size_t c = 0; c < d; ++c) {
      if (masked && mask[r * d + c] <= cut) continue;
      const T e = std::exp(x[r * d + c] + (masked ? mask[r * d + c] : T{}) - hi);
      out[r * d + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= z;
  }
  if (auto* tape = detail::recording_tape<T>(x)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), on = out.node(), n, d] {
      if (on->grad.empty()) return;
      auto& g = xn->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        T dot{};
        for (std::size_t c = 0; c < d; ++c) dot += on->grad[r * d + c] * on->data[r * d + c];
        for (std::size_t c = 0; c < d; ++c) g[r * d + c] += on->data[r * d + c] * (on->grad[r * d + c] - dot);
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  return softmax_rows(x, BasicTensor<T>(Shape{0}));
}

// y = x / sqrt(mean(x^2) + 1e-6) * gain, normalised over the last axis.
template <typename T>
BasicTensor<T> rms_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain) {
  if (x.rank() == 0 || x.cols() == 0) throw DimensionError("rms_norm: zero-length last axis in " + shape_str(x.shape()));
  const std::size_t d = x.cols(), n = x.numel() / d;
  if (gain.numel() != d) {
    throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) + " vs input " + shape_str(x.shape()));
  }
  BasicTensor<T> out(x.shape());
  std::vector<T> inv_rms(n);
  for (std::size_t r = 0; r < n; ++r) {
    T ms{};
    for (std::size_t c = 0; c < d; ++c) ms += x[r * d + c] * x[r * d + c];
    ms /= static_cast<T>(d);
    inv_rms[r] = T{1} / std::sqrt(ms + static_cast<T>(kRmsEpsilon));
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] * inv_rms[r] * gain[c];
  }
  if (auto* tape = detail::recording_tape<T>(x, gain)) {
    out.set_requires_grad();
    tape->record([xn = x.node(), gn = gain.node(), on = out.node(), inv_rms = std::move(inv_rms), n, d] {
      if (on->grad.empty()) return;
      const auto& xs = xn->data;
      const auto& gs = gn->data;
      const auto& go = on->grad;
      if (gn->requires_grad) {
        auto& g = gn->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) g[c] += go[r * d + c] * xs[r * d + c] * inv_rms[r];
      }
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (std::size_t r = 0; r < n; ++r) {
          const T ir = inv_rms[r];
          T dot{};
          for (std::size_t c = 0; c < d; ++c) dot += go[r * d + c] * gs[c] * xs[r * d + c];
          const T k = ir * ir * ir * dot / static_cast<T>(d);
          for (std::size_t c = 0; c < d; ++c) g[r * d + c] += ir * gs[c] * go[r * d + c] - k * xs[r * d + c];
        }
      }
    });
  }
  return out;
}

// (silu(x W_a) * (x W_b)) W_out
template <typename T>
BasicTensor<T> swiglu_ffn(const BasicTensor<T>& x, const BasicTensor<T>& w_in_a, const BasicTensor<T>& w_in_b,
                          const BasicTensor<T>& w_out) {
  if (w_in_a.shape() != w_in_b.shape() || w_in_a.rank() != 2 || w_out.rank() != 2 ||
      w_out.dim(0) != w_in_a.dim(1)) {
    throw DimensionError("swiglu_ffn: weights " + shape_str(w_in_a.shape()) + ", " + shape_str(w_in_b.shape()) +
                         ", " + shape_str(w_out.shape()) + " are inconsistent");
  }
  return matmul(mul(silu(matmul(x, w_in_a)), matmul(x, w_in_b)), w_out);
}

// ---------------------------------------------------------------------------
// Attention

// Multi-head scaled dot-product attention with a causal mask. Queries are the
// last q.rows() positions of the m key/value positions, so query i may attend
// to keys j <= i + (m - n). With n == m this is ordinary causal
// self-attention; with n == 1 it is a single decoding step against a cache.
// `score_pairs`, when given, accumulates the number of (query, key) scores
// evaluated per head.
template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                                std::size_t heads, std::uint64_t* score_pairs = nullptr) {
  detail::require_rank("causal_attention", q, 2);
  detail::require_same_shape("causal_attention", k, v);
  detail::require_rank("causal_attention", k, 2);
  const std::size_t n = q.rows(), m = k.rows(), d = q.cols();
  if (k.cols() != d) throw DimensionError("causal_attention: q " + shape_str(q.shape()) + " vs k " + shape_str(k.shape()));
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  if (n > m) throw DimensionError("causal_attention: more queries than keys");
  const std::size_t dh = d / heads, offset = m - n;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(dh));

  BasicTensor<T> out(Shape{n, d});
  // probs[h][i][j], j in [0, i + offset]
  std::vector<T> probs(heads * n * m, T{});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t visible = i + offset + 1;
      T* p = probs.data() + (h * n + i) * m;
      const T* qi = q.ptr() + i * d + h * dh;
      T hi = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        const T* kj = k.ptr() + j * d + h * dh;
        T s{};
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        p[j] = s * inv_scale;
        hi = std::max(hi, p[j]);
      }
      T z{};
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] = std::exp(p[j] - hi);
        z += p[j];
      }
      T* oi = out.ptr() + i * d + h * dh;
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] /= z;
        const T* vj = v.ptr() + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
      }
    }
  }
  if (score_pairs != nullptr) *score_pairs += static_cast<std::uint64_t>(n) * (offset + 1) + n * (n - 1) / 2;

  if (auto* tape = detail::recording_tape<T>(q, k, v)) {
    out.set_requires_grad();
    tape->record([qn = q.node(), kn = k.node(), vn = v.node(), on = out.node(), probs = std::move(probs), n, m, d,
                  heads, dh, offset, inv_scale] {
      if (on->grad.empty()) return;
      std::vector<T> scratch_q(n * d, T{}), scratch_k(m * d, T{}), scratch_v(m * d, T{});
      std::vector<T> dp(m);
      const auto& go = on->grad;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t visible = i + offset + 1;
          const T* p = probs.data() + (h * n + i) * m;
          const T* goi = go.data() + i * d + h * dh;
          T dot{};
          for (std::size_t j = 0; j < visible; ++j) {
            const T* vj = vn->data.data() + j * d + h * dh;
            T* gvj = scratch_v.data() + j * d + h * dh;
            T s{};
            for (std::size_t c = 0; c < dh; ++c) {
              s += goi[c] * vj[c];
              gvj[c] += p[j] * goi[c];
            }
            dp[j] = s;
            dot += s * p[j];
          }
          const T* qi = qn->data.data() + i * d + h * dh;
          T* gqi = scratch_q.data() + i * d + h * dh;
          for (std::size_t j = 0; j < visible; ++j) {
            const T ds = p[j] * (dp[j] - dot) * inv_scale;
            if (ds == T{}) continue;
            const T* kj = kn->data.data() + j * d + h * dh;
            T* gkj = scratch_k.data() + j * d + h * dh;
            for (std::size_t c = 0; c < dh; ++c) {
              gqi[c] += ds * kj[c];
              gkj[c] += ds * qi[c];
            }
          }
        }
      }
      auto flush = [](auto& node, const std::vector<T>& s) {
        if (!node->requires_grad) return;
        auto& g = node->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s[i];
      };
      flush(qn, scratch_q);
      flush(kn, scratch_k);
      flush(vn, scratch_v);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding and losses

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids) {
  detail::require_rank("embedding", table, 2);
  const std::size_t vocab = table.rows(), d = table.cols();
  BasicTensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InputError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(table.ptr() + static_cast<std::size_t>(ids[i]) * d, d, out.ptr() + i * d);
  }
  if (auto* tape = detail::recording_tape<T>(table)) {
    out.set_requires_grad();
    tape->record([tn = table.node(), on = out.node(), ids = std::vector<int>(ids.begin(), ids.end()), d] {
      if (on->grad.empty()) return;
      auto& g = tn->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) g[static_cast<std::size_t>(ids[i]) * d + c] += on->grad[i * d + c];
    });
  }
  return out;
}

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  detail::require_rank("cross_entropy", logits, 2);
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + shape_str(logits.shape()));
  }
  if (n == 0) throw DimensionError("cross_entropy: no rows");
  std::vector<T> probs(n * v);
  T total{};
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw InputError("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " + std::to_string(v));
    }
    const T* row = logits.ptr() + r * v;
    const T hi = *std::max_element(row, row + v);
    T z{};
    for (std::size_t c = 0; c < v; ++c) {
      probs[r * v + c] = std::exp(row[c] - hi);
      z += probs[r * v + c];
    }
    for (std::size_t c = 0; c < v; ++c) probs[r * v + c] /= z;
    total += -(row[targets[r]] - hi - std::log(z));
  }
  auto out = BasicTensor<T>::scalar(total / static_cast<T>(n));
  if (auto* tape = detail::recording_tape<T>(logits)) {
    out.set_requires_grad();
    tape->record([ln = logits.node(), on = out.node(), probs = std::move(probs),
                  tg = std::vector<int>(targets.begin(), targets.end()), n, v] {
      if (on->grad.empty()) return;
      auto& g = ln->ensure_grad();
      const T s = on->grad[0] / static_cast<T>(n);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < v; ++c) g[r * v + c] += s * probs[r * v + c];
        g[r * v + static_cast<std::size_t>(tg[r])] -= s;
      }
    });
  }
  return out;
}

// Mean binary cross-entropy between sigmoid(logits) and 0/1 targets.
template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& targets) {
  if (logits.numel() != targets.numel()) {
    throw DimensionError("bce_with_logits: " + shape_str(logits.shape()) + " vs " + shape_str(targets.shape()));
  }
  const std::size_t n = logits.numel();
  if (n == 0) throw DimensionError("bce_with_logits: empty input");
  T total{};
  for (std::size_t i = 0; i < n; ++i) total += detail::softplus_scalar(logits[i]) - targets[i] * logits[i];
  auto out = BasicTensor<T>::scalar(total / static_cast<T>(n));
  if (auto* tape = detail::recording_tape<T>(logits)) {
    out.set_requires_grad();
    tape->record([ln = logits.node(), tn = targets.node(), on = out.node(), n] {
      if (on->grad.empty()) return;
      auto& g = ln->ensure_grad();
      const T s = on->grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) g[i] += s * (detail::sigmoid_scalar(ln->data[i]) - tn->data[i]);
    });
  }
  return out;
}

}  // namespace sroute
