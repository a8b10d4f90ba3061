#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "statuskt/autodiff/tensor.hpp"
#include "statuskt/random.hpp"

namespace statuskt::ad {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

/// Elementwise binary op where one operand may repeat over the leading axes of
/// the other (its shape is a suffix of the other's), e.g. adding a bias row.
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, DA da, DB db) {
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape())) shape_mismatch(op, a.shape(), b.shape());
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = numel(out_shape);
  const std::size_t na = a.size(), nb = b.size();
  std::vector<T> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % na], bv[i % nb]);
  return make_result<T>(out_shape, std::move(out), op, {a.node_ptr(), b.node_ptr()},
                        [n, na, nb, da, db](Node<T>& self) {
                          Node<T>& pa = parent(self, 0);
                          Node<T>& pb = parent(self, 1);
                          if (pa.requires_grad) {
                            pa.ensure_grad();
                            for (std::size_t i = 0; i < n; ++i)
                              pa.grad[i % na] += self.grad[i] * da(pa.value[i % na], pb.value[i % nb]);
                          }
                          if (pb.requires_grad) {
                            pb.ensure_grad();
                            for (std::size_t i = 0; i < n; ++i)
                              pb.grad[i % nb] += self.grad[i] * db(pa.value[i % na], pb.value[i % nb]);
                          }
                        });
}

/// Elementwise unary op whose derivative is expressed through input x and output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& a, const char* op, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.size();
  std::vector<T> out(n);
  auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  return make_result<T>(a.shape(), std::move(out), op, {a.node_ptr()}, [n, deriv](Node<T>& self) {
    Node<T>& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * deriv(pa.value[i], self.value[i]);
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::broadcast_binary(
      a, b, "multiply", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return multiply(a, b); }

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary(a, "scale", [c](T x) { return c * x; }, [c](T, T) { return c; });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      a, "sigmoid", [](T x) { return detail::stable_sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

/// Clips to [lo, hi]; gradient passes only where the input was inside the range.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary(
      a, "clamp", [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t cols = a.dim(-1);
  const std::size_t rows = a.size() / cols;
  std::vector<T> out(a.size());
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * cols;
    T* y = out.data() + r * cols;
    const T mx = *std::max_element(x, x + cols);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return detail::make_result<T>(a.shape(), std::move(out), "softmax", {a.node_ptr()}, [rows, cols](Node<T>& self) {
    Node<T>& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * cols;
      const T* dy = self.grad.data() + r * cols;
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      T* dx = pa.grad.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
    }
  });
}

/// Inverted dropout: kept activations are scaled by 1/(1 - rate). Identity when
/// not training or when rate is zero.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<T> mask(a.size());
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : T(0);
  std::vector<T> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * mask[i];
  return detail::make_result<T>(a.shape(), std::move(out), "dropout", {a.node_ptr()},
                                [mask = std::move(mask)](Node<T>& self) {
                                  Node<T>& pa = detail::parent(self, 0);
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < mask.size(); ++i) pa.grad[i] += self.grad[i] * mask[i];
                                });
}

// ---------------------------------------------------------------------------
// Contractions
// ---------------------------------------------------------------------------

/// a[..., k] x b[k, n] -> [..., n]; leading axes of `a` are flattened into rows.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.dim(-1) != b.dim(0)) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t k = b.dim(0), n = b.dim(1), m = a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(m * n);
  using detail::ConstMatMap;
  using detail::MatMap;
  MatMap<T>(out.data(), m, n).noalias() = ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  return detail::make_result<T>(std::move(out_shape), std::move(out), "matmul", {a.node_ptr(), b.node_ptr()},
                                [m, k, n](Node<T>& self) {
                                  Node<T>& pa = detail::parent(self, 0);
                                  Node<T>& pb = detail::parent(self, 1);
                                  ConstMatMap<T> dc(self.grad.data(), m, n);
                                  if (pa.requires_grad) {
                                    pa.ensure_grad();
                                    MatMap<T>(pa.grad.data(), m, k).noalias() +=
                                        dc * ConstMatMap<T>(pb.value.data(), k, n).transpose();
                                  }
                                  if (pb.requires_grad) {
                                    pb.ensure_grad();
                                    MatMap<T>(pb.grad.data(), k, n).noalias() +=
                                        ConstMatMap<T>(pa.value.data(), m, k).transpose() * dc;
                                  }
                                });
}

/// Batched product over identical leading axes: a[..., m, k] x b[..., k, n],
/// or b[..., n, k] transposed when `transpose_b` is set.
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.rank() < 3 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
    detail::shape_mismatch("batched_matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t n = transpose_b ? b.dim(-2) : b.dim(-1);
  if ((transpose_b ? b.dim(-1) : b.dim(-2)) != k) detail::shape_mismatch("batched_matmul", a.shape(), b.shape());
  const std::size_t batches = a.size() / (m * k);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(batches * m * n);
  using detail::ConstMatMap;
  using detail::MatMap;
  const std::size_t bs = k * n;  // elements per b matrix either way
  for (std::size_t i = 0; i < batches; ++i) {
    ConstMatMap<T> am(a.data().data() + i * m * k, m, k);
    MatMap<T> cm(out.data() + i * m * n, m, n);
    if (transpose_b)
      cm.noalias() = am * ConstMatMap<T>(b.data().data() + i * bs, n, k).transpose();
    else
      cm.noalias() = am * ConstMatMap<T>(b.data().data() + i * bs, k, n);
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "batched_matmul", {a.node_ptr(), b.node_ptr()},
      [batches, m, k, n, bs, transpose_b](Node<T>& self) {
        Node<T>& pa = detail::parent(self, 0);
        Node<T>& pb = detail::parent(self, 1);
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (std::size_t i = 0; i < batches; ++i) {
          ConstMatMap<T> dc(self.grad.data() + i * m * n, m, n);
          if (pa.requires_grad) {
            MatMap<T> da(pa.grad.data() + i * m * k, m, k);
            if (transpose_b)
              da.noalias() += dc * ConstMatMap<T>(pb.value.data() + i * bs, n, k);
            else
              da.noalias() += dc * ConstMatMap<T>(pb.value.data() + i * bs, k, n).transpose();
          }
          if (pb.requires_grad) {
            ConstMatMap<T> av(pa.value.data() + i * m * k, m, k);
            if (transpose_b)
              MatMap<T>(pb.grad.data() + i * bs, n, k).noalias() += dc.transpose() * av;
            else
              MatMap<T>(pb.grad.data() + i * bs, k, n).noalias() += av.transpose() * dc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) detail::shape_mismatch("reshape", a.shape(), shape);
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), "reshape", {a.node_ptr()}, [](Node<T>& self) {
    Node<T>& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

/// Reorders axes: output axis i is input axis `axes[i]`.
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  std::vector<bool> used(r, false);
  if (axes.size() != r) throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for " + to_string(a.shape()));
  for (auto ax : axes) {
    if (ax >= r || used[ax]) throw ShapeError("permute: invalid axis list for " + to_string(a.shape()));
    used[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[axes[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * a.shape()[i + 1];
  // src[i] = flat input index of flat output element i.
  std::vector<std::size_t> src(a.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_strides[axes[d]];
    src[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<T> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[src[i]];
  return detail::make_result<T>(std::move(out_shape), std::move(out), "permute", {a.node_ptr()},
                                [src = std::move(src)](Node<T>& self) {
                                  Node<T>& pa = detail::parent(self, 0);
                                  pa.ensure_grad();
                                  for (std::size_t i = 0; i < src.size(); ++i) pa.grad[src[i]] += self.grad[i];
                                });
}

/// Joins tensors along the last axis; leading axes must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& lead = parts.front().shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != lead.size() || !std::equal(lead.begin(), lead.end() - 1, p.shape().begin()))
      detail::shape_mismatch("concat", lead, p.shape());
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  const std::size_t rows = parts.front().size() / widths.front();
  std::vector<T> out(rows * total);
  std::size_t col = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    auto v = parts[j].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[j], widths[j], out.data() + r * total + col);
    col += widths[j];
  }
  Shape out_shape = lead;
  out_shape.back() = total;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) parents.push_back(p.node_ptr());
  return detail::make_result<T>(std::move(out_shape), std::move(out), "concat", std::move(parents),
                                [rows, total, widths](Node<T>& self) {
                                  std::size_t c0 = 0;
                                  for (std::size_t j = 0; j < widths.size(); ++j) {
                                    Node<T>& p = detail::parent(self, j);
                                    if (p.requires_grad) {
                                      p.ensure_grad();
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t c = 0; c < widths[j]; ++c)
                                          p.grad[r * widths[j] + c] += self.grad[r * total + c0 + c];
                                    }
                                    c0 += widths[j];
                                  }
                                });
}

/// Columns [begin, end) of the last axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  const std::size_t cols = a.dim(-1);
  if (begin >= end || end > cols)
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     to_string(a.shape()));
  const std::size_t rows = a.size() / cols, w = end - begin;
  std::vector<T> out(rows * w);
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.data() + r * cols + begin, w, out.data() + r * w);
  Shape out_shape = a.shape();
  out_shape.back() = w;
  return detail::make_result<T>(std::move(out_shape), std::move(out), "slice", {a.node_ptr()},
                                [rows, cols, begin, w](Node<T>& self) {
                                  Node<T>& pa = detail::parent(self, 0);
                                  pa.ensure_grad();
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t c = 0; c < w; ++c)
                                      pa.grad[r * cols + begin + c] += self.grad[r * w + c];
                                });
}

/// a[:, step, :] of a [batch, time, features] tensor.
template <typename T>
Tensor<T> select_step(const Tensor<T>& a, std::size_t step) {
  if (a.rank() != 3 || step >= a.dim(1))
    throw ShapeError("select_step " + std::to_string(step) + " invalid for " + to_string(a.shape()));
  const std::size_t batch = a.dim(0), time = a.dim(1), feat = a.dim(2);
  std::vector<T> out(batch * feat);
  auto av = a.data();
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(av.data() + (b * time + step) * feat, feat, out.data() + b * feat);
  return detail::make_result<T>({batch, feat}, std::move(out), "select_step", {a.node_ptr()},
                                [batch, time, feat, step](Node<T>& self) {
                                  Node<T>& pa = detail::parent(self, 0);
                                  pa.ensure_grad();
                                  for (std::size_t b = 0; b < batch; ++b)
                                    for (std::size_t f = 0; f < feat; ++f)
                                      pa.grad[(b * time + step) * feat + f] += self.grad[b * feat + f];
                                });
}

/// Stacks `time` tensors of shape [batch, features] into [batch, time, features].
template <typename T>
Tensor<T> stack_steps(const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) throw ShapeError("stack_steps: no inputs");
  const Shape& s0 = steps.front().shape();
  if (s0.size() != 2) throw ShapeError("stack_steps expects [batch, features], got " + to_string(s0));
  for (const auto& s : steps)
    if (s.shape() != s0) detail::shape_mismatch("stack_steps", s0, s.shape());
  const std::size_t batch = s0[0], feat = s0[1], time = steps.size();
  std::vector<T> out(batch * time * feat);
  for (std::size_t t = 0; t < time; ++t) {
    auto v = steps[t].data();
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(v.data() + b * feat, feat, out.data() + (b * time + t) * feat);
  }
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& s : steps) parents.push_back(s.node_ptr());
  return detail::make_result<T>({batch, time, feat}, std::move(out), "stack_steps", std::move(parents),
                                [batch, time, feat](Node<T>& self) {
                                  for (std::size_t t = 0; t < time; ++t) {
                                    Node<T>& p = detail::parent(self, t);
                                    if (!p.requires_grad) continue;
                                    p.ensure_grad();
                                    for (std::size_t b = 0; b < batch; ++b)
                                      for (std::size_t f = 0; f < feat; ++f)
                                        p.grad[b * feat + f] += self.grad[(b * time + t) * feat + f];
                                  }
                                });
}

/// Gathers rows of `table` [vocab, dim]; the result has shape index_shape + [dim].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> indices, Shape index_shape) {
  if (table.rank() != 2) throw ShapeError("embedding table must be 2-D, got " + to_string(table.shape()));
  if (numel(index_shape) != indices.size())
    throw ShapeError("embedding_lookup: " + std::to_string(indices.size()) + " indices for shape " +
                     to_string(index_shape));
  const std::size_t vocab = table.dim(0), dim = table.dim(1);
  std::vector<int> idx(indices.begin(), indices.end());
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= vocab)
      throw ShapeError("embedding index " + std::to_string(i) + " outside vocabulary of " + std::to_string(vocab));
  }
  std::vector<T> out(idx.size() * dim);
  auto tv = table.data();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[r]) * dim, dim, out.data() + r * dim);
  Shape out_shape = std::move(index_shape);
  out_shape.push_back(dim);
  return detail::make_result<T>(std::move(out_shape), std::move(out), "embedding_lookup", {table.node_ptr()},
                                [idx = std::move(idx), dim](Node<T>& self) {
                                  Node<T>& pt = detail::parent(self, 0);
                                  pt.ensure_grad();
                                  for (std::size_t r = 0; r < idx.size(); ++r) {
                                    T* dst = pt.grad.data() + static_cast<std::size_t>(idx[r]) * dim;
                                    const T* src = self.grad.data() + r * dim;
                                    for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T x : a.data()) total += x;
  return detail::make_result<T>({1}, {total}, "sum", {a.node_ptr()}, [](Node<T>& self) {
    Node<T>& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

/// Sum of mask * a over max(sum of mask, 1): a mean over the selected entries
/// that is 0 (never NaN) when nothing is selected. `mask` is a constant.
template <typename T>
Tensor<T> masked_mean(const Tensor<T>& a, const Tensor<T>& mask) {
  if (a.shape() != mask.shape()) detail::shape_mismatch("masked_mean", a.shape(), mask.shape());
  T num = 0, den = 0;
  auto av = a.data();
  auto mv = mask.data();
  for (std::size_t i = 0; i < av.size(); ++i) {
    num += mv[i] * av[i];
    den += mv[i];
  }
  const T denom = std::max(den, T(1));
  std::vector<T> m(mv.begin(), mv.end());
  return detail::make_result<T>({1}, {num / denom}, "masked_mean", {a.node_ptr()},
                                [m = std::move(m), denom](Node<T>& self) {
                                  Node<T>& pa = detail::parent(self, 0);
                                  pa.ensure_grad();
                                  const T g = self.grad[0] / denom;
                                  for (std::size_t i = 0; i < m.size(); ++i) pa.grad[i] += g * m[i];
                                });
}

}  // namespace statuskt::ad
