#pragma once

#include <algorithm>
#include <cmath>

#include "statuskt/autodiff/ops.hpp"

namespace statuskt::ad {

/// Probability clamp applied inside BCE so log() never sees 0 or 1.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// A masked loss together with the number of positions that supervised it.
/// With no supervised positions the value is exactly 0 and `empty()` is true.
template <typename T>
struct MaskedLoss {
  Tensor<T> value;
  std::size_t count = 0;

  bool empty() const { return count == 0; }
};

namespace detail {

template <typename T>
std::size_t mask_count(const Tensor<T>& mask) {
  std::size_t n = 0;
  for (T m : mask.data()) n += (m != T(0));
  return n;
}

}  // namespace detail

/// Binary cross-entropy, -mean over masked positions of y log p + (1-y) log(1-p),
/// with p clamped to [eps, 1-eps]. `targets` and `mask` are constants.
template <typename T>
MaskedLoss<T> bce(const Tensor<T>& targets, const Tensor<T>& probs, const Tensor<T>& mask) {
  if (targets.shape() != probs.shape()) detail::shape_mismatch("bce", targets.shape(), probs.shape());
  if (mask.shape() != probs.shape()) detail::shape_mismatch("bce", mask.shape(), probs.shape());
  const T eps = T(kProbabilityEpsilon);
  auto y = targets.data();
  auto p = probs.data();
  auto m = mask.data();
  T total = 0, den = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] == T(0)) continue;
    const T pc = std::clamp(p[i], eps, T(1) - eps);
    total -= m[i] * (y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc));
    den += m[i];
  }
  const T denom = std::max(den, T(1));
  std::vector<T> yv(y.begin(), y.end()), mv(m.begin(), m.end());
  auto value = detail::make_result<T>(
      {1}, {total / denom}, "bce", {probs.node_ptr()},
      [yv = std::move(yv), mv = std::move(mv), denom, eps](Node<T>& self) {
        Node<T>& pp = detail::parent(self, 0);
        pp.ensure_grad();
        const T g = self.grad[0] / denom;
        for (std::size_t i = 0; i < mv.size(); ++i) {
          if (mv[i] == T(0)) continue;
          const T x = pp.value[i];
          if (x < eps || x > T(1) - eps) continue;  // clamped: flat
          pp.grad[i] += g * mv[i] * (-(yv[i] / x) + (T(1) - yv[i]) / (T(1) - x));
        }
      });
  return {std::move(value), detail::mask_count(mask)};
}

/// Sum of mask * (target - pred)^2 over max(sum of mask, 1).
template <typename T>
MaskedLoss<T> masked_mse(const Tensor<T>& targets, const Tensor<T>& preds, const Tensor<T>& mask) {
  if (targets.shape() != preds.shape()) detail::shape_mismatch("masked_mse", targets.shape(), preds.shape());
  if (mask.shape() != preds.shape()) detail::shape_mismatch("masked_mse", mask.shape(), preds.shape());
  auto t = targets.data();
  auto p = preds.data();
  auto m = mask.data();
  T total = 0, den = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] == T(0)) continue;
    const T r = t[i] - p[i];
    total += m[i] * r * r;
    den += m[i];
  }
  const T denom = std::max(den, T(1));
  std::vector<T> tv(t.begin(), t.end()), mv(m.begin(), m.end());
  auto value = detail::make_result<T>({1}, {total / denom}, "masked_mse", {preds.node_ptr()},
                                      [tv = std::move(tv), mv = std::move(mv), denom](Node<T>& self) {
                                        Node<T>& pp = detail::parent(self, 0);
                                        pp.ensure_grad();
                                        const T g = self.grad[0] / denom;
                                        for (std::size_t i = 0; i < mv.size(); ++i) {
                                          if (mv[i] == T(0)) continue;
                                          pp.grad[i] += g * mv[i] * T(-2) * (tv[i] - pp.value[i]);
                                        }
                                      });
  return {std::move(value), detail::mask_count(mask)};
}

}  // namespace statuskt::ad
