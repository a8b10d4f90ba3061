#pragma once

#include <cmath>
#include <vector>

#include "statuskt/autodiff/tensor.hpp"

namespace statuskt::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias-corrected moments. Parameters without a gradient buffer are
/// treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      first_.emplace_back(p.size(), T(0));
      second_.emplace_back(p.size(), T(0));
    }
  }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    const T b1 = T(options_.beta1), b2 = T(options_.beta2);
    for (std::size_t j = 0; j < params_.size(); ++j) {
      auto& p = params_[j];
      auto values = p.mutable_data();
      const bool has = p.has_grad();
      auto grads = p.grad();
      auto& m = first_[j];
      auto& v = second_[j];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const T g = has ? grads[i] : T(0);
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const double m_hat = static_cast<double>(m[i]) / c1;
        const double v_hat = static_cast<double>(v[i]) / c2;
        values[i] -= T(options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t steps() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<T>& first_moment(std::size_t j) const { return first_[j]; }
  const std::vector<T>& second_moment(std::size_t j) const { return second_[j]; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::size_t steps_ = 0;
};

}  // namespace statuskt::ad
