#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "statuskt/autodiff/tensor.hpp"

namespace statuskt::ad {

/// Worst disagreement between analytic and central-difference gradients.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
/// the floor keeps near-zero gradients from turning round-off into large ratios.
struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "<param>[<index>]"
  std::size_t entries = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-4;
  double floor = 1e-3;
};

/// Compares d(loss)/d(param) from one backward pass with central differences
/// (f(x+h) - f(x-h)) / 2h for every entry of every named parameter. `loss`
/// must rebuild the graph from the current parameter values on each call and
/// must be deterministic.
inline GradCheckReport check_gradients(const std::function<Tensor<double>()>& loss,
                                       const std::vector<std::pair<std::string, Tensor<double>>>& params,
                                       GradCheckOptions options = {}) {
  for (auto [name, p] : params) p.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, p] : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(p.size(), 0.0));
  }

  GradCheckReport report;
  for (std::size_t j = 0; j < params.size(); ++j) {
    Tensor<double> p = params[j].second;
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = loss().item();
      values[i] = saved - options.step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[j][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel >= report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = params[j].first + "[" + std::to_string(i) + "]";
      }
      ++report.entries;
    }
  }
  for (auto [name, p] : params) p.zero_grad();
  return report;
}

}  // namespace statuskt::ad
