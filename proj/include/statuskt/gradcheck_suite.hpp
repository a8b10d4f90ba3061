#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "statuskt/autodiff.hpp"
#include "statuskt/dataset.hpp"
#include "statuskt/models.hpp"
#include "statuskt/training.hpp"

namespace statuskt::gradcheck {

using ad::Tensor;

inline constexpr double kTolerance = 1e-4;

struct CaseResult {
  std::string name;
  ad::GradCheckReport report;
};

struct SuiteResult {
  std::vector<CaseResult> cases;
  double seconds = 0.0;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& c : cases) m = std::max(m, c.report.max_rel_error);
    return m;
  }
  bool passed(double tolerance = kTolerance) const {
    for (const auto& c : cases)
      if (!c.report.passed(tolerance)) return false;
    return !cases.empty();
  }
};

namespace detail {

inline Tensor<double> random_tensor(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
  std::vector<double> data(ad::numel(shape));
  for (auto& x : data) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(data), requires_grad);
}

// Reduces an op's output to a scalar through fixed random weights, so every
// output entry reaches the loss with a distinct coefficient.
inline Tensor<double> weighted_sum(const Tensor<double>& out, Rng& rng) {
  auto w = random_tensor(rng, out.shape(), -1.0, 1.0, false);
  return ad::sum(ad::multiply(out, w));
}

using Params = std::vector<std::pair<std::string, Tensor<double>>>;

struct OpCase {
  std::string name;
  std::function<Tensor<double>(const Params&)> build;
  Params params;
};

}  // namespace detail

/// Every differentiable op on small random operands drawn from `seed`.
inline std::vector<CaseResult> check_ops(std::uint64_t seed) {
  using detail::random_tensor;
  Rng rng(seed);
  std::vector<detail::OpCase> cases;
  auto unary = [&](std::string name, ad::Shape shape, std::function<Tensor<double>(const Tensor<double>&)> f,
                   double lo = -1.0, double hi = 1.0) {
    cases.push_back({std::move(name), [f](const detail::Params& p) { return f(p[0].second); },
                     {{"a", random_tensor(rng, std::move(shape), lo, hi)}}});
  };
  auto binary = [&](std::string name, ad::Shape sa, ad::Shape sb,
                    std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)> f) {
    cases.push_back({std::move(name), [f](const detail::Params& p) { return f(p[0].second, p[1].second); },
                     {{"a", random_tensor(rng, std::move(sa))}, {"b", random_tensor(rng, std::move(sb))}}});
  };

  binary("add", {3, 4}, {3, 4}, [](auto& a, auto& b) { return ad::add(a, b); });
  binary("add_broadcast", {2, 3, 4}, {4}, [](auto& a, auto& b) { return ad::add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](auto& a, auto& b) { return ad::sub(a, b); });
  binary("multiply", {3, 4}, {3, 4}, [](auto& a, auto& b) { return ad::multiply(a, b); });
  binary("multiply_broadcast", {2, 3, 4}, {3, 4}, [](auto& a, auto& b) { return ad::multiply(a, b); });
  binary("matmul", {3, 4}, {4, 5}, [](auto& a, auto& b) { return ad::matmul(a, b); });
  binary("matmul_batched_lhs", {2, 3, 4}, {4, 2}, [](auto& a, auto& b) { return ad::matmul(a, b); });
  binary("batched_matmul", {2, 3, 4}, {2, 4, 5}, [](auto& a, auto& b) { return ad::batched_matmul(a, b); });
  binary("batched_matmul_transposed", {2, 3, 4}, {2, 5, 4},
         [](auto& a, auto& b) { return ad::batched_matmul(a, b, true); });
  binary("concat", {2, 3}, {2, 4}, [](auto& a, auto& b) { return ad::concat<double>({a, b}); });
  unary("scale", {3, 4}, [](auto& a) { return ad::scale(a, 2.5); });
  unary("sigmoid", {3, 4}, [](auto& a) { return ad::sigmoid(a); }, -3.0, 3.0);
  unary("tanh", {3, 4}, [](auto& a) { return ad::tanh(a); }, -2.0, 2.0);
  // Operands stay clear of the clamp bounds, where the derivative jumps.
  unary("clamp", {3, 4}, [](auto& a) { return ad::clamp(a, -5.0, 5.0); });
  unary("softmax", {3, 5}, [](auto& a) { return ad::softmax(a); }, -2.0, 2.0);
  unary("dropout", {4, 6}, [](auto& a) {
    Rng mask_rng(99);  // same mask on every evaluation
    return ad::dropout(a, 0.3, mask_rng, true);
  });
  unary("reshape", {2, 6}, [](auto& a) { return ad::reshape(a, {3, 4}); });
  unary("permute", {2, 3, 4}, [](auto& a) { return ad::permute(a, {2, 0, 1}); });
  unary("slice", {3, 6}, [](auto& a) { return ad::slice(a, 1, 4); });
  unary("select_step", {2, 4, 3}, [](auto& a) { return ad::select_step(a, 2); });
  unary("stack_steps", {2, 3}, [](auto& a) { return ad::stack_steps<double>({a, ad::tanh(a), a}); });
  unary("sum", {3, 4}, [](auto& a) { return ad::sum(a); });
  {
    std::vector<double> mask{1, 0, 1, 1, 0, 1};
    unary("masked_mean", {2, 3}, [mask](auto& a) { return ad::masked_mean(a, Tensor<double>::from({2, 3}, mask)); });
  }
  {
    std::vector<int> idx{0, 3, 3, 1, 4, 0};
    unary("embedding_lookup", {5, 3}, [idx](auto& t) { return ad::embedding_lookup(t, std::span<const int>(idx), {2, 3}); });
  }
  {
    auto y = Tensor<double>::from({2, 3}, {1, 0, 1, 0, 0, 1});
    auto m = Tensor<double>::from({2, 3}, {1, 1, 0, 1, 1, 1});
    unary("bce", {2, 3}, [y, m](auto& p) { return ad::bce(y, p, m).value; }, 0.05, 0.95);
    auto t = random_tensor(rng, {2, 3}, 0.0, 1.0, false);
    unary("masked_mse", {2, 3}, [t, m](auto& p) { return ad::masked_mse(t, p, m).value; });
  }

  std::vector<CaseResult> out;
  for (auto& c : cases) {
    Rng weight_seed_source(sub_seed(seed, c.name));
    const std::uint64_t weight_seed = weight_seed_source.next_u64();
    auto loss = [&c, weight_seed] {
      Rng wr(weight_seed);
      return detail::weighted_sum(c.build(c.params), wr);
    };
    out.push_back({c.name, ad::check_gradients(loss, c.params)});
  }
  return out;
}

/// Two students, eight steps each, over 6 questions and 3 concepts. One
/// step has an unannotated strand and one window ends early, so padding and
/// the MP masks are exercised.
inline Batch toy_batch(std::uint64_t seed, std::size_t max_len = 8) {
  Rng rng(seed);
  std::vector<Window> windows(2);
  for (std::size_t s = 0; s < 2; ++s) {
    windows[s].student_id = "toy" + std::to_string(s);
    const std::size_t len = s == 0 ? max_len : max_len - 2;
    for (std::size_t t = 0; t < len; ++t) {
      StepFeatures f;
      f.question = static_cast<int>(rng.below(6));
      f.concept_id = f.question % 3;
      f.correct = rng.bernoulli(0.6) ? 1 : 0;
      for (std::size_t d = 0; d < kNumDimensions; ++d) {
        f.mp_present[d] = !(s == 1 && t == 2 && d == 3);
        f.mp[d] = f.mp_present[d] ? rng.uniform() : kMissingMpValue;
      }
      windows[s].steps.push_back(f);
    }
  }
  return collate(std::span<const Window>(windows), max_len);
}

inline ModelConfig toy_config(Backbone backbone, Variant variant) {
  ModelConfig c;
  c.backbone = backbone;
  c.variant = variant;
  c.embed_dim = 8;
  c.attention_heads = 2;
  c.num_questions = 6;
  c.num_concepts = 3;
  c.max_len = 8;
  c.dropout = 0.2;
  c.seed = 42;
  return c;
}

/// Full composite-loss gradient (alpha = 0.5, dropout active with a fixed
/// mask) with respect to every model parameter.
inline CaseResult check_model(Backbone backbone, Variant variant, std::uint64_t seed = 42) {
  auto model = build_model<double>(toy_config(backbone, variant));
  const Batch batch = toy_batch(seed);
  auto loss = [&] {
    Rng dropout_rng(sub_seed(seed, "gradcheck.dropout"));
    auto pred = model->forward(batch, ForwardContext::train(dropout_rng));
    return batch_loss(pred, batch, 0.5).total;
  };
  const auto& entries = model->parameters().entries();
  detail::Params params(entries.begin(), entries.end());
  return {std::string(to_string(backbone)) + "/" + std::string(to_string(variant)), ad::check_gradients(loss, params)};
}

/// Op suite plus both backbones in both variants.
inline SuiteResult run_suite(std::uint64_t seed = 42) {
  const auto start = std::chrono::steady_clock::now();
  SuiteResult r;
  r.cases = check_ops(seed);
  for (auto b : {Backbone::recurrent, Backbone::attention})
    for (auto v : {Variant::original, Variant::statuskt}) r.cases.push_back(check_model(b, v, seed));
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace statuskt::gradcheck
