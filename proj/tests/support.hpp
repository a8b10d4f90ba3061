#pragma once

#include <cmath>
#include <vector>

#include "statuskt/dataset.hpp"
#include "statuskt/models.hpp"
#include "statuskt/random.hpp"

namespace statuskt::testing {

/// Random padded batch: lengths in [2, max_len], some strands unannotated.
inline Batch random_batch(std::uint64_t seed, std::size_t sequences, std::size_t max_len, std::size_t questions,
                          std::size_t concepts) {
  Rng rng(seed);
  std::vector<Window> windows(sequences);
  for (auto& w : windows) {
    const std::size_t len = 2 + rng.below(max_len - 1);
    for (std::size_t t = 0; t < len; ++t) {
      StepFeatures f;
      f.question = static_cast<int>(rng.below(questions));
      f.concept_id = static_cast<int>(rng.below(concepts));
      f.correct = rng.bernoulli(0.5) ? 1 : 0;
      for (std::size_t d = 0; d < kNumDimensions; ++d) {
        f.mp_present[d] = rng.bernoulli(0.8);
        f.mp[d] = f.mp_present[d] ? rng.uniform() : kMissingMpValue;
      }
      w.steps.push_back(f);
    }
  }
  return collate(std::span<const Window>(windows), max_len);
}

/// Rewrites every input and target strictly after position `cut` with fresh
/// random values. Position cut keeps its own target (the next question).
inline Batch scramble_after(Batch b, std::size_t cut, std::uint64_t seed, std::size_t questions,
                            std::size_t concepts) {
  Rng rng(seed);
  for (std::size_t s = 0; s < b.num_sequences; ++s) {
    for (std::size_t t = cut + 1; t < b.max_len; ++t) {
      const std::size_t p = s * b.max_len + t;
      b.question_ids[p] = static_cast<int>(rng.below(questions));
      b.concept_ids[p] = static_cast<int>(rng.below(concepts));
      b.correctness[p] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      for (std::size_t k = 0; k < kMpInputWidth; ++k) b.mp_inputs[p * kMpInputWidth + k] = rng.uniform();
      b.target_question_ids[p] = static_cast<int>(rng.below(questions));
      b.target_concept_ids[p] = static_cast<int>(rng.below(concepts));
    }
  }
  return b;
}

/// Largest change in r_pred / mp_pred at positions <= cut after scrambling the future.
template <typename T>
double causality_violation(KTModel<T>& model, const Batch& batch, std::size_t cut, std::uint64_t seed) {
  const auto& cfg = model.config();
  const auto other = scramble_after(batch, cut, seed, cfg.num_questions, cfg.num_concepts);
  const auto a = model.forward(batch);
  const auto b = model.forward(other);
  double worst = 0.0;
  for (std::size_t s = 0; s < batch.num_sequences; ++s)
    for (std::size_t t = 0; t <= cut; ++t) {
      const std::size_t p = s * batch.max_len + t;
      worst = std::max(worst, std::abs(double(a.r_pred[p]) - double(b.r_pred[p])));
      if (a.mp_pred.defined())
        for (std::size_t d = 0; d < kNumDimensions; ++d)
          worst = std::max(worst, std::abs(double(a.mp_pred[p * kNumDimensions + d]) -
                                           double(b.mp_pred[p * kNumDimensions + d])));
    }
  return worst;
}

}  // namespace statuskt::testing
