#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "statuskt/dataset.hpp"
#include "statuskt/random.hpp"

namespace statuskt::synthetic {

struct SimConfig {
  std::size_t num_students = 300;
  std::size_t num_problems = 500;
  std::size_t num_concepts = 40;
  std::size_t steps_per_student = 50;
  double learn_rate = 0.08;  // mastery gain per practice
  double guess = 0.15;
  double slip = 0.08;
  double mp_noise_sd = 0.08;
  std::uint64_t seed = 42;

  // Generator shape, not part of the public contract's defaults list.
  double ability_share = 0.6;        // share of mastery variance common to all concepts
  double concept_repeat_prob = 0.75;  // chance the next step stays on the same concept

  void validate() const {
    if (num_students == 0 || num_problems == 0 || num_concepts == 0 || steps_per_student == 0)
      throw ConfigError("simulator counts must be positive");
    if (num_concepts > num_problems) throw ConfigError("need at least one problem per concept");
    for (double p : {guess, slip, ability_share, concept_repeat_prob})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("simulator probabilities must lie in [0, 1]");
    if (guess + slip >= 1.0) throw ConfigError("guess + slip must be below 1");
    if (!(learn_rate >= 0.0)) throw ConfigError("learn_rate must be non-negative");
    if (!(mp_noise_sd >= 0.0)) throw ConfigError("mp_noise_sd must be non-negative");
  }
};

/// Latent quantities behind a generated dataset, exposed for tests.
struct Trace {
  std::vector<double> difficulty;                // b_q per problem index
  std::vector<std::size_t> problem_concept;      // concept index per problem
  // mastery_before[s][t]: theta of the practised concept just before step t
  std::vector<std::vector<double>> mastery_before;
  std::vector<std::vector<std::size_t>> concept_at;  // concept index per step
};

struct Generated {
  Dataset data;
  Trace trace;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Maps a latent difficulty to the five-level field.
inline int difficulty_level(double b) {
  if (b < -0.9) return 1;
  if (b < -0.3) return 2;
  if (b < 0.3) return 3;
  if (b < 0.9) return 4;
  return 5;
}

inline std::string padded(const char* prefix, std::size_t i, int width) {
  std::string digits = std::to_string(i);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

/// Simulates students under an IRT model with learning. Mastery theta[s][c]
/// starts at sqrt(share) * ability_s + sqrt(1 - share) * z_sc, a standard
/// normal that is correlated across a student's concepts, and grows by
/// learn_rate with every practice of c. A response is correct with probability
/// guess + (1 - guess - slip) * sigmoid(theta - b_q); each MP strand is that
/// sigmoid plus independent noise, clipped to [0, 1] and rounded to k/n with a
/// random denominator n in 2..6.
inline Generated generate_with_trace(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(sub_seed(cfg.seed, "simulator"));
  Generated g;
  auto& ds = g.data;
  auto& tr = g.trace;

  // Problems: every concept gets at least one, difficulties cluster by concept.
  std::vector<double> concept_base(cfg.num_concepts);
  for (auto& b : concept_base) b = rng.normal(0.0, 0.5);
  std::vector<std::vector<std::size_t>> problems_of(cfg.num_concepts);
  std::vector<std::string> problem_ids(cfg.num_problems);
  tr.difficulty.resize(cfg.num_problems);
  tr.problem_concept.resize(cfg.num_problems);
  for (std::size_t q = 0; q < cfg.num_problems; ++q) {
    const std::size_t c = q < cfg.num_concepts ? q : rng.below(cfg.num_concepts);
    const double b = concept_base[c] + rng.normal(0.0, 0.25);
    tr.difficulty[q] = b;
    tr.problem_concept[q] = c;
    problems_of[c].push_back(q);

    Problem p;
    p.problem_id = padded("q", q, 5);
    problem_ids[q] = p.problem_id;
    p.kc_ids = {padded("kc", c, 3)};
    p.text = "Synthetic problem " + std::to_string(q) + " on concept " + p.kc_ids.front() + ".";
    p.solution_text = "Apply the method of " + p.kc_ids.front() + " step by step.";
    p.difficulty = difficulty_level(b);
    if (rng.bernoulli(0.6)) {
      p.question_type = QuestionType::multiple_choice;
      for (int o = 1; o <= 5; ++o) p.options.push_back("choice " + std::to_string(o));
      p.answer = std::to_string(1 + rng.below(5));
    } else {
      p.question_type = QuestionType::short_answer;
      p.answer = std::to_string(static_cast<int>(rng.below(100)));
    }
    ds.problems.emplace(p.problem_id, std::move(p));
  }

  const double common = std::sqrt(cfg.ability_share);
  const double specific = std::sqrt(1.0 - cfg.ability_share);
  const std::int64_t epoch_ms = 1'700'000'000'000;

  for (std::size_t s = 0; s < cfg.num_students; ++s) {
    const double ability = rng.normal();
    std::vector<double> theta(cfg.num_concepts);
    for (auto& th : theta) th = common * ability + specific * rng.normal();

    StudentSequence seq{padded("s", s, 5), {}};
    std::vector<double> before;
    std::vector<std::size_t> concepts;
    std::size_t c = rng.below(cfg.num_concepts);
    std::int64_t clock = epoch_ms + static_cast<std::int64_t>(rng.below(86'400'000));
    for (std::size_t t = 0; t < cfg.steps_per_student; ++t) {
      if (t > 0 && !rng.bernoulli(cfg.concept_repeat_prob)) c = rng.below(cfg.num_concepts);
      const auto& pool = problems_of[c];
      const std::size_t q = pool[rng.below(pool.size())];
      const double p_know = logistic(theta[c] - tr.difficulty[q]);
      const double p_correct = cfg.guess + (1.0 - cfg.guess - cfg.slip) * p_know;
      const int correct = rng.bernoulli(p_correct) ? 1 : 0;

      std::array<DimensionCount, kNumDimensions> counts{};
      for (auto d : kDimensions) {
        const double v = std::clamp(p_know + rng.normal(0.0, cfg.mp_noise_sd), 0.0, 1.0);
        const int n = 2 + static_cast<int>(rng.below(5));
        const int k = static_cast<int>(std::lround(v * n));
        counts[index(d)] = {k, n};
      }

      InteractionRecord r;
      r.student_id = seq.student_id;
      r.problem_id = problem_ids[q];
      const auto& prob = ds.problems.at(r.problem_id);
      r.correct = correct;
      r.selected_answer = correct ? prob.answer : prob.answer + "0";
      r.duration = std::round(rng.uniform(20.0, 600.0) * 10.0) / 10.0;
      const std::size_t lines = 5 + rng.below(4);
      for (std::size_t l = 0; l < lines; ++l) {
        if (l) r.process_text += '\n';
        r.process_text += "line " + std::to_string(l + 1) + ": " + seq.student_id + " step " + std::to_string(t) +
                          " works on " + prob.kc_ids.front();
      }
      clock += 30'000 + static_cast<std::int64_t>(rng.below(600'000));
      r.timestamp = clock;
      r.mp = MPRatios::from_counts(counts);
      seq.steps.push_back(std::move(r));

      before.push_back(theta[c]);
      concepts.push_back(c);
      theta[c] += cfg.learn_rate;
    }
    tr.mastery_before.push_back(std::move(before));
    tr.concept_at.push_back(std::move(concepts));
    ds.sequences.push_back(std::move(seq));
  }
  return g;
}

inline Dataset generate(const SimConfig& cfg) { return generate_with_trace(cfg).data; }

}  // namespace statuskt::synthetic
