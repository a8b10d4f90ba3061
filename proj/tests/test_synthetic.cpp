#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "statuskt/synthetic.hpp"

using namespace statuskt;
using namespace statuskt::synthetic;

namespace {

SimConfig small(std::uint64_t seed = 42) {
  SimConfig c;
  c.num_students = 80;
  c.num_problems = 120;
  c.num_concepts = 12;
  c.steps_per_student = 40;
  c.seed = seed;
  return c;
}

double mp_mean(const MPRatios& mp) {
  double s = 0.0;
  for (auto d : kDimensions) s += mp.value(d);
  return s / 4.0;
}

}  // namespace

TEST(Synthetic, SeedDeterminism) {
  const auto a = generate(small()), b = generate(small());
  ASSERT_EQ(a.sequences.size(), b.sequences.size());
  for (std::size_t s = 0; s < a.sequences.size(); ++s)
    for (std::size_t t = 0; t < a.sequences[s].steps.size(); ++t) {
      const auto& x = a.sequences[s].steps[t];
      const auto& y = b.sequences[s].steps[t];
      EXPECT_EQ(to_json_value(x), to_json_value(y));
    }
  const auto c = generate(small(43));
  EXPECT_NE(to_json_value(a.sequences[0].steps[0]), to_json_value(c.sequences[0].steps[0]));
}

TEST(Synthetic, MpPredictsNextCorrectness) {
  auto cfg = small();
  cfg.num_students = 300;
  cfg.mp_noise_sd = 0.0;
  const auto g = generate_with_trace(cfg);
  std::vector<double> xs, ys;
  for (std::size_t s = 0; s < g.data.sequences.size(); ++s) {
    const auto& steps = g.data.sequences[s].steps;
    const auto& concepts = g.trace.concept_at[s];
    for (std::size_t t = 0; t + 1 < steps.size(); ++t) {
      if (concepts[t] != concepts[t + 1]) continue;
      xs.push_back(mp_mean(*steps[t].mp));
      ys.push_back(steps[t + 1].correct);
    }
  }
  ASSERT_GT(xs.size(), 1000u);
  const double n = double(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.3);
}

TEST(Synthetic, FilesLoadAndSurvivePreprocessing) {
  const auto ds = generate(small());
  const auto dir = std::filesystem::temp_directory_path() / "statuskt_synth_test";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);
  const auto pre = preprocess(back);
  EXPECT_EQ(pre.report.kept_interactions, 80u * 40u);
  EXPECT_EQ(pre.report.dropped_short_process, 0u);
  EXPECT_EQ(pre.report.dropped_missing_problem_text, 0u);
  EXPECT_EQ(pre.report.removed_empty_sequences, 0u);
  EXPECT_EQ(pre.report.dropped_problems_without_text, 0u);
  std::filesystem::remove_all(dir);
}

TEST(Synthetic, MarginalCorrectnessWithinResponseBounds) {
  const auto cfg = small();
  const auto ds = generate(cfg);
  double correct = 0, total = 0;
  for (const auto& s : ds.sequences)
    for (const auto& r : s.steps) correct += r.correct, total += 1;
  EXPECT_GT(correct / total, cfg.guess);
  EXPECT_LT(correct / total, 1.0 - cfg.slip);
}

TEST(Synthetic, MasteryNonDecreasingPerConcept) {
  const auto g = generate_with_trace(small());
  for (std::size_t s = 0; s < g.trace.mastery_before.size(); ++s) {
    std::map<std::size_t, double> last;
    for (std::size_t t = 0; t < g.trace.mastery_before[s].size(); ++t) {
      const auto c = g.trace.concept_at[s][t];
      const double th = g.trace.mastery_before[s][t];
      if (last.count(c)) {
        EXPECT_GE(th, last[c]);
      }
      last[c] = th;
    }
  }
}

TEST(Synthetic, RatiosAreSmallFractions) {
  const auto ds = generate(small());
  for (const auto& s : ds.sequences)
    for (const auto& r : s.steps) {
      ASSERT_TRUE(r.mp);
      for (auto d : kDimensions) {
        const auto& c = r.mp->count(d);
        EXPECT_GE(c.total, 2);
        EXPECT_LE(c.total, 6);
        EXPECT_GE(c.satisfied, 0);
        EXPECT_LE(c.satisfied, c.total);
      }
    }
}

TEST(Synthetic, ConfigValidation) {
  auto c = small();
  c.guess = 0.6;
  c.slip = 0.5;
  EXPECT_THROW(generate(c), ConfigError);
  c = small();
  c.num_students = 0;
  EXPECT_THROW(generate(c), ConfigError);
}
