#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "statuskt/mp_pipeline.hpp"
#include "statuskt/synthetic.hpp"
#include "mp_fixtures.hpp"

using namespace statuskt;
using namespace statuskt::mp;
using namespace statuskt::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}


fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("statuskt_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Codes and parsing

TEST(IndicatorCode, AcceptsFourStrandsOnly) {
  EXPECT_TRUE(parse_code("CU1"));
  EXPECT_EQ(parse_code("PF12")->second, 12);
  EXPECT_EQ(parse_code("AR3")->first, Dimension::AR);
  EXPECT_FALSE(parse_code("AD1"));
  EXPECT_FALSE(parse_code("CU"));
  EXPECT_FALSE(parse_code("CU0"));
  EXPECT_FALSE(parse_code("cu1"));
  EXPECT_FALSE(parse_code("CU1a"));
  EXPECT_THROW(make_indicator("XX1", "t"), ValidationError);
}

TEST(IndicatorSet, RejectsDuplicateCodes) {
  IndicatorSet s;
  s.add(make_indicator("CU1", "a"));
  EXPECT_THROW(s.add(make_indicator("CU1", "b")), ValidationError);
}

TEST(ParseIndicators, TemplateWorkedExampleGivesFourteen) {
  std::vector<std::string> warnings;
  const auto set = parse_indicators(teacher_example_output(), "p", &warnings);
  ASSERT_EQ(set.size(), 14u);
  EXPECT_EQ(set.count(Dimension::CU), 5u);
  EXPECT_EQ(set.count(Dimension::SC), 3u);
  EXPECT_EQ(set.count(Dimension::PF), 3u);
  EXPECT_EQ(set.count(Dimension::AR), 3u);
  // Order follows the completion, not the codes.
  const std::vector<std::string> head{"CU1", "SC1", "CU2", "CU3", "CU4", "SC2", "PF2"};
  const auto codes = set.codes();
  EXPECT_EQ(std::vector<std::string>(codes.begin(), codes.begin() + 7), head);
  EXPECT_TRUE(warnings.empty());
  // The wrapped SC3 text is folded onto one line.
  const auto& sc3 = *std::find_if(set.begin(), set.end(), [](auto& i) { return i.code == "SC3"; });
  EXPECT_EQ(sc3.text, "Identify any special numerical cases used by this equation to generalize the solution");
}

TEST(ParseIndicators, NoJsonIsParseError) { EXPECT_THROW(parse_indicators("no json here"), ParseError); }

TEST(ParseIndicators, UnknownCategoryDroppedWithWarning) {
  std::vector<std::string> warnings;
  const auto set = parse_indicators(
      R"({"mathematical_proficiency_indicators": [{"CU1": "a"}, {"AD1": "b"}, {"PF1": "c"}]})", "p", &warnings);
  EXPECT_EQ(set.codes(), (std::vector<std::string>{"CU1", "PF1"}));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("AD1"), std::string::npos);
}

TEST(ParseIndicators, AllUnknownIsEmptyRubric) {
  EXPECT_THROW(parse_indicators(R"({"mathematical_proficiency_indicators": [{"AD1": "x"}]})"), EmptyRubricError);
  EXPECT_THROW(parse_indicators(R"({"mathematical_proficiency_indicators": []})"), EmptyRubricError);
}

TEST(ParseIndicators, ToleratesFencesProseAndMapForm) {
  const auto set = parse_indicators("Sure! Here you go:\n```json\n{\"mathematical_proficiency_indicators\": "
                                    "{\"SC1\": \"s\", \"CU1\": \"c\"}}\n```\nHope this helps.");
  EXPECT_EQ(set.codes(), (std::vector<std::string>{"SC1", "CU1"}));
}

TEST(ParseIndicators, DuplicateCodesKeepFirst) {
  std::vector<std::string> warnings;
  const auto set = parse_indicators(R"({"mathematical_proficiency_indicators": [{"CU1": "a"}, {"CU1": "b"}]})", "p",
                                    &warnings);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_EQ(set.indicators()[0].text, "a");
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(ExtractJson, BracesInsideStringsDoNotConfuseMatching) {
  const auto j = extract_json_object(R"(prefix {"CU1": "set {1, -1} here", "SC1": "}"} suffix)");
  EXPECT_EQ(j.at("CU1"), "set {1, -1} here");
  EXPECT_EQ(j.at("SC1"), "}");
}

TEST(ExtractJson, LatexBackslashesAreRepaired) {
  const auto j = extract_json_object(R"({"PF2": "2x + 5 \in {1, -1}", "mathematical\_key": 1})");
  EXPECT_EQ(j.at("PF2"), "2x + 5 in {1, -1}");
  EXPECT_EQ(j.at("mathematical_key"), 1);
}

TEST(ParseResponses, TemplateWorkedExampleAgainstFourStrandRubric) {
  const auto rubric = rubric_of({{"CU1", "a"}, {"SC1", "b"}, {"PF1", "c"}});
  std::vector<std::string> warnings;
  const auto r = parse_responses(student_example_output(), rubric, &warnings);
  EXPECT_EQ(r.size(), 3u);
  EXPECT_EQ(r.at("CU1"), "This is a quadratic equation.");
  EXPECT_FALSE(r.count("AD1"));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("AD1"), std::string::npos);
  // The raw completion carries four answers.
  EXPECT_EQ(extract_json_object(student_example_output()).size(), 4u);
}

TEST(ParseResponses, MissingCodeBecomesUnknown) {
  const auto rubric = rubric_of({{"CU1", "a"}, {"PF1", "c"}});
  const auto r = parse_responses(R"({"CU1": "done"})", rubric);
  EXPECT_EQ(r.at("PF1"), "I don't know");
}

TEST(ParseResponses, CompleteAnswerKeySetEqualsRubric) {
  const auto rubric = rubric_of({{"CU1", "a"}, {"PF1", "c"}});
  const auto r = parse_responses(R"({"PF1": "I don't know", "CU1": "x"})", rubric);
  std::set<std::string> keys;
  for (auto& [k, v] : r) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"CU1", "PF1"}));
  EXPECT_EQ(r.at("PF1"), std::string(kUnknownAnswer));
  EXPECT_THROW(parse_responses("nothing", rubric), ParseError);
}

TEST(ParseVerdicts, TemplateWorkedExample) {
  const auto v = parse_verdicts(evaluation_example_output(), thirteen_code_rubric());
  ASSERT_EQ(v.size(), 13u);
  int ones = 0;
  for (auto& [k, x] : v) ones += x;
  EXPECT_EQ(ones, 8);
}

TEST(ParseVerdicts, NonBinaryValueRejected) {
  const auto rubric = rubric_of({{"CU1", "a"}});
  EXPECT_THROW(parse_verdicts(R"({"CU1": 0.5})", rubric), ValidationError);
  EXPECT_THROW(parse_verdicts(R"({"CU1": 2})", rubric), ValidationError);
  EXPECT_EQ(parse_verdicts(R"({"CU1": "1"})", rubric).at("CU1"), 1);
}

TEST(ParseVerdicts, MissingCodeNamed) {
  auto raw = evaluation_example_output();
  raw.replace(raw.find("\"SC3\": 0, "), 10, "");
  try {
    parse_verdicts(raw, thirteen_code_rubric());
    FAIL() << "expected IncompleteVerdictError";
  } catch (const IncompleteVerdictError& e) {
    EXPECT_EQ(e.missing(), std::vector<std::string>{"SC3"});
  }
}

// ---------------------------------------------------------------------------
// Ratios

TEST(ComputeRatios, TemplateWorkedExampleIsExact) {
  const auto rubric = thirteen_code_rubric();
  const auto mp = compute_mp_ratios(rubric, parse_verdicts(evaluation_example_output(), rubric));
  EXPECT_EQ(mp.count(Dimension::CU), (DimensionCount{2, 3}));
  EXPECT_EQ(mp.count(Dimension::SC), (DimensionCount{2, 3}));
  EXPECT_EQ(mp.count(Dimension::PF), (DimensionCount{4, 5}));
  EXPECT_EQ(mp.count(Dimension::AR), (DimensionCount{0, 2}));
  EXPECT_EQ(mp.value(Dimension::CU), 2.0 / 3.0);
  EXPECT_EQ(mp.value(Dimension::PF), 4.0 / 5.0);
  EXPECT_EQ(mp.value(Dimension::AR), 0.0);
  EXPECT_TRUE(mp.present(Dimension::AR));
}

TEST(ComputeRatios, AllSatisfiedSaturates) {
  const auto rubric = thirteen_code_rubric();
  Verdicts v;
  for (auto& c : rubric.codes()) v[c] = 1;
  const auto mp = compute_mp_ratios(rubric, v);
  for (auto d : kDimensions) EXPECT_EQ(mp.value(d), 1.0);
}

TEST(ComputeRatios, StrandWithoutIndicatorsIsAbsent) {
  const auto rubric = rubric_of({{"CU1", "a"}, {"SC1", "b"}, {"PF1", "c"}});
  const auto mp = compute_mp_ratios(rubric, {{"CU1", 1}, {"SC1", 0}, {"PF1", 1}});
  EXPECT_FALSE(mp.present(Dimension::AR));
  EXPECT_TRUE(mp.present(Dimension::CU));
  EXPECT_THROW(compute_mp_ratios(rubric, {{"CU1", 1}}), IncompleteVerdictError);
}

// Removing a satisfied indicator never raises its strand's ratio; removing an
// unsatisfied one never lowers it.
TEST(ComputeRatios, MonotoneUnderIndicatorRemoval) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 300; ++trial) {
    IndicatorSet rubric("p");
    Verdicts v;
    std::array<int, 4> ord{};
    const int n = 2 + static_cast<int>(gen() % 14);
    for (int i = 0; i < n; ++i) {
      const auto d = kDimensions[gen() % 4];
      const std::string code = std::string(to_string(d)) + std::to_string(++ord[index(d)]);
      rubric.add(make_indicator(code, "t"));
      v[code] = static_cast<int>(gen() % 2);
    }
    const auto full = compute_mp_ratios(rubric, v);
    const auto& victim = rubric.indicators()[gen() % rubric.size()];
    IndicatorSet smaller("p");
    Verdicts sv;
    for (const auto& ind : rubric)
      if (ind.code != victim.code) {
        smaller.add(ind);
        sv[ind.code] = v[ind.code];
      }
    const auto reduced = compute_mp_ratios(smaller, sv);
    const auto d = victim.category;
    if (!reduced.present(d)) continue;
    if (v[victim.code] == 1) EXPECT_LE(reduced.value(d), full.value(d));
    else EXPECT_GE(reduced.value(d), full.value(d));
  }
}

// ---------------------------------------------------------------------------
// Prompts

TEST(Prompts, IndicatorPromptMatchesGolden) {
  const auto p = render_indicator_prompt(golden_problem());
  EXPECT_EQ(p.full(), slurp(fs::path(STATUSKT_GOLDEN_DIR) / "indicator_prompt.txt"));
  EXPECT_NE(p.instructions.find("Conceptual Understanding (CU)"), std::string::npos);
  EXPECT_TRUE(p.instructions.starts_with("You are Teacher GPT"));
}

TEST(Prompts, ShortAnswerHasNoOptionsBlock) {
  auto problem = golden_problem();
  problem.question_type = QuestionType::short_answer;
  problem.options.clear();
  const auto p = render_indicator_prompt(problem);
  EXPECT_EQ(p.inputs.find("Options:"), std::string::npos);
  EXPECT_EQ(p.full(), slurp(fs::path(STATUSKT_GOLDEN_DIR) / "indicator_prompt_short_answer.txt"));
}

TEST(Prompts, RenderingIsByteStable) {
  const auto problem = golden_problem();
  EXPECT_EQ(render_indicator_prompt(problem), render_indicator_prompt(problem));
  EXPECT_EQ(render_student_prompt(problem, golden_rubric(), kGoldenTrace, "2"),
            render_student_prompt(problem, golden_rubric(), kGoldenTrace, "2"));
  EXPECT_EQ(render_eval_prompt(problem, golden_rubric(), golden_responses()),
            render_eval_prompt(problem, golden_rubric(), golden_responses()));
}

TEST(Prompts, StudentPromptMatchesGolden) {
  const auto p = render_student_prompt(golden_problem(), golden_rubric(), kGoldenTrace, "2");
  EXPECT_EQ(p.full(), slurp(fs::path(STATUSKT_GOLDEN_DIR) / "student_prompt.txt"));
  EXPECT_TRUE(p.instructions.starts_with("You are Student GPT"));
  EXPECT_NE(p.instructions.find("\"I don't know\""), std::string::npos);
  EXPECT_NE(p.instructions.find("Keep the student's mistakes"), std::string::npos);
}

TEST(Prompts, StudentPromptKeepsRubricOrder) {
  const auto p = render_student_prompt(golden_problem(), golden_rubric(), kGoldenTrace, "2");
  std::size_t last = 0;
  for (const auto& code : golden_rubric().codes()) {
    const auto at = p.inputs.find("\"" + code + "\"");
    ASSERT_NE(at, std::string::npos);
    EXPECT_GT(at, last);
    last = at;
  }
  EXPECT_THROW(render_student_prompt(golden_problem(), IndicatorSet{}, "x", "y"), ValidationError);
}

TEST(Prompts, EvaluationPromptMatchesGolden) {
  const auto p = render_eval_prompt(golden_problem(), golden_rubric(), golden_responses());
  EXPECT_EQ(p.full(), slurp(fs::path(STATUSKT_GOLDEN_DIR) / "evaluation_prompt.txt"));
  EXPECT_NE(p.instructions.find("If the student's response is **\"I don't know\"**, assign 0."), std::string::npos);
  EXPECT_NE(p.instructions.find("\"Not written, but likely ...\""), std::string::npos);
}

TEST(Prompts, EvaluationPromptListsEveryCode) {
  const auto rubric = thirteen_code_rubric();
  const auto p = render_eval_prompt(golden_problem(), rubric, {});
  const auto rubric_part = p.inputs.substr(0, p.inputs.find("Answer Indicate:"));
  std::set<std::string> seen;
  for (const auto& code : rubric.codes())
    if (rubric_part.find("{\"" + code + "\": ") != std::string::npos) seen.insert(code);
  EXPECT_EQ(seen.size(), rubric.size());
  // Codes with no response are rendered as unknown.
  EXPECT_NE(p.inputs.find("{\"CU1\": \"I don't know\"}"), std::string::npos);
}

TEST(Prompts, PlaceholderLikeValuesAreNotReexpanded) {
  auto problem = golden_problem();
  problem.text = "What is {problem_option_string}?";
  const auto p = render_indicator_prompt(problem);
  EXPECT_NE(p.inputs.find("What is {problem_option_string}?"), std::string::npos);
  problem.text = "  ";
  EXPECT_THROW(render_indicator_prompt(problem), ValidationError);
}

// ---------------------------------------------------------------------------
// Mock client

TEST(MockClient, DetectsStagesAndIsDeterministic) {
  MockChatClient mock;
  const auto p = render_indicator_prompt(golden_problem());
  const auto a = mock.complete(p.instructions, p.inputs, {});
  const auto b = mock.complete(p.instructions, p.inputs, {});
  EXPECT_EQ(a, b);
  EXPECT_EQ(mock.calls(), 2u);
  const auto set = parse_indicators(a);
  EXPECT_GE(set.size(), 8u);
  EXPECT_LE(set.size(), 15u);
  for (auto d : kDimensions) EXPECT_GE(set.count(d), 1u);
  EXPECT_THROW(mock.complete("You are a pirate", "x", {}), ClientError);
}

TEST(MockClient, UnknownAnswersScoreZero) {
  MockChatClient mock;
  const auto rubric = golden_rubric();
  for (int i = 0; i < 20; ++i) {
    const auto student = render_student_prompt(golden_problem(), rubric, kGoldenTrace + std::to_string(i), "2");
    const auto responses = parse_responses(mock.complete(student.instructions, student.inputs, {}), rubric);
    const auto eval = render_eval_prompt(golden_problem(), rubric, responses);
    const auto verdicts = parse_verdicts(mock.complete(eval.instructions, eval.inputs, {}), rubric);
    for (auto& [code, answer] : responses)
      if (answer == kUnknownAnswer) {
        EXPECT_EQ(verdicts.at(code), 0) << code;
      }
  }
}

// ---------------------------------------------------------------------------
// Cache and pipeline

TEST(CompletionCache, RoundTripAndKeyDependsOnStageAndPrompt) {
  const auto dir = fresh_dir("cache");
  CompletionCache cache(dir);
  const auto p = render_indicator_prompt(golden_problem());
  const auto key = CompletionCache::key(p);
  EXPECT_EQ(key.size(), 64u);
  EXPECT_FALSE(cache.get(key));
  cache.put(key, "hello");
  EXPECT_EQ(*cache.get(key), "hello");
  auto q = p;
  q.stage = Stage::responses;
  EXPECT_NE(CompletionCache::key(q), key);
  q = p;
  q.inputs += " ";
  EXPECT_NE(CompletionCache::key(q), key);
  // No temp files left behind.
  for (auto& e : fs::directory_iterator(dir / "completions"))
    EXPECT_EQ(e.path().extension(), ".txt") << e.path();
  fs::remove_all(dir);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

namespace {

Dataset small_dataset(std::size_t students, std::size_t steps, std::size_t problems = 12) {
  synthetic::SimConfig cfg;
  cfg.num_students = students;
  cfg.steps_per_student = steps;
  cfg.num_problems = problems;
  cfg.num_concepts = 4;
  auto ds = synthetic::generate(cfg);
  for (auto& s : ds.sequences)
    for (auto& r : s.steps) r.mp.reset();
  return ds;
}

PipelineOptions fast_options(std::size_t concurrency = 4) {
  PipelineOptions o;
  o.concurrency = concurrency;
  o.backoff_base = std::chrono::milliseconds(0);
  return o;
}

}  // namespace

TEST(Pipeline, MockRunAnnotatesEverythingDeterministically) {
  const auto ds = small_dataset(2, 5);
  const auto dir1 = fresh_dir("pipe1"), dir2 = fresh_dir("pipe2");
  MockChatClient m1, m2;
  const auto r1 = run_pipeline(ds, m1, dir1, fast_options(4));
  const auto r2 = run_pipeline(ds, m2, dir2, fast_options(1));
  EXPECT_EQ(r1.report.interactions, 10u);
  EXPECT_EQ(r1.report.annotated, 10u);
  EXPECT_EQ(r1.report.failed(), 0u);
  for (const auto& s : r1.sequences)
    for (const auto& rec : s.steps) {
      ASSERT_TRUE(rec.mp);
      for (auto d : kDimensions) {
        EXPECT_GE(rec.mp->value(d), 0.0);
        EXPECT_LE(rec.mp->value(d), 1.0);
      }
    }
  EXPECT_EQ(r1.sequences, r2.sequences);
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST(Pipeline, WarmCacheMakesNoCalls) {
  const auto ds = small_dataset(2, 5);
  const auto dir = fresh_dir("warm");
  MockChatClient mock;
  const auto cold = run_pipeline(ds, mock, dir, fast_options());
  EXPECT_GT(mock.calls(), 0u);
  mock.reset_counters();
  const auto warm = run_pipeline(ds, mock, dir, fast_options());
  EXPECT_EQ(mock.calls(), 0u);
  EXPECT_EQ(warm.report.client_calls, 0u);
  EXPECT_EQ(warm.sequences, cold.sequences);
  fs::remove_all(dir);
}

TEST(Pipeline, PersistentTeacherFailureFlagsOnlyThatInteraction) {
  // Ten interactions on ten distinct problems; the teacher stage always fails
  // for one of them.
  auto ds = small_dataset(1, 10, 40);
  for (std::size_t t = 0; t < 10; ++t) ds.sequences[0].steps[t].problem_id = synthetic::padded("q", t, 5);
  const auto target = ds.sequences[0].steps[3].problem_id;
  const auto target_text = ds.problems.at(target).text;
  MockChatClient mock([&](Stage stage, std::string_view user) {
    return stage == Stage::indicators && user.find(target_text) != std::string_view::npos;
  });
  const auto dir = fresh_dir("teacherfail");
  const auto r = run_pipeline(ds, mock, dir, fast_options());
  EXPECT_EQ(r.report.annotated, 9u);
  ASSERT_EQ(r.report.failed(), 1u);
  EXPECT_EQ(r.report.failures[0].step, 3u);
  EXPECT_EQ(r.report.failures[0].stage, Stage::indicators);
  EXPECT_EQ(mock.injected_failures(), 4u);  // one attempt plus three retries
  EXPECT_NEAR(r.report.failure_rate(), 0.1, 1e-12);
  EXPECT_EQ(r.sequences[0].steps[3].mp, MPRatios::absent());
  fs::remove_all(dir);
}

TEST(Pipeline, TransientFailureRecoversWithinRetries) {
  const auto ds = small_dataset(1, 3);
  std::atomic<int> failures_left{2};
  MockChatClient mock([&](Stage stage, std::string_view) { return stage == Stage::verdicts && failures_left-- > 0; });
  const auto dir = fresh_dir("transient");
  const auto r = run_pipeline(ds, mock, dir, fast_options(1));
  EXPECT_EQ(r.report.failed(), 0u);
  EXPECT_EQ(r.report.annotated, 3u);
  fs::remove_all(dir);
}

TEST(Pipeline, RecordedFailuresAreRetriedOnlyOnRequest) {
  const auto ds = small_dataset(1, 4);
  const auto dir = fresh_dir("retryflag");
  const auto marker = ds.sequences[0].steps[1].process_text;
  MockChatClient failing([&](Stage stage, std::string_view user) {
    return stage == Stage::responses && user.find(marker) != std::string_view::npos;
  });
  const auto first = run_pipeline(ds, failing, dir, fast_options());
  ASSERT_EQ(first.report.failed(), 1u);
  EXPECT_EQ(first.report.failures[0].step, 1u);
  EXPECT_EQ(first.report.failures[0].stage, Stage::responses);

  MockChatClient healthy;
  const auto again = run_pipeline(ds, healthy, dir, fast_options());
  EXPECT_EQ(healthy.calls(), 0u);
  EXPECT_EQ(again.report.failed(), first.report.failed());

  auto opts = fast_options();
  opts.retry_failures = true;
  const auto healed = run_pipeline(ds, healthy, dir, opts);
  EXPECT_EQ(healed.report.failed(), 0u);
  EXPECT_GT(healthy.calls(), 0u);
  fs::remove_all(dir);
}

TEST(Pipeline, AuditRecordsReproduceRatios) {
  const auto ds = small_dataset(2, 4);
  const auto dir = fresh_dir("audit");
  MockChatClient mock;
  const auto r = run_pipeline(ds, mock, dir, fast_options());
  std::size_t files = 0;
  for (const auto& seq : r.sequences)
    for (std::size_t t = 0; t < seq.steps.size(); ++t) {
      const auto path = dir / "audit" / audit_file_name(seq.student_id, t);
      ASSERT_TRUE(fs::exists(path));
      const auto audit = audit_from_json(nlohmann::json::parse(slurp(path)));
      ASSERT_TRUE(audit.ratios);
      EXPECT_EQ(compute_mp_ratios(audit.indicators, audit.verdicts), *audit.ratios);
      EXPECT_EQ(*audit.ratios, *seq.steps[t].mp);
      EXPECT_EQ(audit.problem_id, seq.steps[t].problem_id);
      ++files;
    }
  EXPECT_EQ(files, 8u);
  fs::remove_all(dir);
}

TEST(Pipeline, UnknownProblemIsValidationError) {
  auto ds = small_dataset(1, 2);
  ds.sequences[0].steps[0].problem_id = "missing";
  MockChatClient mock;
  const auto dir = fresh_dir("unknown");
  EXPECT_THROW(run_pipeline(ds, mock, dir, fast_options()), ValidationError);
  fs::remove_all(dir);
}

TEST(Parallel, RunsEveryIndexOnceAndPropagatesErrors) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw ValidationError("boom");
               }),
               ValidationError);
}
