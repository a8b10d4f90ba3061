#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "statuskt/dataset.hpp"

using namespace statuskt;
namespace fs = std::filesystem;

namespace {

Problem problem(const std::string& id, const std::string& kc = "algebra", const std::string& text = "Solve it.") {
  Problem p;
  p.problem_id = id;
  p.kc_ids = {kc};
  p.text = text;
  p.answer = "1";
  return p;
}

InteractionRecord record(const std::string& student, const std::string& pid, std::int64_t ts, int lines = 5,
                         int correct = 1) {
  InteractionRecord r;
  r.student_id = student;
  r.problem_id = pid;
  r.selected_answer = "1";
  r.correct = correct;
  r.duration = 10.0;
  r.timestamp = ts;
  for (int i = 0; i < lines; ++i) r.process_text += (i ? "\n" : "") + std::string("line ") + std::to_string(i);
  return r;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("statuskt_ds_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_files(const fs::path& dir, const std::vector<Problem>& problems, const std::vector<std::string>& lines) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : problems) arr.push_back(to_json_value(p));
  std::ofstream(dir / kProblemsFile) << arr.dump();
  std::ofstream out(dir / kInteractionsFile);
  for (const auto& l : lines) out << l << '\n';
}

std::string line_of(const InteractionRecord& r) { return to_json_value(r).dump(); }

std::vector<StudentSequence> students(std::size_t n) {
  std::vector<StudentSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = std::to_string(i);
    id = "s" + std::string(3 - std::min<std::size_t>(3, id.size()), '0') + id;
    out.push_back({id, {record(id, "p1", 0)}});
  }
  return out;
}

}  // namespace

TEST(Load, GroupsOneStudent) {
  TempDir dir;
  write_files(dir.path(), {problem("p1")},
              {line_of(record("a", "p1", 1)), line_of(record("a", "p1", 2)), line_of(record("a", "p1", 3))});
  const auto ds = load_dataset(dir.path());
  ASSERT_EQ(ds.sequences.size(), 1u);
  EXPECT_EQ(ds.sequences[0].steps.size(), 3u);
}

TEST(Load, RejectsCorrectOutsideBinary) {
  TempDir dir;
  auto bad = to_json_value(record("a", "p1", 1));
  bad["correct"] = 2;
  write_files(dir.path(), {problem("p1")}, {line_of(record("a", "p1", 0)), bad.dump()});
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Load, InterleavedStudentsSortedByTime) {
  TempDir dir;
  std::vector<InteractionRecord> recs{record("b", "p1", 30), record("a", "p1", 20), record("b", "p1", 10),
                                      record("a", "p1", 40), record("a", "p1", 5)};
  std::vector<std::string> lines;
  for (const auto& r : recs) lines.push_back(line_of(r));
  write_files(dir.path(), {problem("p1")}, lines);
  const auto ds = load_dataset(dir.path());

  // Sort-then-group oracle.
  auto sorted = recs;
  std::stable_sort(sorted.begin(), sorted.end(), [](auto& x, auto& y) {
    return std::tie(x.student_id, x.timestamp) < std::tie(y.student_id, y.timestamp);
  });
  ASSERT_EQ(ds.sequences.size(), 2u);
  std::size_t k = 0;
  for (const auto& seq : ds.sequences)
    for (const auto& r : seq.steps) {
      EXPECT_EQ(r.student_id, sorted[k].student_id);
      EXPECT_EQ(r.timestamp, sorted[k].timestamp);
      ++k;
    }
  EXPECT_EQ(k, recs.size());
}

TEST(Load, MalformedLineReportsLineNumber) {
  TempDir dir;
  write_files(dir.path(), {problem("p1")}, {line_of(record("a", "p1", 1)), "{not json"});
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Load, DanglingProblemIdsListed) {
  TempDir dir;
  write_files(dir.path(), {problem("p1")}, {line_of(record("a", "zz9", 1)), line_of(record("a", "yy8", 2))});
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("zz9"), std::string::npos);
    EXPECT_NE(msg.find("yy8"), std::string::npos);
  }
}

TEST(Load, SaveRoundTrip) {
  TempDir dir;
  Dataset ds;
  ds.problems["p1"] = problem("p1");
  auto mc = problem("p2", "geometry");
  mc.question_type = QuestionType::multiple_choice;
  mc.options = {"$1$", "$2$"};
  mc.solution_text = "because";
  ds.problems["p2"] = mc;
  auto r = record("a", "p2", 7);
  r.mp = MPRatios::from_counts({{{1, 2}, {0, 0}, {3, 3}, {0, 1}}});
  ds.sequences.push_back({"a", {record("a", "p1", 1), r}});
  save_dataset(ds, dir.path());
  const auto back = load_dataset(dir.path());
  ASSERT_EQ(back.sequences.size(), 1u);
  EXPECT_EQ(back.problems.at("p2").options, mc.options);
  EXPECT_EQ(back.problems.at("p2").solution_text, mc.solution_text);
  ASSERT_TRUE(back.sequences[0].steps[1].mp);
  EXPECT_EQ(*back.sequences[0].steps[1].mp, *r.mp);
  EXPECT_FALSE(back.sequences[0].steps[0].mp);
}

TEST(Preprocess, FourLinesDropped) {
  Dataset ds;
  ds.problems["p1"] = problem("p1");
  ds.sequences.push_back({"a", {record("a", "p1", 1, 4), record("a", "p1", 2, 5)}});
  const auto r = preprocess(ds);
  EXPECT_EQ(r.report.dropped_short_process, 1u);
  ASSERT_EQ(r.data.sequences.size(), 1u);
  EXPECT_EQ(r.data.sequences[0].steps.size(), 1u);
  EXPECT_EQ(r.data.sequences[0].steps[0].timestamp, 2);
}

TEST(Preprocess, BlankLinesDoNotCount) {
  EXPECT_EQ(count_process_lines("a\n\n  \nb\nc\nd"), 4u);
  EXPECT_EQ(count_process_lines(""), 0u);
  EXPECT_EQ(count_process_lines("a\r\nb\r\nc\r\nd\r\ne"), 5u);
}

TEST(Preprocess, MissingProblemTextDropsInteractions) {
  Dataset ds;
  ds.problems["p1"] = problem("p1");
  ds.problems["p2"] = problem("p2", "algebra", "   ");
  ds.sequences.push_back({"a", {record("a", "p2", 1), record("a", "p1", 2)}});
  const auto r = preprocess(ds);
  EXPECT_EQ(r.report.dropped_problems_without_text, 1u);
  EXPECT_EQ(r.report.dropped_missing_problem_text, 1u);
  EXPECT_EQ(r.data.problems.count("p2"), 0u);
  EXPECT_EQ(r.report.kept_interactions, 1u);
}

TEST(Preprocess, EmptyStudentRemovedAndRecounted) {
  Dataset ds;
  ds.problems["p1"] = problem("p1");
  ds.sequences.push_back({"a", {record("a", "p1", 1, 2), record("a", "p1", 2, 3)}});
  ds.sequences.push_back({"b", {record("b", "p1", 1, 6), record("b", "p1", 2, 1)}});
  const auto r = preprocess(ds);
  EXPECT_EQ(r.report.removed_empty_sequences, 1u);
  ASSERT_EQ(r.data.sequences.size(), 1u);
  EXPECT_EQ(r.data.sequences[0].student_id, "b");

  // Independent recount of the line filter.
  std::size_t short_count = 0;
  for (const auto& seq : ds.sequences)
    for (const auto& rec : seq.steps) {
      std::size_t lines = rec.process_text.empty() ? 0 : 1 + std::count(rec.process_text.begin(), rec.process_text.end(), '\n');
      short_count += lines < 5;
    }
  EXPECT_EQ(r.report.dropped_short_process, short_count);
}

TEST(Preprocess, Idempotent) {
  Dataset ds;
  ds.problems["p1"] = problem("p1");
  ds.problems["p2"] = problem("p2", "x", "");
  ds.sequences.push_back({"a", {record("a", "p1", 1, 2), record("a", "p1", 2, 7), record("a", "p2", 3)}});
  const auto once = preprocess(ds);
  const auto twice = preprocess(once.data);
  EXPECT_EQ(twice.report.kept_interactions, once.report.kept_interactions);
  EXPECT_EQ(twice.report.dropped_short_process + twice.report.dropped_missing_problem_text +
                twice.report.removed_empty_sequences + twice.report.dropped_problems_without_text,
            0u);
}

TEST(Split, HundredStudentsGive72_8_20) {
  const auto s = split(students(100), 42, 0.2, 0.1);
  EXPECT_EQ(s.train.size(), 72u);
  EXPECT_EQ(s.val.size(), 8u);
  EXPECT_EQ(s.test.size(), 20u);
}

TEST(Split, DeterministicAndOrderIndependent) {
  auto seqs = students(37);
  const auto a = split(seqs, 42, 0.2, 0.1);
  std::reverse(seqs.begin(), seqs.end());
  const auto b = split(seqs, 42, 0.2, 0.1);
  auto ids = [](const std::vector<StudentSequence>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(s.student_id);
    return out;
  };
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_EQ(ids(a.val), ids(b.val));
  EXPECT_EQ(ids(a.test), ids(b.test));
  const auto c = split(seqs, 7, 0.2, 0.1);
  EXPECT_NE(ids(a.test), ids(c.test));
}

TEST(Split, PartitionLaw) {
  for (std::size_t n : {3u, 4u, 10u, 57u, 200u}) {
    const auto s = split(students(n), 42, 0.2, 0.1);
    std::set<std::string> all;
    std::size_t total = 0;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      EXPECT_FALSE(part->empty());
      for (const auto& q : *part) all.insert(q.student_id);
      total += part->size();
    }
    EXPECT_EQ(total, n);
    EXPECT_EQ(all.size(), n);
  }
}

TEST(Split, TooFewStudents) {
  EXPECT_THROW(split(students(2), 42, 0.2, 0.1), ValidationError);
  EXPECT_THROW(split(students(10), 42, 0.0, 0.1), ConfigError);
}

namespace {

struct Fixture {
  Dataset ds;
  Vocabulary vocab;
  explicit Fixture(std::size_t len) {
    ds.problems["p1"] = problem("p1", "k2");
    ds.problems["p2"] = problem("p2", "k1");
    StudentSequence seq{"a", {}};
    for (std::size_t t = 0; t < len; ++t) seq.steps.push_back(record("a", t % 2 ? "p2" : "p1", t, 5, t % 3 == 0));
    ds.sequences.push_back(seq);
    vocab = Vocabulary::from_problems(ds.problems);
  }
};

}  // namespace

TEST(Batches, LengthFiveGivesFourSupervised) {
  Fixture f(5);
  const auto batches = make_batches(f.ds.sequences, f.vocab, 200, 16);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].num_sequences, 1u);
  EXPECT_EQ(batches[0].supervised(), 4u);
}

TEST(Batches, LongSequenceWindowsByCeilingDivision) {
  Fixture f(450);
  const auto windows = make_windows(f.ds.sequences, f.vocab, 200);
  ASSERT_EQ(windows.size(), (450u + 199u) / 200u);
  EXPECT_EQ(windows[0].steps.size(), 200u);
  EXPECT_EQ(windows[1].steps.size(), 200u);
  EXPECT_EQ(windows[2].steps.size(), 50u);
}

TEST(Batches, AbsentStrandImputedAndMasked) {
  Fixture f(2);
  f.ds.sequences[0].steps[0].mp = MPRatios::from_counts({{{1, 2}, {1, 1}, {0, 1}, {0, 0}}});
  f.ds.sequences[0].steps[1].mp = MPRatios::from_counts({{{1, 1}, {0, 1}, {2, 4}, {0, 0}}});
  const auto b = make_batches(f.ds.sequences, f.vocab, 4, 16)[0];
  const std::size_t ar = index(Dimension::AR);
  EXPECT_EQ(b.mp_inputs[ar], 0.5);
  EXPECT_EQ(b.mp_inputs[kNumDimensions + ar], 0.0);
  EXPECT_EQ(b.mp_inputs[index(Dimension::CU)], 0.5);
  EXPECT_EQ(b.mp_inputs[kNumDimensions + index(Dimension::CU)], 1.0);
  EXPECT_EQ(b.target_mp_mask[ar], 0.0);
  EXPECT_EQ(b.target_mp_mask[index(Dimension::PF)], 1.0);
  EXPECT_EQ(b.targets_mp[index(Dimension::PF)], 0.5);
  // Unannotated interactions impute every strand.
  Fixture g(2);
  const auto c = make_batches(g.ds.sequences, g.vocab, 4, 16)[0];
  for (std::size_t d = 0; d < kNumDimensions; ++d) {
    EXPECT_EQ(c.mp_inputs[d], kMissingMpValue);
    EXPECT_EQ(c.mp_inputs[kNumDimensions + d], 0.0);
    EXPECT_EQ(c.target_mp_mask[d], 0.0);
  }
}

TEST(Batches, TargetsAreNextStepAndPaddingUnsupervised) {
  Fixture f(3);
  const auto b = make_batches(f.ds.sequences, f.vocab, 6, 16)[0];
  const auto& steps = f.ds.sequences[0].steps;
  for (std::size_t t = 0; t < 6; ++t) {
    if (t + 1 < steps.size()) {
      EXPECT_EQ(b.valid_mask[t], 1.0);
      EXPECT_EQ(b.target_question_ids[t], f.vocab.question(steps[t + 1].problem_id));
      EXPECT_EQ(b.targets_correct[t], steps[t + 1].correct);
      EXPECT_EQ(b.correctness[t], steps[t].correct);
    } else {
      EXPECT_EQ(b.valid_mask[t], 0.0);
    }
  }
}

TEST(Batches, VocabularyUsesPrimaryConceptInSortedOrder) {
  Fixture f(1);
  EXPECT_EQ(f.vocab.num_questions(), 2u);
  EXPECT_EQ(f.vocab.question("p1"), 0);
  EXPECT_EQ(f.vocab.concept_of("p1"), 1);  // "k2" sorts after "k1"
  EXPECT_EQ(f.vocab.concept_of("p2"), 0);
  EXPECT_THROW(f.vocab.question("nope"), ValidationError);
}

TEST(Batches, BatchSizeGroupsWindows) {
  auto seqs = students(40);
  std::map<std::string, Problem> probs{{"p1", problem("p1")}};
  const auto vocab = Vocabulary::from_problems(probs);
  const auto batches = make_batches(seqs, vocab, 10, 16);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].num_sequences, 8u);
  EXPECT_THROW(make_batches(seqs, vocab, 1, 16), ConfigError);
  EXPECT_THROW(make_batches(seqs, vocab, 10, 0), ConfigError);
}
