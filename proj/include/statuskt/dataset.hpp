#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "statuskt/errors.hpp"
#include "statuskt/mp_ratios.hpp"
#include "statuskt/random.hpp"

namespace statuskt {

using json = nlohmann::json;

enum class QuestionType { multiple_choice, short_answer };

inline std::string_view to_string(QuestionType t) {
  return t == QuestionType::multiple_choice ? "multiple_choice" : "short_answer";
}

struct Problem {
  std::string problem_id;
  std::vector<std::string> kc_ids;
  std::string text;
  std::optional<std::string> solution_text;
  std::string answer;
  QuestionType question_type = QuestionType::short_answer;
  int difficulty = 1;  // 1..5
  // Answer choices of a multiple-choice problem, in display order. Omitted
  // from the JSON when empty.
  std::vector<std::string> options;

  friend bool operator==(const Problem&, const Problem&) = default;
};

/// One student-problem event. `correct` is the response r_t, `process_text`
/// the OCR transcription of the written solution, one line per newline.
struct InteractionRecord {
  std::string student_id;
  std::string problem_id;
  std::string selected_answer;
  int correct = 0;
  double duration = 0.0;  // seconds
  std::string process_text;
  std::int64_t timestamp = 0;  // ms since epoch
  std::optional<MPRatios> mp;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

struct StudentSequence {
  std::string student_id;
  std::vector<InteractionRecord> steps;

  friend bool operator==(const StudentSequence&, const StudentSequence&) = default;
};

struct Dataset {
  std::map<std::string, Problem> problems;
  std::vector<StudentSequence> sequences;

  std::size_t num_interactions() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.steps.size();
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr const char* kProblemsFile = "problems.json";
inline constexpr const char* kInteractionsFile = "interactions.jsonl";

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

namespace detail {

inline const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  return j.at(key);
}

inline std::string require_string(const json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace detail

inline json to_json_value(const Problem& p) {
  json j = {{"problem_id", p.problem_id},
            {"kc_ids", p.kc_ids},
            {"text", p.text},
            {"solution_text", p.solution_text ? json(*p.solution_text) : json(nullptr)},
            {"answer", p.answer},
            {"question_type", to_string(p.question_type)},
            {"difficulty", p.difficulty}};
  if (!p.options.empty()) j["options"] = p.options;
  return j;
}

inline Problem problem_from_json(const json& j) {
  Problem p;
  p.problem_id = detail::require_string(j, "problem_id");
  if (p.problem_id.empty()) throw ValidationError("problem_id must be non-empty");
  const auto& kcs = detail::require(j, "kc_ids");
  if (!kcs.is_array() || kcs.empty()) throw ValidationError("problem " + p.problem_id + ": kc_ids must be a non-empty list");
  for (const auto& kc : kcs) {
    if (!kc.is_string()) throw ValidationError("problem " + p.problem_id + ": kc_ids must hold strings");
    p.kc_ids.push_back(kc.get<std::string>());
  }
  p.text = detail::require_string(j, "text");
  if (j.contains("solution_text") && !j.at("solution_text").is_null()) p.solution_text = detail::require_string(j, "solution_text");
  p.answer = detail::require_string(j, "answer");
  const auto type = detail::require_string(j, "question_type");
  if (type == "multiple_choice")
    p.question_type = QuestionType::multiple_choice;
  else if (type == "short_answer")
    p.question_type = QuestionType::short_answer;
  else
    throw ValidationError("problem " + p.problem_id + ": unknown question_type '" + type + "'");
  const auto& diff = detail::require(j, "difficulty");
  if (!diff.is_number_integer() || diff.get<int>() < 1 || diff.get<int>() > 5)
    throw ValidationError("problem " + p.problem_id + ": difficulty must be an integer in 1..5");
  p.difficulty = diff.get<int>();
  if (j.contains("options")) p.options = j.at("options").get<std::vector<std::string>>();
  return p;
}

inline json to_json_value(const InteractionRecord& r) {
  json j = {{"student_id", r.student_id}, {"problem_id", r.problem_id}, {"selected_answer", r.selected_answer},
            {"correct", r.correct},       {"duration", r.duration},     {"process_text", r.process_text},
            {"timestamp", r.timestamp}};
  if (r.mp) j["mp"] = to_json_value(*r.mp);
  return j;
}

inline InteractionRecord record_from_json(const json& j) {
  InteractionRecord r;
  r.student_id = detail::require_string(j, "student_id");
  r.problem_id = detail::require_string(j, "problem_id");
  r.selected_answer = detail::require_string(j, "selected_answer");
  const auto& c = detail::require(j, "correct");
  if (c.is_boolean())
    r.correct = c.get<bool>() ? 1 : 0;
  else if (c.is_number_integer() && (c.get<std::int64_t>() == 0 || c.get<std::int64_t>() == 1))
    r.correct = c.get<int>();
  else
    throw ValidationError("correct must be 0 or 1, got " + c.dump());
  const auto& d = detail::require(j, "duration");
  if (!d.is_number() || !(d.get<double>() >= 0.0) || !std::isfinite(d.get<double>()))
    throw ValidationError("duration must be a non-negative number, got " + d.dump());
  r.duration = d.get<double>();
  r.process_text = detail::require_string(j, "process_text");
  const auto& ts = detail::require(j, "timestamp");
  if (!ts.is_number_integer()) throw ValidationError("timestamp must be an integer (ms since epoch)");
  r.timestamp = ts.get<std::int64_t>();
  if (j.contains("mp") && !j.at("mp").is_null()) r.mp = mp_from_json(j.at("mp"));
  return r;
}

// ---------------------------------------------------------------------------
// Loading and saving
// ---------------------------------------------------------------------------

/// Groups records by student (ordered by student_id) and stable-sorts each
/// student's records by timestamp.
inline std::vector<StudentSequence> group_by_student(std::vector<InteractionRecord> records) {
  std::map<std::string, std::vector<InteractionRecord>> by_student;
  for (auto& r : records) by_student[r.student_id].push_back(std::move(r));
  std::vector<StudentSequence> out;
  for (auto& [id, steps] : by_student) {
    std::stable_sort(steps.begin(), steps.end(),
                     [](const InteractionRecord& a, const InteractionRecord& b) { return a.timestamp < b.timestamp; });
    out.push_back({id, std::move(steps)});
  }
  return out;
}

inline std::map<std::string, Problem> load_problems(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ValidationError(file.string() + ": expected an array of problems");
  std::map<std::string, Problem> problems;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    Problem p;
    try {
      p = problem_from_json(doc[i]);
    } catch (const ValidationError& e) {
      throw ValidationError(file.string() + ": entry " + std::to_string(i) + ": " + e.what());
    }
    const auto id = p.problem_id;
    if (!problems.emplace(id, std::move(p)).second)
      throw ValidationError(file.string() + ": duplicate problem_id '" + id + "'");
  }
  return problems;
}

/// Reads `dir/problems.json` and `dir/interactions.jsonl`.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.problems = load_problems(dir / kProblemsFile);

  const auto path = dir / kInteractionsFile;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    try {
      records.push_back(record_from_json(j));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }

  std::set<std::string> dangling;
  for (const auto& r : records)
    if (!ds.problems.count(r.problem_id)) dangling.insert(r.problem_id);
  if (!dangling.empty()) {
    std::string msg = "interactions reference unknown problem_id(s):";
    for (const auto& id : dangling) msg += " " + id;
    throw ValidationError(msg);
  }
  ds.sequences = group_by_student(std::move(records));
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json problems = json::array();
  for (const auto& [id, p] : ds.problems) problems.push_back(to_json_value(p));
  {
    std::ofstream out(dir / kProblemsFile);
    if (!out) throw Error("cannot write " + (dir / kProblemsFile).string());
    out << problems.dump(2) << '\n';
  }
  std::ofstream out(dir / kInteractionsFile);
  if (!out) throw Error("cannot write " + (dir / kInteractionsFile).string());
  for (const auto& seq : ds.sequences)
    for (const auto& r : seq.steps) out << to_json_value(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Minimum number of written solution lines for an interaction to be kept.
inline constexpr std::size_t kMinProcessLines = 5;

/// Newline-separated lines that contain something other than whitespace.
inline std::size_t count_process_lines(std::string_view text) {
  std::size_t n = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    if (line.find_first_not_of(" \t\r\f\v") != std::string_view::npos) ++n;
    start = end + 1;
  }
  return n;
}

inline bool is_blank(std::string_view s) { return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos; }

struct PreprocessReport {
  std::size_t dropped_problems_without_text = 0;
  std::size_t dropped_missing_problem_text = 0;  // interactions
  std::size_t dropped_short_process = 0;         // interactions
  std::size_t removed_empty_sequences = 0;
  std::size_t kept_interactions = 0;

  friend bool operator==(const PreprocessReport&, const PreprocessReport&) = default;
};

struct PreprocessResult {
  Dataset data;
  PreprocessReport report;
};

/// Drops problems without text and their interactions, then interactions whose
/// process text has fewer than five non-blank lines, then empty students. An
/// interaction failing both rules is counted under the missing-text rule.
inline PreprocessResult preprocess(const Dataset& input) {
  PreprocessResult result;
  auto& out = result.data;
  auto& rep = result.report;
  for (const auto& [id, p] : input.problems) {
    if (is_blank(p.text))
      ++rep.dropped_problems_without_text;
    else
      out.problems.emplace(id, p);
  }
  for (const auto& seq : input.sequences) {
    StudentSequence kept{seq.student_id, {}};
    for (const auto& r : seq.steps) {
      if (!out.problems.count(r.problem_id)) {
        ++rep.dropped_missing_problem_text;
      } else if (count_process_lines(r.process_text) < kMinProcessLines) {
        ++rep.dropped_short_process;
      } else {
        kept.steps.push_back(r);
      }
    }
    if (kept.steps.empty()) {
      ++rep.removed_empty_sequences;
    } else {
      rep.kept_interactions += kept.steps.size();
      out.sequences.push_back(std::move(kept));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Student-level split
// ---------------------------------------------------------------------------

struct Splits {
  std::vector<StudentSequence> train;
  std::vector<StudentSequence> val;
  std::vector<StudentSequence> test;
};

/// Partitions students (never individual interactions) into train/val/test.
/// round(test_frac * n) students go to test and round(val_frac * rest) of the
/// remainder to validation, each clamped so all three parts are non-empty.
/// Depends only on the student id set and the seed, not on input order.
inline Splits split(const std::vector<StudentSequence>& sequences, std::uint64_t seed, double test_frac,
                    double val_frac) {
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw ConfigError("test_frac must lie in (0, 1)");
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw ConfigError("val_frac must lie in (0, 1)");
  const std::size_t n = sequences.size();
  if (n < 3) throw ValidationError("need at least 3 students to form train/val/test splits, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return sequences[a].student_id < sequences[b].student_id; });
  Rng rng(seed);
  rng.shuffle(order);

  const auto n_test = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(test_frac * double(n))), 1, n - 2);
  const std::size_t rest = n - n_test;
  const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(val_frac * double(rest))), 1, rest - 1);

  Splits s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& seq = sequences[order[i]];
    if (i < n_test)
      s.test.push_back(seq);
    else if (i < n_test + n_val)
      s.val.push_back(seq);
    else
      s.train.push_back(seq);
  }
  auto by_id = [](const StudentSequence& a, const StudentSequence& b) { return a.student_id < b.student_id; };
  std::sort(s.train.begin(), s.train.end(), by_id);
  std::sort(s.val.begin(), s.val.end(), by_id);
  std::sort(s.test.begin(), s.test.end(), by_id);
  return s;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Dense indices for question and concept ids, assigned in sorted id order so
/// the same problems table always yields the same mapping.
class Vocabulary {
 public:
  static Vocabulary from_problems(const std::map<std::string, Problem>& problems) {
    Vocabulary v;
    std::set<std::string> concepts;
    for (const auto& [id, p] : problems) {
      v.questions_.emplace(id, static_cast<int>(v.questions_.size()));
      concepts.insert(p.kc_ids.front());
      v.problem_concept_[id] = p.kc_ids.front();
    }
    for (const auto& c : concepts) v.concepts_.emplace(c, static_cast<int>(v.concepts_.size()));
    return v;
  }

  std::size_t num_questions() const { return questions_.size(); }
  std::size_t num_concepts() const { return concepts_.size(); }

  int question(const std::string& problem_id) const {
    auto it = questions_.find(problem_id);
    if (it == questions_.end()) throw ValidationError("problem '" + problem_id + "' not in vocabulary");
    return it->second;
  }

  /// Index of the problem's primary (first listed) concept.
  int concept_of(const std::string& problem_id) const {
    auto it = problem_concept_.find(problem_id);
    if (it == problem_concept_.end()) throw ValidationError("problem '" + problem_id + "' not in vocabulary");
    return concepts_.at(it->second);
  }

 private:
  std::map<std::string, int> questions_;
  std::map<std::string, int> concepts_;
  std::map<std::string, std::string> problem_concept_;
};

/// Value fed to the model for a strand the annotation did not cover.
inline constexpr double kMissingMpValue = 0.5;
/// Per-step MP input width: 4 ratios followed by 4 presence bits.
inline constexpr std::size_t kMpInputWidth = 2 * kNumDimensions;

struct StepFeatures {
  int question = 0;
  int concept_id = 0;
  int correct = 0;
  std::array<double, kNumDimensions> mp{};  // imputed to kMissingMpValue when absent
  std::array<bool, kNumDimensions> mp_present{};
};

/// At most max_len consecutive steps of one student.
struct Window {
  std::string student_id;
  std::vector<StepFeatures> steps;
};

/// Fixed-shape training batch. All arrays are row-major [num_sequences, max_len]
/// (times the trailing width where noted). Position t carries the inputs of
/// step t and the targets of step t + 1; valid_mask marks positions that have a
/// next step, so padding and each window's last step are unsupervised.
struct Batch {
  std::size_t num_sequences = 0;
  std::size_t max_len = 0;
  std::vector<int> question_ids;
  std::vector<int> concept_ids;
  std::vector<double> correctness;
  std::vector<double> mp_inputs;  // width kMpInputWidth
  std::vector<int> target_question_ids;
  std::vector<int> target_concept_ids;
  std::vector<double> targets_correct;
  std::vector<double> targets_mp;      // width 4
  std::vector<double> target_mp_mask;  // width 4
  std::vector<double> valid_mask;

  std::size_t positions() const { return num_sequences * max_len; }
  std::size_t supervised() const {
    std::size_t n = 0;
    for (double v : valid_mask) n += (v != 0.0);
    return n;
  }
};

inline StepFeatures step_features(const InteractionRecord& r, const Vocabulary& vocab) {
  StepFeatures f;
  f.question = vocab.question(r.problem_id);
  f.concept_id = vocab.concept_of(r.problem_id);
  f.correct = r.correct;
  for (auto d : kDimensions) {
    const bool present = r.mp && r.mp->present(d);
    f.mp_present[index(d)] = present;
    f.mp[index(d)] = present ? r.mp->value(d) : kMissingMpValue;
  }
  return f;
}

/// Cuts each sequence into consecutive windows of at most max_len steps.
inline std::vector<Window> make_windows(const std::vector<StudentSequence>& sequences, const Vocabulary& vocab,
                                        std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  std::vector<Window> windows;
  for (const auto& seq : sequences) {
    for (std::size_t start = 0; start < seq.steps.size(); start += max_len) {
      Window w{seq.student_id, {}};
      const std::size_t end = std::min(seq.steps.size(), start + max_len);
      for (std::size_t i = start; i < end; ++i) w.steps.push_back(step_features(seq.steps[i], vocab));
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

inline Batch collate(std::span<const Window> windows, std::size_t max_len) {
  Batch b;
  b.num_sequences = windows.size();
  b.max_len = max_len;
  const std::size_t n = b.positions();
  b.question_ids.assign(n, 0);
  b.concept_ids.assign(n, 0);
  b.correctness.assign(n, 0.0);
  b.mp_inputs.assign(n * kMpInputWidth, 0.0);
  b.target_question_ids.assign(n, 0);
  b.target_concept_ids.assign(n, 0);
  b.targets_correct.assign(n, 0.0);
  b.targets_mp.assign(n * kNumDimensions, 0.0);
  b.target_mp_mask.assign(n * kNumDimensions, 0.0);
  b.valid_mask.assign(n, 0.0);
  for (std::size_t s = 0; s < windows.size(); ++s) {
    const auto& steps = windows[s].steps;
    if (steps.size() > max_len) throw ShapeError("window longer than max_len");
    for (std::size_t t = 0; t < max_len; ++t) {
      const std::size_t p = s * max_len + t;
      for (std::size_t d = 0; d < kNumDimensions; ++d) b.mp_inputs[p * kMpInputWidth + d] = kMissingMpValue;
      if (t >= steps.size()) continue;
      const auto& cur = steps[t];
      b.question_ids[p] = cur.question;
      b.concept_ids[p] = cur.concept_id;
      b.correctness[p] = cur.correct;
      for (std::size_t d = 0; d < kNumDimensions; ++d) {
        b.mp_inputs[p * kMpInputWidth + d] = cur.mp[d];
        b.mp_inputs[p * kMpInputWidth + kNumDimensions + d] = cur.mp_present[d] ? 1.0 : 0.0;
      }
      if (t + 1 >= steps.size()) continue;
      const auto& next = steps[t + 1];
      b.valid_mask[p] = 1.0;
      b.target_question_ids[p] = next.question;
      b.target_concept_ids[p] = next.concept_id;
      b.targets_correct[p] = next.correct;
      for (std::size_t d = 0; d < kNumDimensions; ++d) {
        b.targets_mp[p * kNumDimensions + d] = next.mp_present[d] ? next.mp[d] : 0.0;
        b.target_mp_mask[p * kNumDimensions + d] = next.mp_present[d] ? 1.0 : 0.0;
      }
    }
  }
  return b;
}

inline std::vector<Batch> batches_from_windows(std::span<const Window> windows, std::size_t max_len,
                                               std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < windows.size(); i += batch_size)
    out.push_back(collate(windows.subspan(i, std::min(batch_size, windows.size() - i)), max_len));
  return out;
}

/// Windows every sequence, then groups windows into batches in order.
inline std::vector<Batch> make_batches(const std::vector<StudentSequence>& sequences, const Vocabulary& vocab,
                                       std::size_t max_len, std::size_t batch_size) {
  const auto windows = make_windows(sequences, vocab, max_len);
  return batches_from_windows(windows, max_len, batch_size);
}

}  // namespace statuskt
