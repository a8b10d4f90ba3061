#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "statuskt/dataset.hpp"
#include "statuskt/mp/client.hpp"
#include "statuskt/mp/prompts.hpp"
#include "statuskt/mp/rubric.hpp"
#include "statuskt/util/hash.hpp"
#include "statuskt/util/parallel.hpp"

namespace statuskt::mp {

namespace fs = std::filesystem;

/// Writes `content` to a sibling temp file, then renames it into place, so
/// readers never observe a partial file.
inline void write_atomically(const fs::path& target, const std::string& content) {
  static std::atomic<std::uint64_t> counter{0};
  fs::create_directories(target.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << std::this_thread::get_id() << "." << counter++;
  const fs::path tmp = target.string() + suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::optional<std::string> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Content-addressed store of stage completions. A key is the SHA-256 of the
/// stage name and the full rendered prompt, so reordering the dataset does not
/// invalidate entries. Completions that never parsed are recorded separately
/// as failures.
class CompletionCache {
 public:
  explicit CompletionCache(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_ / "completions");
    fs::create_directories(root_ / "failures");
  }

  static std::string key(const RenderedPrompt& prompt) {
    return Sha256().update(to_string(prompt.stage)).update("\n").update(prompt.full()).hex();
  }

  std::optional<std::string> get(const std::string& key) const { return read_file(completion_path(key)); }
  void put(const std::string& key, const std::string& completion) const {
    write_atomically(completion_path(key), completion);
  }

  std::optional<std::string> failure(const std::string& key) const { return read_file(failure_path(key)); }
  void put_failure(const std::string& key, const std::string& message) const {
    write_atomically(failure_path(key), message);
  }
  void clear_failure(const std::string& key) const {
    std::error_code ec;
    fs::remove(failure_path(key), ec);
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path completion_path(const std::string& key) const { return root_ / "completions" / (key + ".txt"); }
  fs::path failure_path(const std::string& key) const { return root_ / "failures" / (key + ".txt"); }
  fs::path root_;
};

struct PipelineOptions {
  std::size_t concurrency = 4;
  ChatParams params;
  std::chrono::milliseconds backoff_base{500};  // doubled after each failed attempt
  bool retry_failures = false;  // re-attempt prompts that exhausted their retries on an earlier run
  bool write_audit = true;
};

struct InteractionFailure {
  std::string student_id;
  std::size_t step = 0;
  std::string problem_id;
  Stage stage = Stage::indicators;
  std::string message;
};

struct PipelineReport {
  std::size_t interactions = 0;
  std::size_t annotated = 0;
  std::size_t problems = 0;
  std::size_t client_calls = 0;
  std::size_t cache_hits = 0;
  std::vector<InteractionFailure> failures;  // sorted by (student, step)
  std::vector<std::string> warnings;

  std::size_t failed() const { return failures.size(); }
  double failure_rate() const {
    return interactions ? static_cast<double>(failures.size()) / static_cast<double>(interactions) : 0.0;
  }
};

struct PipelineResult {
  std::vector<StudentSequence> sequences;
  PipelineReport report;
};

/// Per-interaction audit record.
struct AuditRecord {
  std::string student_id;
  std::size_t step = 0;
  std::string problem_id;
  IndicatorSet indicators;
  ResponseSet responses;
  Verdicts verdicts;
  std::optional<MPRatios> ratios;
  std::string error;
  std::string started_at;
  std::string finished_at;
};

inline nlohmann::json to_json_value(const AuditRecord& a) {
  nlohmann::json j;
  j["student_id"] = a.student_id;
  j["step"] = a.step;
  j["problem_id"] = a.problem_id;
  j["indicators"] = to_json_value(a.indicators);
  j["responses"] = a.responses;
  j["verdicts"] = a.verdicts;
  j["ratios"] = a.ratios ? to_json_value(*a.ratios) : nlohmann::json(nullptr);
  j["status"] = a.ratios ? "ok" : "failed";
  if (!a.error.empty()) j["error"] = a.error;
  j["timestamps"] = {{"started", a.started_at}, {"finished", a.finished_at}};
  return j;
}

inline AuditRecord audit_from_json(const nlohmann::json& j) {
  AuditRecord a;
  a.student_id = j.at("student_id").get<std::string>();
  a.step = j.at("step").get<std::size_t>();
  a.problem_id = j.at("problem_id").get<std::string>();
  a.indicators = indicators_from_json(j.at("indicators"), a.problem_id);
  a.responses = j.at("responses").get<ResponseSet>();
  a.verdicts = j.at("verdicts").get<Verdicts>();
  if (!j.at("ratios").is_null()) a.ratios = mp_from_json(j.at("ratios"));
  if (j.contains("error")) a.error = j.at("error").get<std::string>();
  return a;
}

/// File name for an interaction's audit record; ids are sanitised.
inline std::string audit_file_name(const std::string& student_id, std::size_t step) {
  std::string safe;
  for (char c : student_id) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return safe + "__" + std::to_string(step) + ".json";
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

// Thrown when a stage gives up; carries the stage for the failure report.
class StageFailure : public Error {
 public:
  StageFailure(Stage stage, const std::string& msg) : Error(msg), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

// Cache lookup, then up to 1 + max_retries client attempts. An attempt fails
// if the client throws or if `parse` rejects the completion; only parsed
// completions are cached.
template <class Parse>
auto run_stage(const RenderedPrompt& prompt, ChatClient& client, const CompletionCache& cache,
               const PipelineOptions& opts, Parse&& parse, std::atomic<std::size_t>& calls,
               std::atomic<std::size_t>& hits) {
  const auto key = CompletionCache::key(prompt);
  if (auto cached = cache.get(key)) {
    try {
      auto value = parse(*cached);
      ++hits;
      return value;
    } catch (const Error&) {
      // Stale or hand-edited entry: fall through to a fresh call.
    }
  }
  if (!opts.retry_failures) {
    if (auto previous = cache.failure(key))
      throw StageFailure(prompt.stage, "previously failed: " + *previous);
  }
  std::string last_error;
  for (int attempt = 0; attempt <= opts.params.max_retries; ++attempt) {
    if (attempt > 0 && opts.backoff_base.count() > 0)
      std::this_thread::sleep_for(opts.backoff_base * (1 << std::min(attempt - 1, 10)));
    try {
      ++calls;
      auto completion = client.complete(prompt.instructions, prompt.inputs, opts.params);
      auto value = parse(completion);
      cache.put(key, completion);
      cache.clear_failure(key);
      return value;
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  const std::string msg = std::string(to_string(prompt.stage)) + " stage failed after " +
                          std::to_string(opts.params.max_retries + 1) + " attempts: " + last_error;
  cache.put_failure(key, msg);
  throw StageFailure(prompt.stage, msg);
}

}  // namespace detail

/// Annotates every interaction with MP ratios via the three-stage pipeline.
/// Rubrics are built once per problem; student and evaluation stages run per
/// interaction. At most `concurrency` client calls are in flight. An
/// interaction whose stage gives up gets mp = absent and is listed in the
/// report; the run itself continues.
inline PipelineResult run_pipeline(const std::map<std::string, Problem>& problems,
                                   std::vector<StudentSequence> sequences, ChatClient& client,
                                   const fs::path& cache_dir, const PipelineOptions& opts = {}) {
  struct Item {
    std::size_t seq, step;
  };
  std::vector<Item> items;
  std::set<std::string> problem_ids;
  for (std::size_t s = 0; s < sequences.size(); ++s)
    for (std::size_t t = 0; t < sequences[s].steps.size(); ++t) {
      const auto& pid = sequences[s].steps[t].problem_id;
      if (!problems.count(pid)) throw ValidationError("interaction references unknown problem " + pid);
      problem_ids.insert(pid);
      items.push_back({s, t});
    }

  const CompletionCache cache(cache_dir);
  std::atomic<std::size_t> calls{0}, hits{0};
  std::mutex warn_mutex;
  std::vector<std::string> warnings;
  auto warn = [&](std::vector<std::string>& local) {
    if (local.empty()) return;
    std::lock_guard lock(warn_mutex);
    warnings.insert(warnings.end(), local.begin(), local.end());
  };

  // Phase A: one rubric per problem.
  const std::vector<std::string> pids(problem_ids.begin(), problem_ids.end());
  std::vector<std::optional<IndicatorSet>> rubric(pids.size());
  std::vector<std::string> rubric_error(pids.size());
  parallel_for(pids.size(), opts.concurrency, [&](std::size_t i) {
    std::vector<std::string> local;
    try {
      const auto prompt = render_indicator_prompt(problems.at(pids[i]));
      rubric[i] = detail::run_stage(
          prompt, client, cache, opts,
          [&](const std::string& raw) {
            local.clear();
            return parse_indicators(raw, pids[i], &local);
          },
          calls, hits);
      for (auto& w : local) w = pids[i] + ": " + w;
      warn(local);
    } catch (const Error& e) {
      rubric_error[i] = e.what();
    }
  });
  std::map<std::string, std::size_t> rubric_index;
  for (std::size_t i = 0; i < pids.size(); ++i) rubric_index[pids[i]] = i;

  // Phase B: student and evaluation stages per interaction.
  std::vector<AuditRecord> audits(items.size());
  std::vector<std::optional<InteractionFailure>> failed(items.size());
  parallel_for(items.size(), opts.concurrency, [&](std::size_t i) {
    const auto& seq = sequences[items[i].seq];
    const auto& rec = seq.steps[items[i].step];
    auto& audit = audits[i];
    audit.student_id = seq.student_id;
    audit.step = items[i].step;
    audit.problem_id = rec.problem_id;
    audit.started_at = utc_now();
    const std::size_t r = rubric_index.at(rec.problem_id);
    try {
      if (!rubric[r]) throw detail::StageFailure(Stage::indicators, rubric_error[r]);
      audit.indicators = *rubric[r];
      const auto& problem = problems.at(rec.problem_id);
      std::vector<std::string> local;
      audit.responses = detail::run_stage(
          render_student_prompt(problem, audit.indicators, rec.process_text, rec.selected_answer), client, cache,
          opts,
          [&](const std::string& raw) {
            local.clear();
            return parse_responses(raw, audit.indicators, &local);
          },
          calls, hits);
      std::vector<std::string> local_eval;
      audit.verdicts = detail::run_stage(
          render_eval_prompt(problem, audit.indicators, audit.responses), client, cache, opts,
          [&](const std::string& raw) {
            local_eval.clear();
            return parse_verdicts(raw, audit.indicators, &local_eval);
          },
          calls, hits);
      local.insert(local.end(), local_eval.begin(), local_eval.end());
      for (auto& w : local) w = seq.student_id + "#" + std::to_string(items[i].step) + ": " + w;
      warn(local);
      audit.ratios = compute_mp_ratios(audit.indicators, audit.verdicts);
    } catch (const detail::StageFailure& e) {
      audit.error = e.what();
      failed[i] = InteractionFailure{seq.student_id, items[i].step, rec.problem_id, e.stage(), e.what()};
    }
    audit.finished_at = utc_now();
    if (opts.write_audit)
      write_atomically(cache_dir / "audit" / audit_file_name(audit.student_id, audit.step),
                       to_json_value(audit).dump(2));
  });

  // Assemble single-threaded.
  PipelineResult out;
  out.report.interactions = items.size();
  out.report.problems = pids.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& rec = sequences[items[i].seq].steps[items[i].step];
    if (failed[i]) {
      rec.mp = MPRatios::absent();
      out.report.failures.push_back(*failed[i]);
    } else {
      rec.mp = audits[i].ratios;
      ++out.report.annotated;
    }
  }
  out.report.client_calls = calls.load();
  out.report.cache_hits = hits.load();
  std::sort(warnings.begin(), warnings.end());
  out.report.warnings = std::move(warnings);
  out.sequences = std::move(sequences);
  return out;
}

inline PipelineResult run_pipeline(const Dataset& data, ChatClient& client, const fs::path& cache_dir,
                                   const PipelineOptions& opts = {}) {
  return run_pipeline(data.problems, data.sequences, client, cache_dir, opts);
}

}  // namespace statuskt::mp
