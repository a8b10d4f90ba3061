#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "statuskt/errors.hpp"
#include "statuskt/mp_ratios.hpp"

namespace statuskt::mp {

using nlohmann::json;

inline constexpr std::string_view kUnknownAnswer = "I don't know";

/// One rubric item, e.g. {"CU1", CU, 1, "Determine the type of this equation"}.
struct Indicator {
  std::string code;
  Dimension category = Dimension::CU;
  int ordinal = 1;
  std::string text;

  friend bool operator==(const Indicator&, const Indicator&) = default;
};

/// Splits "PF12" into (PF, 12). Anything outside ^(CU|SC|PF|AR)[0-9]+$ is rejected.
inline std::optional<std::pair<Dimension, int>> parse_code(std::string_view code) {
  if (code.size() < 3) return std::nullopt;
  auto dim = parse_dimension(code.substr(0, 2));
  if (!dim) return std::nullopt;
  const auto digits = code.substr(2);
  if (digits.size() > 9 || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return std::nullopt;
  const int ordinal = std::stoi(std::string(digits));
  if (ordinal <= 0) return std::nullopt;
  return std::pair{*dim, ordinal};
}

inline Indicator make_indicator(std::string code, std::string text) {
  auto parsed = parse_code(code);
  if (!parsed) throw ValidationError("invalid indicator code '" + code + "'");
  return {std::move(code), parsed->first, parsed->second, std::move(text)};
}

/// Rubric for one problem, in the order the teacher stage produced it.
class IndicatorSet {
 public:
  IndicatorSet() = default;
  explicit IndicatorSet(std::string problem_id) : problem_id_(std::move(problem_id)) {}

  void add(Indicator ind) {
    if (contains(ind.code)) throw ValidationError("duplicate indicator code " + ind.code);
    items_.push_back(std::move(ind));
  }

  const std::string& problem_id() const { return problem_id_; }
  void set_problem_id(std::string id) { problem_id_ = std::move(id); }
  const std::vector<Indicator>& indicators() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  bool contains(std::string_view code) const {
    return std::any_of(items_.begin(), items_.end(), [&](const Indicator& i) { return i.code == code; });
  }
  std::vector<std::string> codes() const {
    std::vector<std::string> out;
    for (const auto& i : items_) out.push_back(i.code);
    return out;
  }
  std::size_t count(Dimension d) const {
    return static_cast<std::size_t>(
        std::count_if(items_.begin(), items_.end(), [&](const Indicator& i) { return i.category == d; }));
  }

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  friend bool operator==(const IndicatorSet&, const IndicatorSet&) = default;

 private:
  std::string problem_id_;
  std::vector<Indicator> items_;
};

using ResponseSet = std::map<std::string, std::string>;
using Verdicts = std::map<std::string, int>;

// ---------------------------------------------------------------------------
// JSON extraction

namespace detail {

// Strips a ```json ... ``` fence if the text carries one.
inline std::string_view strip_fence(std::string_view s) {
  const auto open = s.find("```");
  if (open == std::string_view::npos) return s;
  auto body_start = s.find('\n', open);
  if (body_start == std::string_view::npos) return s;
  ++body_start;
  const auto close = s.find("```", body_start);
  return s.substr(body_start, close == std::string_view::npos ? std::string_view::npos : close - body_start);
}

// Returns [first '{' .. its matching '}'], skipping braces inside strings.
inline std::optional<std::string> balanced_object(std::string_view s) {
  for (std::size_t start = s.find('{'); start != std::string_view::npos; start = s.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < s.size(); ++i) {
      const char c = s[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) return std::string(s.substr(start, i - start + 1));
    }
  }
  return std::nullopt;
}

// Raw line breaks inside string literals are folded into one space; models
// wrap long indicator texts this way.
inline std::string fold_string_newlines(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false, escaped = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string && !escaped && (c == '\n' || c == '\r')) {
      while (!out.empty() && (out.back() == ' ' || out.back() == '\t')) out.pop_back();
      while (i + 1 < s.size() && std::isspace(static_cast<unsigned char>(s[i + 1]))) ++i;
      out += ' ';
      continue;
    }
    out += c;
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    }
  }
  return out;
}

// Markdown-escaped underscores ("\_") and stray LaTeX backslashes such as
// "\in" are not valid JSON escapes; drop the backslash in front of them.
inline std::string drop_invalid_escapes(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[i + 1];
      if (std::string_view("\"\\/bfnrtu").find(n) == std::string_view::npos) continue;
      out += s[i];
      out += n;
      ++i;
      continue;
    }
    out += s[i];
  }
  return out;
}

}  // namespace detail

/// Finds and parses the JSON object in an LLM completion. Tolerates
/// surrounding prose, code fences, wrapped strings and markdown escapes.
/// Pass nlohmann::ordered_json to keep key order.
template <class Json = json>
Json extract_json_object(std::string_view raw) {
  auto candidate = detail::balanced_object(detail::strip_fence(raw));
  if (!candidate) candidate = detail::balanced_object(raw);
  if (!candidate) throw ParseError("no JSON object found in completion");
  auto parsed = Json::parse(*candidate, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  parsed = Json::parse(detail::drop_invalid_escapes(detail::fold_string_newlines(*candidate)), nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) throw ParseError("completion contains malformed JSON");
  return parsed;
}

// Flattens {"CU1": "..."} or [{"CU1": "..."}, ...] into ordered pairs.
inline std::vector<std::pair<std::string, json>> ordered_entries(const json& j) {
  std::vector<std::pair<std::string, json>> out;
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) out.emplace_back(it.key(), it.value());
  } else if (j.is_array()) {
    for (const auto& item : j) {
      if (!item.is_object()) throw ParseError("indicator list entries must be objects");
      for (auto it = item.begin(); it != item.end(); ++it) out.emplace_back(it.key(), it.value());
    }
  } else {
    throw ParseError("expected an object or a list of objects");
  }
  return out;
}

inline std::string text_of(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// ---------------------------------------------------------------------------
// Stage parsers

/// Teacher-stage completion -> rubric. Unknown category prefixes (e.g. "AD1")
/// are dropped and noted in `warnings`.
inline IndicatorSet parse_indicators(std::string_view raw, std::string problem_id = {},
                                     std::vector<std::string>* warnings = nullptr) {
  const auto root = extract_json_object<nlohmann::ordered_json>(raw);
  const nlohmann::ordered_json* list = &root;
  if (root.contains("mathematical_proficiency_indicators")) list = &root.at("mathematical_proficiency_indicators");

  IndicatorSet set(std::move(problem_id));
  auto note = [&](std::string msg) {
    if (warnings) warnings->push_back(std::move(msg));
  };
  auto take = [&](const std::string& code, const nlohmann::ordered_json& value) {
    if (!parse_code(code)) {
      note("dropped indicator with unknown code '" + code + "'");
      return;
    }
    if (set.contains(code)) {
      note("dropped duplicate indicator '" + code + "'");
      return;
    }
    set.add(make_indicator(code, value.is_string() ? value.get<std::string>() : value.dump()));
  };
  if (list->is_array()) {
    for (const auto& item : *list) {
      if (!item.is_object()) {
        note("skipped non-object indicator entry");
        continue;
      }
      for (auto it = item.begin(); it != item.end(); ++it) take(it.key(), it.value());
    }
  } else if (list->is_object()) {
    for (auto it = list->begin(); it != list->end(); ++it) take(it.key(), it.value());
  } else {
    throw ParseError("mathematical_proficiency_indicators must be a list or an object");
  }
  if (set.empty()) throw EmptyRubricError("teacher completion contains no valid indicators");
  return set;
}

/// Student-stage completion -> answers keyed by rubric code. Missing codes
/// become "I don't know"; codes outside the rubric are dropped.
inline ResponseSet parse_responses(std::string_view raw, const IndicatorSet& indicators,
                                   std::vector<std::string>* warnings = nullptr) {
  const auto j = extract_json_object(raw);
  ResponseSet out;
  for (const auto& [code, value] : ordered_entries(j)) {
    if (!indicators.contains(code)) {
      if (warnings) warnings->push_back("dropped response for unknown code '" + code + "'");
      continue;
    }
    out[code] = text_of(value);
  }
  for (const auto& ind : indicators)
    if (!out.count(ind.code)) out[ind.code] = std::string(kUnknownAnswer);
  return out;
}

/// Evaluation-stage completion -> binary verdict per rubric code.
inline Verdicts parse_verdicts(std::string_view raw, const IndicatorSet& indicators,
                               std::vector<std::string>* warnings = nullptr) {
  const auto j = extract_json_object(raw);
  Verdicts out;
  for (const auto& [code, value] : ordered_entries(j)) {
    int v = -1;
    if (value.is_number_integer()) v = value.get<int>();
    else if (value.is_number_float() && (value.get<double>() == 0.0 || value.get<double>() == 1.0))
      v = static_cast<int>(value.get<double>());
    else if (value.is_string() && (value == "0" || value == "1")) v = value == "1" ? 1 : 0;
    if (v != 0 && v != 1) throw ValidationError("verdict for " + code + " must be 0 or 1, got " + value.dump());
    if (!indicators.contains(code)) {
      if (warnings) warnings->push_back("dropped verdict for unknown code '" + code + "'");
      continue;
    }
    out[code] = v;
  }
  std::vector<std::string> missing;
  for (const auto& ind : indicators)
    if (!out.count(ind.code)) missing.push_back(ind.code);
  if (!missing.empty()) throw IncompleteVerdictError(std::move(missing));
  return out;
}

/// Per-strand satisfied / total over the rubric. Strands without indicators
/// are absent.
inline MPRatios compute_mp_ratios(const IndicatorSet& indicators, const Verdicts& verdicts) {
  std::array<DimensionCount, kNumDimensions> counts{};
  std::vector<std::string> missing;
  for (const auto& ind : indicators) {
    auto it = verdicts.find(ind.code);
    if (it == verdicts.end()) {
      missing.push_back(ind.code);
      continue;
    }
    auto& c = counts[index(ind.category)];
    ++c.total;
    c.satisfied += it->second;
  }
  if (!missing.empty()) throw IncompleteVerdictError(std::move(missing));
  return MPRatios::from_counts(counts);
}

// ---------------------------------------------------------------------------
// JSON forms used by the audit trail

inline json to_json_value(const IndicatorSet& set) {
  json list = json::array();
  for (const auto& ind : set) list.push_back({{"code", ind.code}, {"text", ind.text}});
  return list;
}

inline IndicatorSet indicators_from_json(const json& list, std::string problem_id = {}) {
  IndicatorSet set(std::move(problem_id));
  for (const auto& e : list) set.add(make_indicator(e.at("code").get<std::string>(), e.at("text").get<std::string>()));
  return set;
}

}  // namespace statuskt::mp
