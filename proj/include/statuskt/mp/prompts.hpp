#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "statuskt/dataset.hpp"
#include "statuskt/mp/rubric.hpp"
#include "statuskt/mp/templates.hpp"

namespace statuskt::mp {

enum class Stage { indicators, responses, verdicts };

constexpr std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::indicators: return "indicators";
    case Stage::responses: return "responses";
    case Stage::verdicts: return "verdicts";
  }
  return "?";
}

/// A prompt split the way it is sent: the fixed instructions go out as the
/// system message and the filled-in input section as the user message.
struct RenderedPrompt {
  Stage stage = Stage::indicators;
  std::string instructions;
  std::string inputs;
  std::size_t rule_width = 83;

  /// Single-document form, instructions and inputs separated by a dashed rule.
  std::string full() const { return instructions + "\n\n" + std::string(rule_width, '-') + "\n\n" + inputs; }

  friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

namespace detail {

// Substitutes in one pass so a value that itself contains "{...}" is never
// re-expanded.
inline std::string fill(std::string_view pattern, std::initializer_list<std::pair<std::string_view, std::string_view>> values) {
  std::string out;
  std::size_t i = 0;
  while (i < pattern.size()) {
    bool matched = false;
    if (pattern[i] == '{') {
      for (const auto& [key, value] : values) {
        if (pattern.compare(i, key.size(), key) == 0) {
          out += value;
          i += key.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) out += pattern[i++];
  }
  return out;
}

inline std::string pair_object(const std::string& code, const std::string& text) {
  return "{" + nlohmann::json(code).dump() + ": " + nlohmann::json(text).dump() + "}";
}

}  // namespace detail

/// `Options: [{"index":1,"text":"..."}, ...]`, or empty for short answer.
inline std::string option_string(const Problem& p) {
  if (p.question_type != QuestionType::multiple_choice || p.options.empty()) return {};
  std::string out = "Options: [";
  for (std::size_t i = 0; i < p.options.size(); ++i) {
    if (i) out += ", ";
    nlohmann::ordered_json o;
    o["index"] = i + 1;
    o["text"] = p.options[i];
    out += o.dump();
  }
  return out + "]";
}

/// Curriculum unit shown to the teacher: the problem's KC tags.
inline std::string unit_title(const Problem& p) {
  std::string out;
  for (std::size_t i = 0; i < p.kc_ids.size(); ++i) out += (i ? ", " : "") + p.kc_ids[i];
  return out;
}

/// Rubric as a JSON dictionary, four-space indented (student stage).
inline std::string indicator_dictionary(const IndicatorSet& set) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& ind : set) j[ind.code] = ind.text;
  return j.dump(4);
}

/// Rubric as a list of single-key objects (evaluation stage).
inline std::string indicator_list(const IndicatorSet& set) {
  std::string out = "[\n";
  bool first = true;
  for (const auto& ind : set) {
    if (!first) out += ",\n";
    out += "    " + detail::pair_object(ind.code, ind.text);
    first = false;
  }
  return out + "\n]";
}

/// Responses in rubric order, same list form as the indicators.
inline std::string response_list(const IndicatorSet& set, const ResponseSet& responses) {
  std::string out = "[\n";
  bool first = true;
  for (const auto& ind : set) {
    auto it = responses.find(ind.code);
    if (!first) out += ",\n";
    out += "    " + detail::pair_object(ind.code, it == responses.end() ? std::string(kUnknownAnswer) : it->second);
    first = false;
  }
  return out + "\n]";
}

inline RenderedPrompt render_indicator_prompt(const Problem& problem) {
  if (is_blank(problem.text)) throw ValidationError("problem " + problem.problem_id + " has no text");
  const auto options = option_string(problem);
  const auto unit = unit_title(problem);
  return {Stage::indicators, std::string(kIndicatorInstructions),
          detail::fill("Problem (in Korean): {Problem_text}\n{problem_option_string}\nUnit (in Korean): {curriculum_theme_title}",
                       {{"{Problem_text}", problem.text},
                        {"{problem_option_string}", options},
                        {"{curriculum_theme_title}", unit}}),
          100};
}

/// The OCR trace goes on the lines after its heading.
inline RenderedPrompt render_student_prompt(const Problem& problem, const IndicatorSet& indicators,
                                            std::string_view process_text, std::string_view selected_answer) {
  if (indicators.empty()) throw ValidationError("student prompt needs a non-empty rubric");
  const auto dict = indicator_dictionary(indicators);
  const auto options = option_string(problem);
  const std::string trace = "\n" + std::string(process_text);
  return {Stage::responses, std::string(kStudentInstructions),
          detail::fill("Input Indicators: {indicator_text}\n\nProblem (in Korean): {problem}\n{problem_option_string}\n\n"
                       "My solving process (OCR):{student_solving_trace}\n\nMy answer: {solution_answer_sets}",
                       {{"{indicator_text}", dict},
                        {"{problem}", problem.text},
                        {"{problem_option_string}", options},
                        {"{student_solving_trace}", trace},
                        {"{solution_answer_sets}", selected_answer}}),
          83};
}

inline RenderedPrompt render_eval_prompt(const Problem& problem, const IndicatorSet& indicators,
                                         const ResponseSet& responses) {
  if (indicators.empty()) throw ValidationError("evaluation prompt needs a non-empty rubric");
  const auto options = option_string(problem);
  const auto rubric = indicator_list(indicators);
  const auto answers = response_list(indicators, responses);
  return {Stage::verdicts, std::string(kEvaluationInstructions),
          detail::fill("Problem (in Korean): {problem}\n{problem_option_string}\n\nMathematical Proficiency Indicators:\n"
                       "{indicator_text}\n\nAnswer Indicate: {answer_indicator_text}",
                       {{"{problem}", problem.text},
                        {"{problem_option_string}", options},
                        {"{indicator_text}", rubric},
                        {"{answer_indicator_text}", answers}}),
          83};
}

}  // namespace statuskt::mp
