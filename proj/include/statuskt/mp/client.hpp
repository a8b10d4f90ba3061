#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "statuskt/errors.hpp"
#include "statuskt/mp/prompts.hpp"
#include "statuskt/random.hpp"
#include "statuskt/util/hash.hpp"

namespace statuskt::mp {

struct ChatParams {
  double temperature = 0.0;
  int max_retries = 3;  // extra attempts after the first
  std::chrono::milliseconds timeout{120'000};
};

/// One chat-completion round trip. Implementations make a single attempt and
/// throw ClientError on failure; retrying is the caller's business.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const std::string& system_message, const std::string& user_message,
                               const ChatParams& params) = 0;
};

/// Which pipeline stage a system message belongs to, from its opening line.
inline std::optional<Stage> detect_stage(std::string_view system_message) {
  if (system_message.starts_with("You are Student GPT")) return Stage::responses;
  if (system_message.starts_with("You are Teacher GPT. Your task is to evaluate")) return Stage::verdicts;
  if (system_message.starts_with("You are Teacher GPT")) return Stage::indicators;
  return std::nullopt;
}

/// Offline stand-in for a hosted model. Output is a pure function of the
/// prompt: the RNG is seeded from a SHA-256 of both messages.
///   teacher:  8-15 indicators, every strand at least once
///   student:  "I don't know" with probability 1/4, otherwise a short answer
///   evaluate: 0 for "I don't know", otherwise Bernoulli(0.7)
class MockChatClient : public ChatClient {
 public:
  /// Returning true from the hook makes that call throw ClientError.
  using FailureHook = std::function<bool(Stage, std::string_view user_message)>;

  MockChatClient() = default;
  explicit MockChatClient(FailureHook fail) : fail_(std::move(fail)) {}

  std::string complete(const std::string& system_message, const std::string& user_message,
                       const ChatParams&) override {
    ++calls_;
    const auto stage = detect_stage(system_message);
    if (!stage) throw ClientError("mock client: unrecognised system prompt");
    if (fail_ && fail_(*stage, user_message)) {
      ++failures_;
      throw ClientError("mock client: injected failure");
    }
    Rng rng(sha256_u64(system_message + '\x1f' + user_message));
    switch (*stage) {
      case Stage::indicators: return teacher(rng);
      case Stage::responses: return student(rng, user_message);
      case Stage::verdicts: return evaluator(rng, user_message);
    }
    return {};
  }

  std::size_t calls() const { return calls_.load(); }
  std::size_t injected_failures() const { return failures_.load(); }
  void reset_counters() {
    calls_ = 0;
    failures_ = 0;
  }

 private:
  static std::string teacher(Rng& rng) {
    const std::size_t n = 8 + rng.below(8);
    std::vector<Dimension> cats(kDimensions.begin(), kDimensions.end());
    while (cats.size() < n) cats.push_back(kDimensions[rng.below(kNumDimensions)]);
    rng.shuffle(cats);
    std::array<int, kNumDimensions> ordinal{};
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (auto d : cats) {
      const std::string code = std::string(to_string(d)) + std::to_string(++ordinal[index(d)]);
      nlohmann::ordered_json item;
      item[code] = "Step " + std::to_string(list.size() + 1) + ": check " + std::string(to_string(d)) + " evidence";
      list.push_back(item);
    }
    nlohmann::ordered_json root;
    root["mathematical_proficiency_indicators"] = list;
    // Wrapped like a chat model would, so the extractor is exercised.
    return "Here are the indicators.\n```json\n" + root.dump(2) + "\n```\n";
  }

  static std::string student(Rng& rng, std::string_view user) {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& code : codes_between(user, "Input Indicators:", "\n\nProblem (in Korean):"))
      out[code] = rng.bernoulli(0.25) ? std::string(kUnknownAnswer) : "I worked on " + code + " in my solution.";
    return out.dump(4);
  }

  static std::string evaluator(Rng& rng, std::string_view user) {
    const auto codes = codes_between(user, "Mathematical Proficiency Indicators:", "\n\nAnswer Indicate:");
    const auto marker = user.find("Answer Indicate:");
    std::map<std::string, std::string> answers;
    if (marker != std::string_view::npos) {
      auto j = nlohmann::json::parse(user.substr(marker + 16), nullptr, false);
      if (j.is_array())
        for (const auto& item : j)
          if (item.is_object())
            for (auto it = item.begin(); it != item.end(); ++it)
              answers[it.key()] = it.value().is_string() ? it.value().get<std::string>() : "";
    }
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& code : codes) {
      const bool unknown = answers.count(code) && answers[code].starts_with(kUnknownAnswer);
      const bool pass = rng.bernoulli(0.7);
      out[code] = unknown ? 0 : (pass ? 1 : 0);
    }
    return out.dump();
  }

  // Keys of the JSON object (or list of single-key objects) between two
  // markers, in order.
  static std::vector<std::string> codes_between(std::string_view text, std::string_view from, std::string_view to) {
    const auto a = text.find(from);
    if (a == std::string_view::npos) return {};
    const auto start = a + from.size();
    const auto b = text.find(to, start);
    const auto j = nlohmann::ordered_json::parse(
        text.substr(start, b == std::string_view::npos ? std::string_view::npos : b - start), nullptr, false);
    std::vector<std::string> codes;
    auto take = [&](const nlohmann::ordered_json& obj) {
      for (auto it = obj.begin(); it != obj.end(); ++it) codes.push_back(it.key());
    };
    if (j.is_object()) take(j);
    if (j.is_array())
      for (const auto& item : j)
        if (item.is_object()) take(item);
    return codes;
  }

  FailureHook fail_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> failures_{0};
};

}  // namespace statuskt::mp
