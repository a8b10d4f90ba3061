#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace statuskt {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates a schema invariant (bad field values, dangling ids).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Text could not be parsed (malformed JSON line, no JSON object in a completion).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// The teacher stage produced no indicator with a recognised category.
class EmptyRubricError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// The evaluation stage skipped one or more indicator codes.
class IncompleteVerdictError : public ParseError {
 public:
  explicit IncompleteVerdictError(std::vector<std::string> missing)
      : ParseError(make_message(missing)), missing_(std::move(missing)) {}

  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  static std::string make_message(const std::vector<std::string>& missing) {
    std::string msg = "verdicts missing for:";
    for (const auto& code : missing) msg += " " + code;
    return msg;
  }
  std::vector<std::string> missing_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A chat-completion call failed (transport, HTTP status, malformed reply).
class ClientError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace statuskt
