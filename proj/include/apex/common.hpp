#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace apex {

enum class ErrorCode {
  MalformedDocument,
  SchemaViolation,
  UnknownSop,
  NoMatchingSop,
  BackendFailure,
  FrameDropped,
  MalformedRecording,
  EmptyMemory,
  NoPendingQuery,
  StepOutOfRange,
  InvalidConfig,
  UnknownSession,
  SessionClosed,
  LengthMismatch,
  EmptyScores,
  OutOfRangeScore,
};

std::string_view to_string(ErrorCode code);

/// Error carrying a machine-checkable code. `location` is a line number or a
/// field path when the error points into a document.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string location = {});

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }
  [[nodiscard]] const std::string& location() const noexcept { return location_; }
  /// The message without the code and location prefix.
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string location_;
  std::string message_;
};

namespace text {

std::string trim(std::string_view s);
std::string casefold(std::string_view s);

/// Case-folded alphanumeric word tokens, in order of appearance.
std::vector<std::string> word_tokens(std::string_view s);

/// Strips a trailing -ing, -ed, -es or -s when the remaining stem keeps at
/// least three characters.
std::string stem(std::string_view token);

/// Lower-case and collapse every run of non-alphanumerics to one '_'.
/// "RF Power" and "rf_power" map to the same key.
std::string name_key(std::string_view s);

bool iequals(std::string_view a, std::string_view b);

/// Shortest round-trip decimal rendering ("30", "6.2", "0.5666666666666667").
std::string format_number(double v);

}  // namespace text

}  // namespace apex
