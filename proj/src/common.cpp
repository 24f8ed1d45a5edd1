#include "apex/common.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace apex {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::UnknownSop: return "UnknownSop";
    case ErrorCode::NoMatchingSop: return "NoMatchingSop";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::FrameDropped: return "FrameDropped";
    case ErrorCode::MalformedRecording: return "MalformedRecording";
    case ErrorCode::EmptyMemory: return "EmptyMemory";
    case ErrorCode::NoPendingQuery: return "NoPendingQuery";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::SessionClosed: return "SessionClosed";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::OutOfRangeScore: return "OutOfRangeScore";
  }
  return "Unknown";
}

namespace {

std::string compose_message(ErrorCode code, const std::string& message,
                            const std::string& location) {
  std::string out{to_string(code)};
  if (!location.empty()) out += " at " + location;
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message, std::string location)
    : std::runtime_error(compose_message(code, message, location)),
      code_(code),
      location_(std::move(location)),
      message_(message) {}

namespace text {

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  size_t b = 0;
  size_t e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string{s.substr(b, e - b)};
}

std::string casefold(std::string_view s) {
  std::string out{s};
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string stem(std::string_view token) {
  static constexpr std::array<std::string_view, 4> kSuffixes{"ing", "ed", "es", "s"};
  for (auto suffix : kSuffixes) {
    if (token.size() >= suffix.size() + 3 && token.ends_with(suffix)) {
      return std::string{token.substr(0, token.size() - suffix.size())};
    }
  }
  return std::string{token};
}

std::string name_key(std::string_view s) {
  std::string out;
  bool pending_sep = false;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      if (pending_sep && !out.empty()) out.push_back('_');
      pending_sep = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      pending_sep = true;
    }
  }
  return out;
}

bool iequals(std::string_view a, std::string_view b) {
  return casefold(trim(a)) == casefold(trim(b));
}

std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf.data(), ptr);
}

}  // namespace text

}  // namespace apex
