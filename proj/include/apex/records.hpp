#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "apex/frames.hpp"

namespace apex {

enum class StepSource { Vote, Human };

std::string_view to_string(StepSource s);
StepSource step_source_from_string(std::string_view s);

/// One consolidated entry of the experiment log.
struct LogRecord {
  std::int64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  int step = 0;
  std::vector<std::string> key_actions;
  std::vector<Reading> key_parameters;
  std::string summary;
  double progress = 0.0;
  StepSource source = StepSource::Vote;

  bool operator==(const LogRecord&) const = default;
};

/// Append-only experiment history.
class AnalysisHistory {
 public:
  /// Assigns the next seq and stores the record; returns the stored copy.
  const LogRecord& append(LogRecord record);

  [[nodiscard]] std::span<const LogRecord> records() const { return records_; }
  /// The most recent `n` records, oldest first.
  [[nodiscard]] std::span<const LogRecord> recent(size_t n) const;
  [[nodiscard]] size_t size() const { return records_.size(); }
  [[nodiscard]] bool empty() const { return records_.empty(); }
  [[nodiscard]] std::int64_t next_seq() const { return static_cast<std::int64_t>(records_.size()) + 1; }

 private:
  std::vector<LogRecord> records_;
};

struct GroundedAnswer {
  std::string text;
  std::vector<std::int64_t> citations;

  bool operator==(const GroundedAnswer&) const = default;
};

void to_json(nlohmann::json& j, const LogRecord& r);
void from_json(const nlohmann::json& j, LogRecord& r);
void to_json(nlohmann::json& j, const GroundedAnswer& a);
void from_json(const nlohmann::json& j, GroundedAnswer& a);

}  // namespace apex
