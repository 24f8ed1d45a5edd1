#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "apex/backend.hpp"
#include "apex/frames.hpp"
#include "apex/records.hpp"
#include "apex/sop.hpp"
#include "apex/tracker.hpp"

namespace apex {

inline constexpr std::string_view kProcedureComplete = "procedure complete";
inline constexpr std::string_view kNoRecords = "no records available";

enum class AlertKind { ParameterMismatch, SequenceDeviation };

std::string_view to_string(AlertKind k);

struct Alert {
  AlertKind kind = AlertKind::ParameterMismatch;
  int step = 0;
  std::string parameter;
  std::string observed;
  std::string expected;
  double tolerance = 0.0;
  bool unit_disagreement = false;
  std::string message;

  bool operator==(const Alert&) const = default;
};

struct Guidance {
  int step = 0;
  std::string current_action;
  std::string required_action;
  std::string next_step_preview;

  bool operator==(const Guidance&) const = default;
};

/// Appends a record when the confirmation is human-sourced or its top
/// confidence reaches `threshold`. Key parameters are every reading in
/// `frame`, copied verbatim.
std::optional<LogRecord> append_record(AnalysisHistory& history, const ConfirmedStep& confirmed,
                                       const ContextFrame& frame, double threshold,
                                       const SopDoc& doc);

/// Builds the record append_record would store, without storing it.
LogRecord make_record(const ConfirmedStep& confirmed, const ContextFrame& frame, const SopDoc& doc);

/// True when `reading` is the measurement for `spec` (case-folded name key).
bool reading_matches(const Reading& reading, const ParameterSpec& spec);

/// Alert text for one (spec, reading) pair, or nullopt when the reading
/// satisfies the parameter. A unit mismatch is always a violation.
std::optional<Alert> check_reading(const ParameterSpec& spec, const Reading& reading, int step);

/// One alert per parameter of `step` whose reading violates it. Parameters
/// without a reading in the frame produce nothing.
std::vector<Alert> detect_errors(const ContextFrame& frame, const SopStep& step);

Guidance make_guidance(const ConfirmedStep& confirmed, const ContextFrame& frame, const SopDoc& doc);

/// Deterministic retrieval answer over the history: questions naming
/// "step N" resolve to the latest record of that step, otherwise the record
/// sharing the most keywords with the question (latest on ties).
GroundedAnswer keyword_answer(const std::string& question, std::span<const LogRecord> history);

/// Delegates to the backend; citations that do not name a record are removed.
GroundedAnswer answer_query(const std::string& question, const AnalysisHistory& history,
                            ReasoningBackend& backend);

void to_json(nlohmann::json& j, const Alert& a);
void from_json(const nlohmann::json& j, Alert& a);
void to_json(nlohmann::json& j, const Guidance& g);
void from_json(const nlohmann::json& j, Guidance& g);

}  // namespace apex
