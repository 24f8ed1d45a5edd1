#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "apex/analysis.hpp"
#include "apex/backend.hpp"
#include "apex/perception.hpp"
#include "apex/plan.hpp"
#include "apex/planner.hpp"
#include "apex/records.hpp"
#include "apex/sop.hpp"
#include "apex/tracker.hpp"

namespace apex {

enum class BackendKind { Scripted, Remote };
/// Replay stamps events with recording time; Live with wall-clock time since
/// the session started.
enum class ClockMode { Replay, Live };

std::string_view to_string(BackendKind k);
BackendKind backend_kind_from_string(std::string_view s);
std::string_view to_string(ClockMode m);

struct SessionConfig {
  Protocol protocol;
  std::string active_sop;
  ExperimentPlan experiment;
  StepTrackingPlan tracking;
  BackendKind backend = BackendKind::Scripted;
  nlohmann::json backend_params = nlohmann::json::object();
  /// Number of most recent log records handed to the tracker.
  int history_window = 3;
  ClockMode clock = ClockMode::Replay;

  bool operator==(const SessionConfig&) const = default;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

/// Builds a full config for `active_sop`, planning through `backend`.
/// An empty protocol becomes the single-SOP protocol [active_sop].
SessionConfig plan_session_config(const SopAtlas& atlas, ReasoningBackend& backend,
                                  const StepTrackingPlan& defaults, const std::string& active_sop,
                                  Protocol protocol = {});

/// Reads a config document, planning any of `experiment` / `tracking` that
/// it leaves out. Accepts the exported shape, or a short form with
/// `active_sop` (or `sop_id`) and optionally `intent` / `protocol`.
SessionConfig session_config_from_json(const nlohmann::json& j, const SopAtlas& atlas,
                                       ReasoningBackend& backend, const StepTrackingPlan& defaults);

// Event bodies.
struct SessionCreated {
  std::string session_id;
  SessionConfig config;
};
struct SopActivated {
  std::string sop_id;
  ExperimentPlan experiment;
  StepTrackingPlan tracking;
};
struct FrameIngested {
  ContextFrame context;
  std::optional<FramePrediction> prediction;
  std::string prediction_error;
};
struct FrameDropped {
  std::int64_t frame_index = 0;
  std::string reason;
};
struct StepConfirmed {
  ConfirmedStep confirmed;
  std::optional<GuardReason> auto_accepted;
};
struct ClarificationRequested {
  HitlQuery query;
};
struct ClarificationAnswered {
  int step = 0;
};
struct AlertRaised {
  Alert alert;
};
struct GuidanceIssued {
  Guidance guidance;
};
struct QueryAsked {
  std::string question;
};
struct QueryAnswered {
  std::string question;
  GroundedAnswer answer;
  std::string error;
};
struct LogAppended {
  LogRecord record;
};
struct SessionClosed {};

using EventBody =
    std::variant<SessionCreated, SopActivated, FrameIngested, FrameDropped, StepConfirmed,
                 ClarificationRequested, ClarificationAnswered, AlertRaised, GuidanceIssued,
                 QueryAsked, QueryAnswered, LogAppended, SessionClosed>;

struct SessionEvent {
  std::int64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  EventBody body;

  [[nodiscard]] std::string_view kind() const;
  template <typename T>
  [[nodiscard]] bool is() const {
    return std::holds_alternative<T>(body);
  }
  template <typename T>
  [[nodiscard]] const T& as() const {
    return std::get<T>(body);
  }
};

void to_json(nlohmann::json& j, const SessionEvent& e);
void from_json(const nlohmann::json& j, SessionEvent& e);

// Inputs.
struct FrameArrival {
  RawFrame frame;
};
struct HumanAnswer {
  int step = 0;
  std::optional<std::int64_t> timestamp_ms;
};
struct HumanQuestion {
  std::string question;
  std::optional<std::int64_t> timestamp_ms;
};
struct AdvanceSop {
  std::optional<std::int64_t> timestamp_ms;
};
struct Close {
  std::optional<std::int64_t> timestamp_ms;
};

using SessionInput = std::variant<FrameArrival, HumanAnswer, HumanQuestion, AdvanceSop, Close>;

struct Backends {
  std::shared_ptr<PerceptionBackend> perception;
  std::shared_ptr<PredictionBackend> prediction;
  std::shared_ptr<ReasoningBackend> reasoning;
};

/// Everything recomputable from a session's event stream.
struct DerivedState {
  std::string session_id;
  std::string active_sop;
  TrackerState tracker;
  std::vector<LogRecord> records;
  int alerts = 0;
  int clarifications = 0;
  bool closed = false;
  std::int64_t last_seq = 0;
  std::int64_t last_arrival_index = -1;
};

void to_json(nlohmann::json& j, const DerivedState& s);

/// Session engine. Each session is a single-writer event loop: inputs for a
/// session are applied one at a time under its lock, and all events an input
/// produces are committed together or not at all. Sessions are independent.
class Engine {
 public:
  using BackendFactory = std::function<Backends(const SessionConfig&)>;

  struct Options {
    /// When set, each session's events are appended to <log_dir>/<id>.jsonl
    /// and flushed before handle_event returns.
    std::filesystem::path log_dir;
    /// Builds backends for create_session(config); defaults to scripted
    /// tables fed by inline frame scripts, or the remote adapter.
    BackendFactory factory;
    PlannerConfig planner;
  };

  explicit Engine(SopAtlas atlas);
  Engine(SopAtlas atlas, Options options);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Throws InvalidConfig.
  std::string create_session(SessionConfig config);
  std::string create_session(SessionConfig config, Backends backends);

  /// Throws UnknownSession, SessionClosed, NoPendingQuery, StepOutOfRange,
  /// InvalidConfig (advance past the last SOP). Close on a closed session
  /// returns no events.
  std::vector<SessionEvent> handle_event(const std::string& id, const SessionInput& input);

  /// The session document: config snapshot, event stream and log records.
  /// Byte-identical for identical streams.
  [[nodiscard]] std::string export_log(const std::string& id) const;
  [[nodiscard]] nlohmann::json export_log_json(const std::string& id) const;

  [[nodiscard]] std::vector<SessionEvent> events(const std::string& id,
                                                 std::int64_t from_seq = 1) const;
  /// Blocks until events with seq >= from_seq exist, the session is closed,
  /// or the timeout passes.
  [[nodiscard]] std::vector<SessionEvent> wait_events(const std::string& id, std::int64_t from_seq,
                                                      std::chrono::milliseconds timeout,
                                                      bool* closed = nullptr) const;
  [[nodiscard]] DerivedState derived_state(const std::string& id) const;
  [[nodiscard]] bool exists(const std::string& id) const;
  [[nodiscard]] std::vector<std::string> session_ids() const;

  /// Rebuilds a session purely from its event stream (starting with
  /// SessionCreated). The new session keeps the recorded id.
  std::string restore(const std::vector<SessionEvent>& events);
  std::string restore(const std::vector<SessionEvent>& events, Backends backends);

  [[nodiscard]] const SopAtlas& atlas() const { return atlas_; }
  [[nodiscard]] const Options& options() const { return options_; }
  [[nodiscard]] Backends default_backends(const SessionConfig& config) const;

 private:
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  void validate(const SessionConfig& config) const;
  std::string next_id();

  SopAtlas atlas_;
  Options options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace apex
