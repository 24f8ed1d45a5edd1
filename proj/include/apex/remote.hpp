#pragma once

#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "apex/backend.hpp"

namespace apex {

struct RemoteConfig {
  /// Full endpoint URL, e.g. "http://127.0.0.1:8600/v1/agent".
  std::string url;
  /// Sent as "Authorization: Bearer <key>" when non-empty.
  std::string key;
  int timeout_ms = 30000;
  /// Attempts per call (first try + retries).
  int attempts = 2;
  /// Opaque key/value pairs forwarded with every request.
  nlohmann::json params = nlohmann::json::object();
  /// In-context description examples forwarded with perception requests.
  nlohmann::json perception_examples = nlohmann::json::array();

  /// Reads APEX_BACKEND_URL and APEX_BACKEND_KEY. Throws InvalidConfig when
  /// the URL is unset.
  static RemoteConfig from_env();
};

/// Adapter for a hosted model service. Each call is one HTTP POST carrying
/// {"task", "payload", "params"}; the reply body is the task's JSON result.
class RemoteBackend final : public ReasoningBackend,
                            public PerceptionBackend,
                            public PredictionBackend {
 public:
  explicit RemoteBackend(RemoteConfig config);

  std::vector<std::string> select_sops(const std::string& intent,
                                       std::span<const SopDoc> atlas) override;
  std::vector<std::string> propose_inventory(const SopDoc& doc) override;
  std::optional<TrackingProposal> propose_tracking_plan(const SopDoc& doc) override;
  GroundedAnswer answer(const std::string& question, std::span<const LogRecord> history) override;
  ContextFrame describe(const RawFrame& frame, const ExperimentPlan& plan) override;
  FramePrediction predict(const PredictionRequest& request) override;

  /// POSTs one task and returns the parsed reply. Throws BackendFailure.
  nlohmann::json call(const std::string& task, const nlohmann::json& payload);

 private:
  RemoteConfig config_;
  std::string origin_;
  std::string path_;
  std::mutex mutex_;
};

}  // namespace apex
