#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apex/frames.hpp"
#include "apex/plan.hpp"
#include "apex/records.hpp"
#include "apex/sop.hpp"

namespace apex {

/// Unchecked tracking-plan values as proposed by a reasoning backend.
struct TrackingProposal {
  long long memory_update_interval = 1;
  long long prediction_interval = 1;
  double confidence_threshold = 0.5;
  std::string rationale;
};

// Backends report failures by throwing Error(ErrorCode::BackendFailure).

/// Model used by planning and by memory-grounded Q&A.
class ReasoningBackend {
 public:
  virtual ~ReasoningBackend() = default;

  /// Ordered SOP ids for the intent. Empty means nothing matched.
  virtual std::vector<std::string> select_sops(const std::string& intent,
                                               std::span<const SopDoc> atlas) = 0;
  /// Inventory entries to add beyond the document's equipment list.
  virtual std::vector<std::string> propose_inventory(const SopDoc& doc) = 0;
  /// nullopt: no opinion, use the configured defaults.
  virtual std::optional<TrackingProposal> propose_tracking_plan(const SopDoc& doc) = 0;
  virtual GroundedAnswer answer(const std::string& question,
                                std::span<const LogRecord> history) = 0;
};

class PerceptionBackend {
 public:
  virtual ~PerceptionBackend() = default;
  virtual ContextFrame describe(const RawFrame& frame, const ExperimentPlan& plan) = 0;
};

struct PredictionRequest {
  const ContextFrame& frame;
  std::span<const LogRecord> history;
  std::span<const SopStep> steps;
  /// The raw input the frame came from, when available (scripted backends).
  const RawFrame* raw = nullptr;
};

class PredictionBackend {
 public:
  virtual ~PredictionBackend() = default;
  virtual FramePrediction predict(const PredictionRequest& request) = 0;
};

}  // namespace apex
