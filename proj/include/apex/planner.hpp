#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apex/backend.hpp"
#include "apex/plan.hpp"
#include "apex/sop.hpp"

namespace apex {

struct ProtocolTemplate {
  std::string title;
  std::vector<std::string> sop_ids;
};

struct PlannerConfig {
  /// Process order used to sequence selected SOPs.
  std::vector<std::string> canonical_order;
  /// Named multi-SOP protocols matched against the intent like SOP titles.
  std::vector<ProtocolTemplate> protocols;
  std::vector<std::string> stopwords;
  StepTrackingPlan defaults{"", 1, 3, 0.7, "configured defaults"};
};

PlannerConfig parse_planner_config(const nlohmann::json& j);
PlannerConfig load_planner_config(const std::filesystem::path& path);

/// Tracking plans known for the bundled SOPs, keyed by SOP id.
std::optional<StepTrackingPlan> bundled_tracking_plan(std::string_view sop_id);

/// Deterministic keyword-overlap SOP selection used by the fallback backend.
std::vector<std::string> keyword_select_sops(const std::string& intent,
                                             std::span<const SopDoc> atlas,
                                             const PlannerConfig& config);

/// Offline reasoning backend. Planning is keyword/table driven and answers
/// come from keyword retrieval over the history.
class FallbackReasoningBackend final : public ReasoningBackend {
 public:
  explicit FallbackReasoningBackend(PlannerConfig config) : config_(std::move(config)) {}

  std::vector<std::string> select_sops(const std::string& intent,
                                       std::span<const SopDoc> atlas) override;
  std::vector<std::string> propose_inventory(const SopDoc& doc) override;
  std::optional<TrackingProposal> propose_tracking_plan(const SopDoc& doc) override;
  GroundedAnswer answer(const std::string& question, std::span<const LogRecord> history) override;

  [[nodiscard]] const PlannerConfig& config() const { return config_; }

 private:
  PlannerConfig config_;
};

/// Throws NoMatchingSop when the backend selects nothing, UnknownSop when it
/// names an id the atlas does not hold, InvalidConfig on an empty atlas.
Protocol compose_protocol(const std::string& intent, const SopAtlas& atlas,
                          ReasoningBackend& backend);

ExperimentPlan make_experiment_plan(const SopDoc& doc, ReasoningBackend& backend);

/// Backend values are clamped into the plan invariants; a backend without an
/// opinion yields `defaults` (re-keyed to the doc id).
StepTrackingPlan make_tracking_plan(const SopDoc& doc, ReasoningBackend& backend,
                                    const StepTrackingPlan& defaults);

StepTrackingPlan clamp_tracking_plan(const TrackingProposal& proposal,
                                     const StepTrackingPlan& defaults);

}  // namespace apex
