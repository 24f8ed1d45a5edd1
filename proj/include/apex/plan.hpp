#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "apex/sop.hpp"

namespace apex {

struct Protocol {
  std::string intent;
  std::vector<std::string> sop_ids;

  bool operator==(const Protocol&) const = default;
};

/// Per-SOP plan: the frozen step list plus the equipment/material inventory
/// that perception grounds names against.
struct ExperimentPlan {
  std::string sop_id;
  std::vector<SopStep> steps;
  std::vector<std::string> inventory;

  bool operator==(const ExperimentPlan&) const = default;
};

struct StepTrackingPlan {
  std::string sop_id;
  int memory_update_interval = 1;
  int prediction_interval = 1;
  double confidence_threshold = 0.5;
  std::string rationale;

  /// ceil(prediction_interval / memory_update_interval): one prediction window.
  [[nodiscard]] int memory_capacity() const;
  [[nodiscard]] bool valid() const;

  bool operator==(const StepTrackingPlan&) const = default;
};

void to_json(nlohmann::json& j, const Protocol& p);
void from_json(const nlohmann::json& j, Protocol& p);
void to_json(nlohmann::json& j, const ExperimentPlan& p);
void from_json(const nlohmann::json& j, ExperimentPlan& p);
void to_json(nlohmann::json& j, const StepTrackingPlan& p);
void from_json(const nlohmann::json& j, StepTrackingPlan& p);

}  // namespace apex
