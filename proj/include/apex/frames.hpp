#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace apex {

inline constexpr std::string_view kNoneObserved = "none observed";
inline constexpr std::string_view kUnknownEquipment = "unknown";

/// One instrument reading. Parsable "<decimal> <unit>" text becomes a
/// numeric value; anything else is kept as a token ("Green On").
struct Reading {
  std::string name;
  std::variant<double, std::string> value = 0.0;
  std::string unit;

  [[nodiscard]] bool is_numeric() const { return std::holds_alternative<double>(value); }
  [[nodiscard]] std::string value_text() const;

  bool operator==(const Reading&) const = default;
};

/// "50 W" -> {50, "W"}, "6.2s" -> {6.2, "s"}, "Green On" -> token.
Reading parse_reading(std::string name, std::string_view raw);

struct EquipmentObservation {
  std::string name{kUnknownEquipment};
  std::string position;
  std::vector<Reading> readings;

  bool operator==(const EquipmentObservation&) const = default;
};

struct ContextFrame {
  std::int64_t frame_index = 0;
  std::int64_t timestamp_ms = 0;
  std::vector<EquipmentObservation> equipment;
  std::string environment{kNoneObserved};
  std::string action{kNoneObserved};

  bool operator==(const ContextFrame&) const = default;
};

struct StepCandidate {
  int step = 0;
  double confidence = 0.0;

  bool operator==(const StepCandidate&) const = default;
};

/// Ranked (best first) step candidates for one frame.
struct FramePrediction {
  std::int64_t frame_index = 0;
  std::vector<StepCandidate> candidates;
  std::string reasoning;

  bool operator==(const FramePrediction&) const = default;
};

/// Backend output carried inline with a frame, consumed by the scripted
/// backends (tests, replay, and scripted live sessions).
struct ScriptedFrame {
  std::optional<ContextFrame> context;
  std::optional<FramePrediction> prediction;

  bool operator==(const ScriptedFrame&) const = default;
};

struct RawFrame {
  std::int64_t frame_index = 0;
  std::int64_t timestamp_ms = 0;
  std::string description;
  std::string image_ref;
  std::string aux;
  ScriptedFrame script;

  bool operator==(const RawFrame&) const = default;
};

void to_json(nlohmann::json& j, const Reading& r);
void from_json(const nlohmann::json& j, Reading& r);
void to_json(nlohmann::json& j, const EquipmentObservation& e);
void from_json(const nlohmann::json& j, EquipmentObservation& e);
void to_json(nlohmann::json& j, const ContextFrame& f);
void from_json(const nlohmann::json& j, ContextFrame& f);
void to_json(nlohmann::json& j, const StepCandidate& c);
void from_json(const nlohmann::json& j, StepCandidate& c);
void to_json(nlohmann::json& j, const FramePrediction& p);
void from_json(const nlohmann::json& j, FramePrediction& p);
void to_json(nlohmann::json& j, const RawFrame& f);
void from_json(const nlohmann::json& j, RawFrame& f);

}  // namespace apex
