#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "apex/backend.hpp"
#include "apex/frames.hpp"
#include "apex/plan.hpp"
#include "apex/sop.hpp"

namespace apex {

/// Maps a free-text equipment name onto the plan inventory. An exact
/// case-folded match wins; otherwise the entry sharing the most word tokens
/// (counting only tokens of length >= 3) wins, ties going to the longer
/// entry and then the lexicographically smaller one. No shared token gives
/// "unknown".
std::string normalize_equipment_name(std::string_view raw, const ExperimentPlan& plan);

/// Runs the backend (one retry) and grounds every equipment name in the plan
/// inventory. Throws FrameDropped when both attempts fail.
ContextFrame contextualize(const RawFrame& frame, const ExperimentPlan& plan,
                           PerceptionBackend& backend);

/// Serves frame descriptions from the frame's inline script first, then from
/// a table keyed by frame index.
class ScriptedPerceptionBackend final : public PerceptionBackend {
 public:
  ScriptedPerceptionBackend() = default;
  explicit ScriptedPerceptionBackend(std::map<std::int64_t, ContextFrame> table)
      : table_(std::move(table)) {}

  ContextFrame describe(const RawFrame& frame, const ExperimentPlan& plan) override;
  void set(std::int64_t frame_index, ContextFrame frame) { table_[frame_index] = std::move(frame); }

 private:
  std::map<std::int64_t, ContextFrame> table_;
};

struct Recording {
  std::string sop_id;
  std::optional<StepTrackingPlan> tracking;
  std::optional<ExperimentPlan> experiment;
  std::vector<RawFrame> frames;
};

/// Line-delimited recording: line 1 is the header record, each further
/// non-blank line one frame. Throws MalformedRecording with the line number.
/// When `atlas` is given the header sop_id must resolve in it.
Recording parse_recording(std::istream& in, const SopAtlas* atlas = nullptr);
Recording load_recording(const std::filesystem::path& path, const SopAtlas* atlas = nullptr);
std::string serialize_recording(const Recording& rec);

}  // namespace apex
