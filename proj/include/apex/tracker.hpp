#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "apex/backend.hpp"
#include "apex/frames.hpp"
#include "apex/plan.hpp"
#include "apex/records.hpp"

namespace apex {

inline constexpr int kRanks = 3;

/// Summed-confidence differences at or below this are treated as ties, so
/// that incrementally maintained sums and fresh sums break ties identically.
inline constexpr double kConfidenceTieEpsilon = 1e-9;

/// Clamps confidences into [0,1], drops candidates outside 1..step_count and
/// repeated steps, and truncates to the best three. Throws BackendFailure if
/// nothing usable remains.
FramePrediction sanitize_prediction(FramePrediction p, int step_count);

struct MemoryEntry {
  ContextFrame frame;
  std::optional<FramePrediction> prediction;

  bool operator==(const MemoryEntry&) const = default;
};

struct VoteTally {
  int step = 0;
  int votes = 0;
  double confidence_sum = 0.0;

  bool operator==(const VoteTally&) const = default;
};

/// FIFO of the most recent predictions. Per-rank vote tallies are kept up to
/// date on every push and eviction so aggregation never rescans entries.
class TrackerMemory {
 public:
  explicit TrackerMemory(int capacity = 1);

  /// Appends, evicting the oldest entry when full.
  void push(MemoryEntry entry);
  /// Forgets every prediction but keeps the frames.
  void drop_predictions();

  [[nodiscard]] int capacity() const { return capacity_; }
  [[nodiscard]] const std::deque<MemoryEntry>& entries() const { return entries_; }
  [[nodiscard]] size_t size() const { return entries_.size(); }
  [[nodiscard]] bool has_predictions() const { return pool_sizes_[0] > 0; }

  /// Running tally for rank r (0-based), keyed by step.
  [[nodiscard]] const std::map<int, VoteTally>& tally(int rank) const { return tallies_[rank]; }
  [[nodiscard]] int pool_size(int rank) const { return pool_sizes_[rank]; }

  bool operator==(const TrackerMemory& o) const {
    return capacity_ == o.capacity_ && entries_ == o.entries_;
  }

 private:
  void count(const FramePrediction& p, int sign);

  int capacity_;
  std::deque<MemoryEntry> entries_;
  std::array<std::map<int, VoteTally>, kRanks> tallies_;
  std::array<int, kRanks> pool_sizes_{};
};

struct RankedStep {
  int step = 0;
  double aggregated_confidence = 0.0;

  bool operator==(const RankedStep&) const = default;
};

struct ConfirmedStep {
  std::int64_t frame_index = 0;
  std::array<std::optional<RankedStep>, kRanks> ranked;
  /// Per-rank tallies (pool order by step) behind the decision.
  std::array<std::vector<VoteTally>, kRanks> vote_detail;
  StepSource source = StepSource::Vote;

  [[nodiscard]] const std::optional<RankedStep>& top() const { return ranked[0]; }
  [[nodiscard]] const std::optional<RankedStep>& second() const { return ranked[1]; }
  [[nodiscard]] const std::optional<RankedStep>& third() const { return ranked[2]; }

  bool operator==(const ConfirmedStep&) const = default;
};

/// Rank-stratified plurality vote. Rank r is elected from the rank-r
/// candidates, skipping steps already elected at a better rank; when that
/// pool has nothing eligible the next better-ranked pool is used instead.
/// Aggregated confidence = summed confidence of the winner's votes divided
/// by the pool size. Ties: more votes, then larger summed confidence, then
/// the smaller step index. Throws EmptyMemory.
ConfirmedStep aggregate_votes(const TrackerMemory& memory);

enum class GuardReason { LowConfidence, IllegalTransition };

std::string_view to_string(GuardReason r);
GuardReason guard_reason_from_string(std::string_view s);

/// nullopt means Accept. IllegalTransition takes precedence.
std::optional<GuardReason> guard_transition(int previous_step, const ConfirmedStep& confirmed,
                                            double threshold);

struct HitlQuery {
  std::int64_t frame_index = 0;
  GuardReason reason = GuardReason::LowConfidence;
  int last_accepted_step = 0;
  int proposed_step = 0;
  double proposed_confidence = 0.0;
  std::vector<int> candidate_steps;
  std::optional<EquipmentObservation> last_equipment;
  std::string question;

  bool operator==(const HitlQuery&) const = default;
};

struct TrackerState {
  TrackerState() = default;
  TrackerState(StepTrackingPlan plan, std::vector<SopStep> steps);

  StepTrackingPlan plan;
  std::vector<SopStep> steps;
  TrackerMemory memory;
  std::int64_t frames_ingested = 0;
  std::int64_t last_frame_index = -1;
  int previous_step = 0;
  std::optional<HitlQuery> pending_query;

  [[nodiscard]] int step_count() const { return static_cast<int>(steps.size()); }
  [[nodiscard]] bool is_update_frame() const;
  [[nodiscard]] bool is_prediction_frame() const;

  bool operator==(const TrackerState&) const = default;
};

struct AutoAccept {};

using Resolution = std::variant<AutoAccept, HitlQuery>;

/// True when consecutive steps never go backwards nor skip ahead.
bool is_unit_monotone(std::span<const LogRecord> history);

/// Called after the guard refused a confirmation. Auto-accepts a
/// low-confidence step that continues a consistent timeline; otherwise
/// builds the clarification query and marks it pending on `state`.
Resolution resolve_or_query(TrackerState& state, const ConfirmedStep& confirmed, GuardReason reason,
                            std::span<const LogRecord> history);

struct Accepted {
  ConfirmedStep confirmed;
  /// Set when the guard refused but the timeline check accepted.
  std::optional<GuardReason> auto_accepted;
};

struct IngestOutcome {
  /// Prediction pushed into memory on this frame, if any.
  std::optional<FramePrediction> prediction;
  bool prediction_failed = false;
  std::string failure;
  bool aggregation_point = false;
  std::variant<std::monostate, Accepted, HitlQuery> result;
};

/// Counts the frame, refreshes memory on update frames, and on prediction
/// frames votes, guards and (if needed) resolves. A pending query blocks
/// confirmations but not memory updates.
IngestOutcome ingest_frame(TrackerState& state, const ContextFrame& frame,
                           PredictionBackend& backend, std::span<const LogRecord> history,
                           const RawFrame* raw = nullptr);

/// Applies the operator's answer to the pending query. Throws NoPendingQuery
/// or StepOutOfRange.
ConfirmedStep apply_clarification(TrackerState& state, int answered_step);

/// Serves predictions from the frame's inline script first, then a table.
class ScriptedPredictionBackend final : public PredictionBackend {
 public:
  ScriptedPredictionBackend() = default;
  explicit ScriptedPredictionBackend(std::map<std::int64_t, FramePrediction> table)
      : table_(std::move(table)) {}

  FramePrediction predict(const PredictionRequest& request) override;
  void set(std::int64_t frame_index, FramePrediction p) { table_[frame_index] = std::move(p); }

 private:
  std::map<std::int64_t, FramePrediction> table_;
};

void to_json(nlohmann::json& j, const VoteTally& t);
void from_json(const nlohmann::json& j, VoteTally& t);
void to_json(nlohmann::json& j, const ConfirmedStep& c);
void from_json(const nlohmann::json& j, ConfirmedStep& c);
void to_json(nlohmann::json& j, const HitlQuery& q);
void from_json(const nlohmann::json& j, HitlQuery& q);
void to_json(nlohmann::json& j, const MemoryEntry& e);
void to_json(nlohmann::json& j, const TrackerState& s);

}  // namespace apex
