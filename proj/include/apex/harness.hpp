#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "apex/frames.hpp"
#include "apex/perception.hpp"
#include "apex/planner.hpp"
#include "apex/session.hpp"
#include "apex/sop.hpp"

namespace apex {

/// Per-frame reference labels for a recording.
struct GroundTruth {
  std::vector<int> steps;
  /// Optional; when present, one equipment set per frame.
  std::vector<std::vector<std::string>> equipment;

  bool operator==(const GroundTruth&) const = default;
};

void to_json(nlohmann::json& j, const GroundTruth& t);
void from_json(const nlohmann::json& j, GroundTruth& t);
GroundTruth load_truth(const std::filesystem::path& path);

struct MeanSem {
  double mean = 0.0;
  double sem = 0.0;
  size_t n = 0;

  bool operator==(const MeanSem&) const = default;
};

/// Rubric scores (1..5): mean and sample-sd / sqrt(n); SEM is 0 for n = 1.
/// Throws EmptyScores, OutOfRangeScore.
MeanSem summarize_scores(std::span<const int> scores);
/// Same statistic over arbitrary values. Throws EmptyScores.
MeanSem mean_sem(std::span<const double> values);

struct RecognitionReport {
  std::map<std::string, double> per_class;
  /// Classes with no ground-truth frames; they have no defined accuracy.
  std::vector<std::string> excluded;
  MeanSem summary;
};

/// Per class: fraction of the frames whose truth contains the class where
/// the frame also reports it (case-folded). `classes` defaults to every
/// name in the truth.
RecognitionReport eval_recognition(std::span<const ContextFrame> frames, const GroundTruth& truth,
                                   std::span<const std::string> classes = {});

struct Metrics {
  std::int64_t frames = 0;
  double step_accuracy = 0.0;
  std::map<int, double> per_step_accuracy;
  MeanSem equipment_accuracy;
  int hitl_count = 0;
  int alerts = 0;
  int confirmations = 0;

  bool operator==(const Metrics&) const = default;
};

void to_json(nlohmann::json& j, const Metrics& m);

enum class AnswerKind { Oracle, Refuse, Fixed };

struct AnswerPolicy {
  AnswerKind kind = AnswerKind::Oracle;
  int fixed_step = 0;

  /// "oracle", "refuse" or "fixed:K".
  static AnswerPolicy parse(std::string_view s);
  [[nodiscard]] std::string str() const;
};

struct ReplayResult {
  Metrics metrics;
  std::string log;
  /// Accepted step assigned to each recording frame.
  std::vector<int> labels;
  std::vector<SessionEvent> events;
};

/// Runs a recording through a fresh engine with scripted backends (frames
/// must carry their scripts inline), answering clarifications per `policy`.
/// A frame is scored against the accepted step after the first aggregation
/// point at or after it. Throws LengthMismatch.
ReplayResult replay(const SopAtlas& atlas, const Recording& recording, const GroundTruth& truth,
                    const SessionConfig& config, AnswerPolicy policy,
                    const PlannerConfig& planner = {});

/// Config for replaying `recording`: planned with the fallback backend, then
/// overridden by any plans stored in the recording header.
SessionConfig replay_config(const SopAtlas& atlas, const Recording& recording,
                            const PlannerConfig& planner = {});

struct SynthOptions {
  double correct_lo = 0.75;
  double correct_hi = 0.95;
  double flipped_lo = 0.4;
  double flipped_hi = 0.7;
  std::int64_t frame_period_ms = 1000;
};

struct SynthSession {
  Recording recording;
  GroundTruth truth;
  std::map<std::int64_t, FramePrediction> predictions;
};

/// Truth advances uniformly through the steps. Each frame's single scripted
/// candidate is the true step with probability 1 - flip_prob, otherwise a
/// uniformly drawn other step. Scripts are also embedded in the frames.
/// Deterministic in `seed`.
SynthSession synth_session(const SopDoc& doc, int frames_per_step, double flip_prob,
                           std::uint64_t seed, const SynthOptions& options = {});

/// Fraction of frames whose scripted top candidate equals the truth.
double raw_accuracy(const SynthSession& s);

struct BenchCase {
  std::string name;
  std::filesystem::path recording;
  std::filesystem::path truth;
  std::optional<std::filesystem::path> config;
  AnswerPolicy policy;
  std::optional<double> min_step_accuracy;
  std::optional<int> max_hitl;
  std::optional<int> alerts;
  std::optional<int> confirmations;
};

struct BenchResult {
  std::string name;
  Metrics metrics;
  bool passed = true;
  std::vector<std::string> failures;
  double seconds = 0.0;
};

/// Reads <dir>/suite.json; paths inside are relative to `dir`.
std::vector<BenchCase> load_bench_suite(const std::filesystem::path& dir);
std::vector<BenchResult> run_bench(const SopAtlas& atlas, std::span<const BenchCase> cases,
                                   const PlannerConfig& planner = {});
std::string bench_table(std::span<const BenchResult> results);
nlohmann::json bench_json(std::span<const BenchResult> results);

}  // namespace apex
