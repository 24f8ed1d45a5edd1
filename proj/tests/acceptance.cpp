// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <deque>
#include <array>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "apex/common.hpp"
#include "apex/harness.hpp"
#include "apex/perception.hpp"
#include "apex/planner.hpp"
#include "apex/session.hpp"
#include "apex/sop.hpp"
#include "apex/tracker.hpp"

using namespace apex;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kVoteTolerance = 1e-9;
constexpr double kStatsTolerance = 1e-12;
constexpr double kVoteBudgetS = 10.0;
constexpr double kGoldenBudgetS = 1.0;
constexpr double kSmoothingBudgetS = 60.0;
constexpr int kVoteTrials = 10000;
constexpr int kHitlSessions = 1000;
constexpr int kSmoothingSeeds = 100;
constexpr int kStatsLists = 1000;

fs::path data(const std::string& rel) { return fs::path(APEX_DATA_DIR) / rel; }

const SopAtlas& atlas() {
  static const SopAtlas a = load_atlas_dir(data("sops"));
  return a;
}

const PlannerConfig& planner() {
  static const PlannerConfig p = load_planner_config(data("config/planner.json"));
  return p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string{"exception: "} + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  " << o.detail << std::endl;
}

// ---------------------------------------------------------------------------
// Vote recount from scratch over stored entries.

std::array<std::optional<RankedStep>, kRanks> recount(const std::deque<MemoryEntry>& entries) {
  std::array<std::optional<RankedStep>, kRanks> out;
  std::set<int> taken;
  for (int r = 0; r < kRanks; ++r) {
    for (int pool = r; pool >= 0 && !out[r]; --pool) {
      std::map<int, std::pair<int, double>> votes;
      int size = 0;
      for (const auto& e : entries) {
        if (!e.prediction || static_cast<int>(e.prediction->candidates.size()) <= pool) continue;
        ++size;
        const auto& c = e.prediction->candidates[static_cast<size_t>(pool)];
        votes[c.step].first++;
        votes[c.step].second += c.confidence;
      }
      int best = 0, best_n = 0;
      double best_sum = 0;
      for (const auto& [step, v] : votes) {
        if (taken.count(step)) continue;
        const bool better = best == 0 || v.first > best_n ||
                            (v.first == best_n && v.second > best_sum + kConfidenceTieEpsilon);
        if (better) {
          best = step;
          best_n = v.first;
          best_sum = v.second;
        }
      }
      if (best == 0) continue;
      out[r] = RankedStep{best, best_sum / size};
      taken.insert(best);
    }
  }
  return out;
}

Outcome voting_oracle() {
  std::mt19937_64 rng(20240611);
  const auto t0 = std::chrono::steady_clock::now();
  int checked = 0;
  double worst = 0;
  for (int trial = 0; checked < kVoteTrials; ++trial) {
    const int k = 1 + static_cast<int>(rng() % 7);
    const int steps = 1 + static_cast<int>(rng() % 12);
    TrackerMemory memory(k);
    // Push past capacity so evictions are exercised.
    const int pushes = 1 + static_cast<int>(rng() % (2 * k + 1));
    for (int i = 0; i < pushes; ++i) {
      MemoryEntry e;
      e.frame.frame_index = i;
      if (rng() % 10 != 0) {
        FramePrediction p;
        p.frame_index = i;
        std::vector<int> pool(static_cast<size_t>(steps));
        std::iota(pool.begin(), pool.end(), 1);
        std::shuffle(pool.begin(), pool.end(), rng);
        const int n = 1 + static_cast<int>(rng() % std::min(3, steps));
        for (int c = 0; c < n; ++c) {
          // Coarse confidences make exact ties common.
          const double conf = (rng() % 2) ? static_cast<double>(rng() % 11) / 10.0
                                          : static_cast<double>(rng() >> 11) * 0x1.0p-53;
          p.candidates.push_back({pool[static_cast<size_t>(c)], conf});
        }
        e.prediction = p;
      }
      memory.push(e);
      if (rng() % 25 == 0) memory.drop_predictions();
    }
    if (!memory.has_predictions()) continue;
    const auto got = aggregate_votes(memory);
    const auto want = recount(memory.entries());
    for (int r = 0; r < kRanks; ++r) {
      const auto& g = got.ranked[static_cast<size_t>(r)];
      const auto& w = want[static_cast<size_t>(r)];
      if (g.has_value() != w.has_value() || (g && g->step != w->step)) {
        return {false, "winner mismatch at trial " + std::to_string(trial) + " rank " + std::to_string(r)};
      }
      if (g) worst = std::max(worst, std::abs(g->aggregated_confidence - w->aggregated_confidence));
    }
    ++checked;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << checked << " memories, max |dconf| " << worst << ", " << secs << " s";
  return {worst <= kVoteTolerance && secs < kVoteBudgetS, d.str()};
}

// ---------------------------------------------------------------------------

ReplayResult replay_fixture(const std::string& name, const std::string& policy = "oracle") {
  const auto rec = load_recording(data("fixtures/" + name + ".rec"), &atlas());
  const auto truth = load_truth(data("fixtures/" + name + ".truth.json"));
  return replay(atlas(), rec, truth, replay_config(atlas(), rec, planner()), AnswerPolicy::parse(policy),
                planner());
}

Outcome golden_rie() {
  const auto rec = load_recording(data("fixtures/rie_golden.rec"), &atlas());
  const auto config = replay_config(atlas(), rec, planner());
  const auto& t = config.tracking;
  if (t.memory_update_interval != 1 || t.prediction_interval != 3 || std::abs(t.confidence_threshold - 0.8) > 1e-12) {
    return {false, "unexpected tracking plan"};
  }
  const auto truth = load_truth(data("fixtures/rie_golden.truth.json"));
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = replay(atlas(), rec, truth, config, {}, planner());
  const double secs = seconds_since(t0);
  std::vector<int> confirmed;
  for (const auto& e : r.events) {
    if (e.is<StepConfirmed>()) confirmed.push_back(e.as<StepConfirmed>().confirmed.top()->step);
  }
  const bool ok = confirmed == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8} && r.metrics.step_accuracy == 1.0 &&
                  r.metrics.hitl_count == 0 && secs < kGoldenBudgetS;
  std::ostringstream d;
  d << confirmed.size() << " confirmations, accuracy " << r.metrics.step_accuracy << ", hitl "
    << r.metrics.hitl_count << ", " << secs << " s";
  return {ok, d.str()};
}

Outcome error_scenario() {
  const auto r = replay_fixture("rie_error");
  // Alerts grouped by the confirmation that raised them.
  std::vector<std::vector<Alert>> per_confirmation;
  std::vector<int> steps;
  for (const auto& e : r.events) {
    if (e.is<StepConfirmed>()) {
      per_confirmation.emplace_back();
      steps.push_back(e.as<StepConfirmed>().confirmed.top()->step);
    } else if (e.is<AlertRaised>()) {
      per_confirmation.back().push_back(e.as<AlertRaised>().alert);
    }
  }
  // Step 4 is confirmed twice: once with the wrong readings, once corrected.
  std::vector<size_t> step4;
  for (size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] == 4) step4.push_back(i);
  }
  if (step4.size() != 2) return {false, "step 4 confirmed " + std::to_string(step4.size()) + " times"};
  const auto& first = per_confirmation[step4[0]];
  std::set<std::string> named;
  bool all_mismatch = true;
  for (const auto& a : first) {
    named.insert(a.parameter);
    all_mismatch = all_mismatch && a.kind == AlertKind::ParameterMismatch;
  }
  int total = 0;
  for (const auto& v : per_confirmation) total += static_cast<int>(v.size());
  const bool ok = first.size() == 2 && all_mismatch && named == std::set<std::string>{"time", "rf_power"} &&
                  per_confirmation[step4[1]].empty() && total == 2;
  std::ostringstream d;
  d << first.size() << " alerts on the faulty step (";
  for (const auto& a : first) d << a.parameter << " " << a.observed << " vs " << a.expected << "; ";
  d << "), " << per_confirmation[step4[1]].size() << " after correction, " << total << " total";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// Stand-alone simulation of the tracking loop for single-candidate scripts:
// FIFO memory, plurality vote, transition guard, timeline auto-accept and
// oracle answers. Returns the frame indices where a clarification is asked.

std::vector<std::int64_t> simulate_queries(const SynthSession& s, const StepTrackingPlan& plan, int window) {
  const int u = plan.memory_update_interval;
  const int p = plan.prediction_interval;
  const int k = (p + u - 1) / u;
  struct Slot {
    bool has = false;
    int step = 0;
    double conf = 0;
  };
  std::deque<Slot> memory;
  std::vector<int> records;
  int previous = 0;
  bool pending = false;
  std::vector<std::int64_t> asked;

  auto timeline_ok = [&] {
    const size_t from = records.size() > static_cast<size_t>(window) ? records.size() - window : 0;
    for (size_t i = from + 1; i < records.size(); ++i) {
      const int d = records[i] - records[i - 1];
      if (d != 0 && d != 1) return false;
    }
    return true;
  };

  const auto& frames = s.recording.frames;
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto n = static_cast<std::int64_t>(i) + 1;
    if (n % u == 0) {
      const auto& c = s.predictions.at(frames[i].frame_index).candidates.front();
      memory.push_back({true, c.step, c.confidence});
      if (static_cast<int>(memory.size()) > k) memory.pop_front();
    }
    if (n % p != 0 || pending) continue;
    std::map<int, std::pair<int, double>> votes;
    int pool = 0;
    for (const auto& slot : memory) {
      if (!slot.has) continue;
      ++pool;
      votes[slot.step].first++;
      votes[slot.step].second += slot.conf;
    }
    if (pool == 0) continue;
    int best = 0, best_n = 0;
    double best_sum = 0;
    for (const auto& [step, v] : votes) {
      if (best == 0 || v.first > best_n || (v.first == best_n && v.second > best_sum + kConfidenceTieEpsilon)) {
        best = step;
        best_n = v.first;
        best_sum = v.second;
      }
    }
    const double conf = best_sum / pool;
    const int delta = best - previous;
    const bool legal = delta == 0 || delta == 1;
    const bool confident = conf >= plan.confidence_threshold;
    if (legal && (confident || timeline_ok())) {
      previous = best;
      if (confident) records.push_back(best);
      continue;
    }
    asked.push_back(frames[i].frame_index);
    // Oracle answer right away.
    const int answer = s.truth.steps[i];
    previous = answer;
    records.push_back(answer);
    for (auto& slot : memory) slot.has = false;
  }
  return asked;
}

Outcome hitl_oracle() {
  const auto doc = atlas().lookup("rie");
  const double flips[] = {0.0, 0.2, 0.4};
  int sessions = 0, queries = 0;
  for (int i = 0; i < kHitlSessions; ++i) {
    const double flip = flips[i % 3];
    const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(i);
    std::mt19937_64 pick(seed);
    const int fps = 2 + static_cast<int>(pick() % 11);
    const auto s = synth_session(doc, fps, flip, seed);
    auto config = replay_config(atlas(), s.recording, planner());
    // Most sessions use the bundled plan; the rest vary it.
    if (i % 4 == 3) {
      config.tracking.memory_update_interval = 1 + static_cast<int>(pick() % 3);
      config.tracking.prediction_interval = config.tracking.memory_update_interval + static_cast<int>(pick() % 5);
      config.tracking.confidence_threshold = 0.5 + 0.1 * static_cast<double>(pick() % 4);
    }
    const auto r = replay(atlas(), s.recording, s.truth, config, {}, planner());
    std::vector<std::int64_t> got;
    for (const auto& e : r.events) {
      if (e.is<ClarificationRequested>()) got.push_back(e.as<ClarificationRequested>().query.frame_index);
    }
    const auto want = simulate_queries(s, config.tracking, config.history_window);
    if (got != want) {
      std::ostringstream d;
      d << "session " << i << " (flip " << flip << ", seed " << seed << "): engine asked " << got.size()
        << " times, simulator " << want.size();
      return {false, d.str()};
    }
    ++sessions;
    queries += static_cast<int>(got.size());
  }
  return {true, std::to_string(sessions) + " sessions, " + std::to_string(queries) + " clarifications matched"};
}

Outcome smoothing() {
  const auto doc = atlas().lookup("rie");
  if (doc.step_count() != 8) return {false, "rie has " + std::to_string(doc.step_count()) + " steps"};
  const auto t0 = std::chrono::steady_clock::now();
  double confirmed = 0, raw = 0;
  for (int seed = 1; seed <= kSmoothingSeeds; ++seed) {
    const auto s = synth_session(doc, 60, 0.3, static_cast<std::uint64_t>(seed));
    auto config = replay_config(atlas(), s.recording, planner());
    config.tracking.memory_update_interval = 1;
    config.tracking.prediction_interval = 3;
    config.tracking.confidence_threshold = 0.8;
    confirmed += replay(atlas(), s.recording, s.truth, config, {}, planner()).metrics.step_accuracy;
    raw += raw_accuracy(s);
  }
  confirmed /= kSmoothingSeeds;
  raw /= kSmoothingSeeds;
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "confirmed " << confirmed << " vs raw " << raw << ", " << secs << " s";
  return {confirmed > raw && secs < kSmoothingBudgetS, d.str()};
}

// Drives a session the way replay does, keeping the engine for inspection.
std::string drive(Engine& engine, const Recording& rec, const GroundTruth& truth) {
  const auto id = engine.create_session(replay_config(atlas(), rec, planner()));
  for (size_t i = 0; i < rec.frames.size(); ++i) {
    for (const auto& e : engine.handle_event(id, FrameArrival{rec.frames[i]})) {
      if (e.is<ClarificationRequested>()) engine.handle_event(id, HumanAnswer{truth.steps[i], rec.frames[i].timestamp_ms});
    }
  }
  engine.handle_event(id, HumanQuestion{"what was the last step?", {}});
  engine.handle_event(id, Close{});
  return id;
}

Outcome determinism() {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(data("fixtures"))) {
    if (entry.path().extension() == ".rec") names.push_back(entry.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    for (const char* policy : {"oracle", "refuse"}) {
      if (replay_fixture(name, policy).log != replay_fixture(name, policy).log) {
        return {false, name + ": exports differ"};
      }
    }
    const auto rec = load_recording(data("fixtures/" + name + ".rec"), &atlas());
    const auto truth = load_truth(data("fixtures/" + name + ".truth.json"));
    Engine live(atlas());
    const auto id = drive(live, rec, truth);
    const auto doc = json::parse(live.export_log(id));
    std::vector<SessionEvent> stream;
    for (const auto& j : doc["events"]) stream.push_back(j.get<SessionEvent>());
    Engine fresh(atlas());
    fresh.restore(stream);
    if (json(fresh.derived_state(id)).dump() != json(live.derived_state(id)).dump()) {
      return {false, name + ": restored state differs"};
    }
    if (fresh.export_log(id) != live.export_log(id)) return {false, name + ": restored export differs"};
  }
  return {true, std::to_string(names.size()) + " fixtures, byte-identical exports and restored state"};
}

std::string normalize_quotes(std::string s) {
  for (const std::string curly : {"“", "”"}) {
    for (size_t pos; (pos = s.find(curly)) != std::string::npos;) s.replace(pos, curly.size(), "\"");
  }
  return s;
}

Outcome plan_fidelity() {
  const std::vector<std::string> rie_items = {
      "ANATECH USA RIE-19 (Reactive Ion Etcher)",
      "Wafer (sample)",
      "Chamber door and chamber",
      "Control system/User interface (for selecting Manual, Vent, System Overview, Start Vacuum)",
      "Screen/Display (for viewing indicators and etching time)",
      "Vacuum pump/system",
      "RF power supply",
      "Pressure gauge/sensor for measuring mTorr",
      "Time/Clock (for 30s etching time)",
      "Wafer tweezers",
      "Process Gas/Gases (implied by “Gas On” indicator)",
      "Safety gloves (e.g., Nitrile gloves)",
      "Safety goggles"};
  const std::vector<std::string> spin_items = {
      "Spin coater",
      "Spin coater controller/interface",
      "Spinner chuck",
      "Hot plate or oven (for baking)",
      "Timer/Stopwatch",
      "Wafer (substrate)",
      "SU-8 TF 6002 photoresist",
      "Dispensing tool (e.g., pipette, dropper syringe) for photoresist",
      "Wafer tweezers (for handling)",
      "Safety goggles",
      "Nitrile gloves"};

  FallbackReasoningBackend fallback(planner());
  std::ostringstream d;
  bool ok = true;
  auto check = [&](const std::string& id, int steps, const std::vector<std::string>& items, int u, int p,
                   double tau) {
    const auto doc = load_sop_file(data("sops/" + id + ".sop"));
    const auto plan = make_experiment_plan(doc, fallback);
    std::set<std::string> inventory;
    for (const auto& item : plan.inventory) inventory.insert(text::casefold(normalize_quotes(item)));
    int missing = 0;
    for (const auto& item : items) missing += inventory.count(text::casefold(normalize_quotes(item))) ? 0 : 1;
    const auto t = make_tracking_plan(doc, fallback, planner().defaults);
    const bool plan_ok = t.memory_update_interval == u && t.prediction_interval == p &&
                         std::abs(t.confidence_threshold - tau) < 1e-12;
    ok = ok && doc.step_count() == steps && plan.steps.size() == static_cast<size_t>(steps) && missing == 0 &&
         plan_ok;
    d << id << ": " << doc.step_count() << " steps, " << (items.size() - missing) << "/" << items.size()
      << " items, plan (" << t.memory_update_interval << "," << t.prediction_interval << ","
      << t.confidence_threshold << ")  ";
  };
  check("rie", 8, rie_items, 1, 3, 0.8);
  check("spin_coating", 6, spin_items, 2, 5, 0.6);
  return {ok, d.str()};
}

Outcome statistics() {
  std::mt19937_64 rng(99);
  double worst = 0;
  for (int i = 0; i < kStatsLists; ++i) {
    const size_t n = 1 + rng() % 200;
    std::vector<int> scores(n);
    for (auto& s : scores) s = 1 + static_cast<int>(rng() % 5);
    // Reference: exact integer sums, then one division each.
    long long sum = 0, sq = 0;
    for (int s : scores) {
      sum += s;
      sq += static_cast<long long>(s) * s;
    }
    const long double nn = static_cast<long double>(n);
    const long double mean = sum / nn;
    long double sem = 0;
    if (n > 1) {
      const long double ss = (static_cast<long double>(sq) * nn - static_cast<long double>(sum) * sum) / nn;
      sem = std::sqrt(ss / (nn - 1)) / std::sqrt(nn);
    }
    const auto got = summarize_scores(scores);
    worst = std::max({worst, std::abs(got.mean - static_cast<double>(mean)),
                      std::abs(got.sem - static_cast<double>(sem))});
  }
  std::ostringstream d;
  d << kStatsLists << " lists, max deviation " << worst;
  return {worst <= kStatsTolerance, d.str()};
}

}  // namespace

int main() {
  report("voting-oracle", voting_oracle);
  report("golden-rie-replay", golden_rie);
  report("error-correction", error_scenario);
  report("hitl-oracle", hitl_oracle);
  report("smoothing", smoothing);
  report("determinism", determinism);
  report("plan-fidelity", plan_fidelity);
  report("statistics", statistics);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
