#include "apex/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

FramePrediction sanitize_prediction(FramePrediction p, int step_count) {
  std::vector<StepCandidate> kept;
  std::set<int> seen;
  for (auto c : p.candidates) {
    if (c.step < 1 || c.step > step_count) continue;
    if (!seen.insert(c.step).second) continue;
    c.confidence = std::isnan(c.confidence) ? 0.0 : std::clamp(c.confidence, 0.0, 1.0);
    kept.push_back(c);
    if (kept.size() == kRanks) break;
  }
  if (kept.empty()) {
    throw Error(ErrorCode::BackendFailure,
                "prediction for frame " + std::to_string(p.frame_index) + " has no valid candidate");
  }
  p.candidates = std::move(kept);
  return p;
}

TrackerMemory::TrackerMemory(int capacity) : capacity_(std::max(capacity, 1)) {}

void TrackerMemory::count(const FramePrediction& p, int sign) {
  const size_t ranks = std::min<size_t>(p.candidates.size(), kRanks);
  for (size_t r = 0; r < ranks; ++r) {
    const auto& c = p.candidates[r];
    auto& t = tallies_[r][c.step];
    t.step = c.step;
    t.votes += sign;
    t.confidence_sum += sign * c.confidence;
    pool_sizes_[r] += sign;
    if (t.votes == 0) tallies_[r].erase(c.step);
  }
}

void TrackerMemory::push(MemoryEntry entry) {
  if (static_cast<int>(entries_.size()) == capacity_) {
    if (entries_.front().prediction) count(*entries_.front().prediction, -1);
    entries_.pop_front();
  }
  if (entry.prediction) count(*entry.prediction, +1);
  entries_.push_back(std::move(entry));
}

void TrackerMemory::drop_predictions() {
  for (auto& e : entries_) e.prediction.reset();
  for (auto& t : tallies_) t.clear();
  pool_sizes_.fill(0);
}

namespace {

bool beats(const VoteTally& a, const VoteTally& b) {
  if (a.votes != b.votes) return a.votes > b.votes;
  if (std::abs(a.confidence_sum - b.confidence_sum) > kConfidenceTieEpsilon) {
    return a.confidence_sum > b.confidence_sum;
  }
  return a.step < b.step;
}

}  // namespace

ConfirmedStep aggregate_votes(const TrackerMemory& memory) {
  if (!memory.has_predictions()) throw Error(ErrorCode::EmptyMemory, "no predictions in memory");
  ConfirmedStep out;
  out.frame_index = memory.entries().back().frame.frame_index;
  std::set<int> elected;
  for (int r = 0; r < kRanks; ++r) {
    for (const auto& [_, t] : memory.tally(r)) out.vote_detail[r].push_back(t);
    for (int pool = r; pool >= 0; --pool) {
      const VoteTally* best = nullptr;
      for (const auto& [step, t] : memory.tally(pool)) {
        if (elected.contains(step)) continue;
        if (best == nullptr || beats(t, *best)) best = &t;
      }
      if (best == nullptr) continue;
      out.ranked[r] = RankedStep{best->step, best->confidence_sum / memory.pool_size(pool)};
      elected.insert(best->step);
      break;
    }
  }
  return out;
}

std::string_view to_string(GuardReason r) {
  return r == GuardReason::LowConfidence ? "LowConfidence" : "IllegalTransition";
}

GuardReason guard_reason_from_string(std::string_view s) {
  return s == "IllegalTransition" ? GuardReason::IllegalTransition : GuardReason::LowConfidence;
}

std::optional<GuardReason> guard_transition(int previous_step, const ConfirmedStep& confirmed,
                                            double threshold) {
  const auto& top = confirmed.top();
  if (!top) return GuardReason::LowConfidence;
  const int delta = top->step - previous_step;
  if (delta != 0 && delta != 1) return GuardReason::IllegalTransition;
  if (top->aggregated_confidence < threshold) return GuardReason::LowConfidence;
  return std::nullopt;
}

bool is_unit_monotone(std::span<const LogRecord> history) {
  for (size_t i = 1; i < history.size(); ++i) {
    const int d = history[i].step - history[i - 1].step;
    if (d != 0 && d != 1) return false;
  }
  return true;
}

namespace {

std::string join_steps(const std::vector<int>& steps) {
  std::string out;
  for (size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out += (i + 1 == steps.size()) ? " or " : ", ";
    out += std::to_string(steps[i]);
  }
  return out;
}

HitlQuery build_query(const TrackerState& state, const ConfirmedStep& confirmed, GuardReason reason) {
  HitlQuery q;
  q.frame_index = confirmed.frame_index;
  q.reason = reason;
  q.last_accepted_step = state.previous_step;
  q.proposed_step = confirmed.top()->step;
  q.proposed_confidence = confirmed.top()->aggregated_confidence;

  std::set<int> steps;
  const int lo = std::max(1, std::min(state.previous_step, q.proposed_step));
  const int hi = std::max(state.previous_step, q.proposed_step);
  for (int s = lo; s <= hi; ++s) steps.insert(s);
  for (int r = 1; r < kRanks; ++r) {
    if (confirmed.ranked[r]) steps.insert(confirmed.ranked[r]->step);
  }
  q.candidate_steps.assign(steps.begin(), steps.end());

  for (auto it = state.memory.entries().rbegin(); it != state.memory.entries().rend(); ++it) {
    if (!it->frame.equipment.empty()) {
      q.last_equipment = it->frame.equipment.front();
      break;
    }
  }

  std::ostringstream ss;
  ss.precision(2);
  ss << std::fixed;
  if (reason == GuardReason::IllegalTransition) {
    ss << "Tracking moved from step " << q.last_accepted_step << " to step " << q.proposed_step
       << ", which is not the next step.";
  } else {
    ss << "Step " << q.proposed_step << " was detected with confidence " << q.proposed_confidence
       << ", below the " << state.plan.confidence_threshold << " threshold.";
  }
  if (q.last_equipment) ss << " Last seen equipment: " << q.last_equipment->name << ".";
  ss << " Which step are you on: " << join_steps(q.candidate_steps) << "?";
  q.question = ss.str();
  return q;
}

}  // namespace

Resolution resolve_or_query(TrackerState& state, const ConfirmedStep& confirmed, GuardReason reason,
                            std::span<const LogRecord> history) {
  const int delta = confirmed.top() ? confirmed.top()->step - state.previous_step : -1;
  if (reason == GuardReason::LowConfidence && (delta == 0 || delta == 1) &&
      is_unit_monotone(history)) {
    return AutoAccept{};
  }
  auto q = build_query(state, confirmed, reason);
  state.pending_query = q;
  return q;
}

TrackerState::TrackerState(StepTrackingPlan p, std::vector<SopStep> s)
    : plan(std::move(p)), steps(std::move(s)), memory(plan.memory_capacity()) {}

bool TrackerState::is_update_frame() const {
  return frames_ingested > 0 && frames_ingested % plan.memory_update_interval == 0;
}

bool TrackerState::is_prediction_frame() const {
  return frames_ingested > 0 && frames_ingested % plan.prediction_interval == 0;
}

IngestOutcome ingest_frame(TrackerState& state, const ContextFrame& frame,
                           PredictionBackend& backend, std::span<const LogRecord> history,
                           const RawFrame* raw) {
  IngestOutcome out;
  ++state.frames_ingested;
  state.last_frame_index = frame.frame_index;

  if (state.is_update_frame()) {
    try {
      auto p = backend.predict(PredictionRequest{frame, history, state.steps, raw});
      p.frame_index = frame.frame_index;
      p = sanitize_prediction(std::move(p), state.step_count());
      state.memory.push(MemoryEntry{frame, p});
      out.prediction = std::move(p);
    } catch (const std::exception& e) {
      out.prediction_failed = true;
      out.failure = e.what();
    }
  }

  if (!state.is_prediction_frame()) return out;
  out.aggregation_point = true;
  if (state.pending_query || !state.memory.has_predictions()) return out;

  auto confirmed = aggregate_votes(state.memory);
  confirmed.frame_index = frame.frame_index;
  const auto verdict = guard_transition(state.previous_step, confirmed, state.plan.confidence_threshold);
  if (!verdict) {
    state.previous_step = confirmed.top()->step;
    out.result = Accepted{std::move(confirmed), std::nullopt};
    return out;
  }
  auto resolution = resolve_or_query(state, confirmed, *verdict, history);
  if (std::holds_alternative<AutoAccept>(resolution)) {
    state.previous_step = confirmed.top()->step;
    out.result = Accepted{std::move(confirmed), verdict};
  } else {
    out.result = std::get<HitlQuery>(std::move(resolution));
  }
  return out;
}

ConfirmedStep apply_clarification(TrackerState& state, int answered_step) {
  if (!state.pending_query) throw Error(ErrorCode::NoPendingQuery, "no clarification pending");
  if (answered_step < 1 || answered_step > state.step_count()) {
    throw Error(ErrorCode::StepOutOfRange, "step " + std::to_string(answered_step) + " not in 1.." +
                                               std::to_string(state.step_count()));
  }
  state.previous_step = answered_step;
  state.pending_query.reset();
  state.memory.drop_predictions();

  ConfirmedStep c;
  c.frame_index = state.last_frame_index;
  c.ranked[0] = RankedStep{answered_step, 1.0};
  c.source = StepSource::Human;
  return c;
}

FramePrediction ScriptedPredictionBackend::predict(const PredictionRequest& request) {
  if (request.raw && request.raw->script.prediction) return *request.raw->script.prediction;
  auto it = table_.find(request.frame.frame_index);
  if (it == table_.end()) {
    throw Error(ErrorCode::BackendFailure,
                "no scripted prediction for frame " + std::to_string(request.frame.frame_index));
  }
  return it->second;
}

void to_json(json& j, const VoteTally& t) {
  j = json{{"step", t.step}, {"votes", t.votes}, {"confidence_sum", t.confidence_sum}};
}

void from_json(const json& j, VoteTally& t) {
  t.step = j.at("step").get<int>();
  t.votes = j.at("votes").get<int>();
  t.confidence_sum = j.at("confidence_sum").get<double>();
}

namespace {

constexpr std::array<const char*, kRanks> kRankNames{"top", "second", "third"};

}  // namespace

void to_json(json& j, const ConfirmedStep& c) {
  j = json{{"frame_index", c.frame_index}, {"source", std::string{to_string(c.source)}}};
  for (int r = 0; r < kRanks; ++r) {
    if (c.ranked[r]) {
      j[kRankNames[r]] = {{"step", c.ranked[r]->step},
                          {"aggregated_confidence", c.ranked[r]->aggregated_confidence}};
    } else {
      j[kRankNames[r]] = nullptr;
    }
  }
  j["vote_detail"] = c.vote_detail;
}

void from_json(const json& j, ConfirmedStep& c) {
  c.frame_index = j.at("frame_index").get<std::int64_t>();
  c.source = step_source_from_string(j.at("source").get<std::string>());
  for (int r = 0; r < kRanks; ++r) {
    const auto& v = j.at(kRankNames[r]);
    if (v.is_null()) {
      c.ranked[r].reset();
    } else {
      c.ranked[r] = RankedStep{v.at("step").get<int>(), v.at("aggregated_confidence").get<double>()};
    }
  }
  c.vote_detail = j.at("vote_detail").get<std::array<std::vector<VoteTally>, kRanks>>();
}

void to_json(json& j, const HitlQuery& q) {
  j = json{{"frame_index", q.frame_index},
           {"reason", std::string{to_string(q.reason)}},
           {"last_accepted_step", q.last_accepted_step},
           {"proposed_step", q.proposed_step},
           {"proposed_confidence", q.proposed_confidence},
           {"candidate_steps", q.candidate_steps},
           {"question", q.question}};
  j["last_equipment"] = q.last_equipment ? json(*q.last_equipment) : json(nullptr);
}

void from_json(const json& j, HitlQuery& q) {
  q.frame_index = j.at("frame_index").get<std::int64_t>();
  q.reason = guard_reason_from_string(j.at("reason").get<std::string>());
  q.last_accepted_step = j.at("last_accepted_step").get<int>();
  q.proposed_step = j.at("proposed_step").get<int>();
  q.proposed_confidence = j.at("proposed_confidence").get<double>();
  q.candidate_steps = j.at("candidate_steps").get<std::vector<int>>();
  q.question = j.at("question").get<std::string>();
  if (const auto& e = j.at("last_equipment"); !e.is_null()) {
    q.last_equipment = e.get<EquipmentObservation>();
  } else {
    q.last_equipment.reset();
  }
}

void to_json(json& j, const MemoryEntry& e) {
  j = json{{"frame", e.frame}};
  j["prediction"] = e.prediction ? json(*e.prediction) : json(nullptr);
}

void to_json(json& j, const TrackerState& s) {
  j = json{{"plan", s.plan},
           {"capacity", s.memory.capacity()},
           {"memory", s.memory.entries()},
           {"frames_ingested", s.frames_ingested},
           {"last_frame_index", s.last_frame_index},
           {"previous_step", s.previous_step}};
  j["pending_query"] = s.pending_query ? json(*s.pending_query) : json(nullptr);
}

}  // namespace apex
