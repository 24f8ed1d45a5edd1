#include "apex/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "apex/analysis.hpp"
#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

PlannerConfig parse_planner_config(const json& j) {
  PlannerConfig c;
  c.canonical_order = j.value("canonical_order", std::vector<std::string>{});
  for (const auto& p : j.value("protocols", json::array())) {
    c.protocols.push_back({p.at("title").get<std::string>(),
                           p.at("sop_ids").get<std::vector<std::string>>()});
  }
  c.stopwords = j.value("stopwords", std::vector<std::string>{});
  if (auto it = j.find("defaults"); it != j.end()) {
    c.defaults = it->get<StepTrackingPlan>();
    if (c.defaults.rationale.empty()) c.defaults.rationale = "configured defaults";
    if (!c.defaults.valid()) {
      throw Error(ErrorCode::InvalidConfig, "planner defaults violate tracking-plan invariants");
    }
  }
  return c;
}

PlannerConfig load_planner_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open " + path.string());
  try {
    return parse_planner_config(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what(), path.string());
  }
}

std::optional<StepTrackingPlan> bundled_tracking_plan(std::string_view sop_id) {
  if (sop_id == "rie") {
    return StepTrackingPlan{"rie", 1, 3, 0.8,
                            "pressure changes quickly so memory refreshes every frame; the scene "
                            "stays on one machine, so predictions are stable and clarification "
                            "needs a high threshold"};
  }
  if (sop_id == "spin_coating") {
    return StepTrackingPlan{"spin_coating", 2, 5, 0.6,
                            "few steps with a single timed parameter allow sparser memory updates; "
                            "many tools in view make predictions noisier, so the clarification "
                            "threshold is lower"};
  }
  return std::nullopt;
}

namespace {

std::set<std::string> keyword_set(std::string_view s, const std::set<std::string>& stopwords) {
  std::set<std::string> out;
  for (const auto& tok : text::word_tokens(s)) {
    if (tok.size() < 3 || stopwords.contains(tok)) continue;
    out.insert(text::stem(tok));
  }
  return out;
}

size_t overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
  size_t n = 0;
  for (const auto& t : a) n += b.contains(t) ? 1 : 0;
  return n;
}

}  // namespace

std::vector<std::string> keyword_select_sops(const std::string& intent,
                                             std::span<const SopDoc> atlas,
                                             const PlannerConfig& config) {
  std::set<std::string> stopwords;
  for (const auto& w : config.stopwords) stopwords.insert(text::casefold(w));
  const auto wanted = keyword_set(intent, stopwords);

  std::set<std::string> available;
  for (const auto& d : atlas) available.insert(d.id);

  size_t best = 0;
  std::vector<std::string> selected;
  auto consider = [&](size_t score, const std::vector<std::string>& ids) {
    if (score == 0 || score < best) return;
    if (score > best) {
      best = score;
      selected.clear();
    }
    for (const auto& id : ids) {
      if (available.contains(id)) selected.push_back(id);
    }
  };
  for (const auto& d : atlas) consider(overlap(wanted, keyword_set(d.title, stopwords)), {d.id});
  for (const auto& p : config.protocols) {
    consider(overlap(wanted, keyword_set(p.title, stopwords)), p.sop_ids);
  }

  auto rank = [&](const std::string& id) {
    auto it = std::find(config.canonical_order.begin(), config.canonical_order.end(), id);
    return static_cast<size_t>(it - config.canonical_order.begin());
  };
  std::sort(selected.begin(), selected.end(), [&](const std::string& a, const std::string& b) {
    const auto ra = rank(a);
    const auto rb = rank(b);
    return ra != rb ? ra < rb : a < b;
  });
  selected.erase(std::unique(selected.begin(), selected.end()), selected.end());
  return selected;
}

std::vector<std::string> FallbackReasoningBackend::select_sops(const std::string& intent,
                                                               std::span<const SopDoc> atlas) {
  return keyword_select_sops(intent, atlas, config_);
}

std::vector<std::string> FallbackReasoningBackend::propose_inventory(const SopDoc&) { return {}; }

std::optional<TrackingProposal> FallbackReasoningBackend::propose_tracking_plan(const SopDoc& doc) {
  auto plan = bundled_tracking_plan(doc.id);
  if (!plan) return std::nullopt;
  return TrackingProposal{plan->memory_update_interval, plan->prediction_interval,
                          plan->confidence_threshold, plan->rationale};
}

GroundedAnswer FallbackReasoningBackend::answer(const std::string& question,
                                                std::span<const LogRecord> history) {
  return keyword_answer(question, history);
}

Protocol compose_protocol(const std::string& intent, const SopAtlas& atlas,
                          ReasoningBackend& backend) {
  // One snapshot: selection and resolution see the same atlas revision.
  const auto docs = atlas.docs();
  if (docs.empty()) throw Error(ErrorCode::InvalidConfig, "atlas is empty");
  auto ids = backend.select_sops(intent, docs);
  if (ids.empty()) throw Error(ErrorCode::NoMatchingSop, intent);
  for (const auto& id : ids) {
    const bool known = std::any_of(docs.begin(), docs.end(), [&](const SopDoc& d) { return d.id == id; });
    if (!known) throw Error(ErrorCode::UnknownSop, id);
  }
  return Protocol{intent, std::move(ids)};
}

ExperimentPlan make_experiment_plan(const SopDoc& doc, ReasoningBackend& backend) {
  ExperimentPlan plan;
  plan.sop_id = doc.id;
  plan.steps = doc.steps;
  std::set<std::string> seen;
  auto add = [&](const std::string& name) {
    const auto trimmed = text::trim(name);
    if (trimmed.empty()) return;
    if (seen.insert(text::casefold(trimmed)).second) plan.inventory.push_back(trimmed);
  };
  for (const auto& e : doc.equipment) add(e);
  for (const auto& e : backend.propose_inventory(doc)) add(e);
  return plan;
}

StepTrackingPlan clamp_tracking_plan(const TrackingProposal& proposal,
                                     const StepTrackingPlan& defaults) {
  constexpr long long kMaxInterval = std::numeric_limits<int>::max();
  StepTrackingPlan out;
  out.sop_id = defaults.sop_id;
  out.rationale = proposal.rationale;
  out.memory_update_interval =
      static_cast<int>(std::clamp<long long>(proposal.memory_update_interval, 1, kMaxInterval));
  out.prediction_interval = static_cast<int>(std::clamp<long long>(
      proposal.prediction_interval, out.memory_update_interval, kMaxInterval));
  double t = proposal.confidence_threshold;
  if (std::isnan(t)) t = defaults.confidence_threshold;
  out.confidence_threshold = std::clamp(t, 0.01, 1.0);
  return out;
}

StepTrackingPlan make_tracking_plan(const SopDoc& doc, ReasoningBackend& backend,
                                    const StepTrackingPlan& defaults) {
  StepTrackingPlan keyed = defaults;
  keyed.sop_id = doc.id;
  auto proposal = backend.propose_tracking_plan(doc);
  if (!proposal) return keyed;
  return clamp_tracking_plan(*proposal, keyed);
}

}  // namespace apex
