#include "apex/plan.hpp"

#include <cmath>

#include "apex/records.hpp"

namespace apex {

using nlohmann::json;

int StepTrackingPlan::memory_capacity() const {
  if (memory_update_interval <= 0) return 1;
  return (prediction_interval + memory_update_interval - 1) / memory_update_interval;
}

bool StepTrackingPlan::valid() const {
  return memory_update_interval >= 1 && prediction_interval >= memory_update_interval &&
         confidence_threshold > 0.0 && confidence_threshold <= 1.0;
}

void to_json(json& j, const Protocol& p) {
  j = json{{"intent", p.intent}, {"sop_ids", p.sop_ids}};
}

void from_json(const json& j, Protocol& p) {
  p.intent = j.value("intent", std::string{});
  p.sop_ids = j.at("sop_ids").get<std::vector<std::string>>();
}

void to_json(json& j, const ExperimentPlan& p) {
  j = json{{"sop_id", p.sop_id}, {"steps", p.steps}, {"inventory", p.inventory}};
}

void from_json(const json& j, ExperimentPlan& p) {
  p.sop_id = j.at("sop_id").get<std::string>();
  // Steps travel in SOP-file shape; reuse the document parser for them.
  json doc = {{"id", p.sop_id}, {"title", ""}, {"version", 1}, {"equipment", json::array()},
              {"steps", j.at("steps")}};
  p.steps = doc.get<SopDoc>().steps;
  p.inventory = j.at("inventory").get<std::vector<std::string>>();
}

void to_json(json& j, const StepTrackingPlan& p) {
  j = json{{"sop_id", p.sop_id},
           {"memory_update_interval", p.memory_update_interval},
           {"prediction_interval", p.prediction_interval},
           {"confidence_threshold", p.confidence_threshold},
           {"rationale", p.rationale}};
}

void from_json(const json& j, StepTrackingPlan& p) {
  p.sop_id = j.value("sop_id", std::string{});
  p.memory_update_interval = j.at("memory_update_interval").get<int>();
  p.prediction_interval = j.at("prediction_interval").get<int>();
  p.confidence_threshold = j.at("confidence_threshold").get<double>();
  p.rationale = j.value("rationale", std::string{});
}

std::string_view to_string(StepSource s) { return s == StepSource::Human ? "human" : "vote"; }

StepSource step_source_from_string(std::string_view s) {
  return s == "human" ? StepSource::Human : StepSource::Vote;
}

const LogRecord& AnalysisHistory::append(LogRecord record) {
  record.seq = next_seq();
  records_.push_back(std::move(record));
  return records_.back();
}

std::span<const LogRecord> AnalysisHistory::recent(size_t n) const {
  std::span<const LogRecord> all{records_};
  if (n >= all.size()) return all;
  return all.subspan(all.size() - n);
}

void to_json(json& j, const LogRecord& r) {
  j = json{{"seq", r.seq},
           {"timestamp_ms", r.timestamp_ms},
           {"step", r.step},
           {"key_actions", r.key_actions},
           {"key_parameters", r.key_parameters},
           {"summary", r.summary},
           {"progress", r.progress},
           {"source", std::string{to_string(r.source)}}};
}

void from_json(const json& j, LogRecord& r) {
  r.seq = j.at("seq").get<std::int64_t>();
  r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  r.step = j.at("step").get<int>();
  r.key_actions = j.at("key_actions").get<std::vector<std::string>>();
  r.key_parameters = j.at("key_parameters").get<std::vector<Reading>>();
  r.summary = j.at("summary").get<std::string>();
  r.progress = j.at("progress").get<double>();
  r.source = step_source_from_string(j.at("source").get<std::string>());
}

void to_json(json& j, const GroundedAnswer& a) {
  j = json{{"text", a.text}, {"citations", a.citations}};
}

void from_json(const json& j, GroundedAnswer& a) {
  a.text = j.at("text").get<std::string>();
  a.citations = j.value("citations", std::vector<std::int64_t>{});
}

}  // namespace apex
