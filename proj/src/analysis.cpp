#include "apex/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

std::string_view to_string(AlertKind k) {
  return k == AlertKind::ParameterMismatch ? "ParameterMismatch" : "SequenceDeviation";
}

LogRecord make_record(const ConfirmedStep& confirmed, const ContextFrame& frame, const SopDoc& doc) {
  const int step = confirmed.top()->step;
  LogRecord r;
  r.timestamp_ms = frame.timestamp_ms;
  r.step = step;
  r.source = confirmed.source;
  r.progress = static_cast<double>(step) / doc.step_count();
  if (frame.action != kNoneObserved) r.key_actions.push_back(frame.action);
  for (const auto& eq : frame.equipment) {
    for (const auto& reading : eq.readings) r.key_parameters.push_back(reading);
  }
  std::ostringstream ss;
  ss << "Step " << step << "/" << doc.step_count() << ": " << doc.step(step).instruction
     << " Observed action: " << frame.action << "; environment: " << frame.environment << ".";
  r.summary = ss.str();
  return r;
}

std::optional<LogRecord> append_record(AnalysisHistory& history, const ConfirmedStep& confirmed,
                                       const ContextFrame& frame, double threshold,
                                       const SopDoc& doc) {
  if (!confirmed.top()) return std::nullopt;
  const bool logged = confirmed.source == StepSource::Human ||
                      confirmed.top()->aggregated_confidence >= threshold;
  if (!logged) return std::nullopt;
  return history.append(make_record(confirmed, frame, doc));
}

bool reading_matches(const Reading& reading, const ParameterSpec& spec) {
  return text::name_key(reading.name) == text::name_key(spec.name);
}

std::optional<Alert> check_reading(const ParameterSpec& spec, const Reading& reading, int step) {
  Alert a;
  a.kind = AlertKind::ParameterMismatch;
  a.step = step;
  a.parameter = spec.name;
  a.observed = reading.value_text();
  a.expected = spec.expected_text();
  a.tolerance = spec.tolerance;
  if (spec.tolerance > 0.0) a.expected += " ± " + text::format_number(spec.tolerance) + " " + spec.unit;

  bool violated = false;
  if (spec.is_numeric()) {
    if (!text::iequals(reading.unit, spec.unit)) {
      violated = true;
      a.unit_disagreement = true;
    } else if (!reading.is_numeric()) {
      violated = true;
    } else {
      const double observed = std::get<double>(reading.value);
      const double expected = std::get<double>(spec.expected);
      violated = std::abs(observed - expected) > spec.tolerance;
    }
  } else {
    violated = !text::iequals(reading.value_text(), spec.expected_text());
  }
  if (!violated) return std::nullopt;

  std::ostringstream ss;
  ss << "The current settings are incorrect: " << reading.name << " is " << a.observed
     << " but step " << step << " requires " << a.expected << ".";
  if (a.unit_disagreement) ss << " (unit disagreement)";
  a.message = ss.str();
  return a;
}

std::vector<Alert> detect_errors(const ContextFrame& frame, const SopStep& step) {
  std::vector<Alert> alerts;
  for (const auto& spec : step.params) {
    for (const auto& eq : frame.equipment) {
      std::optional<Alert> hit;
      for (const auto& reading : eq.readings) {
        if (!reading_matches(reading, spec)) continue;
        hit = check_reading(spec, reading, step.index);
        if (hit) break;
      }
      if (hit) {
        alerts.push_back(std::move(*hit));
        break;
      }
    }
  }
  return alerts;
}

Guidance make_guidance(const ConfirmedStep& confirmed, const ContextFrame& frame, const SopDoc& doc) {
  const int step = confirmed.top()->step;
  Guidance g;
  g.step = step;
  g.current_action = frame.action;
  g.required_action = doc.step(step).instruction;
  if (step >= doc.step_count()) {
    g.next_step_preview = kProcedureComplete;
  } else {
    g.next_step_preview =
        "Next (step " + std::to_string(step + 1) + "): " + doc.step(step + 1).instruction;
  }
  return g;
}

namespace {

const std::set<std::string>& question_stopwords() {
  static const std::set<std::string> kWords{"did", "does", "the", "and", "what", "when", "how",
                                            "was", "were", "have", "has", "had", "which", "who",
                                            "why", "are", "you", "for", "this", "that", "with"};
  return kWords;
}

std::set<std::string> keywords(std::string_view s) {
  std::set<std::string> out;
  for (const auto& t : text::word_tokens(s)) {
    if (t.size() < 3 || question_stopwords().contains(t)) continue;
    out.insert(text::stem(t));
  }
  return out;
}

std::string cite(const LogRecord& r) {
  return "[record " + std::to_string(r.seq) + ", t=" + std::to_string(r.timestamp_ms) + " ms]";
}

std::string parameters_text(const LogRecord& r) {
  std::string out;
  for (const auto& p : r.key_parameters) {
    if (!out.empty()) out += ", ";
    out += p.name + " " + p.value_text();
  }
  return out;
}

}  // namespace

GroundedAnswer keyword_answer(const std::string& question, std::span<const LogRecord> history) {
  if (history.empty()) return {std::string{kNoRecords}, {}};

  static const std::regex kStepRef(R"(step\s*#?\s*(\d+))", std::regex::icase);
  std::smatch m;
  if (std::regex_search(question, m, kStepRef)) {
    const int step = std::stoi(m[1].str());
    const LogRecord* last = nullptr;
    for (const auto& r : history) {
      if (r.step == step) last = &r;
    }
    if (last == nullptr) {
      return {"No records for step " + std::to_string(step) + " yet.", {}};
    }
    std::string text = "Step " + std::to_string(step) + ": " + last->summary + " Completed at timestamp " +
                       std::to_string(last->timestamp_ms) + " ms " + cite(*last) + ".";
    return {std::move(text), {last->seq}};
  }

  const auto wanted = keywords(question);
  const LogRecord* best = nullptr;
  size_t best_score = 0;
  for (const auto& r : history) {
    std::string corpus = r.summary;
    for (const auto& a : r.key_actions) corpus += " " + a;
    for (const auto& p : r.key_parameters) corpus += " " + p.name + " " + p.value_text();
    size_t score = 0;
    for (const auto& k : keywords(corpus)) score += wanted.contains(k) ? 1 : 0;
    if (score > 0 && score >= best_score) {
      best = &r;
      best_score = score;
    }
  }
  if (best == nullptr) return {"No matching records found.", {}};

  std::string text = "Step " + std::to_string(best->step) + " " + cite(*best) + ": " + best->summary;
  if (!best->key_parameters.empty()) text += " Recorded parameters: " + parameters_text(*best) + ".";
  return {std::move(text), {best->seq}};
}

GroundedAnswer answer_query(const std::string& question, const AnalysisHistory& history,
                            ReasoningBackend& backend) {
  if (history.empty()) return {std::string{kNoRecords}, {}};
  auto answer = backend.answer(question, history.records());
  std::erase_if(answer.citations, [&](std::int64_t seq) {
    return seq < 1 || seq > static_cast<std::int64_t>(history.size());
  });
  return answer;
}

void to_json(json& j, const Alert& a) {
  j = json{{"kind", std::string{to_string(a.kind)}},
           {"step", a.step},
           {"parameter", a.parameter},
           {"observed", a.observed},
           {"expected", a.expected},
           {"tolerance", a.tolerance},
           {"unit_disagreement", a.unit_disagreement},
           {"message", a.message}};
}

void from_json(const json& j, Alert& a) {
  a.kind = j.at("kind").get<std::string>() == "SequenceDeviation" ? AlertKind::SequenceDeviation
                                                                   : AlertKind::ParameterMismatch;
  a.step = j.at("step").get<int>();
  a.parameter = j.at("parameter").get<std::string>();
  a.observed = j.at("observed").get<std::string>();
  a.expected = j.at("expected").get<std::string>();
  a.tolerance = j.at("tolerance").get<double>();
  a.unit_disagreement = j.at("unit_disagreement").get<bool>();
  a.message = j.at("message").get<std::string>();
}

void to_json(json& j, const Guidance& g) {
  j = json{{"step", g.step},
           {"current_action", g.current_action},
           {"required_action", g.required_action},
           {"next_step_preview", g.next_step_preview}};
}

void from_json(const json& j, Guidance& g) {
  g.step = j.at("step").get<int>();
  g.current_action = j.at("current_action").get<std::string>();
  g.required_action = j.at("required_action").get<std::string>();
  g.next_step_preview = j.at("next_step_preview").get<std::string>();
}

}  // namespace apex
