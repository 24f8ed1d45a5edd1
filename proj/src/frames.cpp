#include "apex/frames.hpp"

#include <cctype>
#include <charconv>

#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

std::string Reading::value_text() const {
  if (const auto* v = std::get_if<double>(&value)) {
    std::string out = text::format_number(*v);
    if (!unit.empty()) out += " " + unit;
    return out;
  }
  return std::get<std::string>(value);
}

Reading parse_reading(std::string name, std::string_view raw) {
  Reading r;
  r.name = std::move(name);
  const std::string trimmed = text::trim(raw);
  // Leading '+' is not accepted by from_chars.
  const char* begin = trimmed.data();
  const char* end = trimmed.data() + trimmed.size();
  if (begin != end && *begin == '+') ++begin;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec == std::errc{} && ptr != begin) {
    std::string unit = text::trim(std::string_view(ptr, static_cast<size_t>(end - ptr)));
    // A unit never starts with a digit; "12 34" is not a reading.
    if (unit.empty() || !std::isdigit(static_cast<unsigned char>(unit.front()))) {
      r.value = v;
      r.unit = std::move(unit);
      return r;
    }
  }
  r.value = trimmed;
  return r;
}

void to_json(json& j, const Reading& r) {
  j = json::object();
  j["name"] = r.name;
  if (const auto* v = std::get_if<double>(&r.value)) {
    j["value"] = *v;
  } else {
    j["value"] = std::get<std::string>(r.value);
  }
  j["unit"] = r.unit;
}

void from_json(const json& j, Reading& r) {
  const auto name = j.at("name").get<std::string>();
  const auto& v = j.at("value");
  if (v.is_number()) {
    r.name = name;
    r.value = v.get<double>();
    r.unit = j.value("unit", std::string{});
    return;
  }
  const auto raw = v.get<std::string>();
  const auto unit = j.value("unit", std::string{});
  r = parse_reading(name, unit.empty() ? raw : raw + " " + unit);
  if (!r.is_numeric()) {
    // Explicit token readings keep their text exactly.
    r.value = raw;
    r.unit = unit;
  }
}

void to_json(json& j, const EquipmentObservation& e) {
  j = json{{"name", e.name}, {"position", e.position}, {"readings", e.readings}};
}

void from_json(const json& j, EquipmentObservation& e) {
  e.name = j.at("name").get<std::string>();
  e.position = j.value("position", std::string{});
  e.readings = j.value("readings", std::vector<Reading>{});
}

void to_json(json& j, const ContextFrame& f) {
  j = json{{"frame_index", f.frame_index},
           {"timestamp_ms", f.timestamp_ms},
           {"equipment", f.equipment},
           {"environment", f.environment},
           {"action", f.action}};
}

void from_json(const json& j, ContextFrame& f) {
  f.frame_index = j.value("frame_index", std::int64_t{0});
  f.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  f.equipment = j.value("equipment", std::vector<EquipmentObservation>{});
  f.environment = j.value("environment", std::string{kNoneObserved});
  f.action = j.value("action", std::string{kNoneObserved});
  if (text::trim(f.environment).empty()) f.environment = kNoneObserved;
  if (text::trim(f.action).empty()) f.action = kNoneObserved;
}

void to_json(json& j, const StepCandidate& c) {
  j = json{{"step", c.step}, {"confidence", c.confidence}};
}

void from_json(const json& j, StepCandidate& c) {
  c.step = j.at("step").get<int>();
  c.confidence = j.at("confidence").get<double>();
}

void to_json(json& j, const FramePrediction& p) {
  j = json{{"frame_index", p.frame_index}, {"candidates", p.candidates}, {"reasoning", p.reasoning}};
}

void from_json(const json& j, FramePrediction& p) {
  p.frame_index = j.value("frame_index", std::int64_t{0});
  p.candidates = j.at("candidates").get<std::vector<StepCandidate>>();
  p.reasoning = j.value("reasoning", std::string{});
}

void to_json(json& j, const RawFrame& f) {
  j = json{{"frame_index", f.frame_index}, {"timestamp_ms", f.timestamp_ms}};
  if (!f.description.empty()) j["description"] = f.description;
  if (!f.image_ref.empty()) j["image_ref"] = f.image_ref;
  if (!f.aux.empty()) j["aux"] = f.aux;
  if (f.script.context) j["context"] = *f.script.context;
  if (f.script.prediction) j["prediction"] = *f.script.prediction;
}

void from_json(const json& j, RawFrame& f) {
  f.frame_index = j.at("frame_index").get<std::int64_t>();
  f.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  f.description = j.value("description", std::string{});
  f.image_ref = j.value("image_ref", std::string{});
  f.aux = j.value("aux", std::string{});
  f.script = {};
  if (auto it = j.find("context"); it != j.end() && !it->is_null()) {
    auto ctx = it->get<ContextFrame>();
    ctx.frame_index = f.frame_index;
    ctx.timestamp_ms = f.timestamp_ms;
    f.script.context = std::move(ctx);
  }
  if (auto it = j.find("prediction"); it != j.end() && !it->is_null()) {
    auto pred = it->get<FramePrediction>();
    pred.frame_index = f.frame_index;
    f.script.prediction = std::move(pred);
  }
}

}  // namespace apex
