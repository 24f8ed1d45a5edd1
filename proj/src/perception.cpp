#include "apex/perception.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

namespace {

std::set<std::string> significant_tokens(std::string_view s) {
  std::set<std::string> out;
  for (auto& t : text::word_tokens(s)) {
    if (t.size() >= 3) out.insert(std::move(t));
  }
  return out;
}

}  // namespace

std::string normalize_equipment_name(std::string_view raw, const ExperimentPlan& plan) {
  const auto folded = text::casefold(text::trim(raw));
  for (const auto& entry : plan.inventory) {
    if (text::casefold(text::trim(entry)) == folded) return entry;
  }

  const auto wanted = significant_tokens(raw);
  const std::string* best = nullptr;
  size_t best_score = 0;
  for (const auto& entry : plan.inventory) {
    size_t score = 0;
    for (const auto& t : significant_tokens(entry)) score += wanted.contains(t) ? 1 : 0;
    if (score == 0) continue;
    const bool better =
        best == nullptr || score > best_score ||
        (score == best_score &&
         (entry.size() > best->size() || (entry.size() == best->size() && entry < *best)));
    if (better) {
      best = &entry;
      best_score = score;
    }
  }
  return best ? *best : std::string{kUnknownEquipment};
}

ContextFrame contextualize(const RawFrame& frame, const ExperimentPlan& plan,
                           PerceptionBackend& backend) {
  ContextFrame out;
  std::string last_error;
  bool ok = false;
  for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
    try {
      out = backend.describe(frame, plan);
      ok = true;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  if (!ok) {
    throw Error(ErrorCode::FrameDropped, last_error, "frame " + std::to_string(frame.frame_index));
  }
  out.frame_index = frame.frame_index;
  out.timestamp_ms = frame.timestamp_ms;
  for (auto& eq : out.equipment) eq.name = normalize_equipment_name(eq.name, plan);
  if (text::trim(out.environment).empty()) out.environment = kNoneObserved;
  if (text::trim(out.action).empty()) out.action = kNoneObserved;
  return out;
}

ContextFrame ScriptedPerceptionBackend::describe(const RawFrame& frame, const ExperimentPlan&) {
  if (frame.script.context) return *frame.script.context;
  auto it = table_.find(frame.frame_index);
  if (it == table_.end()) {
    throw Error(ErrorCode::BackendFailure,
                "no scripted description for frame " + std::to_string(frame.frame_index));
  }
  return it->second;
}

namespace {

[[noreturn]] void malformed(size_t line, const std::string& what) {
  throw Error(ErrorCode::MalformedRecording, what, "line " + std::to_string(line));
}

}  // namespace

Recording parse_recording(std::istream& in, const SopAtlas* atlas) {
  Recording rec;
  std::string line;
  size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      malformed(line_no, e.what());
    }
    if (!have_header) {
      try {
        rec.sop_id = j.at("sop_id").get<std::string>();
        if (auto it = j.find("tracking"); it != j.end() && !it->is_null()) {
          rec.tracking = it->get<StepTrackingPlan>();
          if (rec.tracking->sop_id.empty()) rec.tracking->sop_id = rec.sop_id;
        }
        if (auto it = j.find("experiment"); it != j.end() && !it->is_null()) {
          rec.experiment = it->get<ExperimentPlan>();
        }
      } catch (const json::exception& e) {
        malformed(line_no, std::string{"bad header: "} + e.what());
      } catch (const Error& e) {
        malformed(line_no, std::string{"bad header: "} + e.what());
      }
      if (atlas && !atlas->contains(rec.sop_id)) malformed(line_no, "unknown sop_id " + rec.sop_id);
      have_header = true;
      continue;
    }
    RawFrame f;
    try {
      f = j.get<RawFrame>();
    } catch (const json::exception& e) {
      malformed(line_no, e.what());
    }
    if (!rec.frames.empty()) {
      const auto& prev = rec.frames.back();
      if (f.frame_index <= prev.frame_index) {
        malformed(line_no, "frame_index " + std::to_string(f.frame_index) +
                               " does not increase (previous " +
                               std::to_string(prev.frame_index) + ")");
      }
      if (f.timestamp_ms < prev.timestamp_ms) malformed(line_no, "timestamp decreases");
    } else if (f.frame_index < 0) {
      malformed(line_no, "negative frame_index");
    }
    rec.frames.push_back(std::move(f));
  }
  if (!have_header) malformed(line_no == 0 ? 1 : line_no, "missing header record");
  return rec;
}

Recording load_recording(const std::filesystem::path& path, const SopAtlas* atlas) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedRecording, "cannot open " + path.string());
  return parse_recording(in, atlas);
}

std::string serialize_recording(const Recording& rec) {
  json header = {{"sop_id", rec.sop_id}};
  if (rec.tracking) header["tracking"] = *rec.tracking;
  if (rec.experiment) header["experiment"] = *rec.experiment;
  std::string out = header.dump() + "\n";
  for (const auto& f : rec.frames) out += json(f).dump() + "\n";
  return out;
}

}  // namespace apex
