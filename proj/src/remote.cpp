#include "apex/remote.hpp"

#include <cstdlib>

#include <httplib.h>

#include "apex/common.hpp"

namespace apex {

using nlohmann::json;

RemoteConfig RemoteConfig::from_env() {
  RemoteConfig c;
  const char* url = std::getenv("APEX_BACKEND_URL");
  if (url == nullptr || *url == '\0') {
    throw Error(ErrorCode::InvalidConfig, "APEX_BACKEND_URL is not set");
  }
  c.url = url;
  if (const char* key = std::getenv("APEX_BACKEND_KEY")) c.key = key;
  return c;
}

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.url.find("://");
  const auto host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_begin = config_.url.find('/', host_begin);
  if (path_begin == std::string::npos) {
    origin_ = config_.url;
    path_ = "/";
  } else {
    origin_ = config_.url.substr(0, path_begin);
    path_ = config_.url.substr(path_begin);
  }
  if (origin_.empty()) throw Error(ErrorCode::InvalidConfig, "empty backend URL");
}

json RemoteBackend::call(const std::string& task, const json& payload) {
  const json body = {{"task", task}, {"payload", payload}, {"params", config_.params}};
  const std::string text = body.dump();

  // Calls from one session are already serialized; this guards sharing one
  // adapter across sessions.
  std::lock_guard lock(mutex_);
  httplib::Client client(origin_);
  const auto secs = config_.timeout_ms / 1000;
  const auto usecs = (config_.timeout_ms % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.key.empty()) headers.emplace("Authorization", "Bearer " + config_.key);

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < std::max(config_.attempts, 1); ++attempt) {
    auto res = client.Post(path_, headers, text, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      last_error = std::string{"unparseable reply: "} + e.what();
    }
  }
  throw Error(ErrorCode::BackendFailure, task + ": " + last_error);
}

namespace {

template <typename T>
T decode(const json& reply, const std::string& task) {
  try {
    return reply.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendFailure, task + ": malformed reply: " + e.what());
  }
}

}  // namespace

std::vector<std::string> RemoteBackend::select_sops(const std::string& intent,
                                                    std::span<const SopDoc> atlas) {
  json sops = json::array();
  for (const auto& d : atlas) sops.push_back({{"id", d.id}, {"title", d.title}});
  const auto reply = call("compose_protocol", {{"intent", intent}, {"atlas", sops}});
  return decode<std::vector<std::string>>(reply.value("sop_ids", json::array()), "compose_protocol");
}

std::vector<std::string> RemoteBackend::propose_inventory(const SopDoc& doc) {
  const auto reply = call("experiment_plan", {{"sop", doc}});
  return decode<std::vector<std::string>>(reply.value("inventory", json::array()), "experiment_plan");
}

std::optional<TrackingProposal> RemoteBackend::propose_tracking_plan(const SopDoc& doc) {
  const auto reply = call("tracking_plan", {{"sop", doc}});
  if (reply.is_null() || (reply.contains("plan") && reply["plan"].is_null())) return std::nullopt;
  try {
    TrackingProposal p;
    p.memory_update_interval = reply.at("memory_update_interval").get<long long>();
    p.prediction_interval = reply.at("prediction_interval").get<long long>();
    p.confidence_threshold = reply.at("confidence_threshold").get<double>();
    p.rationale = reply.value("rationale", std::string{});
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendFailure, std::string{"tracking_plan: malformed reply: "} + e.what());
  }
}

GroundedAnswer RemoteBackend::answer(const std::string& question,
                                     std::span<const LogRecord> history) {
  json records = json::array();
  for (const auto& r : history) records.push_back(r);
  return decode<GroundedAnswer>(call("answer", {{"question", question}, {"history", records}}),
                                "answer");
}

ContextFrame RemoteBackend::describe(const RawFrame& frame, const ExperimentPlan& plan) {
  const json payload = {{"frame", frame},
                        {"inventory", plan.inventory},
                        {"examples", config_.perception_examples}};
  auto out = decode<ContextFrame>(call("contextualize", payload), "contextualize");
  out.frame_index = frame.frame_index;
  out.timestamp_ms = frame.timestamp_ms;
  return out;
}

FramePrediction RemoteBackend::predict(const PredictionRequest& request) {
  json history = json::array();
  for (const auto& r : request.history) history.push_back(r);
  json steps = json::array();
  for (const auto& s : request.steps) steps.push_back({{"index", s.index}, {"instruction", s.instruction}});
  const json payload = {{"frame", request.frame}, {"history", history}, {"steps", steps}};
  auto out = decode<FramePrediction>(call("predict", payload), "predict");
  out.frame_index = request.frame.frame_index;
  return out;
}

}  // namespace apex
