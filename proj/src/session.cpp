#include "apex/session.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "apex/common.hpp"
#include "apex/remote.hpp"

namespace apex {

using nlohmann::json;

std::string_view to_string(BackendKind k) { return k == BackendKind::Remote ? "remote" : "scripted"; }

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "scripted") return BackendKind::Scripted;
  if (s == "remote") return BackendKind::Remote;
  throw Error(ErrorCode::InvalidConfig, "unknown backend kind '" + std::string{s} + "'");
}

std::string_view to_string(ClockMode m) { return m == ClockMode::Live ? "live" : "replay"; }

namespace {

ClockMode clock_mode_from_string(std::string_view s) {
  if (s == "replay") return ClockMode::Replay;
  if (s == "live") return ClockMode::Live;
  throw Error(ErrorCode::InvalidConfig, "unknown clock mode '" + std::string{s} + "'");
}

}  // namespace

void to_json(json& j, const SessionConfig& c) {
  j = json{{"protocol", c.protocol},
           {"active_sop", c.active_sop},
           {"experiment", c.experiment},
           {"tracking", c.tracking},
           {"backend", std::string{to_string(c.backend)}},
           {"backend_params", c.backend_params},
           {"history_window", c.history_window},
           {"clock", std::string{to_string(c.clock)}}};
}

void from_json(const json& j, SessionConfig& c) {
  c.protocol = j.at("protocol").get<Protocol>();
  c.active_sop = j.at("active_sop").get<std::string>();
  c.experiment = j.at("experiment").get<ExperimentPlan>();
  c.tracking = j.at("tracking").get<StepTrackingPlan>();
  c.backend = backend_kind_from_string(j.value("backend", std::string{"scripted"}));
  c.backend_params = j.value("backend_params", json::object());
  c.history_window = j.value("history_window", 3);
  c.clock = clock_mode_from_string(j.value("clock", std::string{"replay"}));
}

SessionConfig plan_session_config(const SopAtlas& atlas, ReasoningBackend& backend,
                                  const StepTrackingPlan& defaults, const std::string& active_sop,
                                  Protocol protocol) {
  const SopDoc doc = atlas_lookup(atlas, active_sop);
  if (protocol.sop_ids.empty()) protocol.sop_ids = {active_sop};
  SessionConfig c;
  c.protocol = std::move(protocol);
  c.active_sop = active_sop;
  c.experiment = make_experiment_plan(doc, backend);
  c.tracking = make_tracking_plan(doc, backend, defaults);
  return c;
}

SessionConfig session_config_from_json(const json& j, const SopAtlas& atlas,
                                       ReasoningBackend& backend, const StepTrackingPlan& defaults) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "session config must be an object");
  try {
    Protocol protocol;
    if (j.contains("protocol")) {
      protocol = j["protocol"].get<Protocol>();
    } else if (j.contains("intent")) {
      protocol = compose_protocol(j["intent"].get<std::string>(), atlas, backend);
    }
    std::string active;
    if (j.contains("active_sop")) {
      active = j["active_sop"].get<std::string>();
    } else if (j.contains("sop_id")) {
      active = j["sop_id"].get<std::string>();
    } else if (!protocol.sop_ids.empty()) {
      active = protocol.sop_ids.front();
    } else {
      throw Error(ErrorCode::InvalidConfig, "config names no SOP (active_sop, sop_id or intent)");
    }

    SessionConfig c = plan_session_config(atlas, backend, defaults, active, protocol);
    if (j.contains("experiment")) c.experiment = j["experiment"].get<ExperimentPlan>();
    if (j.contains("tracking")) c.tracking = j["tracking"].get<StepTrackingPlan>();
    if (c.tracking.sop_id.empty()) c.tracking.sop_id = active;
    c.backend = backend_kind_from_string(j.value("backend", std::string{"scripted"}));
    c.backend_params = j.value("backend_params", json::object());
    c.history_window = j.value("history_window", 3);
    c.clock = clock_mode_from_string(j.value("clock", std::string{"replay"}));
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string{"bad session config: "} + e.what());
  }
}

// ---------------------------------------------------------------------------
// Events

namespace {

template <typename T>
struct KindName;
#define APEX_KIND(T) \
  template <>        \
  struct KindName<T> { static constexpr std::string_view value = #T; };
APEX_KIND(SessionCreated)
APEX_KIND(SopActivated)
APEX_KIND(FrameIngested)
APEX_KIND(FrameDropped)
APEX_KIND(StepConfirmed)
APEX_KIND(ClarificationRequested)
APEX_KIND(ClarificationAnswered)
APEX_KIND(AlertRaised)
APEX_KIND(GuidanceIssued)
APEX_KIND(QueryAsked)
APEX_KIND(QueryAnswered)
APEX_KIND(LogAppended)
APEX_KIND(SessionClosed)
#undef APEX_KIND

json body_json(const SessionCreated& b) { return {{"session_id", b.session_id}, {"config", b.config}}; }
json body_json(const SopActivated& b) {
  return {{"sop_id", b.sop_id}, {"experiment", b.experiment}, {"tracking", b.tracking}};
}
json body_json(const FrameIngested& b) {
  json j = {{"context", b.context}, {"prediction", nullptr}};
  if (b.prediction) j["prediction"] = *b.prediction;
  if (!b.prediction_error.empty()) j["prediction_error"] = b.prediction_error;
  return j;
}
json body_json(const FrameDropped& b) { return {{"frame_index", b.frame_index}, {"reason", b.reason}}; }
json body_json(const StepConfirmed& b) {
  json j = {{"confirmed", b.confirmed}, {"auto_accepted", nullptr}};
  if (b.auto_accepted) j["auto_accepted"] = std::string{to_string(*b.auto_accepted)};
  return j;
}
json body_json(const ClarificationRequested& b) { return {{"query", b.query}}; }
json body_json(const ClarificationAnswered& b) { return {{"step", b.step}}; }
json body_json(const AlertRaised& b) { return {{"alert", b.alert}}; }
json body_json(const GuidanceIssued& b) { return {{"guidance", b.guidance}}; }
json body_json(const QueryAsked& b) { return {{"question", b.question}}; }
json body_json(const QueryAnswered& b) {
  json j = {{"question", b.question}, {"answer", b.answer}};
  if (!b.error.empty()) j["error"] = b.error;
  return j;
}
json body_json(const LogAppended& b) { return {{"record", b.record}}; }
json body_json(const SessionClosed&) { return json::object(); }

EventBody body_from_json(std::string_view kind, const json& j) {
  if (kind == "SessionCreated") {
    return SessionCreated{j.at("session_id").get<std::string>(), j.at("config").get<SessionConfig>()};
  }
  if (kind == "SopActivated") {
    return SopActivated{j.at("sop_id").get<std::string>(), j.at("experiment").get<ExperimentPlan>(),
                        j.at("tracking").get<StepTrackingPlan>()};
  }
  if (kind == "FrameIngested") {
    FrameIngested b;
    b.context = j.at("context").get<ContextFrame>();
    if (j.contains("prediction") && !j["prediction"].is_null()) {
      b.prediction = j["prediction"].get<FramePrediction>();
    }
    b.prediction_error = j.value("prediction_error", std::string{});
    return b;
  }
  if (kind == "FrameDropped") {
    return FrameDropped{j.at("frame_index").get<std::int64_t>(), j.at("reason").get<std::string>()};
  }
  if (kind == "StepConfirmed") {
    StepConfirmed b;
    b.confirmed = j.at("confirmed").get<ConfirmedStep>();
    if (j.contains("auto_accepted") && !j["auto_accepted"].is_null()) {
      b.auto_accepted = guard_reason_from_string(j["auto_accepted"].get<std::string>());
    }
    return b;
  }
  if (kind == "ClarificationRequested") return ClarificationRequested{j.at("query").get<HitlQuery>()};
  if (kind == "ClarificationAnswered") return ClarificationAnswered{j.at("step").get<int>()};
  if (kind == "AlertRaised") return AlertRaised{j.at("alert").get<Alert>()};
  if (kind == "GuidanceIssued") return GuidanceIssued{j.at("guidance").get<Guidance>()};
  if (kind == "QueryAsked") return QueryAsked{j.at("question").get<std::string>()};
  if (kind == "QueryAnswered") {
    return QueryAnswered{j.at("question").get<std::string>(), j.at("answer").get<GroundedAnswer>(),
                         j.value("error", std::string{})};
  }
  if (kind == "LogAppended") return LogAppended{j.at("record").get<LogRecord>()};
  if (kind == "SessionClosed") return SessionClosed{};
  throw Error(ErrorCode::MalformedDocument, "unknown event kind '" + std::string{kind} + "'");
}

}  // namespace

std::string_view SessionEvent::kind() const {
  return std::visit([](const auto& b) { return KindName<std::decay_t<decltype(b)>>::value; }, body);
}

void to_json(json& j, const SessionEvent& e) {
  j = json{{"seq", e.seq},
           {"timestamp_ms", e.timestamp_ms},
           {"kind", std::string{e.kind()}},
           {"body", std::visit([](const auto& b) { return body_json(b); }, e.body)}};
}

void from_json(const json& j, SessionEvent& e) {
  e.seq = j.at("seq").get<std::int64_t>();
  e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  e.body = body_from_json(j.at("kind").get<std::string>(), j.at("body"));
}

void to_json(json& j, const DerivedState& s) {
  json records = json::array();
  for (const auto& r : s.records) records.push_back(r);
  j = json{{"session_id", s.session_id},
           {"active_sop", s.active_sop},
           {"tracker", s.tracker},
           {"records", records},
           {"alerts", s.alerts},
           {"clarifications", s.clarifications},
           {"closed", s.closed},
           {"last_seq", s.last_seq},
           {"last_arrival_index", s.last_arrival_index}};
}

// ---------------------------------------------------------------------------
// Engine

struct Engine::Session {
  std::string id;
  SessionConfig config;
  SopDoc doc;
  ExperimentPlan experiment;
  Backends backends;
  TrackerState tracker;
  AnalysisHistory history;
  /// Records before this index belong to earlier SOPs of the protocol.
  size_t sop_record_begin = 0;
  std::vector<SessionEvent> events;
  int alerts = 0;
  int clarifications = 0;
  bool closed = false;
  std::int64_t last_arrival_index = -1;
  std::optional<ContextFrame> last_frame;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::ofstream log;

  mutable std::mutex mutex;
  mutable std::condition_variable cv;

  [[nodiscard]] std::span<const LogRecord> window() const {
    auto all = history.records().subspan(sop_record_begin);
    const auto n = static_cast<size_t>(std::max(config.history_window, 0));
    return n >= all.size() ? all : all.subspan(all.size() - n);
  }

  void activate(const SopDoc& d, const ExperimentPlan& plan, const StepTrackingPlan& tracking) {
    doc = d;
    experiment = plan;
    tracker = TrackerState(tracking, plan.steps);
    sop_record_begin = history.size();
    last_frame.reset();
  }

  // Bookkeeping shared by live commits and restores; tracker state is not
  // touched here.
  void note(const SessionEvent& e) {
    if (const auto* b = std::get_if<FrameIngested>(&e.body)) {
      last_arrival_index = std::max(last_arrival_index, b->context.frame_index);
      last_frame = b->context;
    } else if (const auto* d = std::get_if<FrameDropped>(&e.body)) {
      last_arrival_index = std::max(last_arrival_index, d->frame_index);
    } else if (e.is<ClarificationRequested>()) {
      ++clarifications;
    } else if (e.is<AlertRaised>()) {
      ++alerts;
    } else if (const auto* l = std::get_if<LogAppended>(&e.body)) {
      history.append(l->record);
    } else if (e.is<SessionClosed>()) {
      closed = true;
    }
  }

  // Tracker effects of an event, used only when rebuilding from a stream.
  void fold_tracker(const SessionEvent& e) {
    if (const auto* b = std::get_if<FrameIngested>(&e.body)) {
      ++tracker.frames_ingested;
      tracker.last_frame_index = b->context.frame_index;
      if (b->prediction) tracker.memory.push(MemoryEntry{b->context, *b->prediction});
    } else if (const auto* c = std::get_if<StepConfirmed>(&e.body)) {
      if (c->confirmed.top()) tracker.previous_step = c->confirmed.top()->step;
    } else if (const auto* q = std::get_if<ClarificationRequested>(&e.body)) {
      tracker.pending_query = q->query;
    } else if (e.is<ClarificationAnswered>()) {
      tracker.pending_query.reset();
      tracker.memory.drop_predictions();
    }
  }
};

Engine::Engine(SopAtlas atlas) : Engine(std::move(atlas), Options{}) {}

Engine::Engine(SopAtlas atlas, Options options)
    : atlas_(std::move(atlas)), options_(std::move(options)) {
  if (!options_.log_dir.empty()) std::filesystem::create_directories(options_.log_dir);
}

Engine::~Engine() = default;

Backends Engine::default_backends(const SessionConfig& config) const {
  if (options_.factory) return options_.factory(config);
  if (config.backend == BackendKind::Remote) {
    RemoteConfig rc = RemoteConfig::from_env();
    const auto& p = config.backend_params;
    if (p.contains("url")) rc.url = p["url"].get<std::string>();
    if (p.contains("timeout_ms")) rc.timeout_ms = p["timeout_ms"].get<int>();
    if (p.contains("attempts")) rc.attempts = p["attempts"].get<int>();
    if (p.contains("perception_examples")) rc.perception_examples = p["perception_examples"];
    if (p.contains("params")) rc.params = p["params"];
    auto remote = std::make_shared<RemoteBackend>(std::move(rc));
    return {remote, remote, remote};
  }
  return {std::make_shared<ScriptedPerceptionBackend>(), std::make_shared<ScriptedPredictionBackend>(),
          std::make_shared<FallbackReasoningBackend>(options_.planner)};
}

void Engine::validate(const SessionConfig& c) const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (c.protocol.sop_ids.empty()) bad("protocol lists no SOPs");
  for (const auto& id : c.protocol.sop_ids) {
    if (!atlas_.contains(id)) bad("protocol names unknown SOP '" + id + "'");
  }
  if (std::find(c.protocol.sop_ids.begin(), c.protocol.sop_ids.end(), c.active_sop) ==
      c.protocol.sop_ids.end()) {
    bad("active SOP '" + c.active_sop + "' is not in the protocol");
  }
  const SopDoc doc = atlas_.lookup(c.active_sop);
  if (c.experiment.sop_id != c.active_sop) bad("experiment plan is for '" + c.experiment.sop_id + "'");
  if (c.experiment.steps != doc.steps) bad("experiment plan steps differ from the SOP");
  std::set<std::string> inventory;
  for (const auto& item : c.experiment.inventory) inventory.insert(text::casefold(item));
  for (const auto& item : doc.equipment) {
    if (!inventory.contains(text::casefold(item))) bad("inventory is missing '" + item + "'");
  }
  if (c.tracking.sop_id != c.active_sop) bad("tracking plan is for '" + c.tracking.sop_id + "'");
  if (!c.tracking.valid()) bad("tracking plan violates its invariants");
  if (c.history_window < 0) bad("history_window must be >= 0");
}

std::string Engine::next_id() {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s-%06llu", static_cast<unsigned long long>(++counter_));
  return buf;
}

std::string Engine::create_session(SessionConfig config) {
  if (config.tracking.sop_id.empty()) config.tracking.sop_id = config.active_sop;
  validate(config);
  auto backends = default_backends(config);
  return create_session(std::move(config), std::move(backends));
}

std::string Engine::create_session(SessionConfig config, Backends backends) {
  if (config.tracking.sop_id.empty()) config.tracking.sop_id = config.active_sop;
  validate(config);
  if (!backends.perception || !backends.prediction || !backends.reasoning) {
    throw Error(ErrorCode::InvalidConfig, "session needs all three backends");
  }

  auto s = std::make_shared<Session>();
  s->config = config;
  s->backends = std::move(backends);
  s->activate(atlas_.lookup(config.active_sop), config.experiment, config.tracking);

  std::unique_lock lock(mutex_);
  s->id = next_id();
  while (sessions_.contains(s->id)) s->id = next_id();
  if (!options_.log_dir.empty()) {
    s->log.open(options_.log_dir / (s->id + ".jsonl"), std::ios::out | std::ios::trunc);
  }
  SessionEvent created{1, 0, SessionCreated{s->id, config}};
  s->events.push_back(created);
  if (s->log.is_open()) {
    s->log << json(created).dump() << '\n';
    s->log.flush();
  }
  sessions_.emplace(s->id, s);
  return s->id;
}

std::shared_ptr<Engine::Session> Engine::find(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
  return it->second;
}

bool Engine::exists(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return sessions_.contains(id);
}

std::vector<std::string> Engine::session_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : sessions_) out.push_back(id);
  return out;
}

namespace {

// Collects the events of one input before they are committed.
class Batch {
 public:
  Batch(std::int64_t next_seq, std::int64_t timestamp) : next_(next_seq), ts_(timestamp) {}
  template <typename T>
  void emit(T body) {
    events_.push_back(SessionEvent{next_++, ts_, std::move(body)});
  }
  std::vector<SessionEvent>& events() { return events_; }

 private:
  std::int64_t next_;
  std::int64_t ts_;
  std::vector<SessionEvent> events_;
};

std::int64_t stamp(const std::optional<std::int64_t>& given, std::int64_t fallback) {
  return given.value_or(fallback);
}

}  // namespace

std::vector<SessionEvent> Engine::handle_event(const std::string& id, const SessionInput& input) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);

  if (s->closed) {
    if (std::holds_alternative<Close>(input)) return {};
    throw Error(ErrorCode::SessionClosed, "session '" + id + "' is closed");
  }

  const auto next_seq = static_cast<std::int64_t>(s->events.size()) + 1;
  const std::int64_t last_ts = s->events.back().timestamp_ms;
  auto live_now = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 s->started)
        .count();
  };
  auto timestamp_for = [&](std::optional<std::int64_t> given) -> std::int64_t {
    if (s->config.clock == ClockMode::Live) return live_now();
    return stamp(given, last_ts);
  };

  // All work happens on copies; the session only changes at commit.
  TrackerState tracker = s->tracker;
  std::optional<SopActivated> activation;
  std::vector<SessionEvent> out;

  if (const auto* in = std::get_if<FrameArrival>(&input)) {
    const RawFrame& raw = in->frame;
    Batch batch(next_seq, s->config.clock == ClockMode::Live ? live_now() : raw.timestamp_ms);
    if (raw.frame_index <= s->last_arrival_index) {
      batch.emit(FrameDropped{raw.frame_index, "frame index " + std::to_string(raw.frame_index) +
                                                   " is not after " +
                                                   std::to_string(s->last_arrival_index)});
    } else {
      std::optional<ContextFrame> ctx;
      try {
        ctx = contextualize(raw, s->experiment, *s->backends.perception);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::FrameDropped) throw;
        batch.emit(FrameDropped{raw.frame_index, e.what()});
      }
      if (ctx) {
        auto outcome = ingest_frame(tracker, *ctx, *s->backends.prediction, s->window(), &raw);
        batch.emit(FrameIngested{*ctx, outcome.prediction, outcome.failure});
        if (auto* acc = std::get_if<Accepted>(&outcome.result)) {
          const ConfirmedStep& c = acc->confirmed;
          batch.emit(StepConfirmed{c, acc->auto_accepted});
          const bool logged = c.top()->aggregated_confidence >= tracker.plan.confidence_threshold;
          if (logged) {
            for (auto& alert : detect_errors(*ctx, s->doc.step(c.top()->step))) {
              batch.emit(AlertRaised{std::move(alert)});
            }
          }
          batch.emit(GuidanceIssued{make_guidance(c, *ctx, s->doc)});
          if (logged) {
            LogRecord r = make_record(c, *ctx, s->doc);
            r.seq = s->history.next_seq();
            batch.emit(LogAppended{std::move(r)});
          }
        } else if (auto* q = std::get_if<HitlQuery>(&outcome.result)) {
          batch.emit(ClarificationRequested{*q});
        }
      }
    }
    out = std::move(batch.events());
  } else if (const auto* in = std::get_if<HumanAnswer>(&input)) {
    Batch batch(next_seq, timestamp_for(in->timestamp_ms));
    const ConfirmedStep c = apply_clarification(tracker, in->step);
    batch.emit(ClarificationAnswered{in->step});
    batch.emit(StepConfirmed{c, std::nullopt});
    ContextFrame frame = s->last_frame.value_or(ContextFrame{});
    frame.frame_index = c.frame_index;
    LogRecord r = make_record(c, frame, s->doc);
    r.seq = s->history.next_seq();
    if (s->config.clock == ClockMode::Replay && in->timestamp_ms) r.timestamp_ms = *in->timestamp_ms;
    batch.emit(LogAppended{std::move(r)});
    out = std::move(batch.events());
  } else if (const auto* in = std::get_if<HumanQuestion>(&input)) {
    Batch batch(next_seq, timestamp_for(in->timestamp_ms));
    batch.emit(QueryAsked{in->question});
    QueryAnswered answered{in->question, {}, {}};
    try {
      answered.answer = answer_query(in->question, s->history, *s->backends.reasoning);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BackendFailure) throw;
      answered.error = e.what();
    }
    batch.emit(std::move(answered));
    out = std::move(batch.events());
  } else if (const auto* in = std::get_if<AdvanceSop>(&input)) {
    const auto& ids = s->config.protocol.sop_ids;
    auto it = std::find(ids.begin(), ids.end(), s->doc.id);
    if (it == ids.end() || std::next(it) == ids.end()) {
      throw Error(ErrorCode::InvalidConfig, "no SOP after '" + s->doc.id + "' in the protocol");
    }
    const SopDoc next = atlas_.lookup(*std::next(it));
    auto& reasoning = *s->backends.reasoning;
    activation = SopActivated{next.id, make_experiment_plan(next, reasoning),
                              make_tracking_plan(next, reasoning, options_.planner.defaults)};
    Batch batch(next_seq, timestamp_for(in->timestamp_ms));
    batch.emit(*activation);
    out = std::move(batch.events());
  } else if (const auto* in = std::get_if<Close>(&input)) {
    Batch batch(next_seq, timestamp_for(in->timestamp_ms));
    batch.emit(SessionClosed{});
    out = std::move(batch.events());
  }

  // Commit.
  if (s->log.is_open()) {
    for (const auto& e : out) s->log << json(e).dump() << '\n';
    s->log.flush();
  }
  if (activation) {
    s->activate(atlas_.lookup(activation->sop_id), activation->experiment, activation->tracking);
  } else {
    s->tracker = std::move(tracker);
  }
  for (const auto& e : out) {
    s->note(e);
    s->events.push_back(e);
  }
  s->cv.notify_all();
  return out;
}

std::string Engine::restore(const std::vector<SessionEvent>& events) {
  if (events.empty() || !events.front().is<SessionCreated>()) {
    throw Error(ErrorCode::MalformedDocument, "event stream must start with SessionCreated");
  }
  const auto& config = events.front().as<SessionCreated>().config;
  return restore(events, default_backends(config));
}

std::string Engine::restore(const std::vector<SessionEvent>& events, Backends backends) {
  if (events.empty() || !events.front().is<SessionCreated>()) {
    throw Error(ErrorCode::MalformedDocument, "event stream must start with SessionCreated");
  }
  const auto& header = events.front().as<SessionCreated>();
  validate(header.config);

  auto s = std::make_shared<Session>();
  s->id = header.session_id;
  s->config = header.config;
  s->backends = std::move(backends);
  s->activate(atlas_.lookup(header.config.active_sop), header.config.experiment,
              header.config.tracking);
  for (size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.seq != static_cast<std::int64_t>(i) + 1) {
      throw Error(ErrorCode::MalformedDocument, "event " + std::to_string(i + 1) + " has seq " +
                                                    std::to_string(e.seq));
    }
    if (const auto* a = std::get_if<SopActivated>(&e.body)) {
      s->activate(atlas_.lookup(a->sop_id), a->experiment, a->tracking);
    }
    s->fold_tracker(e);
    s->note(e);
    s->events.push_back(e);
  }

  std::unique_lock lock(mutex_);
  if (sessions_.contains(s->id)) {
    throw Error(ErrorCode::InvalidConfig, "session '" + s->id + "' already exists");
  }
  if (!options_.log_dir.empty()) {
    s->log.open(options_.log_dir / (s->id + ".jsonl"), std::ios::out | std::ios::trunc);
    for (const auto& e : s->events) s->log << json(e).dump() << '\n';
    s->log.flush();
  }
  sessions_.emplace(s->id, s);
  return s->id;
}

json Engine::export_log_json(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  json events = json::array();
  for (const auto& e : s->events) events.push_back(e);
  json records = json::array();
  for (const auto& r : s->history.records()) records.push_back(r);
  return json{{"session_id", s->id},
              {"partial", !s->closed},
              {"config", s->config},
              {"events", std::move(events)},
              {"records", std::move(records)}};
}

std::string Engine::export_log(const std::string& id) const { return export_log_json(id).dump(2) + "\n"; }

std::vector<SessionEvent> Engine::events(const std::string& id, std::int64_t from_seq) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  const auto begin = static_cast<size_t>(std::max<std::int64_t>(from_seq, 1) - 1);
  if (begin >= s->events.size()) return {};
  return {s->events.begin() + static_cast<std::ptrdiff_t>(begin), s->events.end()};
}

std::vector<SessionEvent> Engine::wait_events(const std::string& id, std::int64_t from_seq,
                                              std::chrono::milliseconds timeout, bool* closed) const {
  auto s = find(id);
  std::unique_lock lock(s->mutex);
  const auto begin = static_cast<size_t>(std::max<std::int64_t>(from_seq, 1) - 1);
  s->cv.wait_for(lock, timeout, [&] { return s->events.size() > begin || s->closed; });
  if (closed) *closed = s->closed;
  if (begin >= s->events.size()) return {};
  return {s->events.begin() + static_cast<std::ptrdiff_t>(begin), s->events.end()};
}

DerivedState Engine::derived_state(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  DerivedState d;
  d.session_id = s->id;
  d.active_sop = s->doc.id;
  d.tracker = s->tracker;
  d.records.assign(s->history.records().begin(), s->history.records().end());
  d.alerts = s->alerts;
  d.clarifications = s->clarifications;
  d.closed = s->closed;
  d.last_seq = static_cast<std::int64_t>(s->events.size());
  d.last_arrival_index = s->last_arrival_index;
  return d;
}

}  // namespace apex
