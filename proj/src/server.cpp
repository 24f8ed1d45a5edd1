#include "apex/server.hpp"

#include <httplib.h>

#include "apex/common.hpp"
#include "apex/planner.hpp"

namespace apex {

using nlohmann::json;

std::string sse_frame(const SessionEvent& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + std::string{e.kind()} +
         "\ndata: " + json(e).dump() + "\n\n";
}

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownSop: return 404;
    case ErrorCode::SessionClosed:
    case ErrorCode::NoPendingQuery: return 409;
    case ErrorCode::BackendFailure: return 502;
    default: return 400;
  }
}

void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", code}, {"message", message}}.dump(), "application/json");
}

json events_json(const std::vector<SessionEvent>& events) {
  json out = json::array();
  for (const auto& e : events) out.push_back(e);
  return json{{"events", std::move(out)}};
}

// Runs a handler, turning engine and parse errors into JSON error replies.
template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    reply_error(res, status_for(e.code()), to_string(e.code()), e.what());
  } catch (const json::exception& e) {
    reply_error(res, 400, "MalformedDocument", e.what());
  } catch (const std::exception& e) {
    reply_error(res, 500, "Internal", e.what());
  }
}

std::optional<std::int64_t> optional_timestamp(const json& body) {
  if (body.contains("timestamp_ms")) return body["timestamp_ms"].get<std::int64_t>();
  return std::nullopt;
}

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

Server::Server(Engine& engine, ServerOptions options)
    : engine_(engine), options_(std::move(options)), http_(std::make_unique<httplib::Server>()) {
  if (!options_.planner) {
    options_.planner = std::make_shared<FallbackReasoningBackend>(engine_.options().planner);
  }
  const size_t threads = std::max<size_t>(options_.threads, 2);
  http_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // No SO_REUSEPORT: a second server on a busy port must fail to bind.
  http_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  routes();
}

Server::~Server() { stop(); }

void Server::routes() {
  auto& s = *http_;

  s.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });

  s.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"sessions", engine_.session_ids()}}.dump(), "application/json");
  });

  s.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto config = session_config_from_json(body_of(req), engine_.atlas(), *options_.planner,
                                             engine_.options().planner.defaults);
      const auto id = engine_.create_session(std::move(config));
      res.status = 201;
      res.set_content(json{{"session_id", id}}.dump(), "application/json");
    });
  });

  auto input_route = [this](const std::string& suffix, auto make_input) {
    http_->Post("/sessions/([^/]+)/" + suffix,
                [this, make_input](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    const std::string id = req.matches[1];
                    const SessionInput input = make_input(body_of(req));
                    res.set_content(events_json(engine_.handle_event(id, input)).dump(),
                                    "application/json");
                  });
                });
  };
  input_route("frames", [](const json& b) -> SessionInput { return FrameArrival{b.get<RawFrame>()}; });
  input_route("answer", [](const json& b) -> SessionInput {
    return HumanAnswer{b.at("step").get<int>(), optional_timestamp(b)};
  });
  input_route("query", [](const json& b) -> SessionInput {
    return HumanQuestion{b.at("question").get<std::string>(), optional_timestamp(b)};
  });
  input_route("advance", [](const json& b) -> SessionInput { return AdvanceSop{optional_timestamp(b)}; });
  input_route("close", [](const json& b) -> SessionInput { return Close{optional_timestamp(b)}; });

  s.Get("/sessions/([^/]+)/log", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(engine_.export_log(req.matches[1]), "application/json"); });
  });

  s.Get("/sessions/([^/]+)/events", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      if (!engine_.exists(id)) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
      std::int64_t from = 1;
      if (req.has_param("from")) {
        from = std::stoll(req.get_param_value("from"));
      } else if (req.has_header("Last-Event-ID")) {
        from = std::stoll(req.get_header_value("Last-Event-ID")) + 1;
      }
      // follow=0 returns what exists now instead of waiting for more.
      const bool follow = req.get_param_value("follow") != "0";
      auto next = std::make_shared<std::int64_t>(std::max<std::int64_t>(from, 1));
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [this, id, next, follow](size_t, httplib::DataSink& sink) {
            if (stopping_) return false;
            bool closed = false;
            const auto timeout = follow ? options_.stream_poll : std::chrono::milliseconds{0};
            const auto batch = engine_.wait_events(id, *next, timeout, &closed);
            for (const auto& e : batch) {
              const auto frame = sse_frame(e);
              if (!sink.write(frame.data(), frame.size())) return false;
              *next = e.seq + 1;
            }
            if (closed || !follow) {
              if (engine_.events(id, *next).empty()) {
                sink.done();
                return true;
              }
            }
            if (batch.empty()) {
              static constexpr std::string_view kKeepAlive = ": keep-alive\n\n";
              if (!sink.write(kKeepAlive.data(), kKeepAlive.size())) return false;
            }
            return true;
          });
    });
  });
}

bool Server::listen(const std::string& host, int port) { return http_->listen(host, port); }

int Server::bind_to_any_port(const std::string& host) { return http_->bind_to_any_port(host); }

bool Server::listen_after_bind() { return http_->listen_after_bind(); }

void Server::wait_until_ready() const { http_->wait_until_ready(); }

void Server::stop() {
  stopping_ = true;
  if (http_) http_->stop();
}

}  // namespace apex
