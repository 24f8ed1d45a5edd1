#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <string>

#include "apex/backend.hpp"
#include "apex/session.hpp"

namespace httplib {
class Server;
}

namespace apex {

struct ServerOptions {
  /// Backend used to plan sessions whose config leaves plans out.
  std::shared_ptr<ReasoningBackend> planner;
  /// How long one event-stream poll waits before re-checking the client.
  std::chrono::milliseconds stream_poll{250};
  /// Thread pool size for request handling; streams hold a thread each.
  size_t threads = 16;
};

/// HTTP front end of an Engine.
///
///   POST /sessions                      config -> {"session_id"}
///   POST /sessions/{id}/frames          RawFrame -> {"events"}
///   POST /sessions/{id}/answer          {"step"} -> {"events"}
///   POST /sessions/{id}/query           {"question"} -> {"events"}
///   POST /sessions/{id}/advance         -> {"events"}
///   POST /sessions/{id}/close           -> {"events"}
///   GET  /sessions/{id}/log             exported session document
///   GET  /sessions/{id}/events?from=N   text/event-stream from seq N
///
/// Errors reply {"error": code, "message"} with 404 (unknown session),
/// 409 (closed session, no pending query) or 400 (bad input).
class Server {
 public:
  Server(Engine& engine, ServerOptions options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Blocks until stop().
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it; follow with listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  void routes();

  Engine& engine_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> http_;
  std::atomic<bool> stopping_{false};
};

/// One server-sent-events frame for `e`.
std::string sse_frame(const SessionEvent& e);

}  // namespace apex
