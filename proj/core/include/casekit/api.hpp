#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "casekit/config.hpp"
#include "casekit/error.hpp"
#include "casekit/orchestrator.hpp"
#include "casekit/store.hpp"

namespace casekit {

enum class ApiErrorCode { bad_request, unauthorized, not_found, conflict, unavailable, internal };

std::string_view to_string(ApiErrorCode code);
int http_status(ApiErrorCode code);

struct ApiError {
  ApiErrorCode code = ApiErrorCode::internal;
  std::string message;
  OrderedJson detail;  // null when absent
};

// {"error": {"code": ..., "message": ..., "detail": ...}}
OrderedJson to_json(const ApiError& error);
ApiError api_error_from(const Error& error);

struct ApiResponse {
  int status = 200;
  OrderedJson body;
};

// Transport-independent request handlers for the /v1 surface.
class Api {
 public:
  // An empty admin token disables the admin endpoints (always 401).
  Api(Orchestrator& orchestrator, Store& store, const Gateway& gateway, std::string admin_token);

  ApiResponse create_session(const std::string& body);
  ApiResponse post_turn(const std::string& session_id, const std::string& body);
  ApiResponse get_session(const std::string& session_id, const std::string& authorization);
  ApiResponse health() const;

  std::size_t expire_idle_sessions(TimePoint now) { return orchestrator_.expire_idle_sessions(now); }

 private:
  Orchestrator& orchestrator_;
  Store& store_;
  const Gateway& gateway_;
  std::string admin_token_;
};

// Splits "host:port". Throws Error(invalid_config).
std::pair<std::string, int> parse_listen_addr(const std::string& addr);

// HTTP server around Api plus a background idle-session sweeper.
class ApiServer {
 public:
  ApiServer(Api& api, ServerSettings settings, NowFn now = system_now);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds; port 0 picks a free port. Returns the bound port. Throws
  // Error(io_error) when binding fails.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace casekit
