#include "casekit/api.hpp"

#include <algorithm>
#include <condition_variable>
#include <mutex>
#include <stop_token>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace casekit {
namespace {

ApiResponse error_response(ApiErrorCode code, std::string message, OrderedJson detail = nullptr) {
  return {http_status(code), to_json(ApiError{code, std::move(message), std::move(detail)})};
}

ApiResponse error_response(const Error& e) {
  const ApiError err = api_error_from(e);
  return {http_status(err.code), to_json(err)};
}

std::optional<Json> parse_body(const std::string& body) {
  if (trim(body).empty()) return Json::object();
  Json doc = Json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  return doc;
}

// Constant-time comparison so the token cannot be probed byte by byte.
bool token_matches(std::string_view given, std::string_view expected) {
  if (given.size() != expected.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < given.size(); ++i) {
    diff |= static_cast<unsigned char>(given[i] ^ expected[i]);
  }
  return diff == 0;
}

}  // namespace

std::string_view to_string(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::bad_request: return "bad_request";
    case ApiErrorCode::unauthorized: return "unauthorized";
    case ApiErrorCode::not_found: return "not_found";
    case ApiErrorCode::conflict: return "conflict";
    case ApiErrorCode::unavailable: return "unavailable";
    case ApiErrorCode::internal: return "internal";
  }
  return "internal";
}

int http_status(ApiErrorCode code) {
  switch (code) {
    case ApiErrorCode::bad_request: return 400;
    case ApiErrorCode::unauthorized: return 401;
    case ApiErrorCode::not_found: return 404;
    case ApiErrorCode::conflict: return 409;
    case ApiErrorCode::unavailable: return 503;
    case ApiErrorCode::internal: return 500;
  }
  return 500;
}

OrderedJson to_json(const ApiError& error) {
  OrderedJson inner;
  inner["code"] = to_string(error.code);
  inner["message"] = error.message;
  inner["detail"] = error.detail;
  return {{"error", std::move(inner)}};
}

ApiError api_error_from(const Error& error) {
  ApiError out;
  out.message = error.what();
  out.detail = {{"reason", to_string(error.code())}};
  switch (error.code()) {
    case ErrorCode::invalid_argument:
    case ErrorCode::empty_input:
      out.code = ApiErrorCode::bad_request;
      break;
    case ErrorCode::session_not_found:
      out.code = ApiErrorCode::not_found;
      break;
    case ErrorCode::session_concluded:
    case ErrorCode::session_busy:
    case ErrorCode::session_active:
    case ErrorCode::index_conflict:
      out.code = ApiErrorCode::conflict;
      break;
    case ErrorCode::store_unavailable:
    case ErrorCode::unknown_backend:
    case ErrorCode::backend_timeout:
    case ErrorCode::backend_http:
    case ErrorCode::backend_transport:
      out.code = ApiErrorCode::unavailable;
      break;
    default:
      out.code = ApiErrorCode::internal;
      break;
  }
  return out;
}

Api::Api(Orchestrator& orchestrator, Store& store, const Gateway& gateway, std::string admin_token)
    : orchestrator_(orchestrator),
      store_(store),
      gateway_(gateway),
      admin_token_(std::move(admin_token)) {}

ApiResponse Api::create_session(const std::string& body) {
  const auto doc = parse_body(body);
  if (!doc) return error_response(ApiErrorCode::bad_request, "body must be a JSON object");
  std::optional<std::string> ref;
  if (doc->contains("initiation_ref")) {
    const Json& v = doc->at("initiation_ref");
    if (!v.is_null() && !v.is_string()) {
      return error_response(ApiErrorCode::bad_request, "initiation_ref must be a string");
    }
    if (v.is_string()) ref = v.get<std::string>();
  }
  try {
    const Session s = orchestrator_.start_session(ref);
    return {201, {{"session_id", s.session_id}, {"opening_question", s.turns.front().text}}};
  } catch (const Error& e) {
    return error_response(e);
  }
}

ApiResponse Api::post_turn(const std::string& session_id, const std::string& body) {
  const auto doc = parse_body(body);
  if (!doc || !doc->contains("text") || !doc->at("text").is_string()) {
    return error_response(ApiErrorCode::bad_request, "body must be {\"text\": string}");
  }
  try {
    const DecisionOutcome out = orchestrator_.submit_turn(session_id, doc->at("text").get<std::string>());
    OrderedJson reply;
    reply["reply"] = out.final_text;
    reply["concluded"] = !out.continues();
    if (out.conclude) reply["reason"] = to_string(*out.conclude);
    return {200, std::move(reply)};
  } catch (const Error& e) {
    return error_response(e);
  }
}

ApiResponse Api::get_session(const std::string& session_id, const std::string& authorization) {
  constexpr std::string_view kBearer = "Bearer ";
  const bool authorized = !admin_token_.empty() && authorization.starts_with(kBearer) &&
                          token_matches(std::string_view(authorization).substr(kBearer.size()),
                                        admin_token_);
  if (!authorized) return error_response(ApiErrorCode::unauthorized, "admin token required");
  try {
    const auto session = store_.load_session(session_id);
    if (!session) return error_response(ApiErrorCode::not_found, "unknown session " + session_id);
    OrderedJson out = to_json(*session);
    const auto status = store_.extraction_status(session_id);
    out["extraction"] = status ? to_json(*status) : OrderedJson(nullptr);
    const auto record = store_.intelligence_for(session_id);
    out["report"] = record ? to_json(*record) : OrderedJson(nullptr);
    return {200, std::move(out)};
  } catch (const Error& e) {
    return error_response(e);
  }
}

ApiResponse Api::health() const {
  OrderedJson backends = OrderedJson::array();
  bool degraded = false;
  for (const auto& s : gateway_.status()) {
    degraded = degraded || s.health == BackendHealth::degraded;
    backends.push_back(
        {{"backend_id", s.backend_id}, {"model", s.model_id}, {"health", to_string(s.health)}});
  }
  OrderedJson out;
  out["status"] = degraded ? "degraded" : "ok";
  out["backends"] = std::move(backends);
  return {200, std::move(out)};
}

std::pair<std::string, int> parse_listen_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon + 1 == addr.size()) {
    throw Error(ErrorCode::invalid_config, "listen address must be host:port, got '" + addr + "'");
  }
  std::string host = addr.substr(0, colon);
  if (host.empty()) host = "0.0.0.0";
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(addr.substr(colon + 1), &used);
    if (used != addr.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_config, "bad port in '" + addr + "'");
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::invalid_config, "port out of range");
  return {host, port};
}

struct ApiServer::Impl {
  Api& api;
  ServerSettings settings;
  NowFn now;
  httplib::Server server;
  std::jthread sweeper;

  Impl(Api& a, ServerSettings s, NowFn n) : api(a), settings(std::move(s)), now(std::move(n)) {}

  void send(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  void add_cors(const httplib::Request& req, httplib::Response& res) {
    if (settings.cors_origins.empty()) return;
    const std::string origin = req.get_header_value("Origin");
    const bool any = std::ranges::find(settings.cors_origins, "*") != settings.cors_origins.end();
    if (!any && std::ranges::find(settings.cors_origins, origin) == settings.cors_origins.end()) return;
    res.set_header("Access-Control-Allow-Origin", any ? "*" : origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
    if (!any) res.set_header("Vary", "Origin");
  }

  void routes() {
    server.new_task_queue = [n = settings.worker_threads] {
      return new httplib::ThreadPool(std::max<std::size_t>(n, 1));
    };
    server.set_payload_max_length(1 << 20);
    // No SO_REUSEPORT: a second server on the same port must fail to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
    });
    server.set_post_routing_handler(
        [this](const httplib::Request& req, httplib::Response& res) { add_cors(req, res); });
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });
    server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, api.create_session(req.body));
    });
    server.Post(R"(/v1/sessions/([^/]+)/turns)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  send(res, api.post_turn(req.matches[1], req.body));
                });
    server.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, api.get_session(req.matches[1], req.get_header_value("Authorization")));
    });
    server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      send(res, api.health());
    });
    server.set_exception_handler(
        [this](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          std::string what = "unexpected failure";
          try {
            if (ep) std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            what = e.what();
          } catch (...) {
          }
          spdlog::error("request failed: {}", what);
          send(res, error_response(ApiErrorCode::internal, "internal error"));
        });
    server.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 404) send(res, error_response(ApiErrorCode::not_found, "no such endpoint"));
    });
  }

  void start_sweeper() {
    sweeper = std::jthread([this](std::stop_token stop) {
      std::mutex m;
      std::condition_variable_any cv;
      while (!stop.stop_requested()) {
        {
          std::unique_lock lock(m);
          cv.wait_for(lock, stop, settings.expiry_interval, [] { return false; });
        }
        if (stop.stop_requested()) break;
        try {
          if (const auto n = api.expire_idle_sessions(now()); n > 0) {
            spdlog::info("expired {} idle session(s)", n);
          }
        } catch (const std::exception& e) {
          spdlog::warn("idle sweep failed: {}", e.what());
        }
      }
    });
  }
};

ApiServer::ApiServer(Api& api, ServerSettings settings, NowFn now)
    : impl_(std::make_unique<Impl>(api, std::move(settings), std::move(now))) {
  impl_->routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw Error(ErrorCode::io_error, "cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void ApiServer::run() {
  impl_->start_sweeper();
  impl_->server.listen_after_bind();
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->sweeper.joinable()) {
    impl_->sweeper.request_stop();
    impl_->sweeper.join();
  }
}

}  // namespace casekit
