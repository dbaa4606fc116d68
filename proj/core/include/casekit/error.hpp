#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace casekit {

enum class ErrorCode {
  invalid_argument,
  invalid_config,
  io_error,
  unknown_backend,
  backend_timeout,
  backend_http,
  backend_transport,
  session_not_found,
  session_concluded,
  session_busy,
  session_active,
  empty_input,
  index_conflict,
  store_unavailable,
  insufficient_golden,
  extraction_failed,
  empty_holdout,
  shot_leakage,
  invalid_rate,
  no_overlap,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library is an Error carrying a stable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class BackendHttpError : public Error {
 public:
  BackendHttpError(int status, std::string body_excerpt)
      : Error(ErrorCode::backend_http,
              "backend returned HTTP " + std::to_string(status) + ": " + body_excerpt),
        status_(status),
        body_excerpt_(std::move(body_excerpt)) {}

  int status() const noexcept { return status_; }
  const std::string& body_excerpt() const noexcept { return body_excerpt_; }

 private:
  int status_;
  std::string body_excerpt_;
};

}  // namespace casekit
