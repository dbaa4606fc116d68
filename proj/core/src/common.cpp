#include "casekit/error.hpp"
#include "casekit/types.hpp"

#include <charconv>
#include <cstdio>
#include <ctime>

namespace casekit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::unknown_backend: return "unknown_backend";
    case ErrorCode::backend_timeout: return "backend_timeout";
    case ErrorCode::backend_http: return "backend_http";
    case ErrorCode::backend_transport: return "backend_transport";
    case ErrorCode::session_not_found: return "session_not_found";
    case ErrorCode::session_concluded: return "session_concluded";
    case ErrorCode::session_busy: return "session_busy";
    case ErrorCode::session_active: return "session_active";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::index_conflict: return "index_conflict";
    case ErrorCode::store_unavailable: return "store_unavailable";
    case ErrorCode::insufficient_golden: return "insufficient_golden";
    case ErrorCode::extraction_failed: return "extraction_failed";
    case ErrorCode::empty_holdout: return "empty_holdout";
    case ErrorCode::shot_leakage: return "shot_leakage";
    case ErrorCode::invalid_rate: return "invalid_rate";
    case ErrorCode::no_overlap: return "no_overlap";
  }
  return "unknown";
}

std::string_view to_string(Speaker s) {
  return s == Speaker::agent ? "agent" : "user";
}

std::optional<Speaker> speaker_from_string(std::string_view s) {
  if (s == "agent") return Speaker::agent;
  if (s == "user") return Speaker::user;
  return std::nullopt;
}

std::optional<TimePoint> parse_timestamp(std::string_view text) {
  if (text.empty()) return std::nullopt;
  bool all_digits = true;
  for (char c : text) {
    if (c < '0' || c > '9') {
      all_digits = false;
      break;
    }
  }
  if (all_digits) {
    std::int64_t ms = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), ms);
    if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
    return from_epoch_ms(ms);
  }

  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
  int consumed = 0;
  std::string buf(text);
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &year, &month, &day, &hour,
                  &minute, &second, &consumed) != 6) {
    // Date only.
    if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%n", &year, &month, &day, &consumed) != 3 ||
        static_cast<std::size_t>(consumed) != buf.size()) {
      return std::nullopt;
    }
  }
  std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
  int millis = 0;
  if (!rest.empty() && rest.front() == '.') {
    rest.remove_prefix(1);
    int digits = 0;
    while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') {
      if (digits < 3) millis = millis * 10 + (rest.front() - '0');
      ++digits;
      rest.remove_prefix(1);
    }
    if (digits == 0) return std::nullopt;
    for (int d = digits; d < 3; ++d) millis *= 10;
  }
  if (!(rest.empty() || rest == "Z" || rest == "+00:00")) return std::nullopt;
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 ||
      second > 60) {
    return std::nullopt;
  }

  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) return std::nullopt;
  auto tp = sys_days{ymd} + hours{hour} + minutes{minute} + seconds{second} + milliseconds{millis};
  return time_point_cast<milliseconds>(tp);
}

std::string format_timestamp(TimePoint t) {
  using namespace std::chrono;
  const auto days = floor<std::chrono::days>(t);
  const year_month_day ymd{days};
  const hh_mm_ss hms{t - days};
  char out[64];
  std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02ld:%02ld:%02ld.%03ldZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<long>(hms.hours().count()),
                static_cast<long>(hms.minutes().count()), static_cast<long>(hms.seconds().count()),
                static_cast<long>(hms.subseconds().count()));
  return out;
}

}  // namespace casekit
