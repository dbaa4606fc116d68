#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace casekit {

using Clock = std::chrono::system_clock;
using TimePoint = std::chrono::sys_time<std::chrono::milliseconds>;
using NowFn = std::function<TimePoint()>;

inline TimePoint system_now() {
  return std::chrono::time_point_cast<std::chrono::milliseconds>(Clock::now());
}

inline std::int64_t to_epoch_ms(TimePoint t) { return t.time_since_epoch().count(); }
inline TimePoint from_epoch_ms(std::int64_t ms) {
  return TimePoint{std::chrono::milliseconds{ms}};
}

// Accepts RFC 3339 UTC ("2026-01-31T12:00:00Z", optional fractional seconds)
// or a bare integer of milliseconds since the epoch.
std::optional<TimePoint> parse_timestamp(std::string_view text);
std::string format_timestamp(TimePoint t);

enum class Speaker { agent, user };

std::string_view to_string(Speaker s);
std::optional<Speaker> speaker_from_string(std::string_view s);

}  // namespace casekit
