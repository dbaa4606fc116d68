#pragma once

#include "casekit/error.hpp"
#include "casekit/session.hpp"

namespace casekit::detail {

// Checks that `turn` may be appended to `session` as its next turn.
inline void check_append(const Session& session, const Turn& turn) {
  if (!session.is_active()) {
    throw Error(ErrorCode::session_concluded, "session " + session.session_id + " is concluded");
  }
  if (turn.index != session.turns.size()) {
    throw Error(ErrorCode::index_conflict,
                "turn index " + std::to_string(turn.index) + " conflicts with session " +
                    session.session_id + " of length " + std::to_string(session.turns.size()));
  }
  const Speaker expected = turn.index % 2 == 0 ? Speaker::agent : Speaker::user;
  if (turn.speaker != expected) {
    throw Error(ErrorCode::invalid_argument, "turn " + std::to_string(turn.index) +
                                                 " breaks agent/user alternation");
  }
}

}  // namespace casekit::detail
