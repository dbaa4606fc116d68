#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "casekit/json_util.hpp"
#include "casekit/llm_gateway.hpp"
#include "casekit/safety.hpp"
#include "casekit/types.hpp"

namespace casekit {

enum class SessionState { active, concluded };

enum class ConclusionReason {
  agent_terminated,
  safety_terminated,
  user_stopped,
  turn_limit,
  timeout,
};

enum class DecisionSource { generator, safety_template, limit_template };

std::string_view to_string(SessionState s);
std::string_view to_string(ConclusionReason r);
std::string_view to_string(DecisionSource s);
std::optional<SessionState> session_state_from_string(std::string_view s);
std::optional<ConclusionReason> conclusion_reason_from_string(std::string_view s);
std::optional<DecisionSource> decision_source_from_string(std::string_view s);

struct Turn {
  std::size_t index = 0;
  Speaker speaker = Speaker::agent;
  std::string text;
  TimePoint timestamp{};
  std::optional<SafetyVerdict> safety_verdict;    // user turns
  std::optional<DecisionSource> decision_source;  // agent turns

  bool operator==(const Turn&) const = default;
};

struct Session {
  std::string session_id;
  SessionState state = SessionState::active;
  std::optional<ConclusionReason> reason;
  std::vector<Turn> turns;
  TimePoint created_at{};
  TimePoint updated_at{};
  std::string config_version;
  // Envelope only. Must never reach a model prompt.
  std::optional<std::string> initiation_ref;

  bool is_active() const { return state == SessionState::active; }
  std::size_t agent_turn_count() const;
  // Conversation content without envelope fields.
  std::vector<ChatMessage> messages() const;

  bool operator==(const Session&) const = default;
};

// Checks agent/user alternation starting with an agent turn, index ==
// position, and that a trailing user turn only appears on an active session.
bool satisfies_alternation(const Session& session);

OrderedJson to_json(const Turn& turn);
OrderedJson to_json(const Session& session);
Turn turn_from_json(const Json& doc);
Session session_from_json(const Json& doc);

// "Agent: ...\nUser: ..." rendering used by extractor and rater prompts.
std::string render_transcript(const std::vector<ChatMessage>& messages);

}  // namespace casekit
