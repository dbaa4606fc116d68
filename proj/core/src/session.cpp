#include "casekit/session.hpp"

#include "casekit/error.hpp"

namespace casekit {

std::string_view to_string(SessionState s) {
  return s == SessionState::active ? "active" : "concluded";
}

std::string_view to_string(ConclusionReason r) {
  switch (r) {
    case ConclusionReason::agent_terminated: return "agent_terminated";
    case ConclusionReason::safety_terminated: return "safety_terminated";
    case ConclusionReason::user_stopped: return "user_stopped";
    case ConclusionReason::turn_limit: return "turn_limit";
    case ConclusionReason::timeout: return "timeout";
  }
  return "unknown";
}

std::string_view to_string(DecisionSource s) {
  switch (s) {
    case DecisionSource::generator: return "generator";
    case DecisionSource::safety_template: return "safety_template";
    case DecisionSource::limit_template: return "limit_template";
  }
  return "unknown";
}

std::optional<SessionState> session_state_from_string(std::string_view s) {
  if (s == "active") return SessionState::active;
  if (s == "concluded") return SessionState::concluded;
  return std::nullopt;
}

std::optional<ConclusionReason> conclusion_reason_from_string(std::string_view s) {
  for (auto r : {ConclusionReason::agent_terminated, ConclusionReason::safety_terminated,
                 ConclusionReason::user_stopped, ConclusionReason::turn_limit,
                 ConclusionReason::timeout}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

std::optional<DecisionSource> decision_source_from_string(std::string_view s) {
  for (auto d : {DecisionSource::generator, DecisionSource::safety_template,
                 DecisionSource::limit_template}) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

std::size_t Session::agent_turn_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.speaker == Speaker::agent ? 1 : 0;
  return n;
}

std::vector<ChatMessage> Session::messages() const {
  std::vector<ChatMessage> out;
  out.reserve(turns.size());
  for (const auto& t : turns) out.push_back({t.speaker, t.text});
  return out;
}

bool satisfies_alternation(const Session& session) {
  for (std::size_t i = 0; i < session.turns.size(); ++i) {
    const Turn& t = session.turns[i];
    if (t.index != i) return false;
    const Speaker expected = i % 2 == 0 ? Speaker::agent : Speaker::user;
    if (t.speaker != expected) return false;
  }
  if (session.turns.empty()) return false;
  if (session.turns.back().speaker == Speaker::user && !session.is_active()) return false;
  return true;
}

OrderedJson to_json(const Turn& turn) {
  OrderedJson out;
  out["index"] = turn.index;
  out["speaker"] = to_string(turn.speaker);
  out["text"] = turn.text;
  out["timestamp"] = format_timestamp(turn.timestamp);
  if (turn.safety_verdict) out["safety_verdict"] = to_json(*turn.safety_verdict);
  if (turn.decision_source) out["decision_source"] = to_string(*turn.decision_source);
  return out;
}

OrderedJson to_json(const Session& session) {
  OrderedJson out;
  out["session_id"] = session.session_id;
  out["state"] = to_string(session.state);
  if (session.reason) out["reason"] = to_string(*session.reason);
  out["created_at"] = format_timestamp(session.created_at);
  out["updated_at"] = format_timestamp(session.updated_at);
  out["config_version"] = session.config_version;
  if (session.initiation_ref) out["initiation_ref"] = *session.initiation_ref;
  OrderedJson turns = OrderedJson::array();
  for (const auto& t : session.turns) turns.push_back(to_json(t));
  out["turns"] = std::move(turns);
  return out;
}

namespace {

TimePoint timestamp_field(const Json& doc, const char* key) {
  if (!doc.contains(key)) return TimePoint{};
  const Json& v = doc.at(key);
  if (v.is_number_integer()) return from_epoch_ms(v.get<std::int64_t>());
  if (v.is_string()) {
    if (auto t = parse_timestamp(v.get<std::string>())) return *t;
  }
  throw Error(ErrorCode::invalid_argument, std::string("bad timestamp in field ") + key);
}

}  // namespace

Turn turn_from_json(const Json& doc) {
  Turn t;
  t.index = doc.value("index", std::size_t{0});
  const auto speaker = speaker_from_string(doc.value("speaker", std::string{}));
  if (!speaker) throw Error(ErrorCode::invalid_argument, "turn has no valid speaker");
  t.speaker = *speaker;
  t.text = doc.value("text", std::string{});
  t.timestamp = timestamp_field(doc, "timestamp");
  if (doc.contains("safety_verdict")) t.safety_verdict = verdict_from_json(doc.at("safety_verdict"));
  if (doc.contains("decision_source")) {
    t.decision_source = decision_source_from_string(doc.at("decision_source").get<std::string>());
  }
  return t;
}

Session session_from_json(const Json& doc) {
  Session s;
  s.session_id = doc.value("session_id", std::string{});
  const auto state = session_state_from_string(doc.value("state", std::string{"active"}));
  if (!state) throw Error(ErrorCode::invalid_argument, "bad session state");
  s.state = *state;
  if (doc.contains("reason")) {
    s.reason = conclusion_reason_from_string(doc.at("reason").get<std::string>());
  }
  s.created_at = timestamp_field(doc, "created_at");
  s.updated_at = timestamp_field(doc, "updated_at");
  s.config_version = doc.value("config_version", std::string{});
  if (doc.contains("initiation_ref")) s.initiation_ref = doc.at("initiation_ref").get<std::string>();
  if (doc.contains("turns")) {
    for (const auto& t : doc.at("turns")) s.turns.push_back(turn_from_json(t));
  }
  return s;
}

std::string render_transcript(const std::vector<ChatMessage>& messages) {
  std::string out;
  for (const auto& m : messages) {
    out += m.speaker == Speaker::agent ? "Agent: " : "User: ";
    out += m.text;
    out += '\n';
  }
  return out;
}

}  // namespace casekit
