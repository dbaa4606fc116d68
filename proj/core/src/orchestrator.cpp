#include "casekit/orchestrator.hpp"

#include <cctype>
#include <future>
#include <random>

#include <spdlog/spdlog.h>

#include "casekit/error.hpp"

namespace casekit {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

template <typename T>
void read_into(const Json& doc, const char* key, T& out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("orchestrator.") + key + ": " + e.what());
  }
}

}  // namespace

void OrchestratorConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(ErrorCode::invalid_config, why); };
  if (termination_token.empty()) bad("termination_token must not be empty");
  if (opening_question.empty()) bad("opening_question must not be empty");
  if (max_agent_questions == 0) bad("max_agent_questions must be positive");
  if (max_consecutive_sensitive == 0) bad("max_consecutive_sensitive must be positive");
  if (session_idle_timeout <= std::chrono::milliseconds{0}) bad("session_idle_timeout must be positive");
  if (generator.backend_id.empty() || filter.backend_id.empty()) bad("role backends must be named");
  if (generator.temperature < 0 || filter.temperature < 0) bad("temperature must be >= 0");
  if (generator.max_output_tokens <= 0 || filter.max_output_tokens <= 0) {
    bad("max_output_tokens must be positive");
  }
  const std::pair<const char*, const std::string*> templates[] = {
      {"safety_templates.egregious", &safety_templates.egregious},
      {"safety_templates.sensitive", &safety_templates.sensitive},
      {"safety_templates.sensitive_repeat", &safety_templates.sensitive_repeat},
      {"user_stop_message", &user_stop_message},
      {"limit_message", &limit_message},
      {"retry_message", &retry_message},
      {"closing_message", &closing_message},
      {"opening_question", &opening_question},
  };
  for (const auto& [name, text] : templates) {
    if (text->empty()) bad(std::string(name) + " must not be empty");
    if (text->find(termination_token) != std::string::npos) {
      bad(std::string(name) + " contains the termination token");
    }
  }
}

OrchestratorConfig orchestrator_config_from_json(const Json& doc) {
  OrchestratorConfig c;
  if (doc.is_null()) return c;
  if (!doc.is_object()) throw Error(ErrorCode::invalid_config, "orchestrator must be an object");
  read_into(doc, "config_version", c.config_version);
  read_into(doc, "opening_question", c.opening_question);
  read_into(doc, "termination_token", c.termination_token);
  read_into(doc, "max_agent_questions", c.max_agent_questions);
  read_into(doc, "max_consecutive_sensitive", c.max_consecutive_sensitive);
  if (doc.contains("session_idle_timeout_s")) {
    std::int64_t secs = 0;
    read_into(doc, "session_idle_timeout_s", secs);
    c.session_idle_timeout = std::chrono::seconds{secs};
  }
  if (doc.contains("safety_templates")) {
    const Json& t = doc.at("safety_templates");
    read_into(t, "egregious", c.safety_templates.egregious);
    read_into(t, "sensitive", c.safety_templates.sensitive);
    read_into(t, "sensitive_repeat", c.safety_templates.sensitive_repeat);
  }
  read_into(doc, "user_stop_message", c.user_stop_message);
  read_into(doc, "limit_message", c.limit_message);
  read_into(doc, "retry_message", c.retry_message);
  read_into(doc, "closing_message", c.closing_message);
  read_into(doc, "persona", c.persona);
  read_into(doc, "guidelines", c.guidelines);
  read_into(doc, "success_criteria", c.success_criteria);
  if (doc.contains("generator")) {
    const Json& g = doc.at("generator");
    read_into(g, "backend", c.generator.backend_id);
    read_into(g, "temperature", c.generator.temperature);
    read_into(g, "max_output_tokens", c.generator.max_output_tokens);
  }
  if (doc.contains("filter")) {
    const Json& f = doc.at("filter");
    read_into(f, "backend", c.filter.backend_id);
    read_into(f, "temperature", c.filter.temperature);
    read_into(f, "max_output_tokens", c.filter.max_output_tokens);
  }
  c.validate();
  return c;
}

std::string strip_termination_token(std::string_view text, std::string_view token) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = text.find(token, pos);
    if (hit == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    std::size_t left = hit;
    while (left > pos && is_space(text[left - 1])) --left;
    out.append(text.substr(pos, left - pos));
    pos = hit + token.size();
    while (pos < text.size() && is_space(text[pos])) ++pos;
    // Keep words on either side of an inline token apart.
    if (!out.empty() && pos < text.size() && text.find(token, pos) != pos) out.push_back(' ');
  }
  return trim(out);
}

DecisionOutcome decide(std::string_view generator_text, const SafetyVerdict& verdict,
                       std::size_t agent_questions_so_far, const OrchestratorConfig& config,
                       std::size_t consecutive_sensitive) {
  const bool sensitive = verdict.tier == Tier::sensitive;
  if (sensitive && consecutive_sensitive == 0) consecutive_sensitive = 1;

  if (verdict.tier == Tier::egregious) {
    return {config.safety_templates.egregious, ConclusionReason::safety_terminated,
            DecisionSource::safety_template};
  }
  if (verdict.user_wants_to_stop) {
    return {config.user_stop_message, ConclusionReason::user_stopped,
            DecisionSource::limit_template};
  }
  if (sensitive && consecutive_sensitive >= config.max_consecutive_sensitive) {
    return {config.safety_templates.sensitive_repeat, ConclusionReason::safety_terminated,
            DecisionSource::safety_template};
  }
  if (agent_questions_so_far >= config.max_agent_questions) {
    return {config.limit_message, ConclusionReason::turn_limit, DecisionSource::limit_template};
  }
  if (sensitive) {
    return {config.safety_templates.sensitive, std::nullopt, DecisionSource::safety_template};
  }
  if (generator_text.find(config.termination_token) != std::string_view::npos) {
    std::string stripped = strip_termination_token(generator_text, config.termination_token);
    if (stripped.empty()) {
      return {config.closing_message, ConclusionReason::agent_terminated,
              DecisionSource::limit_template};
    }
    return {std::move(stripped), ConclusionReason::agent_terminated, DecisionSource::generator};
  }
  if (trim(generator_text).empty()) {
    return {config.retry_message, std::nullopt, DecisionSource::limit_template};
  }
  return {std::string(generator_text), std::nullopt, DecisionSource::generator};
}

CompletionRequest build_generator_prompt(const Session& session, const OrchestratorConfig& config) {
  std::string sys;
  sys += config.persona;
  sys += "\n\nInteraction guidelines:\n";
  sys += config.guidelines;
  sys += "\n\nSuccess criteria:\n";
  sys += config.success_criteria;
  sys += "\n\nWhen the success criteria are met, or the user has nothing more to add, thank the "
         "user briefly and end your final message with the exact token ";
  sys += config.termination_token;
  sys += ". Never use that token in any other message.";

  CompletionRequest request;
  request.system_prompt = std::move(sys);
  request.messages = session.messages();
  request.backend_id = config.generator.backend_id;
  request.temperature = config.generator.temperature;
  request.max_output_tokens = config.generator.max_output_tokens;
  return request;
}

IdGenerator random_id_generator() {
  auto state = std::make_shared<std::pair<std::mutex, std::mt19937_64>>();
  state->second.seed(std::random_device{}() ^
                     (static_cast<std::uint64_t>(std::random_device{}()) << 32));
  return [state] {
    std::lock_guard lock(state->first);
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx",
                  static_cast<unsigned long long>(state->second()),
                  static_cast<unsigned long long>(state->second()));
    return std::string(buf);
  };
}

// Marks one session as having a turn in flight for the guard's lifetime.
class Orchestrator::BusyGuard {
 public:
  BusyGuard(Orchestrator& owner, const std::string& id) : owner_(owner), id_(id) {
    std::lock_guard lock(owner_.busy_mutex_);
    if (!owner_.in_flight_.insert(id_).second) {
      throw Error(ErrorCode::session_busy, "a turn is already in flight for session " + id_);
    }
  }
  ~BusyGuard() {
    std::lock_guard lock(owner_.busy_mutex_);
    owner_.in_flight_.erase(id_);
  }
  BusyGuard(const BusyGuard&) = delete;
  BusyGuard& operator=(const BusyGuard&) = delete;

 private:
  Orchestrator& owner_;
  std::string id_;
};

Orchestrator::Orchestrator(OrchestratorConfig config, SafetyPolicySet policies, Store& store,
                           const Gateway& gateway, NowFn now, IdGenerator next_id)
    : config_(std::move(config)),
      policies_(std::move(policies)),
      store_(store),
      gateway_(gateway),
      now_(std::move(now)),
      next_id_(std::move(next_id)) {
  config_.validate();
}

Session Orchestrator::start_session(std::optional<std::string> initiation_ref) {
  const TimePoint now = now_();
  Session s;
  s.session_id = next_id_();
  s.state = SessionState::active;
  s.created_at = now;
  s.updated_at = now;
  s.config_version = config_.config_version;
  s.initiation_ref = std::move(initiation_ref);
  Turn opening;
  opening.index = 0;
  opening.speaker = Speaker::agent;
  opening.text = config_.opening_question;
  opening.timestamp = now;
  opening.decision_source = DecisionSource::limit_template;
  s.turns.push_back(std::move(opening));
  store_.create_session(s);
  return s;
}

std::optional<Session> Orchestrator::get_session(const std::string& session_id) const {
  return store_.load_session(session_id);
}

DecisionOutcome Orchestrator::submit_turn(const std::string& session_id, std::string_view user_text) {
  BusyGuard guard(*this, session_id);
  auto session = store_.load_session(session_id);
  if (!session) throw Error(ErrorCode::session_not_found, "no session " + session_id);
  if (!session->is_active()) {
    throw Error(ErrorCode::session_concluded, "session " + session_id + " is concluded");
  }
  const std::string text = trim(sanitize_utf8(user_text));
  if (text.empty()) throw Error(ErrorCode::empty_input, "user input is empty");

  if (!session->turns.empty() && session->turns.back().speaker == Speaker::user) {
    // A previous process stored the user turn but died before replying.
    spdlog::warn("session {}: answering an unanswered user turn before the new input", session_id);
    const std::string pending = session->turns.back().text;
    session->turns.pop_back();
    const DecisionOutcome recovered = answer(*session, pending, /*user_turn_persisted=*/true);
    if (!recovered.continues()) return recovered;
    session = store_.load_session(session_id);
  }
  return answer(*session, text, /*user_turn_persisted=*/false);
}

DecisionOutcome Orchestrator::answer(Session& session, const std::string& user_text,
                                     bool user_turn_persisted) {
  const std::vector<ChatMessage> history = session.messages();
  const std::size_t agent_questions = session.agent_turn_count();
  std::size_t consecutive_sensitive = 1;
  for (auto it = session.turns.rbegin(); it != session.turns.rend(); ++it) {
    if (it->speaker != Speaker::user) continue;
    if (!it->safety_verdict || it->safety_verdict->tier != Tier::sensitive) break;
    ++consecutive_sensitive;
  }

  Turn user_turn;
  user_turn.index = session.turns.size();
  user_turn.speaker = Speaker::user;
  user_turn.text = user_text;
  user_turn.timestamp = now_();

  Session with_input = session;
  with_input.turns.push_back(user_turn);
  const CompletionRequest gen_request = build_generator_prompt(with_input, config_);

  auto generated = std::async(std::launch::async, [this, &gen_request]() -> std::string {
    try {
      return gateway_.complete(gen_request).text;
    } catch (const std::exception& e) {
      spdlog::error("generator call failed: {}", e.what());
      return {};
    }
  });
  const SafetyVerdict verdict = classify(user_text, history, policies_, gateway_, config_.filter);
  const std::string generator_text = generated.get();

  if (verdict.tier != Tier::sensitive) consecutive_sensitive = 0;
  const DecisionOutcome outcome =
      decide(generator_text, verdict, agent_questions, config_, consecutive_sensitive);

  user_turn.safety_verdict = verdict;
  Turn agent_turn;
  agent_turn.index = user_turn.index + 1;
  agent_turn.speaker = Speaker::agent;
  agent_turn.text = outcome.final_text;
  agent_turn.timestamp = now_();
  agent_turn.decision_source = outcome.source;

  std::vector<Turn> to_append;
  if (!user_turn_persisted) to_append.push_back(user_turn);
  to_append.push_back(agent_turn);
  store_.append_turns(session.session_id, to_append, outcome.conclude, agent_turn.timestamp);
  return outcome;
}

std::size_t Orchestrator::expire_idle_sessions(TimePoint now) {
  std::size_t expired = 0;
  for (const auto& id : store_.list_idle_sessions(now - config_.session_idle_timeout)) {
    {
      std::lock_guard lock(busy_mutex_);
      if (in_flight_.count(id)) continue;
    }
    if (store_.conclude_session(id, ConclusionReason::timeout, now)) ++expired;
  }
  return expired;
}

}  // namespace casekit
