#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "casekit/llm_gateway.hpp"
#include "casekit/safety.hpp"
#include "casekit/session.hpp"
#include "casekit/store.hpp"

namespace casekit {

struct SafetyTemplates {
  std::string egregious =
      "I'm not able to continue this conversation. If you need help with a payment, please "
      "contact support through the app.";
  std::string sensitive =
      "I'm not able to help with that here, but I'd like to understand what happened to you. "
      "Could you tell me more about how the scam unfolded?";
  // Used when the sensitive tier fires max_consecutive_sensitive times in a row.
  std::string sensitive_repeat =
      "It looks like we can't make progress on your report right now, so I'll close this "
      "conversation. Thank you for your time.";
};

struct GenerationSettings {
  std::string backend_id = "generator";
  double temperature = 0.2;
  int max_output_tokens = 512;
};

struct OrchestratorConfig {
  std::string config_version = "dev";
  std::string opening_question =
      "I'm sorry you may have been targeted by a scam. Could you tell me what happened, "
      "starting with how the other person first got in touch with you?";
  std::string termination_token = "<END_OF_INTERVIEW>";
  std::size_t max_agent_questions = 20;
  std::chrono::milliseconds session_idle_timeout{std::chrono::minutes{30}};
  std::size_t max_consecutive_sensitive = 3;
  SafetyTemplates safety_templates;
  std::string user_stop_message =
      "Of course. Thank you for sharing what you could, it helps us protect other users. "
      "Take care.";
  std::string limit_message =
      "Thank you, that's all the questions I have. Your report has been recorded.";
  std::string retry_message =
      "Sorry, I didn't catch that. Could you tell me a bit more about what happened?";
  std::string closing_message = "Thank you for your report. It has been recorded.";
  std::string persona =
      "You are a specialist fraud analyst working for a digital payments app. You interview "
      "users who believe they were targeted by a social engineering scam so the trust and "
      "safety team can understand exactly how the scam worked. You know the common patterns "
      "of payment scams such as fake loans, fake job offers, fake advertisements and "
      "impersonation.";
  std::string guidelines =
      "- Ask one short, empathetic question at a time.\n"
      "- Never promise a refund, reversal or recovery of money.\n"
      "- Do not give financial, investment or legal advice.\n"
      "- Stay on the topic of the reported scam and gently steer back if the user drifts.\n"
      "- If the user does not want to continue, thank them and end the interview right away.\n"
      "- Do not ask for passwords, PINs, OTPs, card numbers or other credentials.";
  std::string success_criteria =
      "The interview is complete once you understand: where the scammer first contacted the "
      "user (the app or channel), the story or lure used to win the user's trust, and the "
      "action the user was persuaded to take that led to the loss.";
  GenerationSettings generator;
  ClassifierSettings filter{"filter", 0.2, 256};

  // Throws Error(invalid_config).
  void validate() const;
};

// Reads keys present in `doc` over the defaults.
OrchestratorConfig orchestrator_config_from_json(const Json& doc);

struct DecisionOutcome {
  std::string final_text;
  std::optional<ConclusionReason> conclude;  // nullopt: continue
  DecisionSource source = DecisionSource::generator;

  bool continues() const { return !conclude.has_value(); }
  bool operator==(const DecisionOutcome&) const = default;
};

// Removes every occurrence of `token` together with the whitespace around
// it, then trims the result.
std::string strip_termination_token(std::string_view text, std::string_view token);

// Merges the generator output and the safety verdict. Precedence, highest
// first:
//   1. egregious verdict           -> egregious template, conclude(safety_terminated)
//   2. user wants to stop          -> stop message, conclude(user_stopped)
//   3. sensitive, repeated         -> sensitive_repeat template, conclude(safety_terminated)
//   4. agent question cap reached  -> limit message, conclude(turn_limit)
//   5. sensitive                   -> sensitive template, continue
//   6. termination token present   -> stripped text, conclude(agent_terminated)
//   7. empty generator text        -> retry message, continue
//   8. otherwise                   -> generator text verbatim, continue
// `consecutive_sensitive` counts sensitive verdicts in a row including this
// one; 0 is read as 1 when the verdict is sensitive.
DecisionOutcome decide(std::string_view generator_text, const SafetyVerdict& verdict,
                       std::size_t agent_questions_so_far, const OrchestratorConfig& config,
                       std::size_t consecutive_sensitive = 0);

// Depends only on session.turns and config.
CompletionRequest build_generator_prompt(const Session& session, const OrchestratorConfig& config);

using IdGenerator = std::function<std::string()>;
IdGenerator random_id_generator();

class Orchestrator {
 public:
  Orchestrator(OrchestratorConfig config, SafetyPolicySet policies, Store& store,
               const Gateway& gateway, NowFn now = system_now,
               IdGenerator next_id = random_id_generator());

  // Errors: store_unavailable.
  Session start_session(std::optional<std::string> initiation_ref = std::nullopt);

  // Errors: session_not_found, session_concluded, session_busy, empty_input,
  // store_unavailable.
  DecisionOutcome submit_turn(const std::string& session_id, std::string_view user_text);

  std::size_t expire_idle_sessions(TimePoint now);

  std::optional<Session> get_session(const std::string& session_id) const;

  const OrchestratorConfig& config() const { return config_; }
  const SafetyPolicySet& policies() const { return policies_; }

 private:
  class BusyGuard;

  DecisionOutcome answer(Session& session, const std::string& user_text, bool user_turn_persisted);

  OrchestratorConfig config_;
  SafetyPolicySet policies_;
  Store& store_;
  const Gateway& gateway_;
  NowFn now_;
  IdGenerator next_id_;

  std::mutex busy_mutex_;
  std::set<std::string> in_flight_;
};

}  // namespace casekit
