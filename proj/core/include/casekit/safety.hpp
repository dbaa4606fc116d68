#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "casekit/json_util.hpp"
#include "casekit/llm_gateway.hpp"

namespace casekit {

enum class Tier { none = 0, sensitive = 1, egregious = 2 };

std::string_view to_string(Tier t);
std::optional<Tier> tier_from_string(std::string_view s);  // case-insensitive

struct PolicyCategory {
  std::string id;
  std::string name;
  std::string description;
};

// Reserved sensitive-tier id used for every fail-closed verdict. It is part of
// every policy set and may not be redefined.
inline constexpr std::string_view kParseFailureCategory = "parse_failure";

class SafetyPolicySet {
 public:
  SafetyPolicySet(std::vector<PolicyCategory> egregious, std::vector<PolicyCategory> sensitive,
                  std::string version);

  static SafetyPolicySet from_json(const Json& doc);
  static SafetyPolicySet load(const std::filesystem::path& path);
  static SafetyPolicySet defaults();

  const std::vector<PolicyCategory>& egregious() const { return egregious_; }
  const std::vector<PolicyCategory>& sensitive() const { return sensitive_; }
  const std::string& version() const { return version_; }

  bool is_egregious(std::string_view id) const;
  bool is_sensitive(std::string_view id) const;  // includes parse_failure
  bool contains(std::string_view id) const { return is_egregious(id) || is_sensitive(id); }

 private:
  std::vector<PolicyCategory> egregious_;
  std::vector<PolicyCategory> sensitive_;
  std::string version_;
};

struct SafetyVerdict {
  Tier tier = Tier::none;
  std::vector<std::string> categories;
  bool user_wants_to_stop = false;
  std::string raw_model_text;
  std::string policy_version;

  bool operator==(const SafetyVerdict&) const = default;
};

OrderedJson to_json(const SafetyVerdict& v);
SafetyVerdict verdict_from_json(const Json& doc);

SafetyVerdict fail_closed_verdict(std::string raw_model_text, const SafetyPolicySet& policies);

// Total parser for the filter's reply. Expects a JSON object such as
//   {"tier": "SENSITIVE", "categories": ["financial_advice"], "stop": false}
// anywhere in the text. Unknown category ids are dropped; a SENSITIVE or
// EGREGIOUS verdict left without categories falls back to the parse_failure
// verdict. Anything unparseable is fail-closed to SENSITIVE/parse_failure.
SafetyVerdict parse_verdict(std::string_view raw_model_text, const SafetyPolicySet& policies);

struct ClassifierSettings {
  std::string backend_id = "filter";
  double temperature = 0.2;
  int max_output_tokens = 256;
};

// The classification request: policy taxonomy in the system prompt, the
// conversation history as context, and the user input as the last message.
CompletionRequest build_classifier_prompt(std::string_view user_text,
                                          std::span<const ChatMessage> history,
                                          const SafetyPolicySet& policies,
                                          const ClassifierSettings& settings);

// Never throws for backend or parse failures; those produce the fail-closed
// verdict.
SafetyVerdict classify(std::string_view user_text, std::span<const ChatMessage> history,
                       const SafetyPolicySet& policies, const Gateway& gateway,
                       const ClassifierSettings& settings);

}  // namespace casekit
