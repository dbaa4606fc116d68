#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "casekit/json_util.hpp"
#include "casekit/types.hpp"

namespace casekit {

struct ChatMessage {
  Speaker speaker = Speaker::user;
  std::string text;

  bool operator==(const ChatMessage&) const = default;
};

// A stateless completion call. Everything the model sees is in here; callers
// are responsible for keeping session metadata out of it.
struct CompletionRequest {
  std::string system_prompt;
  std::vector<ChatMessage> messages;
  int max_output_tokens = 1024;
  double temperature = 0.2;
  std::string backend_id;

  bool operator==(const CompletionRequest&) const = default;
};

// Canonical serialization used for hashing and privacy scans.
OrderedJson to_json(const CompletionRequest& request);

struct CompletionResult {
  std::string text;
  std::string backend_id;
  std::int64_t latency_ms = 0;
  std::int64_t token_estimate = 0;
};

enum class RuleMatch { turn_index, last_user_regex, fallback };

// One scripted reply. `response` may contain "{{last_user}}", which is
// replaced with the last user message of the request.
struct ScriptedRule {
  RuleMatch match = RuleMatch::fallback;
  std::size_t turn_index = 0;  // number of user messages in the request
  std::string pattern;         // ECMAScript regex searched in the last user message
  std::string response;
  std::optional<int> fail_status;  // reply with this HTTP status instead
  std::chrono::milliseconds delay{0};
};

struct ScriptedBackendConfig {
  std::string name;
  std::vector<ScriptedRule> rules;
  std::string model = "scripted";
  std::chrono::milliseconds timeout{30'000};
};

enum class WireStyle { openai, gemini };

struct HttpBackendConfig {
  std::string name;
  std::string base_url;  // scheme://host[:port]
  std::string path;      // may contain "{model}"; defaults per style
  std::string model;
  std::string auth_env;  // name of the environment variable holding the token
  std::string auth_header = "Authorization";
  std::string auth_prefix = "Bearer ";
  WireStyle style = WireStyle::openai;
  std::string response_text_pointer;  // JSON pointer; defaults per style
  Json extra_body = Json::object();   // merged into every request payload
  std::chrono::milliseconds timeout{30'000};
  std::chrono::milliseconds retry_backoff{1'000};
};

using BackendConfig = std::variant<HttpBackendConfig, ScriptedBackendConfig>;

// Parses {"kind": "scripted"|"http", ...}. A scripted entry may instead
// point at {"kind": "scripted", "file": "rules.yaml"}; relative paths resolve
// against `base_dir`. Throws Error(invalid_config).
BackendConfig parse_backend_config(const Json& doc, const std::filesystem::path& base_dir = {});
ScriptedBackendConfig parse_scripted_config(const Json& doc);
ScriptedBackendConfig load_scripted_config(const std::filesystem::path& path);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const CompletionRequest& request) const = 0;
  virtual std::string model_id() const = 0;
};

class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(ScriptedBackendConfig config);

  std::string complete(const CompletionRequest& request) const override;
  std::string model_id() const override { return config_.model; }

 private:
  ScriptedBackendConfig config_;
  std::vector<std::optional<std::regex>> patterns_;
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  std::string complete(const CompletionRequest& request) const override;
  std::string model_id() const override { return config_.model; }

  Json build_payload(const CompletionRequest& request) const;
  std::string parse_response(const std::string& body) const;

 private:
  HttpBackendConfig config_;
};

enum class BackendHealth { unknown, ok, degraded };
std::string_view to_string(BackendHealth h);

struct BackendStatus {
  std::string backend_id;
  std::string model_id;
  BackendHealth health = BackendHealth::unknown;
};

// Registry of named backends. complete() is safe to call concurrently;
// registration swaps entries atomically under the registry lock.
class Gateway {
 public:
  std::string register_backend(const BackendConfig& config);
  void register_backend(const std::string& id, std::shared_ptr<const Backend> backend);

  CompletionResult complete(const CompletionRequest& request) const;

  bool has_backend(const std::string& id) const;
  std::string model_id(const std::string& id) const;
  std::vector<BackendStatus> status() const;

 private:
  struct Entry {
    std::shared_ptr<const Backend> backend;
    std::shared_ptr<std::atomic<BackendHealth>> health;
  };

  Entry lookup(const std::string& id) const;

  mutable std::mutex mutex_;
  std::map<std::string, Entry> backends_;
};

std::int64_t estimate_tokens(std::string_view text);

}  // namespace casekit
