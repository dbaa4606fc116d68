#include "casekit/llm_gateway.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "casekit/error.hpp"

namespace casekit {
namespace {

constexpr std::string_view kLastUserPlaceholder = "{{last_user}}";

std::size_t count_user_messages(const CompletionRequest& request) {
  std::size_t n = 0;
  for (const auto& m : request.messages) n += m.speaker == Speaker::user ? 1 : 0;
  return n;
}

std::string last_user_message(const CompletionRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->speaker == Speaker::user) return it->text;
  }
  return {};
}

std::string substitute_all(std::string text, std::string_view needle, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return text;
}

std::chrono::milliseconds ms_field(const Json& doc, const char* key,
                                   std::chrono::milliseconds fallback) {
  if (!doc.contains(key)) return fallback;
  if (!doc.at(key).is_number_integer() || doc.at(key).get<long long>() < 0) {
    throw Error(ErrorCode::invalid_config, std::string(key) + " must be a non-negative integer");
  }
  return std::chrono::milliseconds{doc.at(key).get<long long>()};
}

std::string string_field(const Json& doc, const char* key, std::string fallback = {}) {
  if (!doc.contains(key)) return fallback;
  if (!doc.at(key).is_string()) {
    throw Error(ErrorCode::invalid_config, std::string(key) + " must be a string");
  }
  return doc.at(key).get<std::string>();
}

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 256;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

std::int64_t estimate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

OrderedJson to_json(const CompletionRequest& request) {
  OrderedJson out;
  out["backend_id"] = request.backend_id;
  out["system_prompt"] = request.system_prompt;
  OrderedJson messages = OrderedJson::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"speaker", to_string(m.speaker)}, {"text", m.text}});
  }
  out["messages"] = std::move(messages);
  out["max_output_tokens"] = request.max_output_tokens;
  out["temperature"] = request.temperature;
  return out;
}

std::string_view to_string(BackendHealth h) {
  switch (h) {
    case BackendHealth::ok: return "ok";
    case BackendHealth::degraded: return "degraded";
    case BackendHealth::unknown: break;
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Config parsing

ScriptedBackendConfig parse_scripted_config(const Json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::invalid_config, "scripted config must be an object");
  ScriptedBackendConfig config;
  config.name = string_field(doc, "name");
  config.model = string_field(doc, "model", "scripted");
  config.timeout = ms_field(doc, "timeout_ms", config.timeout);
  if (!doc.contains("rules") || !doc.at("rules").is_array()) {
    throw Error(ErrorCode::invalid_config, "scripted config needs a rules array");
  }
  for (const auto& r : doc.at("rules")) {
    if (!r.is_object()) throw Error(ErrorCode::invalid_config, "scripted rule must be an object");
    ScriptedRule rule;
    int selectors = 0;
    if (r.contains("turn_index")) {
      const Json& ti = r.at("turn_index");
      if (!ti.is_number_integer() || ti.get<std::int64_t>() < 0) {
        throw Error(ErrorCode::invalid_config, "turn_index must be a non-negative integer");
      }
      rule.match = RuleMatch::turn_index;
      rule.turn_index = r.at("turn_index").get<std::size_t>();
      ++selectors;
    }
    if (r.contains("regex")) {
      rule.match = RuleMatch::last_user_regex;
      rule.pattern = string_field(r, "regex");
      ++selectors;
    }
    if (r.value("default", false)) {
      rule.match = RuleMatch::fallback;
      ++selectors;
    }
    if (selectors != 1) {
      throw Error(ErrorCode::invalid_config,
                  "each scripted rule needs exactly one of turn_index, regex, default");
    }
    rule.response = string_field(r, "response");
    if (r.contains("fail_status")) rule.fail_status = r.at("fail_status").get<int>();
    rule.delay = ms_field(r, "delay_ms", std::chrono::milliseconds{0});
    config.rules.push_back(std::move(rule));
  }
  return config;
}

ScriptedBackendConfig load_scripted_config(const std::filesystem::path& path) {
  return parse_scripted_config(load_document(path));
}

BackendConfig parse_backend_config(const Json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw Error(ErrorCode::invalid_config, "backend config must be an object");
  const std::string kind = string_field(doc, "kind");
  if (kind == "scripted") {
    if (doc.contains("file")) {
      std::filesystem::path file = string_field(doc, "file");
      if (file.is_relative()) file = base_dir / file;
      auto config = load_scripted_config(file);
      if (doc.contains("name")) config.name = string_field(doc, "name");
      return config;
    }
    return parse_scripted_config(doc);
  }
  if (kind == "http") {
    HttpBackendConfig config;
    config.name = string_field(doc, "name");
    config.base_url = string_field(doc, "base_url");
    config.model = string_field(doc, "model");
    config.auth_env = string_field(doc, "auth_env");
    config.auth_header = string_field(doc, "auth_header", config.auth_header);
    config.auth_prefix = string_field(doc, "auth_prefix", config.auth_prefix);
    const std::string style = string_field(doc, "style", "openai");
    if (style == "openai") {
      config.style = WireStyle::openai;
    } else if (style == "gemini") {
      config.style = WireStyle::gemini;
    } else {
      throw Error(ErrorCode::invalid_config, "unknown wire style: " + style);
    }
    config.path = string_field(doc, "path");
    config.response_text_pointer = string_field(doc, "response_text_pointer");
    if (doc.contains("extra_body")) config.extra_body = doc.at("extra_body");
    config.timeout = ms_field(doc, "timeout_ms", config.timeout);
    config.retry_backoff = ms_field(doc, "retry_backoff_ms", config.retry_backoff);
    if (doc.contains("auth_token")) {
      throw Error(ErrorCode::invalid_config,
                  "auth tokens must come from the environment (auth_env), not the config file");
    }
    return config;
  }
  throw Error(ErrorCode::invalid_config, "unknown backend kind: '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Scripted backend

ScriptedBackend::ScriptedBackend(ScriptedBackendConfig config) : config_(std::move(config)) {
  if (config_.name.empty()) throw Error(ErrorCode::invalid_config, "scripted backend needs a name");
  int defaults = 0;
  for (const auto& rule : config_.rules) {
    if (rule.match == RuleMatch::fallback) ++defaults;
    if (rule.match == RuleMatch::last_user_regex) {
      try {
        patterns_.emplace_back(std::regex(rule.pattern, std::regex::ECMAScript));
      } catch (const std::regex_error& e) {
        throw Error(ErrorCode::invalid_config, "bad regex '" + rule.pattern + "': " + e.what());
      }
    } else {
      patterns_.emplace_back(std::nullopt);
    }
  }
  if (defaults > 1) {
    throw Error(ErrorCode::invalid_config, "scripted backend '" + config_.name +
                                               "' has more than one default rule");
  }
}

std::string ScriptedBackend::complete(const CompletionRequest& request) const {
  const std::size_t user_turns = count_user_messages(request);
  const std::string last_user = last_user_message(request);
  for (std::size_t i = 0; i < config_.rules.size(); ++i) {
    const auto& rule = config_.rules[i];
    bool hit = false;
    switch (rule.match) {
      case RuleMatch::turn_index: hit = rule.turn_index == user_turns; break;
      case RuleMatch::last_user_regex: hit = std::regex_search(last_user, *patterns_[i]); break;
      case RuleMatch::fallback: hit = true; break;
    }
    if (!hit) continue;
    if (rule.delay > std::chrono::milliseconds{0}) {
      if (rule.delay >= config_.timeout) {
        std::this_thread::sleep_for(config_.timeout);
        throw Error(ErrorCode::backend_timeout, "scripted backend '" + config_.name +
                                                    "' exceeded its deadline");
      }
      std::this_thread::sleep_for(rule.delay);
    }
    if (rule.fail_status) throw BackendHttpError(*rule.fail_status, rule.response);
    return substitute_all(rule.response, kLastUserPlaceholder, last_user);
  }
  throw BackendHttpError(404, "no scripted rule matched");
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.name.empty()) throw Error(ErrorCode::invalid_config, "http backend needs a name");
  if (config_.base_url.empty()) {
    throw Error(ErrorCode::invalid_config, "http backend '" + config_.name + "' has no base_url");
  }
  if (config_.model.empty()) {
    throw Error(ErrorCode::invalid_config, "http backend '" + config_.name + "' has no model");
  }
  if (config_.path.empty()) {
    config_.path = config_.style == WireStyle::openai ? "/v1/chat/completions"
                                                      : "/v1beta/models/{model}:generateContent";
  }
  if (config_.response_text_pointer.empty()) {
    config_.response_text_pointer = config_.style == WireStyle::openai
                                        ? "/choices/0/message/content"
                                        : "/candidates/0/content/parts/0/text";
  }
  try {
    (void)Json::json_pointer(config_.response_text_pointer);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("bad response_text_pointer: ") + e.what());
  }
}

Json HttpBackend::build_payload(const CompletionRequest& request) const {
  Json payload;
  if (config_.style == WireStyle::openai) {
    Json messages = Json::array();
    if (!request.system_prompt.empty()) {
      messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
    }
    for (const auto& m : request.messages) {
      messages.push_back(
          {{"role", m.speaker == Speaker::agent ? "assistant" : "user"}, {"content", m.text}});
    }
    payload = {{"model", config_.model},
               {"messages", std::move(messages)},
               {"temperature", request.temperature},
               {"max_tokens", request.max_output_tokens}};
  } else {
    Json contents = Json::array();
    for (const auto& m : request.messages) {
      contents.push_back({{"role", m.speaker == Speaker::agent ? "model" : "user"},
                          {"parts", Json::array({{{"text", m.text}}})}});
    }
    payload = {{"contents", std::move(contents)},
               {"generationConfig",
                {{"temperature", request.temperature},
                 {"maxOutputTokens", request.max_output_tokens}}}};
    if (!request.system_prompt.empty()) {
      payload["systemInstruction"] = {{"parts", Json::array({{{"text", request.system_prompt}}})}};
    }
  }
  payload.merge_patch(config_.extra_body);
  return payload;
}

std::string HttpBackend::parse_response(const std::string& body) const {
  Json doc = Json::parse(body, nullptr, false);
  const Json::json_pointer ptr(config_.response_text_pointer);
  if (doc.is_discarded() || !doc.contains(ptr) || !doc.at(ptr).is_string()) {
    throw BackendHttpError(200, "response missing text at " + config_.response_text_pointer +
                                    ": " + excerpt(body));
  }
  return doc.at(ptr).get<std::string>();
}

std::string HttpBackend::complete(const CompletionRequest& request) const {
  httplib::Headers headers;
  if (!config_.auth_env.empty()) {
    const char* token = std::getenv(config_.auth_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw Error(ErrorCode::invalid_config,
                  "environment variable " + config_.auth_env + " is not set");
    }
    headers.emplace(config_.auth_header, config_.auth_prefix + token);
  }
  std::string path = config_.path;
  if (auto pos = path.find("{model}"); pos != std::string::npos) {
    path.replace(pos, 7, config_.model);
  }
  const std::string body = build_payload(request).dump();

  httplib::Client client(config_.base_url);
  const auto timeout_us =
      std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout).count();
  client.set_connection_timeout(0, timeout_us);
  client.set_read_timeout(0, timeout_us);
  client.set_write_timeout(0, timeout_us);

  const auto started = std::chrono::steady_clock::now();
  for (int attempt = 0;; ++attempt) {
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      const auto elapsed = std::chrono::steady_clock::now() - started;
      if (elapsed >= config_.timeout || res.error() == httplib::Error::ConnectionTimeout) {
        throw Error(ErrorCode::backend_timeout,
                    "backend '" + config_.name + "' timed out after " +
                        std::to_string(config_.timeout.count()) + " ms");
      }
      if (attempt == 0) {
        spdlog::warn("backend {}: transport error ({}), retrying", config_.name,
                     httplib::to_string(res.error()));
        std::this_thread::sleep_for(config_.retry_backoff);
        continue;
      }
      throw Error(ErrorCode::backend_transport,
                  "backend '" + config_.name + "': " + httplib::to_string(res.error()));
    }
    if (res->status >= 200 && res->status < 300) return parse_response(res->body);
    if (res->status >= 500 && attempt == 0) {
      spdlog::warn("backend {}: HTTP {}, retrying", config_.name, res->status);
      std::this_thread::sleep_for(config_.retry_backoff);
      continue;
    }
    throw BackendHttpError(res->status, excerpt(res->body));
  }
}

// ---------------------------------------------------------------------------
// Gateway

std::string Gateway::register_backend(const BackendConfig& config) {
  return std::visit(
      [this](const auto& c) -> std::string {
        using T = std::decay_t<decltype(c)>;
        std::shared_ptr<const Backend> backend;
        if constexpr (std::is_same_v<T, HttpBackendConfig>) {
          backend = std::make_shared<HttpBackend>(c);
        } else {
          backend = std::make_shared<ScriptedBackend>(c);
        }
        register_backend(c.name, std::move(backend));
        return c.name;
      },
      config);
}

void Gateway::register_backend(const std::string& id, std::shared_ptr<const Backend> backend) {
  if (id.empty() || !backend) throw Error(ErrorCode::invalid_config, "backend needs an id");
  Entry entry{std::move(backend), std::make_shared<std::atomic<BackendHealth>>(BackendHealth::unknown)};
  std::lock_guard lock(mutex_);
  backends_.insert_or_assign(id, std::move(entry));
}

Gateway::Entry Gateway::lookup(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = backends_.find(id);
  if (it == backends_.end()) {
    throw Error(ErrorCode::unknown_backend, "unknown backend '" + id + "'");
  }
  return it->second;
}

CompletionResult Gateway::complete(const CompletionRequest& request) const {
  const Entry entry = lookup(request.backend_id);
  const auto started = std::chrono::steady_clock::now();
  try {
    CompletionResult result;
    result.text = sanitize_utf8(entry.backend->complete(request));
    result.backend_id = request.backend_id;
    result.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - started)
                            .count();
    result.token_estimate = estimate_tokens(result.text);
    entry.health->store(BackendHealth::ok);
    return result;
  } catch (const Error& e) {
    entry.health->store(BackendHealth::degraded);
    spdlog::warn("backend {} failed: {}", request.backend_id, e.what());
    throw;
  }
}

bool Gateway::has_backend(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return backends_.count(id) != 0;
}

std::string Gateway::model_id(const std::string& id) const {
  return lookup(id).backend->model_id();
}

std::vector<BackendStatus> Gateway::status() const {
  std::lock_guard lock(mutex_);
  std::vector<BackendStatus> out;
  for (const auto& [id, entry] : backends_) {
    out.push_back({id, entry.backend->model_id(), entry.health->load()});
  }
  return out;
}

}  // namespace casekit
