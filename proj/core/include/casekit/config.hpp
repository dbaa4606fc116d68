#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "casekit/evalkit.hpp"
#include "casekit/extractor.hpp"
#include "casekit/llm_gateway.hpp"
#include "casekit/orchestrator.hpp"
#include "casekit/safety.hpp"
#include "casekit/store.hpp"

namespace casekit {

struct ServerSettings {
  std::string addr = "127.0.0.1:8080";
  std::string admin_token_env = "CASE_ADMIN_TOKEN";
  std::vector<std::string> cors_origins;  // empty: no CORS headers
  std::chrono::milliseconds expiry_interval{std::chrono::seconds{60}};
  std::size_t worker_threads = 8;
};

struct AppConfig {
  std::string config_version = "dev";
  std::filesystem::path base_dir;
  std::vector<BackendConfig> backends;
  OrchestratorConfig orchestrator;
  SafetyPolicySet policies = SafetyPolicySet::defaults();
  ExtractionSchema schema = ExtractionSchema::defaults();
  ExtractorSettings extractor;
  std::optional<std::filesystem::path> golden_path;  // shot pool for extraction
  std::size_t shots_k = 8;
  std::uint64_t shots_seed = 0;
  RaterSettings rater;
  Rubric rubric;
  std::filesystem::path db_path = "case.db";
  int max_attempts = 5;
  std::chrono::milliseconds claim_lease{std::chrono::minutes{10}};
  ServerSettings server;

  StoreOptions store_options(NowFn now = system_now) const;
};

// Relative file references resolve against `base_dir`. Throws
// Error(invalid_config).
AppConfig app_config_from_json(const Json& doc, const std::filesystem::path& base_dir);
AppConfig load_app_config(const std::filesystem::path& path);

// Applies CASE_DB and CASE_HTTP_ADDR when set.
void apply_environment(AppConfig& config);

void register_backends(Gateway& gateway, const AppConfig& config);

// Loads the golden pool and picks shots_k shots; empty when no golden file is
// configured.
std::vector<GoldenExample> load_configured_shots(const AppConfig& config);

}  // namespace casekit
