#include "casekit/config.hpp"

#include <cstdlib>
#include <set>

#include "casekit/error.hpp"

namespace casekit {
namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& file) {
  std::filesystem::path p = file;
  return p.is_relative() ? base / p : p;
}

// A section is either inline or a string naming a file to load.
Json section(const Json& doc, const char* key, const std::filesystem::path& base) {
  if (!doc.contains(key)) return nullptr;
  const Json& v = doc.at(key);
  if (v.is_string()) return load_document(resolve(base, v.get<std::string>()));
  return v;
}

template <typename T>
void read_into(const Json& doc, const char* key, T& out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::invalid_config, std::string("bad value for '") + key + "'");
  }
}

std::string backend_name(const BackendConfig& config) {
  return std::visit([](const auto& c) { return c.name; }, config);
}

}  // namespace

StoreOptions AppConfig::store_options(NowFn now) const {
  StoreOptions o;
  o.max_attempts = max_attempts;
  o.claim_lease = claim_lease;
  o.now = std::move(now);
  return o;
}

AppConfig app_config_from_json(const Json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw Error(ErrorCode::invalid_config, "config must be an object");
  AppConfig c;
  c.base_dir = base_dir;
  read_into(doc, "config_version", c.config_version);

  std::set<std::string> names;
  for (const auto& b : doc.value("backends", Json::array())) {
    c.backends.push_back(parse_backend_config(b, base_dir));
    const std::string name = backend_name(c.backends.back());
    if (name.empty()) throw Error(ErrorCode::invalid_config, "every backend needs a name");
    if (!names.insert(name).second) {
      throw Error(ErrorCode::invalid_config, "duplicate backend name " + name);
    }
  }

  c.orchestrator = orchestrator_config_from_json(section(doc, "orchestrator", base_dir));
  c.orchestrator.config_version = c.config_version;
  if (Json p = section(doc, "policies", base_dir); !p.is_null()) {
    c.policies = SafetyPolicySet::from_json(p);
  }
  if (Json s = section(doc, "schema", base_dir); !s.is_null()) {
    c.schema = ExtractionSchema::from_json(s);
  }
  if (Json r = section(doc, "rubric", base_dir); !r.is_null()) c.rubric = Rubric::from_json(r);

  if (doc.contains("extractor")) {
    const Json& e = doc.at("extractor");
    read_into(e, "backend", c.extractor.backend_id);
    read_into(e, "temperature", c.extractor.temperature);
    read_into(e, "max_output_tokens", c.extractor.max_output_tokens);
    read_into(e, "shots_k", c.shots_k);
    read_into(e, "seed", c.shots_seed);
    read_into(e, "max_attempts", c.max_attempts);
    if (e.contains("golden")) {
      std::string golden;
      read_into(e, "golden", golden);
      c.golden_path = resolve(base_dir, golden);
    }
  }
  if (doc.contains("rater")) {
    const Json& r = doc.at("rater");
    read_into(r, "backend", c.rater.backend_id);
    read_into(r, "temperature", c.rater.temperature);
    read_into(r, "max_output_tokens", c.rater.max_output_tokens);
  }
  if (doc.contains("store")) {
    const Json& s = doc.at("store");
    if (s.contains("path")) {
      std::string path;
      read_into(s, "path", path);
      c.db_path = resolve(base_dir, path);
    }
    if (s.contains("claim_lease_s")) {
      std::int64_t lease = 0;
      read_into(s, "claim_lease_s", lease);
      c.claim_lease = std::chrono::seconds{lease};
    }
  }
  if (doc.contains("server")) {
    const Json& s = doc.at("server");
    read_into(s, "addr", c.server.addr);
    read_into(s, "admin_token_env", c.server.admin_token_env);
    read_into(s, "cors_origins", c.server.cors_origins);
    read_into(s, "worker_threads", c.server.worker_threads);
    if (s.contains("expiry_interval_s")) {
      std::int64_t interval = 0;
      read_into(s, "expiry_interval_s", interval);
      c.server.expiry_interval = std::chrono::seconds{interval};
    }
  }
  if (c.claim_lease.count() <= 0) throw Error(ErrorCode::invalid_config, "claim_lease_s must be positive");
  if (c.max_attempts < 1) throw Error(ErrorCode::invalid_config, "max_attempts must be >= 1");
  if (c.server.expiry_interval.count() <= 0) {
    throw Error(ErrorCode::invalid_config, "expiry_interval_s must be positive");
  }
  return c;
}

AppConfig load_app_config(const std::filesystem::path& path) {
  return app_config_from_json(load_document(path), path.parent_path());
}

void apply_environment(AppConfig& config) {
  if (const char* db = std::getenv("CASE_DB"); db && *db) config.db_path = db;
  if (const char* addr = std::getenv("CASE_HTTP_ADDR"); addr && *addr) config.server.addr = addr;
}

void register_backends(Gateway& gateway, const AppConfig& config) {
  for (const auto& b : config.backends) gateway.register_backend(b);
}

std::vector<GoldenExample> load_configured_shots(const AppConfig& config) {
  if (!config.golden_path) return {};
  const auto pool = filter_split(load_golden(*config.golden_path, config.schema), GoldenSplit::shots);
  const ShotSet picked = select_shots(pool, config.shots_k, config.shots_seed);
  std::vector<GoldenExample> out;
  for (const auto& id : picked.example_ids) {
    for (const auto& g : pool) {
      if (g.example_id == id) out.push_back(g);
    }
  }
  return out;
}

}  // namespace casekit
