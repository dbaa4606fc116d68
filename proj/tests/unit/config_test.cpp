#include <gtest/gtest.h>

#include <cstdlib>

#include "casekit/config.hpp"
#include "casekit/error.hpp"
#include "test_support.hpp"

namespace casekit {
namespace {

using namespace std::chrono_literals;

ErrorCode error_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~ScopedEnv() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

TEST(AppConfig, DefaultsFromAnEmptyDocument) {
  const auto c = app_config_from_json(Json::object(), "/base");
  EXPECT_EQ(c.config_version, "dev");
  EXPECT_TRUE(c.backends.empty());
  EXPECT_EQ(c.db_path, "case.db");
  EXPECT_EQ(c.shots_k, 8u);
  EXPECT_EQ(c.server.addr, "127.0.0.1:8080");
  EXPECT_EQ(c.golden_path, std::nullopt);
  EXPECT_TRUE(load_configured_shots(c).empty());
}

TEST(AppConfig, YamlWithRelativeFiles) {
  testing::TempDir dir;
  testing::write_text(dir / "gen.yaml", "name: ignored\nrules:\n  - {default: true, response: hi}\n");
  testing::write_text(dir / "orch.yaml", "opening_question: Hello?\nmax_agent_questions: 4\n");
  testing::write_text(dir / "policies.yaml", testing::read_text(testing::fixture_path("policies.yaml")));
  testing::write_text(dir / "case.yaml",
                      "config_version: prod-7\n"
                      "backends:\n"
                      "  - {name: generator, kind: scripted, file: gen.yaml}\n"
                      "  - {name: filter, kind: scripted, rules: [{default: true, response: '{\"tier\":\"NONE\"}'}]}\n"
                      "orchestrator: orch.yaml\n"
                      "policies: policies.yaml\n"
                      "rubric: {version: r2}\n"
                      "extractor: {backend: ext, shots_k: 2, seed: 9, max_attempts: 3, golden: shots.ndjson}\n"
                      "rater: {backend: judge}\n"
                      "store: {path: data/case.db, claim_lease_s: 30}\n"
                      "server: {addr: '0.0.0.0:9000', cors_origins: ['*'], worker_threads: 2, expiry_interval_s: 5}\n");
  const auto c = load_app_config(dir / "case.yaml");
  EXPECT_EQ(c.config_version, "prod-7");
  EXPECT_EQ(c.orchestrator.config_version, "prod-7");
  EXPECT_EQ(c.orchestrator.opening_question, "Hello?");
  EXPECT_EQ(c.orchestrator.max_agent_questions, 4u);
  EXPECT_EQ(c.policies.version(), "fixture-policies-1");
  EXPECT_EQ(c.rubric.version, "r2");
  EXPECT_EQ(c.extractor.backend_id, "ext");
  EXPECT_EQ(c.shots_k, 2u);
  EXPECT_EQ(c.shots_seed, 9u);
  EXPECT_EQ(c.max_attempts, 3);
  EXPECT_EQ(c.golden_path, dir / "shots.ndjson");
  EXPECT_EQ(c.rater.backend_id, "judge");
  EXPECT_EQ(c.db_path, dir / "data/case.db");
  EXPECT_EQ(c.claim_lease, 30s);
  EXPECT_EQ(c.server.addr, "0.0.0.0:9000");
  EXPECT_EQ(c.server.cors_origins, std::vector<std::string>{"*"});
  EXPECT_EQ(c.server.expiry_interval, 5s);
  EXPECT_EQ(c.store_options().max_attempts, 3);

  Gateway gw;
  register_backends(gw, c);
  EXPECT_EQ(gw.complete(CompletionRequest{"", {{Speaker::user, "x"}}, 16, 0.0, "generator"}).text, "hi");
  EXPECT_TRUE(gw.has_backend("filter"));
}

TEST(AppConfig, EnvironmentOverrides) {
  auto c = app_config_from_json(Json::object(), "/base");
  {
    ScopedEnv db("CASE_DB", "/tmp/other.db");
    ScopedEnv addr("CASE_HTTP_ADDR", "127.0.0.1:7777");
    apply_environment(c);
  }
  EXPECT_EQ(c.db_path, "/tmp/other.db");
  EXPECT_EQ(c.server.addr, "127.0.0.1:7777");
  ScopedEnv empty("CASE_DB", "");
  apply_environment(c);
  EXPECT_EQ(c.db_path, "/tmp/other.db");
}

TEST(AppConfig, Errors) {
  auto code = [](const char* text) {
    return error_code_of([&] { app_config_from_json(Json::parse(text), "/base"); });
  };
  EXPECT_EQ(code(R"({"backends":[{"name":"a","kind":"scripted","rules":[{"default":true,"response":"x"}]},
                                 {"name":"a","kind":"scripted","rules":[{"default":true,"response":"y"}]}]})"),
            ErrorCode::invalid_config);
  EXPECT_EQ(code(R"({"backends":[{"name":"a","kind":"telepathy"}]})"), ErrorCode::invalid_config);
  EXPECT_EQ(code(R"({"extractor":{"max_attempts":0}})"), ErrorCode::invalid_config);
  EXPECT_EQ(code(R"({"extractor":{"golden":5}})"), ErrorCode::invalid_config);
  EXPECT_EQ(code(R"({"store":{"claim_lease_s":"soon"}})"), ErrorCode::invalid_config);
  EXPECT_EQ(code(R"({"server":{"expiry_interval_s":0}})"), ErrorCode::invalid_config);
  EXPECT_EQ(code(R"({"orchestrator":{"max_agent_questions":0}})"), ErrorCode::invalid_config);
  EXPECT_EQ(code("[]"), ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] { load_app_config("/nonexistent/case.yaml"); }), ErrorCode::io_error);
}

TEST(AppConfig, ConfiguredShotsComeFromTheShotsSplit) {
  const auto c = load_app_config(testing::fixture_path("interviews/scam/config.yaml"));
  const auto shots = load_configured_shots(c);
  ASSERT_EQ(shots.size(), 2u);
  for (const auto& s : shots) EXPECT_EQ(s.split, GoldenSplit::shots);
  EXPECT_EQ(load_configured_shots(c)[0].example_id, shots[0].example_id);
}

}  // namespace
}  // namespace casekit
