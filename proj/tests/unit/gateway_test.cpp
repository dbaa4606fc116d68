#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "casekit/error.hpp"
#include "casekit/llm_gateway.hpp"
#include "test_support.hpp"

namespace casekit {
namespace {

using testing::at_turn;
using testing::otherwise;
using testing::when;

CompletionRequest request_with_users(std::size_t users, const std::string& backend = "test") {
  CompletionRequest r;
  r.backend_id = backend;
  r.messages.push_back({Speaker::agent, "opening"});
  for (std::size_t i = 0; i < users; ++i) {
    r.messages.push_back({Speaker::user, "reply " + std::to_string(i)});
    r.messages.push_back({Speaker::agent, "question"});
  }
  if (users) r.messages.pop_back();
  return r;
}

ScriptedBackendConfig scripted_config(std::string name, std::vector<ScriptedRule> rules) {
  ScriptedBackendConfig c;
  c.name = std::move(name);
  c.rules = std::move(rules);
  return c;
}

ErrorCode error_code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

TEST(ScriptedBackend, DefaultRuleAnswersEverything) {
  Gateway gw;
  EXPECT_EQ(gw.register_backend(scripted_config("test", {otherwise("OK")})), "test");
  EXPECT_EQ(gw.complete(request_with_users(0)).text, "OK");
  EXPECT_EQ(gw.complete(request_with_users(5)).text, "OK");
}

TEST(ScriptedBackend, TurnIndexCountsUserMessagesFirstMatchWins) {
  Gateway gw;
  gw.register_backend(scripted_config("test", {at_turn(0, "Q1"), otherwise("Q2"), at_turn(1, "never")}));
  EXPECT_EQ(gw.complete(request_with_users(0)).text, "Q1");
  EXPECT_EQ(gw.complete(request_with_users(1)).text, "Q2");
}

TEST(ScriptedBackend, RegexOnLastUserMessageAndEchoPlaceholder) {
  Gateway gw;
  gw.register_backend(
      scripted_config("test", {when("refund", "no refunds"), otherwise("you said: {{last_user}}")}));
  CompletionRequest r = request_with_users(0);
  r.messages.push_back({Speaker::user, "please refund me"});
  EXPECT_EQ(gw.complete(r).text, "no refunds");
  r.messages.back().text = "hello";
  EXPECT_EQ(gw.complete(r).text, "you said: hello");
}

TEST(ScriptedBackend, IsPureOverRepeatedAndConcurrentCalls) {
  Gateway gw;
  gw.register_backend(scripted_config("a", {at_turn(1, "A1"), otherwise("A")}));
  gw.register_backend(scripted_config("b", {at_turn(1, "B1"), otherwise("B")}));
  std::atomic<int> mismatches{0};
  std::vector<std::jthread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 200; ++i) {
        const bool use_a = (t + i) % 2 == 0;
        const auto users = static_cast<std::size_t>(i % 3);
        const auto text = gw.complete(request_with_users(users, use_a ? "a" : "b")).text;
        const std::string want = std::string(use_a ? "A" : "B") + (users == 1 ? "1" : "");
        if (text != want) ++mismatches;
      }
    });
  }
  threads.clear();
  EXPECT_EQ(mismatches.load(), 0);
}

TEST(ScriptedBackend, FailStatusAndNoMatchSurfaceAsHttpErrors) {
  Gateway gw;
  ScriptedRule boom = otherwise("upstream exploded");
  boom.fail_status = 503;
  gw.register_backend(scripted_config("boom", {boom}));
  gw.register_backend(scripted_config("picky", {at_turn(7, "x")}));
  try {
    gw.complete(request_with_users(0, "boom"));
    FAIL();
  } catch (const BackendHttpError& e) {
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.body_excerpt(), "upstream exploded");
  }
  EXPECT_THROW(gw.complete(request_with_users(0, "picky")), BackendHttpError);
}

TEST(ScriptedBackend, RejectsTwoDefaultsAndBadRegex) {
  EXPECT_EQ(error_code_of([] { ScriptedBackend(scripted_config("x", {otherwise("a"), otherwise("b")})); }),
            ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] { ScriptedBackend(scripted_config("x", {when("(", "a")})); }),
            ErrorCode::invalid_config);
}

TEST(ScriptedBackend, DelayBeyondDeadlineTimesOutWithinSlack) {
  Gateway gw;
  ScriptedBackendConfig c = scripted_config("slow", {otherwise("late")});
  c.rules[0].delay = std::chrono::hours{1};
  c.timeout = std::chrono::milliseconds{100};
  gw.register_backend(c);
  const auto started = std::chrono::steady_clock::now();
  EXPECT_EQ(error_code_of([&] { gw.complete(request_with_users(0, "slow")); }), ErrorCode::backend_timeout);
  EXPECT_LT(std::chrono::steady_clock::now() - started, std::chrono::seconds{2});
}

TEST(ScriptedConfig, ParsesYamlFileWithAllSelectors) {
  testing::TempDir dir;
  testing::write_text(dir / "rules.yaml",
                      "name: gen\nmodel: m1\ntimeout_ms: 500\nrules:\n"
                      "  - {turn_index: 0, response: first}\n"
                      "  - {regex: 'stop', response: bye, delay_ms: 5}\n"
                      "  - {default: true, response: '{{last_user}}', fail_status: 500}\n");
  const auto c = load_scripted_config(dir / "rules.yaml");
  EXPECT_EQ(c.name, "gen");
  EXPECT_EQ(c.model, "m1");
  EXPECT_EQ(c.timeout, std::chrono::milliseconds{500});
  ASSERT_EQ(c.rules.size(), 3u);
  EXPECT_EQ(c.rules[0].match, RuleMatch::turn_index);
  EXPECT_EQ(c.rules[1].match, RuleMatch::last_user_regex);
  EXPECT_EQ(c.rules[1].delay, std::chrono::milliseconds{5});
  EXPECT_EQ(c.rules[2].fail_status, 500);

  const auto via_file = parse_backend_config(Json{{"kind", "scripted"}, {"file", "rules.yaml"}, {"name", "renamed"}}, dir.path());
  EXPECT_EQ(std::get<ScriptedBackendConfig>(via_file).name, "renamed");
}

TEST(ScriptedConfig, RuleNeedsExactlyOneSelector) {
  EXPECT_EQ(error_code_of([] {
              parse_scripted_config(Json::parse(R"({"name":"x","rules":[{"response":"a"}]})"));
            }),
            ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] {
              parse_scripted_config(Json::parse(
                  R"({"name":"x","rules":[{"turn_index":1,"default":true,"response":"a"}]})"));
            }),
            ErrorCode::invalid_config);
}

TEST(Gateway, UnknownBackend) {
  Gateway gw;
  EXPECT_EQ(error_code_of([&] { gw.complete(request_with_users(0, "x")); }), ErrorCode::unknown_backend);
  EXPECT_FALSE(gw.has_backend("x"));
}

TEST(Gateway, RegisterThenCompleteRoundTripsAndReplacement) {
  Gateway gw;
  gw.register_backend(scripted_config("echo", {otherwise("{{last_user}}")}));
  CompletionRequest r;
  r.backend_id = "echo";
  r.messages = {{Speaker::user, "identity check"}};
  EXPECT_EQ(gw.complete(r).text, "identity check");
  gw.register_backend(scripted_config("echo", {otherwise("replaced")}));
  EXPECT_EQ(gw.complete(r).text, "replaced");
}

TEST(Gateway, ResultCarriesMetadataAndHealthTracksOutcomes) {
  Gateway gw;
  ScriptedRule fail = when("fail", "x");
  fail.fail_status = 500;
  gw.register_backend(scripted_config("svc", {fail, otherwise("twelve chars")}));
  ASSERT_EQ(gw.status().size(), 1u);
  EXPECT_EQ(gw.status()[0].health, BackendHealth::unknown);

  CompletionRequest r;
  r.backend_id = "svc";
  r.messages = {{Speaker::user, "hi"}};
  const auto result = gw.complete(r);
  EXPECT_EQ(result.backend_id, "svc");
  EXPECT_GE(result.latency_ms, 0);
  EXPECT_EQ(result.token_estimate, 3);
  EXPECT_EQ(gw.status()[0].health, BackendHealth::ok);

  r.messages[0].text = "please fail";
  EXPECT_THROW(gw.complete(r), BackendHttpError);
  EXPECT_EQ(gw.status()[0].health, BackendHealth::degraded);
}

TEST(HttpConfig, RejectsEmptyBaseUrlAndInlineTokens) {
  Gateway gw;
  HttpBackendConfig c;
  c.name = "remote";
  c.model = "m";
  EXPECT_EQ(error_code_of([&] { gw.register_backend(c); }), ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] {
              parse_backend_config(Json::parse(
                  R"({"kind":"http","name":"r","base_url":"http://x","model":"m","auth_token":"s3cret"})"));
            }),
            ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] { parse_backend_config(Json::parse(R"({"kind":"grpc"})")); }),
            ErrorCode::invalid_config);
}

// Local chat-completion server for exercising the HTTP backend.
class FakeModelServer {
 public:
  FakeModelServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::jthread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeModelServer() { server_.stop(); }

  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::jthread thread_;
};

HttpBackendConfig http_config(const std::string& url, WireStyle style = WireStyle::openai) {
  HttpBackendConfig c;
  c.name = "remote";
  c.base_url = url;
  c.model = "model-x";
  c.style = style;
  c.retry_backoff = std::chrono::milliseconds{10};
  c.timeout = std::chrono::milliseconds{2000};
  return c;
}

CompletionRequest simple_request() {
  CompletionRequest r;
  r.backend_id = "remote";
  r.system_prompt = "be brief";
  r.messages = {{Speaker::agent, "What happened?"}, {Speaker::user, "I was tricked"}};
  r.temperature = 0.25;
  r.max_output_tokens = 64;
  return r;
}

TEST(HttpBackend, OpenAiStyleRoundTripWithAuthFromEnvironment) {
  FakeModelServer fake;
  std::string seen_auth;
  Json seen_body;
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = Json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Tell me more."}}]})",
                    "application/json");
  });
  ::setenv("CASEKIT_TEST_TOKEN", "tok-123", 1);
  HttpBackendConfig c = http_config(fake.url());
  c.auth_env = "CASEKIT_TEST_TOKEN";
  Gateway gw;
  gw.register_backend(c);
  EXPECT_EQ(gw.complete(simple_request()).text, "Tell me more.");
  EXPECT_EQ(seen_auth, "Bearer tok-123");
  EXPECT_EQ(seen_body.at("model"), "model-x");
  EXPECT_EQ(seen_body.at("max_tokens"), 64);
  ASSERT_EQ(seen_body.at("messages").size(), 3u);
  EXPECT_EQ(seen_body.at("messages")[0].at("role"), "system");
  EXPECT_EQ(seen_body.at("messages")[1].at("role"), "assistant");
  EXPECT_EQ(seen_body.at("messages")[2].at("content"), "I was tricked");
  ::unsetenv("CASEKIT_TEST_TOKEN");
}

TEST(HttpBackend, GeminiStylePathAndPayload) {
  FakeModelServer fake;
  Json seen_body;
  fake.server().Post("/v1beta/models/model-x:generateContent",
                     [&](const httplib::Request& req, httplib::Response& res) {
                       seen_body = Json::parse(req.body);
                       res.set_content(R"({"candidates":[{"content":{"parts":[{"text":"ok"}]}}]})",
                                       "application/json");
                     });
  Gateway gw;
  gw.register_backend(http_config(fake.url(), WireStyle::gemini));
  EXPECT_EQ(gw.complete(simple_request()).text, "ok");
  EXPECT_EQ(seen_body.at("systemInstruction").at("parts")[0].at("text"), "be brief");
  EXPECT_EQ(seen_body.at("contents")[0].at("role"), "model");
  EXPECT_EQ(seen_body.at("generationConfig").at("maxOutputTokens"), 64);
}

TEST(HttpBackend, RetriesOnceOnServerErrorButNotOnClientError) {
  FakeModelServer fake;
  std::atomic<int> calls{0};
  std::atomic<int> status{500};
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (calls++ == 0) {
      res.status = status;
      res.set_content("nope", "text/plain");
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"second time"}}]})", "application/json");
  });
  Gateway gw;
  gw.register_backend(http_config(fake.url()));
  EXPECT_EQ(gw.complete(simple_request()).text, "second time");
  EXPECT_EQ(calls.load(), 2);

  calls = 0;
  status = 400;
  try {
    gw.complete(simple_request());
    FAIL();
  } catch (const BackendHttpError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_EQ(e.body_excerpt(), "nope");
  }
  EXPECT_EQ(calls.load(), 1);
}

TEST(HttpBackend, MissingTextAtPointerIsAnError) {
  FakeModelServer fake;
  fake.server().Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"unexpected": true})", "application/json");
  });
  Gateway gw;
  gw.register_backend(http_config(fake.url()));
  EXPECT_THROW(gw.complete(simple_request()), BackendHttpError);
}

TEST(HttpBackend, SlowServerTimesOut) {
  FakeModelServer fake;
  fake.server().Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds{1500});
    res.set_content(R"({"choices":[{"message":{"content":"late"}}]})", "application/json");
  });
  HttpBackendConfig c = http_config(fake.url());
  c.timeout = std::chrono::milliseconds{200};
  Gateway gw;
  gw.register_backend(c);
  const auto started = std::chrono::steady_clock::now();
  const ErrorCode code = error_code_of([&] { gw.complete(simple_request()); });
  EXPECT_TRUE(code == ErrorCode::backend_timeout || code == ErrorCode::backend_transport)
      << to_string(code);
  EXPECT_LT(std::chrono::steady_clock::now() - started, std::chrono::milliseconds{1400});
}

TEST(HttpBackend, UnreachableHostIsTransportError) {
  HttpBackendConfig c = http_config("http://127.0.0.1:1");
  Gateway gw;
  gw.register_backend(c);
  const ErrorCode code = error_code_of([&] { gw.complete(simple_request()); });
  EXPECT_TRUE(code == ErrorCode::backend_transport || code == ErrorCode::backend_timeout);
  EXPECT_EQ(gw.status()[0].health, BackendHealth::degraded);
}

TEST(CompletionRequestJson, StableFieldOrder) {
  const auto j = to_json(simple_request()).dump();
  EXPECT_EQ(j,
            R"({"backend_id":"remote","system_prompt":"be brief","messages":[{"speaker":"agent","text":"What happened?"},{"speaker":"user","text":"I was tricked"}],"max_output_tokens":64,"temperature":0.25})");
}

}  // namespace
}  // namespace casekit
