#include <gtest/gtest.h>

#include <random>

#include "casekit/error.hpp"
#include "casekit/safety.hpp"
#include "test_support.hpp"

namespace casekit {
namespace {

const SafetyPolicySet& policies() {
  static const SafetyPolicySet p = SafetyPolicySet::defaults();
  return p;
}

void expect_verdict(const SafetyVerdict& v, Tier tier, std::vector<std::string> categories, bool stop) {
  EXPECT_EQ(v.tier, tier);
  EXPECT_EQ(v.categories, categories);
  EXPECT_EQ(v.user_wants_to_stop, stop);
  EXPECT_EQ(v.policy_version, policies().version());
}

TEST(ParseVerdict, CleanVerdicts) {
  expect_verdict(parse_verdict(R"({"tier":"NONE"})", policies()), Tier::none, {}, false);
  expect_verdict(parse_verdict(R"({"tier":"NONE","stop":false})", policies()), Tier::none, {}, false);
  expect_verdict(parse_verdict(R"({"tier":"none","stop":true})", policies()), Tier::none, {}, true);
  expect_verdict(parse_verdict(R"({"tier":"NONE","user_wants_to_stop":true,"categories":[]})", policies()),
                 Tier::none, {}, true);
}

TEST(ParseVerdict, EgregiousPassThroughWithNoise) {
  const auto v = parse_verdict("Verdict:\n```json\n{\"tier\":\"EGREGIOUS\",\"categories\":[\"hate_speech\"]}\n```",
                               policies());
  expect_verdict(v, Tier::egregious, {"hate_speech"}, false);
  EXPECT_NE(v.raw_model_text.find("Verdict"), std::string::npos);
}

TEST(ParseVerdict, UnknownSensitiveCategoryBecomesParseFailure) {
  expect_verdict(parse_verdict(R"({"tier":"SENSITIVE","categories":["zzz"]})", policies()),
                 Tier::sensitive, {"parse_failure"}, false);
  expect_verdict(parse_verdict(R"({"tier":"SENSITIVE","categories":["zzz","off_topic"]})", policies()),
                 Tier::sensitive, {"off_topic"}, false);
}

TEST(ParseVerdict, EgregiousWithoutEgregiousCategoryIsDowngraded) {
  expect_verdict(parse_verdict(R"({"tier":"EGREGIOUS","categories":["zzz"]})", policies()),
                 Tier::sensitive, {"parse_failure"}, false);
  expect_verdict(parse_verdict(R"({"tier":"EGREGIOUS","categories":["off_topic"]})", policies()),
                 Tier::sensitive, {"off_topic"}, false);
  expect_verdict(parse_verdict(R"({"tier":"EGREGIOUS","categories":["off_topic","harassment"]})", policies()),
                 Tier::egregious, {"harassment"}, false);
}

TEST(ParseVerdict, SensitiveKeepsEgregiousIdsItNamed) {
  expect_verdict(parse_verdict(R"({"tier":"SENSITIVE","categories":["harassment","refund_promise","refund_promise"]})",
                               policies()),
                 Tier::sensitive, {"refund_promise", "harassment"}, false);
}

TEST(ParseVerdict, ContradictionsAndMalformedOutputFailClosed) {
  const char* corpus[] = {
      "garbled ###",
      "",
      "{",
      "[]",
      R"({"categories":[]})",
      R"({"tier":"MAYBE"})",
      R"({"tier":3})",
      R"({"tier":"NONE","categories":["hate_speech"]})",
      R"({"tier":"SENSITIVE","categories":"off_topic"})",
      R"({"tier":"SENSITIVE","categories":[1]})",
      R"({"tier":"NONE","stop":"yes"})",
      "tier: NONE",
      "\xff\xfe{\"tier\"",
  };
  for (const char* raw : corpus) {
    const auto v = parse_verdict(raw, policies());
    EXPECT_EQ(v.tier, Tier::sensitive) << raw;
    EXPECT_EQ(v.categories, std::vector<std::string>{"parse_failure"}) << raw;
    EXPECT_EQ(v.raw_model_text, raw);
  }
}

TEST(ParseVerdict, NoneWithCategoriesKeepsStopIntent) {
  const auto v = parse_verdict(R"({"tier":"NONE","categories":["off_topic"],"stop":true})", policies());
  EXPECT_EQ(v.tier, Tier::sensitive);
  EXPECT_TRUE(v.user_wants_to_stop);
}

// Fuzz: arbitrary bytes never crash, never yield an unknown category, and
// tier NONE always has no categories.
TEST(ParseVerdict, TotalAndSoundOverRandomInputs) {
  std::mt19937_64 rng(20240611);
  const std::vector<std::string> pieces = {
      "{", "}", "\"tier\"", ":", "\"NONE\"", "\"SENSITIVE\"", "\"EGREGIOUS\"", ",", "\"categories\"",
      "[", "]", "\"hate_speech\"", "\"off_topic\"", "\"zzz\"", "\"stop\"", "true", "false", " ",
      "\\", "\"", "x", "```"};
  for (int i = 0; i < 5000; ++i) {
    std::string raw;
    const int n = static_cast<int>(rng() % 24);
    for (int j = 0; j < n; ++j) {
      if (rng() % 10 == 0) {
        raw.push_back(static_cast<char>(rng() % 256));
      } else {
        raw += pieces[rng() % pieces.size()];
      }
    }
    const auto v = parse_verdict(raw, policies());
    if (v.tier == Tier::none) {
      EXPECT_TRUE(v.categories.empty()) << raw;
    } else {
      EXPECT_FALSE(v.categories.empty()) << raw;
    }
    for (const auto& c : v.categories) EXPECT_TRUE(policies().contains(c)) << c;
    if (v.tier == Tier::egregious) {
      for (const auto& c : v.categories) EXPECT_TRUE(policies().is_egregious(c)) << c;
    }
    EXPECT_EQ(parse_verdict(raw, policies()), v);
  }
}

TEST(Classify, UsesBackendAndPassesThrough) {
  Gateway gw;
  auto backend = std::make_shared<testing::FunctionBackend>(
      [](const CompletionRequest&) { return testing::verdict_text("EGREGIOUS", {"hate_speech"}); });
  gw.register_backend("filter", backend);
  const std::vector<ChatMessage> history = {{Speaker::agent, "What happened?"}};
  const auto v = classify("some abuse", history, policies(), gw, ClassifierSettings{"filter"});
  expect_verdict(v, Tier::egregious, {"hate_speech"}, false);

  ASSERT_EQ(backend->calls(), 1u);
  const auto req = backend->requests()[0];
  EXPECT_EQ(req.backend_id, "filter");
  ASSERT_EQ(req.messages.size(), 2u);
  EXPECT_EQ(req.messages[1].speaker, Speaker::user);
  EXPECT_EQ(req.messages[1].text, "some abuse");
  for (const auto& c : policies().egregious()) EXPECT_NE(req.system_prompt.find(c.id), std::string::npos);
  for (const auto& c : policies().sensitive()) EXPECT_NE(req.system_prompt.find(c.id), std::string::npos);
}

TEST(Classify, BackendFailureFailsClosed) {
  Gateway gw;
  ScriptedRule down = testing::otherwise("unavailable");
  down.fail_status = 503;
  gw.register_backend("filter", testing::scripted({down}));
  expect_verdict(classify("hello", {}, policies(), gw, ClassifierSettings{"filter"}), Tier::sensitive,
                 {"parse_failure"}, false);

  Gateway empty;
  expect_verdict(classify("hello", {}, policies(), empty, ClassifierSettings{"filter"}), Tier::sensitive,
                 {"parse_failure"}, false);
}

TEST(Classify, GarbledReplyFailsClosed) {
  Gateway gw;
  gw.register_backend("filter", testing::scripted({testing::otherwise("garbled ###")}));
  expect_verdict(classify("hello", {}, policies(), gw, ClassifierSettings{"filter"}), Tier::sensitive,
                 {"parse_failure"}, false);
}

TEST(PolicySet, ValidatesIdsAndTiers) {
  auto code_of = [](const char* doc) {
    try {
      SafetyPolicySet::from_json(Json::parse(doc));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::invalid_argument;
  };
  EXPECT_EQ(code_of(R"({"version":"1","egregious":[],"sensitive":[{"id":"a"}]})"), ErrorCode::invalid_config);
  EXPECT_EQ(code_of(R"({"version":"1","egregious":[{"id":"a"}],"sensitive":[{"id":"a"}]})"),
            ErrorCode::invalid_config);
  EXPECT_EQ(code_of(R"({"version":"1","egregious":[{"id":"a"}],"sensitive":[{"id":"parse_failure"}]})"),
            ErrorCode::invalid_config);
  EXPECT_EQ(code_of(R"({"egregious":[{"id":"a"}],"sensitive":[{"id":"b"}]})"), ErrorCode::invalid_config);

  const auto p = SafetyPolicySet::from_json(
      Json::parse(R"({"version":2,"egregious":[{"id":"a","name":"A"}],"sensitive":[{"id":"b"}]})"));
  EXPECT_EQ(p.version(), "2");
  EXPECT_TRUE(p.is_egregious("a"));
  EXPECT_TRUE(p.is_sensitive("b"));
  EXPECT_TRUE(p.is_sensitive("parse_failure"));
  EXPECT_FALSE(p.contains("c"));
}

TEST(PolicySet, LoadsFixtureFile) {
  const auto p = SafetyPolicySet::load(testing::fixture_path("policies.yaml"));
  EXPECT_EQ(p.version(), "fixture-policies-1");
  EXPECT_TRUE(p.is_egregious("hate_speech"));
  EXPECT_TRUE(p.is_sensitive("refund_promise"));
}

TEST(VerdictJson, RoundTrips) {
  const auto v = parse_verdict(R"({"tier":"SENSITIVE","categories":["off_topic"],"stop":true})", policies());
  EXPECT_EQ(verdict_from_json(Json::parse(to_json(v).dump())), v);
}

}  // namespace
}  // namespace casekit
