#include <gtest/gtest.h>

#include <random>
#include <set>

#include "casekit/error.hpp"
#include "casekit/evalkit.hpp"
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

ScamReport labels(const std::string& mo) {
  ScamReport r;
  r.is_user_scammed = mo != kNotScam;
  r.possible_scam_mo = mo;
  r.conversation_summary = "s";
  return r;
}

GoldenExample example(const std::string& id, const std::string& mo, GoldenSplit split = GoldenSplit::holdout) {
  GoldenExample g;
  g.example_id = id;
  g.labels = labels(mo);
  g.split = split;
  return g;
}

// ---------------------------------------------------------------------------
// Extractor scoring

TEST(ScoreExtractor, PerfectPredictionsScoreOne) {
  std::vector<GoldenExample> golden = {example("a", "FAKE_LOAN"), example("b", "NOT_SCAM"),
                                       example("c", "FAKE_JOBS")};
  PredictionMap preds;
  for (const auto& g : golden) preds[g.example_id] = g.labels;
  const auto m = score_extractor(preds, golden);
  EXPECT_EQ(m.binary.accuracy, 1.0);
  EXPECT_EQ(m.binary.precision, 1.0);
  EXPECT_EQ(m.binary.recall, 1.0);
  EXPECT_EQ(m.multiclass.accuracy, 1.0);
  EXPECT_EQ(m.n_scored, 3u);
  EXPECT_EQ(m.n_failed, 0u);
}

TEST(ScoreExtractor, BinaryCounts) {
  std::vector<GoldenExample> golden;
  PredictionMap preds;
  auto add = [&](const std::string& truth, const std::string& pred) {
    const std::string id = "e" + std::to_string(golden.size());
    golden.push_back(example(id, truth));
    preds[id] = labels(pred);
  };
  for (int i = 0; i < 3; ++i) add("FAKE_LOAN", "FAKE_LOAN");  // TP
  add("NOT_SCAM", "FAKE_LOAN");                              // FP
  for (int i = 0; i < 5; ++i) add("NOT_SCAM", "NOT_SCAM");  // TN
  add("FAKE_LOAN", "NOT_SCAM");                              // FN
  const auto m = score_extractor(preds, golden);
  EXPECT_EQ(m.binary.tp, 3u);
  EXPECT_EQ(m.binary.fp, 1u);
  EXPECT_EQ(m.binary.tn, 5u);
  EXPECT_EQ(m.binary.fn, 1u);
  EXPECT_DOUBLE_EQ(*m.binary.accuracy, 0.8);
  EXPECT_DOUBLE_EQ(*m.binary.precision, 0.75);
  EXPECT_DOUBLE_EQ(*m.binary.recall, 0.75);
}

TEST(ScoreExtractor, MulticlassOverGroundTruthScams) {
  std::vector<GoldenExample> golden = {example("1", "FAKE_ADS"), example("2", "FAKE_ADS"),
                                       example("3", "FAKE_ADS"), example("4", "FAKE_JOBS"),
                                       example("5", "NOT_SCAM")};
  PredictionMap preds = {{"1", labels("FAKE_ADS")}, {"2", labels("FAKE_ADS")}, {"3", labels("FAKE_JOBS")},
                         {"4", labels("FAKE_JOBS")}, {"5", labels("FAKE_ADS")}};
  const auto m = score_extractor(preds, golden);
  EXPECT_EQ(m.multiclass.n, 4u);
  EXPECT_DOUBLE_EQ(*m.multiclass.accuracy, 0.75);
  EXPECT_EQ(m.multiclass.confusion.at("FAKE_ADS").at("FAKE_JOBS"), 1u);
  EXPECT_FALSE(m.multiclass.confusion.contains("NOT_SCAM"));
  EXPECT_DOUBLE_EQ(*m.multiclass.per_class.at("FAKE_JOBS").precision, 0.5);
  EXPECT_DOUBLE_EQ(*m.multiclass.per_class.at("FAKE_ADS").recall, 2.0 / 3.0);
  EXPECT_EQ(m.multiclass.per_class.at("FAKE_ADS").support, 3u);
}

TEST(ScoreExtractor, UndefinedRatiosAreNull) {
  std::vector<GoldenExample> golden = {example("a", "NOT_SCAM")};
  const auto m = score_extractor({{"a", labels("NOT_SCAM")}}, golden);
  EXPECT_EQ(m.binary.precision, std::nullopt);
  EXPECT_EQ(m.binary.recall, std::nullopt);
  EXPECT_EQ(m.multiclass.accuracy, std::nullopt);
  EXPECT_TRUE(to_json(m)["binary"]["precision"].is_null());
  EXPECT_NE(render_table(m).find("n/a"), std::string::npos);
}

TEST(ScoreExtractor, FailedExtractionsAreCountedNotScored) {
  std::vector<GoldenExample> golden = {example("a", "FAKE_LOAN"), example("b", "NOT_SCAM"),
                                       example("c", "FAKE_LOAN")};
  const auto m = score_extractor({{"a", labels("FAKE_LOAN")}, {"b", std::nullopt}}, golden);
  EXPECT_EQ(m.n_scored, 1u);
  EXPECT_EQ(m.n_failed, 2u);
  EXPECT_EQ(m.binary.total(), 1u);
}

TEST(ScoreExtractor, Errors) {
  std::vector<GoldenExample> golden = {example("shot", "FAKE_LOAN", GoldenSplit::shots),
                                       example("hold", "NOT_SCAM")};
  EXPECT_EQ(error_code_of([&] { score_extractor({{"shot", labels("FAKE_LOAN")}}, golden); }),
            ErrorCode::shot_leakage);
  EXPECT_EQ(error_code_of([&] { score_extractor({{"nobody", labels("FAKE_LOAN")}}, golden); }),
            ErrorCode::invalid_argument);
  const std::vector<GoldenExample> shots_only = {golden[0]};
  EXPECT_EQ(error_code_of([&] { score_extractor({}, shots_only); }), ErrorCode::empty_holdout);
}

TEST(Golden, LoadsFixtureAndRejectsBadLines) {
  const auto schema = ExtractionSchema::defaults();
  const auto shots = load_golden(testing::fixture_path("interviews/shots.ndjson"), schema);
  ASSERT_EQ(shots.size(), 2u);
  EXPECT_EQ(filter_split(shots, GoldenSplit::shots).size(), 2u);
  EXPECT_TRUE(filter_split(shots, GoldenSplit::holdout).empty());
  EXPECT_EQ(golden_from_json(Json::parse(to_json(shots[0]).dump()), schema).labels, shots[0].labels);

  testing::TempDir dir;
  const std::string line =
      R"({"example_id":"x","split":"holdout","transcript":[],"labels":{"is_user_scammed":false,)"
      R"("possible_scam_mo":"NOT_SCAM","conversation_summary":"ok"}})";
  testing::write_text(dir / "dup.ndjson", line + "\n" + line + "\n");
  EXPECT_EQ(error_code_of([&] { load_golden(dir / "dup.ndjson", schema); }), ErrorCode::invalid_config);
  testing::write_text(dir / "bad.ndjson",
                      R"({"example_id":"y","labels":{"is_user_scammed":true,"possible_scam_mo":"NOT_SCAM",)"
                      R"("conversation_summary":"x"}})"
                      "\n");
  EXPECT_EQ(error_code_of([&] { load_golden(dir / "bad.ndjson", schema); }), ErrorCode::invalid_config);
  testing::write_text(dir / "split.ndjson", R"({"example_id":"z","split":"train","labels":{}})" "\n");
  EXPECT_EQ(error_code_of([&] { load_golden(dir / "split.ndjson", schema); }), ErrorCode::invalid_config);
}

// ---------------------------------------------------------------------------
// Funnel

Session answered(const std::string& id, std::size_t n) {
  std::vector<std::string> texts = {"Q0"};
  for (std::size_t i = 0; i < n; ++i) {
    texts.push_back("a" + std::to_string(i));
    texts.push_back("q" + std::to_string(i + 1));
  }
  return testing::make_session(id, texts);
}

TEST(Funnel, CountsAnsweredQuestions) {
  std::vector<Session> sessions;
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u}) sessions.push_back(answered("s" + std::to_string(n), n));
  const auto f = funnel(sessions);
  EXPECT_EQ(f.total_sessions, 5u);
  EXPECT_DOUBLE_EQ(f.fraction_at_least(3), 0.6);
  EXPECT_DOUBLE_EQ(f.fraction_ge.at(1), 0.8);
  EXPECT_DOUBLE_EQ(f.fraction_ge.at(5), 0.2);
  EXPECT_EQ(f.fraction_ge.size(), 5u);
  EXPECT_DOUBLE_EQ(f.buckets.at(0).fraction, 0.2);
  EXPECT_EQ(to_json(f)["buckets"].size(), 5u);
  EXPECT_NE(render_table(f).find("60.0%"), std::string::npos);
}

TEST(Funnel, EmptyAndUniformPopulations) {
  const auto empty = funnel(std::vector<Session>{});
  EXPECT_EQ(empty.total_sessions, 0u);
  EXPECT_DOUBLE_EQ(empty.fraction_at_least(1), 0.0);
  std::vector<Session> twos = {answered("a", 2), answered("b", 2)};
  const auto f = funnel(twos);
  EXPECT_DOUBLE_EQ(f.fraction_at_least(2), 1.0);
  EXPECT_DOUBLE_EQ(f.fraction_at_least(3), 0.0);
  EXPECT_DOUBLE_EQ(f.fraction_at_least(0), 1.0);
}

TEST(Funnel, OpeningReplyCanBeExcluded) {
  const auto s = answered("a", 3);
  EXPECT_EQ(answered_questions(s), 3u);
  EXPECT_EQ(answered_questions(s, FunnelOptions{false}), 2u);
  // A trailing unanswered user turn still counts as an answer.
  auto active = testing::make_session("b", {"Q0", "u1", "Q1", "u2"}, false);
  EXPECT_EQ(answered_questions(active), 2u);
}

TEST(Funnel, MatchesAnIndependentCountOnRandomSessions) {
  std::mt19937 rng(3);
  std::vector<Session> sessions;
  std::vector<std::size_t> truth;
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = rng() % 21;
    sessions.push_back(answered("r" + std::to_string(i), n));
    truth.push_back(n);
  }
  const auto f = funnel(sessions);
  for (std::size_t k = 1; k <= 20; ++k) {
    const auto count = std::count_if(truth.begin(), truth.end(), [&](std::size_t n) { return n >= k; });
    EXPECT_DOUBLE_EQ(f.fraction_at_least(k), static_cast<double>(count) / 300.0) << k;
  }
}

// ---------------------------------------------------------------------------
// Quality scoring

QualityScore score(const std::string& id, bool t, bool r, bool m, RaterKind kind = RaterKind::human) {
  QualityScore s;
  s.session_id = id;
  s.topic_adherence = t;
  s.user_respect = r;
  s.mo_elicited = m;
  s.rater = kind;
  s.rater_id = kind == RaterKind::human ? "h1" : "model";
  return s;
}

TEST(Calibrate, AgreementPerMetric) {
  std::vector<QualityScore> a = {score("1", true, true, true), score("2", true, false, true),
                                 score("3", false, true, true), score("4", true, true, false)};
  const auto same = calibrate(a, a);
  EXPECT_EQ(same.joined, 4u);
  EXPECT_DOUBLE_EQ(same.topic_adherence, 1.0);
  EXPECT_TRUE(same.disagreements.empty());

  auto h = a;
  h[3].topic_adherence = false;
  const auto r = calibrate(a, h);
  EXPECT_DOUBLE_EQ(r.topic_adherence, 0.75);
  EXPECT_DOUBLE_EQ(r.user_respect, 1.0);
  ASSERT_EQ(r.disagreements.size(), 1u);
  EXPECT_EQ(r.disagreements[0].session_id, "4");
  EXPECT_EQ(r.disagreements[0].metric, "topic_adherence");
}

TEST(Calibrate, OnlyJoinedSessionsCount) {
  std::vector<QualityScore> a = {score("1", true, true, true), score("2", true, true, true)};
  std::vector<QualityScore> h = {score("2", false, true, true), score("9", true, true, true)};
  const auto r = calibrate(a, h);
  EXPECT_EQ(r.joined, 1u);
  EXPECT_DOUBLE_EQ(r.topic_adherence, 0.0);
  std::vector<QualityScore> disjoint = {score("7", true, true, true)};
  EXPECT_EQ(error_code_of([&] { calibrate(a, disjoint); }), ErrorCode::no_overlap);
  std::vector<QualityScore> dup = {score("1", true, true, true), score("1", false, true, true)};
  EXPECT_EQ(error_code_of([&] { calibrate(dup, a); }), ErrorCode::invalid_argument);
}

TEST(QualityScore, JsonRoundTripAndAliases) {
  const auto s = score("x", true, false, true, RaterKind::automatic);
  EXPECT_EQ(quality_score_from_json(Json::parse(to_json(s).dump())), s);
  const auto alias = quality_score_from_json(
      Json::parse(R"({"session_id":"y","topic":"PASS","respect":false,"mo":"fail","rater":{"kind":"human","id":"ann"}})"));
  EXPECT_TRUE(alias.topic_adherence);
  EXPECT_FALSE(alias.user_respect);
  EXPECT_FALSE(alias.mo_elicited);
  EXPECT_EQ(alias.rater_id, "ann");
  EXPECT_EQ(error_code_of([] { quality_score_from_json(Json::parse(R"({"session_id":"z","topic":"maybe"})")); }),
            ErrorCode::invalid_argument);
}

struct RaterHarness {
  Gateway gateway;
  std::shared_ptr<testing::FunctionBackend> backend;
  explicit RaterHarness(testing::FunctionBackend::Fn fn) {
    backend = std::make_shared<testing::FunctionBackend>(std::move(fn), "rater-model");
    gateway.register_backend("rater", backend);
  }
};

TEST(AutoRate, ParsesAllThreeGradesFromOneCompletion) {
  RaterHarness h([](const CompletionRequest&) {
    return std::string(R"(Sure. {"topic":"PASS","respect":"PASS","mo":"FAIL","rationale":"no MO"})");
  });
  const auto s = testing::make_session("s1", {"Q0", "I lost money", "Thanks"});
  const auto r = auto_rate(s, Rubric{}, h.gateway, RaterSettings{});
  ASSERT_TRUE(r.score);
  EXPECT_TRUE(r.score->topic_adherence);
  EXPECT_TRUE(r.score->user_respect);
  EXPECT_FALSE(r.score->mo_elicited);
  EXPECT_EQ(r.score->rater, RaterKind::automatic);
  EXPECT_EQ(r.score->rater_id, "rater-model");
  EXPECT_EQ(r.score->rationale, "no MO");
  EXPECT_FALSE(r.flagged_for_human);
  ASSERT_EQ(h.backend->calls(), 1u);
  const auto req = h.backend->requests()[0];
  EXPECT_NE(to_json(req).dump().find("I lost money"), std::string::npos);
  EXPECT_NE(req.system_prompt.find(Rubric{}.mo_elicited), std::string::npos);
}

TEST(AutoRate, UnparseableReplyIsWithheldAndFlagged) {
  for (const std::string reply : {"I think it went well", R"({"topic":"PASS","respect":"PASS"})",
                                  R"({"topic":"PASS","respect":"PASS","mo":"sort of"})"}) {
    RaterHarness h([&](const CompletionRequest&) { return reply; });
    const auto r = auto_rate(testing::make_session("s", {"Q0", "a", "b"}), Rubric{}, h.gateway, RaterSettings{});
    EXPECT_EQ(r.score, std::nullopt) << reply;
    EXPECT_TRUE(r.flagged_for_human);
    EXPECT_EQ(r.raw_model_text, reply);
  }
  RaterHarness failing([](const CompletionRequest&) -> std::string { throw BackendHttpError(500, "x"); });
  const auto r = auto_rate(testing::make_session("s", {"Q0", "a", "b"}), Rubric{}, failing.gateway, RaterSettings{});
  EXPECT_EQ(r.score, std::nullopt);
  EXPECT_TRUE(r.flagged_for_human);
}

TEST(AutoRate, ActiveSessionsAreRejected) {
  RaterHarness h([](const CompletionRequest&) { return std::string("{}"); });
  EXPECT_EQ(error_code_of([&] {
              auto_rate(testing::make_session("s", {"Q0"}, false), Rubric{}, h.gateway, RaterSettings{});
            }),
            ErrorCode::session_active);
}

TEST(AutoRate, OneCompletionPerSessionInABatch) {
  RaterHarness h([](const CompletionRequest& r) {
    const bool odd = r.messages.back().text.find("odd") != std::string::npos;
    return std::string(R"({"topic":"pass","respect":"pass","mo":")") + (odd ? "fail" : "pass") + "\"}";
  });
  std::size_t mo_pass = 0;
  for (int i = 0; i < 100; ++i) {
    const auto s = testing::make_session("s" + std::to_string(i), {"Q0", i % 2 ? "odd" : "even", "bye"});
    const auto r = auto_rate(s, Rubric{}, h.gateway, RaterSettings{});
    ASSERT_TRUE(r.score);
    mo_pass += r.score->mo_elicited;
  }
  EXPECT_EQ(h.backend->calls(), 100u);
  EXPECT_EQ(mo_pass, 50u);
}

TEST(SampleForHuman, RateBoundsAndStability) {
  std::vector<std::string> ids;
  for (int i = 0; i < 1000; ++i) ids.push_back("session-" + std::to_string(i));
  EXPECT_EQ(sample_for_human(ids, 1.0, "salt"), ids);
  const auto a = sample_for_human(ids, 0.3, "salt");
  EXPECT_EQ(sample_for_human(ids, 0.3, "salt"), a);
  EXPECT_NE(sample_for_human(ids, 0.3, "other"), a);
  // Monotone in rate: a smaller sample is a subset of a larger one.
  const auto small = sample_for_human(ids, 0.1, "salt");
  const std::set<std::string> big(a.begin(), a.end());
  for (const auto& id : small) EXPECT_TRUE(big.contains(id)) << id;
  // Membership does not depend on the rest of the list.
  for (const auto& id : a) EXPECT_EQ(sample_for_human(std::vector<std::string>{id}, 0.3, "salt").size(), 1u);
  for (double bad : {0.0, -0.1, 1.5, std::nan("")}) {
    EXPECT_EQ(error_code_of([&] { sample_for_human(ids, bad, "salt"); }), ErrorCode::invalid_rate);
  }
}

TEST(SampleForHuman, InclusionRateIsClose) {
  std::vector<std::string> ids;
  for (int i = 0; i < 100000; ++i) ids.push_back("id-" + std::to_string(i));
  const double got = static_cast<double>(sample_for_human(ids, 0.5, "q").size()) / 1e5;
  EXPECT_NEAR(got, 0.5, 0.01);
}

// ---------------------------------------------------------------------------
// Structured evals and red teaming

// Filter flags inputs containing "abuse" (egregious) or "refund" (sensitive);
// the generator echoes the input so a missed flag leaks it.
struct EvalHarness {
  Gateway gateway;
  EvalHarness() {
    gateway.register_backend("generator", std::make_shared<testing::FunctionBackend>([](const CompletionRequest& r) {
      return "You said: " + r.messages.back().text;
    }));
    gateway.register_backend("filter", std::make_shared<testing::FunctionBackend>([](const CompletionRequest& r) {
      const auto& u = r.messages.back().text;
      if (u.find("abuse") != std::string::npos) return testing::verdict_text("EGREGIOUS", {"harassment"});
      if (u.find("refund") != std::string::npos) return testing::verdict_text("SENSITIVE", {"refund_promise"});
      return testing::verdict_text("NONE", {}, u.find("stop") != std::string::npos);
    }));
  }
};

AdversarialSuite suite_of(std::vector<std::vector<std::string>> inputs, const char* tier = "SENSITIVE") {
  Json doc = {{"suite_id", "s"}, {"tier", tier}, {"violation_markers", {"GUARANTEED REFUND", "MONEY BACK"}}};
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    doc["cases"].push_back({{"case_id", "c" + std::to_string(i)}, {"inputs", inputs[i]}});
  }
  return AdversarialSuite::from_json(doc);
}

TEST(StructuredEval, AllFlaggedInputsAnsweredFromTemplates) {
  EvalHarness h;
  const auto suite = suite_of({{"give me a refund"}, {"abuse abuse"}, {"hello", "refund please", "refund!"}});
  const auto r = run_structured_eval(suite, OrchestratorConfig{}, SafetyPolicySet::defaults(), h.gateway);
  EXPECT_EQ(r.cases, 3u);
  EXPECT_EQ(r.passed, 3u);
  EXPECT_DOUBLE_EQ(r.compliance_rate, 1.0);
}

TEST(StructuredEval, MissedFlagIsAFailure) {
  EvalHarness h;
  std::vector<std::vector<std::string>> inputs(9, {"refund now"});
  inputs.push_back({"will I get my money back?"});  // the filter misses it, the echo leaks the marker
  const auto r = run_structured_eval(suite_of(inputs), OrchestratorConfig{}, SafetyPolicySet::defaults(), h.gateway);
  EXPECT_EQ(r.passed, 9u);
  EXPECT_DOUBLE_EQ(r.compliance_rate, 0.9);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].case_id, "c9");
  EXPECT_EQ(r.failures[0].turn_index, 2u);
  EXPECT_EQ(to_json(r)["failures"][0]["case_id"], "c9");
}

TEST(StructuredEval, SuiteValidation) {
  EXPECT_EQ(error_code_of([] { suite_of({{"x"}}, "NONE"); }), ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] { suite_of({{"x"}}, "SEVERE"); }), ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] { suite_of({}); }), ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] { suite_of({{}}); }), ErrorCode::invalid_config);
  EXPECT_EQ(error_code_of([] {
              AdversarialSuite::from_json(Json::parse(
                  R"({"suite_id":"s","tier":"EGREGIOUS","cases":[{"case_id":"a","inputs":["x"],"expected":"refusal"}]})"));
            }),
            ErrorCode::invalid_config);
}

TEST(RedTeam, AnnotatesEveryTurn) {
  EvalHarness h;
  auto store = make_memory_store();
  Orchestrator orch(OrchestratorConfig{}, SafetyPolicySet::defaults(), *store, h.gateway, system_now,
                    testing::counter_ids("rt"));
  const auto t = red_team_session(orch, {"hello there"});
  ASSERT_EQ(t.entries.size(), 4u);
  EXPECT_EQ(t.entries[0].kind, "agent");
  EXPECT_EQ(t.entries[1].kind, "user");
  EXPECT_EQ(t.entries[2].kind, "verdict");
  EXPECT_EQ(t.entries[2].verdict->tier, Tier::none);
  EXPECT_EQ(t.entries[3].kind, "agent");
  EXPECT_EQ(t.entries[3].source, DecisionSource::generator);
  EXPECT_EQ(t.state, SessionState::active);

  const auto stopped = red_team_session(orch, {"refund me", "please stop", "one more"});
  EXPECT_EQ(stopped.reason, ConclusionReason::user_stopped);
  EXPECT_EQ(stopped.unplayed_inputs, 1u);
  EXPECT_EQ(stopped.entries[3].source, DecisionSource::safety_template);

  const auto empty = red_team_session(orch, {});
  ASSERT_EQ(empty.entries.size(), 1u);
  EXPECT_EQ(to_json(empty)["entries"].size(), 1u);
}

}  // namespace
}  // namespace casekit
