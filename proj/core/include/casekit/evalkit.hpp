#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "casekit/extractor.hpp"
#include "casekit/golden.hpp"
#include "casekit/orchestrator.hpp"
#include "casekit/session.hpp"

namespace casekit {

// ---------------------------------------------------------------------------
// Golden dataset (NDJSON, one example per line)

GoldenExample golden_from_json(const Json& doc, const ExtractionSchema& schema);
OrderedJson to_json(const GoldenExample& example);
// Validates labels against the schema and rejects duplicate ids.
std::vector<GoldenExample> load_golden(const std::filesystem::path& path,
                                       const ExtractionSchema& schema);
std::vector<GoldenExample> filter_split(std::span<const GoldenExample> golden, GoldenSplit split);

// ---------------------------------------------------------------------------
// Extractor scoring

struct BinaryMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> accuracy, precision, recall;  // nullopt when undefined (0/0)

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const BinaryMetrics&) const = default;
};

struct ClassMetrics {
  std::optional<double> precision, recall;
  std::size_t support = 0;  // ground-truth count

  bool operator==(const ClassMetrics&) const = default;
};

struct MulticlassMetrics {
  std::size_t n = 0;
  std::optional<double> accuracy;
  std::map<std::string, std::map<std::string, std::size_t>> confusion;  // [truth][predicted]
  std::map<std::string, ClassMetrics> per_class;

  bool operator==(const MulticlassMetrics&) const = default;
};

struct EvalMetrics {
  BinaryMetrics binary;          // is_user_scammed
  MulticlassMetrics multiclass;  // possible_scam_mo over ground-truth scams
  std::size_t n_scored = 0;
  std::size_t n_failed = 0;

  bool operator==(const EvalMetrics&) const = default;
};

OrderedJson to_json(const EvalMetrics& m);
std::string render_table(const EvalMetrics& m);

// example_id -> extracted report, or nullopt when extraction failed.
using PredictionMap = std::map<std::string, std::optional<ScamReport>>;

// Scores predictions against the holdout split of `golden`. Holdout examples
// without a usable prediction count toward n_failed and are excluded from the
// metrics. Errors: empty_holdout; shot_leakage if any prediction is keyed by a
// shots-split id; invalid_argument for ids not in the dataset.
EvalMetrics score_extractor(const PredictionMap& predictions, std::span<const GoldenExample> golden);

// ---------------------------------------------------------------------------
// Structured safety evals and red teaming

struct AdversarialCase {
  std::string case_id;
  std::vector<std::string> inputs;
  std::string expected = "no_violation_response";
};

struct AdversarialSuite {
  std::string suite_id;
  Tier tier = Tier::egregious;
  std::vector<AdversarialCase> cases;
  std::string provenance;
  // Case-insensitive substrings that must never appear in an agent reply.
  std::vector<std::string> violation_markers;

  // Throws Error(invalid_config) on an empty suite or a tier other than
  // EGREGIOUS or SENSITIVE.
  static AdversarialSuite from_json(const Json& doc);
  static AdversarialSuite load(const std::filesystem::path& path);
};

struct CaseFailure {
  std::string case_id;
  std::size_t turn_index = 0;
  std::string reason;
  std::string reply;
};

struct StructuredEvalResult {
  std::string suite_id;
  std::size_t cases = 0;
  std::size_t passed = 0;
  double compliance_rate = 0.0;
  std::vector<CaseFailure> failures;
};

OrderedJson to_json(const StructuredEvalResult& r);

// Runs every case through a fresh orchestrator session. A case passes when
// every flagged input was answered from a template and no reply contains a
// violation marker.
StructuredEvalResult run_structured_eval(const AdversarialSuite& suite,
                                         const OrchestratorConfig& config,
                                         const SafetyPolicySet& policies, const Gateway& gateway);

struct AnnotatedEntry {
  std::string kind;  // "agent", "user" or "verdict"
  std::size_t turn_index = 0;
  std::string text;
  std::optional<SafetyVerdict> verdict;
  std::optional<DecisionSource> source;
};

struct RedTeamTranscript {
  std::string session_id;
  std::vector<AnnotatedEntry> entries;
  SessionState state = SessionState::active;
  std::optional<ConclusionReason> reason;
  std::size_t unplayed_inputs = 0;  // script lines left after the session concluded
};

OrderedJson to_json(const RedTeamTranscript& t);

// Replays the script through a live session and annotates every turn. Makes
// no pass/fail judgement.
RedTeamTranscript red_team_session(Orchestrator& orchestrator,
                                   const std::vector<std::string>& script);

// ---------------------------------------------------------------------------
// Quality scoring

struct Rubric {
  std::string version = "rubric-v1";
  std::string topic_adherence =
      "PASS if the agent kept the conversation on the reported scam and handled off-topic "
      "messages gracefully.";
  std::string user_respect =
      "PASS if the agent stayed respectful and supportive, and ended the conversation promptly "
      "when the user declined to continue or asked to stop.";
  std::string mo_elicited =
      "PASS if the conversation surfaced enough detail to tell how the scam worked (its modus "
      "operandi), or established that no scam happened.";

  static Rubric from_json(const Json& doc);
};

enum class RaterKind { automatic, human };

struct QualityScore {
  std::string session_id;
  bool topic_adherence = false;
  bool user_respect = false;
  bool mo_elicited = false;
  RaterKind rater = RaterKind::automatic;
  std::string rater_id;  // model id or human rater id
  std::string rationale;

  bool operator==(const QualityScore&) const = default;
};

OrderedJson to_json(const QualityScore& s);
QualityScore quality_score_from_json(const Json& doc);
std::vector<QualityScore> load_quality_scores(const std::filesystem::path& path);

struct RaterSettings {
  std::string backend_id = "rater";
  double temperature = 0.0;
  int max_output_tokens = 512;
};

struct AutoRating {
  std::string session_id;
  std::optional<QualityScore> score;  // withheld when the reply could not be parsed
  bool flagged_for_human = false;
  std::string raw_model_text;
};

OrderedJson to_json(const AutoRating& r);

CompletionRequest build_rater_prompt(const Session& session, const Rubric& rubric,
                                     const RaterSettings& settings);

// One completion per session covering all three metrics. Errors:
// session_active.
AutoRating auto_rate(const Session& session, const Rubric& rubric, const Gateway& gateway,
                     const RaterSettings& settings);

// Includes an id iff hash(salt + id) mod 10^6 < rate * 10^6. Keeps input
// order. Errors: invalid_rate unless 0 < rate <= 1.
std::vector<std::string> sample_for_human(std::span<const std::string> session_ids, double rate,
                                          std::string_view salt);

struct Disagreement {
  std::string session_id;
  std::string metric;
  bool automatic = false;
  bool human = false;
};

struct CalibrationReport {
  std::size_t joined = 0;
  double topic_adherence = 0.0;
  double user_respect = 0.0;
  double mo_elicited = 0.0;
  std::vector<Disagreement> disagreements;
};

OrderedJson to_json(const CalibrationReport& r);

// Agreement per metric over sessions scored by both. Errors: no_overlap;
// invalid_argument for duplicate session ids within one list.
CalibrationReport calibrate(std::span<const QualityScore> automatic,
                            std::span<const QualityScore> human);

// ---------------------------------------------------------------------------
// Engagement funnel

struct FunnelOptions {
  bool count_opening = true;  // count the reply to the fixed opening question
};

struct FunnelBucket {
  std::size_t session_count = 0;
  double fraction = 0.0;
};

struct FunnelStats {
  std::map<std::size_t, FunnelBucket> buckets;  // answered count -> sessions
  std::size_t total_sessions = 0;
  std::map<std::size_t, double> fraction_ge;  // for 1..max answered

  double fraction_at_least(std::size_t k) const;
};

OrderedJson to_json(const FunnelStats& f);
std::string render_table(const FunnelStats& f);

std::size_t answered_questions(const Session& session, const FunnelOptions& options = {});
FunnelStats funnel(std::span<const Session> sessions, const FunnelOptions& options = {});

}  // namespace casekit
