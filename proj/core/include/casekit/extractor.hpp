#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "casekit/golden.hpp"
#include "casekit/llm_gateway.hpp"
#include "casekit/report.hpp"
#include "casekit/store.hpp"

namespace casekit {

enum class Requirement { mandatory, optional };
enum class FieldKind { boolean, enumeration, text };

struct FieldSpec {
  std::string name;
  Requirement requirement = Requirement::optional;
  FieldKind kind = FieldKind::text;
  std::vector<std::string> values;  // enumeration
  std::size_t max_words = 0;        // text; 0 means unbounded
  std::string description;
};

class ExtractionSchema {
 public:
  ExtractionSchema(std::vector<FieldSpec> fields, std::string version);

  // is_user_scammed, possible_scam_mo, scam_origin_surface,
  // conversation_summary (120 words) and a short optional scam_hook.
  static ExtractionSchema defaults();
  static ExtractionSchema from_json(const Json& doc);
  static ExtractionSchema load(const std::filesystem::path& path);

  const std::vector<FieldSpec>& fields() const { return fields_; }
  const std::string& version() const { return version_; }
  const FieldSpec* find(std::string_view name) const;

 private:
  std::vector<FieldSpec> fields_;
  std::string version_;
};

enum class ReasonCode {
  no_json_object,
  missing_field,
  type_mismatch,
  enum_membership,
  word_limit,
  empty_text,
  consistency_not_scam,
};

std::string_view to_string(ReasonCode code);

struct ValidationIssue {
  ReasonCode code;
  std::string field;
  std::string detail;
};

struct ValidationFailure {
  std::vector<ValidationIssue> issues;

  bool has(ReasonCode code) const;
  std::string summary() const;  // "code(field); code(field)"
};

using ValidationResult = std::variant<ScamReport, ValidationFailure>;

// Validates an already-parsed object against the schema. Unknown keys are
// ignored. The NOT_SCAM rule is checked, never repaired.
ValidationResult validate_payload(const OrderedJson& object, const ExtractionSchema& schema);

// Finds the first JSON object in `raw_model_text` (fences and surrounding
// prose are tolerated) and validates it.
ValidationResult parse_and_validate(std::string_view raw_model_text, const ExtractionSchema& schema);

struct ShotSet {
  std::vector<std::string> example_ids;
  std::uint64_t selection_seed = 0;

  bool operator==(const ShotSet&) const = default;
};

// Round-robin over scam MO classes (NOT_SCAM first, then MO names in order),
// seeded shuffle within each class. Throws Error(insufficient_golden) unless
// the pool has a scam and a non-scam example and at least k examples.
ShotSet select_shots(std::span<const GoldenExample> golden, std::size_t k, std::uint64_t seed);

struct ExtractorSettings {
  std::string backend_id = "extractor";
  double temperature = 0.0;
  int max_output_tokens = 1024;
};

CompletionRequest build_extraction_prompt(const std::vector<ChatMessage>& transcript,
                                          const ExtractionSchema& schema,
                                          std::span<const GoldenExample> shots,
                                          const ExtractorSettings& settings);

// The corrective follow-up sent after a rejected first answer.
CompletionRequest build_reask_prompt(const CompletionRequest& first,
                                     std::string_view rejected_output,
                                     const ValidationFailure& failure);

struct ExtractionOutcome {
  std::variant<ScamReport, ValidationFailure> result;
  int completions = 0;
  std::string last_error;  // backend failure, if any

  bool ok() const { return std::holds_alternative<ScamReport>(result); }
};

struct BatchStats {
  std::size_t claimed = 0;
  std::size_t extracted = 0;
  std::size_t failed = 0;
  std::chrono::milliseconds duration{0};
};

OrderedJson to_json(const BatchStats& stats);

class Extractor {
 public:
  Extractor(Store& store, const Gateway& gateway, ExtractionSchema schema,
            std::vector<GoldenExample> shots, ExtractorSettings settings = {});

  // Prompt, complete, validate; one corrective re-ask on validation failure.
  // Does not touch the store.
  ExtractionOutcome extract_transcript(const std::vector<ChatMessage>& transcript) const;

  // For a concluded session this worker has claimed. Writes the report or
  // marks the session failed. Throws Error(extraction_failed) on failure.
  ScamReport extract_one(const std::string& session_id);

  // Claims and extracts up to `limit` candidates with at most `workers`
  // threads. Per-item failures are counted, not thrown.
  BatchStats run_batch(std::size_t limit, std::size_t workers);

  const ExtractionSchema& schema() const { return schema_; }

 private:
  Store& store_;
  const Gateway& gateway_;
  ExtractionSchema schema_;
  std::vector<GoldenExample> shots_;
  ExtractorSettings settings_;
};

}  // namespace casekit
