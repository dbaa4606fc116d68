#include "casekit/extractor.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "casekit/error.hpp"

namespace casekit {
namespace {

constexpr std::string_view kIsUserScammed = "is_user_scammed";
constexpr std::string_view kScamMo = "possible_scam_mo";
constexpr std::string_view kOriginSurface = "scam_origin_surface";
constexpr std::string_view kSummary = "conversation_summary";

bool contains(const std::vector<std::string>& values, std::string_view v) {
  return std::find(values.begin(), values.end(), v) != values.end();
}

std::string join(const std::vector<std::string>& values, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += sep;
    out += values[i];
  }
  return out;
}

void require_field(const ExtractionSchema& schema, std::string_view name, FieldKind kind) {
  const FieldSpec* f = schema.find(name);
  if (f == nullptr || f->requirement != Requirement::mandatory || f->kind != kind) {
    throw Error(ErrorCode::invalid_config,
                "schema must declare mandatory field '" + std::string(name) + "' of the right kind");
  }
}

std::string describe_kind(const FieldSpec& f) {
  switch (f.kind) {
    case FieldKind::boolean: return "boolean true or false";
    case FieldKind::enumeration: return "one of: " + join(f.values, ", ");
    case FieldKind::text:
      return f.max_words ? "text, at most " + std::to_string(f.max_words) + " words" : "text";
  }
  return "";
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema

ExtractionSchema::ExtractionSchema(std::vector<FieldSpec> fields, std::string version)
    : fields_(std::move(fields)), version_(std::move(version)) {
  if (version_.empty()) throw Error(ErrorCode::invalid_config, "schema needs a version");
  std::set<std::string> names;
  for (const auto& f : fields_) {
    if (f.name.empty()) throw Error(ErrorCode::invalid_config, "schema field without a name");
    if (!names.insert(f.name).second) {
      throw Error(ErrorCode::invalid_config, "duplicate schema field: " + f.name);
    }
    if (f.kind == FieldKind::enumeration && f.values.empty()) {
      throw Error(ErrorCode::invalid_config, "enum field '" + f.name + "' has no values");
    }
  }
  require_field(*this, kIsUserScammed, FieldKind::boolean);
  require_field(*this, kScamMo, FieldKind::enumeration);
  require_field(*this, kSummary, FieldKind::text);
  if (!contains(find(kScamMo)->values, kNotScam)) {
    throw Error(ErrorCode::invalid_config, "possible_scam_mo must include NOT_SCAM");
  }
  if (const FieldSpec* surface = find(kOriginSurface)) {
    if (surface->kind != FieldKind::enumeration || !contains(surface->values, "OTHERS") ||
        !contains(surface->values, "NONE")) {
      throw Error(ErrorCode::invalid_config,
                  "scam_origin_surface must be an enum that includes OTHERS and NONE");
    }
  }
}

const FieldSpec* ExtractionSchema::find(std::string_view name) const {
  auto it = std::find_if(fields_.begin(), fields_.end(), [&](const auto& f) { return f.name == name; });
  return it == fields_.end() ? nullptr : &*it;
}

ExtractionSchema ExtractionSchema::defaults() {
  return ExtractionSchema(
      {
          {std::string(kIsUserScammed), Requirement::mandatory, FieldKind::boolean, {}, 0,
           "Whether the user was the victim of a scam, judged from the whole interview."},
          {std::string(kScamMo), Requirement::mandatory, FieldKind::enumeration,
           {"NOT_SCAM", "FAKE_LOAN", "FAKE_JOBS", "FAKE_ADS", "OTHERS", "UNKNOWN"}, 0,
           "The scam's modus operandi. Use NOT_SCAM if and only if is_user_scammed is false. "
           "Use OTHERS for a scam that fits no listed type and UNKNOWN when the type cannot be "
           "determined."},
          {std::string(kOriginSurface), Requirement::optional, FieldKind::enumeration,
           {"WHATSAPP", "TELEGRAM", "INSTAGRAM", "FACEBOOK", "YOUTUBE", "SMS", "PHONE_CALL",
            "EMAIL", "WEBSITE", "OTHERS", "NONE"},
           0,
           "Where the scammer first contacted the user. NONE if there was no contact, OTHERS "
           "for an unlisted surface."},
          {std::string(kSummary), Requirement::mandatory, FieldKind::text, {}, 120,
           "A concise summary of the whole interview."},
          {"scam_hook", Requirement::optional, FieldKind::text, {}, 25,
           "The lure or story the scammer used to win the user's trust."},
      },
      "scam-report-v1");
}

ExtractionSchema ExtractionSchema::from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("fields") || !doc.at("fields").is_array()) {
    throw Error(ErrorCode::invalid_config, "schema needs a fields array");
  }
  std::vector<FieldSpec> fields;
  for (const auto& f : doc.at("fields")) {
    FieldSpec spec;
    try {
      spec.name = f.at("name").get<std::string>();
      const std::string req = f.value("requirement", std::string{"optional"});
      if (req != "mandatory" && req != "optional") {
        throw Error(ErrorCode::invalid_config, "bad requirement '" + req + "'");
      }
      spec.requirement = req == "mandatory" ? Requirement::mandatory : Requirement::optional;
      const std::string kind = f.at("kind").get<std::string>();
      if (kind == "boolean") {
        spec.kind = FieldKind::boolean;
      } else if (kind == "enum") {
        spec.kind = FieldKind::enumeration;
        spec.values = f.at("values").get<std::vector<std::string>>();
      } else if (kind == "text") {
        spec.kind = FieldKind::text;
        spec.max_words = f.value("max_words", std::size_t{0});
      } else {
        throw Error(ErrorCode::invalid_config, "bad field kind '" + kind + "'");
      }
      spec.description = f.value("description", std::string{});
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::invalid_config, std::string("schema field: ") + e.what());
    }
    fields.push_back(std::move(spec));
  }
  std::string version = doc.contains("version") && doc.at("version").is_string()
                            ? doc.at("version").get<std::string>()
                            : std::string{};
  return ExtractionSchema(std::move(fields), std::move(version));
}

ExtractionSchema ExtractionSchema::load(const std::filesystem::path& path) {
  return from_json(load_document(path));
}

// ---------------------------------------------------------------------------
// Validation

std::string_view to_string(ReasonCode code) {
  switch (code) {
    case ReasonCode::no_json_object: return "no_json_object";
    case ReasonCode::missing_field: return "missing_field";
    case ReasonCode::type_mismatch: return "type_mismatch";
    case ReasonCode::enum_membership: return "enum_membership";
    case ReasonCode::word_limit: return "word_limit";
    case ReasonCode::empty_text: return "empty_text";
    case ReasonCode::consistency_not_scam: return "consistency_not_scam";
  }
  return "unknown";
}

bool ValidationFailure::has(ReasonCode code) const {
  return std::any_of(issues.begin(), issues.end(), [&](const auto& i) { return i.code == code; });
}

std::string ValidationFailure::summary() const {
  std::string out;
  for (const auto& i : issues) {
    if (!out.empty()) out += "; ";
    out += to_string(i.code);
    if (!i.field.empty()) out += "(" + i.field + ")";
  }
  return out;
}

ValidationResult validate_payload(const OrderedJson& object, const ExtractionSchema& schema) {
  ValidationFailure failure;
  auto issue = [&](ReasonCode code, const std::string& field, std::string detail) {
    failure.issues.push_back({code, field, std::move(detail)});
  };
  if (!object.is_object()) {
    issue(ReasonCode::no_json_object, "", "payload is not a JSON object");
    return failure;
  }

  ScamReport report;
  report.schema_version = schema.version();
  bool scammed_ok = false, mo_ok = false;

  for (const auto& field : schema.fields()) {
    const auto it = object.find(field.name);
    if (it == object.end() || it->is_null()) {
      if (field.requirement == Requirement::mandatory) {
        issue(ReasonCode::missing_field, field.name, "mandatory field is absent");
      }
      continue;
    }
    const OrderedJson& value = *it;
    switch (field.kind) {
      case FieldKind::boolean:
        if (!value.is_boolean()) {
          issue(ReasonCode::type_mismatch, field.name, "expected a boolean");
          continue;
        }
        break;
      case FieldKind::enumeration:
        if (!value.is_string()) {
          issue(ReasonCode::type_mismatch, field.name, "expected a string");
          continue;
        }
        if (!contains(field.values, value.get<std::string>())) {
          issue(ReasonCode::enum_membership, field.name,
                "'" + value.get<std::string>() + "' is not an allowed value");
          continue;
        }
        break;
      case FieldKind::text: {
        if (!value.is_string()) {
          issue(ReasonCode::type_mismatch, field.name, "expected a string");
          continue;
        }
        const std::string text = value.get<std::string>();
        if (trim(text).empty()) {
          if (field.requirement == Requirement::mandatory) {
            issue(ReasonCode::empty_text, field.name, "text is empty");
          }
          continue;
        }
        const std::size_t words = count_words(text);
        if (field.max_words && words > field.max_words) {
          issue(ReasonCode::word_limit, field.name,
                std::to_string(words) + " words exceeds " + std::to_string(field.max_words));
          continue;
        }
        break;
      }
    }

    if (field.name == kIsUserScammed) {
      report.is_user_scammed = value.get<bool>();
      scammed_ok = true;
    } else if (field.name == kScamMo) {
      report.possible_scam_mo = value.get<std::string>();
      mo_ok = true;
    } else if (field.name == kOriginSurface) {
      report.scam_origin_surface = value.get<std::string>();
    } else if (field.name == kSummary) {
      report.conversation_summary = value.get<std::string>();
    } else {
      report.optional_fields[field.name] = value;
    }
  }

  if (scammed_ok && mo_ok && (report.possible_scam_mo == kNotScam) != !report.is_user_scammed) {
    issue(ReasonCode::consistency_not_scam, std::string(kScamMo),
          "NOT_SCAM must be used exactly when is_user_scammed is false");
  }
  if (!failure.issues.empty()) return failure;
  return report;
}

ValidationResult parse_and_validate(std::string_view raw_model_text, const ExtractionSchema& schema) {
  const auto doc = find_first_json_object(raw_model_text);
  if (!doc) {
    return ValidationFailure{{{ReasonCode::no_json_object, "", "no JSON object in model output"}}};
  }
  // Re-parse to keep the model's key order.
  return validate_payload(OrderedJson::parse(doc->dump()), schema);
}

// ---------------------------------------------------------------------------
// Shot selection

ShotSet select_shots(std::span<const GoldenExample> golden, std::size_t k, std::uint64_t seed) {
  const bool has_scam = std::any_of(golden.begin(), golden.end(),
                                    [](const auto& g) { return g.labels.is_user_scammed; });
  const bool has_clean = std::any_of(golden.begin(), golden.end(),
                                     [](const auto& g) { return !g.labels.is_user_scammed; });
  if (!has_scam || !has_clean) {
    throw Error(ErrorCode::insufficient_golden,
                "shot pool needs at least one scam and one non-scam example");
  }
  if (golden.size() < k) {
    throw Error(ErrorCode::insufficient_golden, "shot pool has " + std::to_string(golden.size()) +
                                                    " examples, " + std::to_string(k) + " requested");
  }

  // NOT_SCAM first so any k >= 1 includes a non-scam example.
  std::map<std::string, std::vector<std::string>> by_mo;
  for (const auto& g : golden) {
    const std::string mo = g.labels.is_user_scammed ? g.labels.possible_scam_mo : std::string(kNotScam);
    by_mo[mo].push_back(g.example_id);
  }
  std::vector<std::vector<std::string>*> classes;
  classes.push_back(&by_mo.at(std::string(kNotScam)));
  for (auto& [mo, ids] : by_mo) {
    if (mo != kNotScam) classes.push_back(&ids);
  }

  // mt19937_64 output is fixed by the standard; the shuffle below avoids
  // std::shuffle, whose algorithm is implementation-defined.
  std::mt19937_64 rng(seed);
  for (auto* ids : classes) {
    std::sort(ids->begin(), ids->end());
    for (std::size_t i = ids->size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap((*ids)[i - 1], (*ids)[j]);
    }
  }

  ShotSet out;
  out.selection_seed = seed;
  for (std::size_t round = 0; out.example_ids.size() < k; ++round) {
    for (auto* ids : classes) {
      if (out.example_ids.size() == k) break;
      if (round < ids->size()) out.example_ids.push_back((*ids)[round]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompting

CompletionRequest build_extraction_prompt(const std::vector<ChatMessage>& transcript,
                                          const ExtractionSchema& schema,
                                          std::span<const GoldenExample> shots,
                                          const ExtractorSettings& settings) {
  std::ostringstream sys;
  sys << "You are a trust and safety analyst. You read interviews between a support agent and a "
         "user who reported a possible payment scam, and you record what happened as structured "
         "data.\n\n"
         "Fill in these fields (schema "
      << schema.version() << "):\n";
  for (const auto& f : schema.fields()) {
    sys << "- " << f.name << " ("
        << (f.requirement == Requirement::mandatory ? "mandatory" : "optional") << "; "
        << describe_kind(f) << "): " << f.description << "\n";
  }
  sys << "\nRules:\n"
         "- Base every field on the whole conversation, both agent and user turns.\n"
         "- possible_scam_mo is NOT_SCAM exactly when is_user_scammed is false.\n"
         "- Leave out optional fields you cannot determine.\n"
         "- Respond with one JSON object and nothing else.\n";
  for (std::size_t i = 0; i < shots.size(); ++i) {
    sys << "\nExample " << (i + 1) << "\nTranscript:\n"
        << render_transcript(shots[i].transcript) << "Output:\n"
        << payload_json(shots[i].labels).dump() << "\n";
  }

  CompletionRequest request;
  request.system_prompt = sys.str();
  request.messages.push_back(
      {Speaker::user, "Transcript:\n" + render_transcript(transcript) + "Output:"});
  request.backend_id = settings.backend_id;
  request.temperature = settings.temperature;
  request.max_output_tokens = settings.max_output_tokens;
  return request;
}

CompletionRequest build_reask_prompt(const CompletionRequest& first, std::string_view rejected_output,
                                     const ValidationFailure& failure) {
  CompletionRequest request = first;
  request.messages.push_back({Speaker::agent, std::string(rejected_output)});
  std::string fix = "That output was rejected: ";
  for (std::size_t i = 0; i < failure.issues.size(); ++i) {
    const auto& issue = failure.issues[i];
    if (i) fix += "; ";
    fix += std::string(to_string(issue.code));
    if (!issue.field.empty()) fix += " on " + issue.field;
    if (!issue.detail.empty()) fix += " (" + issue.detail + ")";
  }
  fix += ". Reply with a corrected single JSON object.";
  request.messages.push_back({Speaker::user, std::move(fix)});
  return request;
}

OrderedJson to_json(const BatchStats& stats) {
  OrderedJson out;
  out["claimed"] = stats.claimed;
  out["extracted"] = stats.extracted;
  out["failed"] = stats.failed;
  out["duration_ms"] = stats.duration.count();
  return out;
}

// ---------------------------------------------------------------------------
// Extractor

Extractor::Extractor(Store& store, const Gateway& gateway, ExtractionSchema schema,
                     std::vector<GoldenExample> shots, ExtractorSettings settings)
    : store_(store),
      gateway_(gateway),
      schema_(std::move(schema)),
      shots_(std::move(shots)),
      settings_(std::move(settings)) {}

ExtractionOutcome Extractor::extract_transcript(const std::vector<ChatMessage>& transcript) const {
  ExtractionOutcome outcome{ValidationFailure{}, 0, {}};
  CompletionRequest request = build_extraction_prompt(transcript, schema_, shots_, settings_);
  for (int round = 0; round < 2; ++round) {
    std::string text;
    ++outcome.completions;
    try {
      text = gateway_.complete(request).text;
    } catch (const std::exception& e) {
      outcome.last_error = e.what();
      outcome.result = ValidationFailure{};
      return outcome;
    }
    outcome.result = parse_and_validate(text, schema_);
    if (outcome.ok()) {
      std::get<ScamReport>(outcome.result).model_id = gateway_.model_id(settings_.backend_id);
      return outcome;
    }
    if (round == 0) {
      request = build_reask_prompt(request, text, std::get<ValidationFailure>(outcome.result));
    }
  }
  return outcome;
}

ScamReport Extractor::extract_one(const std::string& session_id) {
  const auto session = store_.load_session(session_id);
  if (!session) throw Error(ErrorCode::session_not_found, "no session " + session_id);
  if (session->is_active()) {
    throw Error(ErrorCode::session_active, "session " + session_id + " is still active");
  }
  const auto status = store_.extraction_status(session_id);
  const int prior_attempts = status ? status->attempt : 0;

  ExtractionOutcome outcome = extract_transcript(session->messages());
  const int attempt = prior_attempts + outcome.completions;
  if (outcome.ok()) {
    ScamReport report = std::get<ScamReport>(std::move(outcome.result));
    report.session_id = session_id;
    store_.put_intelligence(session_id, report, attempt);
    return report;
  }
  std::string reason = outcome.last_error.empty()
                           ? std::get<ValidationFailure>(outcome.result).summary()
                           : "backend: " + outcome.last_error;
  store_.mark_extraction_failed(session_id, attempt, reason);
  throw Error(ErrorCode::extraction_failed, "extraction failed for " + session_id + ": " + reason);
}

BatchStats Extractor::run_batch(std::size_t limit, std::size_t workers) {
  const auto started = std::chrono::steady_clock::now();
  BatchStats stats;
  const std::vector<std::string> candidates = store_.list_extraction_candidates(limit);
  if (candidates.empty()) return stats;
  workers = std::clamp<std::size_t>(workers, 1, candidates.size());

  std::atomic<std::size_t> next{0}, claimed{0}, extracted{0}, failed{0};
  auto work = [&] {
    for (std::size_t i = next++; i < candidates.size(); i = next++) {
      const std::string& id = candidates[i];
      try {
        if (!store_.claim_for_extraction(id)) continue;
      } catch (const std::exception& e) {
        spdlog::error("claim of {} failed: {}", id, e.what());
        continue;
      }
      ++claimed;
      try {
        extract_one(id);
        ++extracted;
      } catch (const std::exception& e) {
        spdlog::warn("{}", e.what());
        ++failed;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  stats.claimed = claimed;
  stats.extracted = extracted;
  stats.failed = failed;
  stats.duration = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);
  return stats;
}

}  // namespace casekit
