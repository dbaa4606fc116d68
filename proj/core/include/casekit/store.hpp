#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "casekit/report.hpp"
#include "casekit/session.hpp"

namespace casekit {

enum class ExtractionState { pending, claimed, extracted, failed };
std::string_view to_string(ExtractionState s);

struct ExtractionStatus {
  std::string session_id;
  ExtractionState state = ExtractionState::pending;
  int attempt = 0;  // model completions spent on this session so far
  std::optional<std::string> report_id;
  std::optional<TimePoint> extracted_at;
  std::string last_error;
  TimePoint queued_at{};
};

OrderedJson to_json(const ExtractionStatus& status);

struct IntelligenceRecord {
  std::string schema_version;
  std::string report_id;
  std::string session_id;
  TimePoint written_at{};
  ScamReport report;
};

// schema_version is always the first key.
OrderedJson to_json(const IntelligenceRecord& record);

struct ExportFilter {
  std::optional<TimePoint> start;  // inclusive, on written_at
  std::optional<TimePoint> end;    // exclusive
  std::optional<std::string> mo;
};

struct StoreOptions {
  int max_attempts = 5;
  std::chrono::milliseconds claim_lease{std::chrono::minutes{10}};
  NowFn now = system_now;
};

// Persistence for transcripts, the extraction queue and extracted
// intelligence. Turns are append-only; session state only moves
// active -> concluded. Every write is durable when the call returns.
class Store {
 public:
  virtual ~Store() = default;

  // Throws index_conflict if the id exists.
  virtual void create_session(const Session& session) = 0;
  virtual std::optional<Session> load_session(const std::string& session_id) const = 0;

  // Errors: session_not_found, session_concluded, index_conflict (index is not
  // the next position), invalid_argument (breaks alternation).
  virtual void append_turn(const std::string& session_id, const Turn& turn) = 0;
  // Appends all turns and optionally concludes, in one transaction.
  virtual void append_turns(const std::string& session_id, std::span<const Turn> turns,
                            std::optional<ConclusionReason> conclude, TimePoint updated_at) = 0;
  // Returns false if the session was already concluded.
  virtual bool conclude_session(const std::string& session_id, ConclusionReason reason,
                                TimePoint at) = 0;

  // Active sessions whose updated_at is strictly before `cutoff`.
  virtual std::vector<std::string> list_idle_sessions(TimePoint cutoff) const = 0;
  // Sessions created in [since, until).
  virtual std::vector<Session> list_sessions(std::optional<TimePoint> since,
                                             std::optional<TimePoint> until) const = 0;

  // Concluded sessions that are pending, failed below the attempt cap, or
  // held by an expired claim. Oldest conclusion first.
  virtual std::vector<std::string> list_extraction_candidates(std::size_t limit) const = 0;
  // Atomic transition to claimed. False if another worker holds it or it is
  // no longer eligible.
  virtual bool claim_for_extraction(const std::string& session_id) = 0;
  // Idempotent upsert keyed by session_id. Errors: session_not_found,
  // session_active.
  virtual std::string put_intelligence(const std::string& session_id, const ScamReport& report,
                                       int attempt) = 0;
  virtual void mark_extraction_failed(const std::string& session_id, int attempt,
                                      const std::string& error) = 0;
  virtual std::optional<ExtractionStatus> extraction_status(const std::string& session_id) const = 0;
  // Failed sessions at the attempt cap go back to pending. Returns count.
  virtual std::size_t requeue_failed() = 0;

  virtual std::vector<IntelligenceRecord> export_intelligence(const ExportFilter& filter) const = 0;
  virtual std::optional<IntelligenceRecord> intelligence_for(const std::string& session_id) const = 0;

  // Deletes concluded sessions (and their queue and intelligence rows) last
  // updated before `cutoff`. Active sessions are kept.
  virtual std::size_t purge_before(TimePoint cutoff) = 0;

  virtual const StoreOptions& options() const = 0;
};

std::string report_id_for(const std::string& session_id);

// NDJSON, one record per line.
void write_ndjson(std::ostream& out, std::span<const IntelligenceRecord> records);

std::unique_ptr<Store> open_sqlite_store(const std::filesystem::path& path, StoreOptions options = {});
std::unique_ptr<Store> make_memory_store(StoreOptions options = {});

}  // namespace casekit
