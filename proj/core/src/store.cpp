#include "casekit/store.hpp"

namespace casekit {

std::string_view to_string(ExtractionState s) {
  switch (s) {
    case ExtractionState::pending: return "pending";
    case ExtractionState::claimed: return "claimed";
    case ExtractionState::extracted: return "extracted";
    case ExtractionState::failed: return "failed";
  }
  return "unknown";
}

OrderedJson to_json(const ExtractionStatus& status) {
  OrderedJson out;
  out["session_id"] = status.session_id;
  out["status"] = to_string(status.state);
  out["attempt"] = status.attempt;
  if (status.report_id) out["report_id"] = *status.report_id;
  if (status.extracted_at) out["extracted_at"] = format_timestamp(*status.extracted_at);
  if (!status.last_error.empty()) out["last_error"] = status.last_error;
  return out;
}

OrderedJson to_json(const IntelligenceRecord& record) {
  OrderedJson out;
  out["schema_version"] = record.schema_version;
  out["report_id"] = record.report_id;
  out["session_id"] = record.session_id;
  out["written_at"] = format_timestamp(record.written_at);
  out["report"] = to_json(record.report);
  return out;
}

std::string report_id_for(const std::string& session_id) { return "rpt-" + session_id; }

void write_ndjson(std::ostream& out, std::span<const IntelligenceRecord> records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

}  // namespace casekit
