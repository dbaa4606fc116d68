#pragma once

#include <optional>
#include <string>

#include "casekit/json_util.hpp"

namespace casekit {

inline constexpr std::string_view kNotScam = "NOT_SCAM";

// Structured intelligence for one interview.
struct ScamReport {
  bool is_user_scammed = false;
  std::string possible_scam_mo;
  std::optional<std::string> scam_origin_surface;
  std::string conversation_summary;
  OrderedJson optional_fields = OrderedJson::object();  // other schema-declared fields
  std::string session_id;
  std::string model_id;
  std::string schema_version;

  bool operator==(const ScamReport&) const = default;
};

// Only the schema fields, in schema order. This is the shape a model emits.
OrderedJson payload_json(const ScamReport& report);
// Payload plus session_id, model_id and schema_version.
OrderedJson to_json(const ScamReport& report);
// Key order of optional fields is preserved from `doc`.
ScamReport report_from_json(const OrderedJson& doc);
ScamReport report_from_json(const Json& doc);

}  // namespace casekit
