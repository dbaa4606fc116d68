#include "casekit/report.hpp"

#include "casekit/error.hpp"

namespace casekit {

OrderedJson payload_json(const ScamReport& report) {
  OrderedJson out;
  out["is_user_scammed"] = report.is_user_scammed;
  out["possible_scam_mo"] = report.possible_scam_mo;
  if (report.scam_origin_surface) out["scam_origin_surface"] = *report.scam_origin_surface;
  out["conversation_summary"] = report.conversation_summary;
  for (const auto& [key, value] : report.optional_fields.items()) out[key] = value;
  return out;
}

OrderedJson to_json(const ScamReport& report) {
  OrderedJson out = payload_json(report);
  out["session_id"] = report.session_id;
  out["model_id"] = report.model_id;
  out["schema_version"] = report.schema_version;
  return out;
}

ScamReport report_from_json(const OrderedJson& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::invalid_argument, "report must be a JSON object");
  ScamReport r;
  r.is_user_scammed = doc.at("is_user_scammed").get<bool>();
  r.possible_scam_mo = doc.at("possible_scam_mo").get<std::string>();
  if (doc.contains("scam_origin_surface") && doc.at("scam_origin_surface").is_string()) {
    r.scam_origin_surface = doc.at("scam_origin_surface").get<std::string>();
  }
  r.conversation_summary = doc.value("conversation_summary", std::string{});
  r.session_id = doc.value("session_id", std::string{});
  r.model_id = doc.value("model_id", std::string{});
  r.schema_version = doc.value("schema_version", std::string{});
  for (const auto& [key, value] : doc.items()) {
    if (key == "is_user_scammed" || key == "possible_scam_mo" || key == "scam_origin_surface" ||
        key == "conversation_summary" || key == "session_id" || key == "model_id" ||
        key == "schema_version") {
      continue;
    }
    r.optional_fields[key] = value;
  }
  return r;
}

ScamReport report_from_json(const Json& doc) { return report_from_json(OrderedJson::parse(doc.dump())); }

}  // namespace casekit
