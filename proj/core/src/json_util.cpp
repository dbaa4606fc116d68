#include "casekit/json_util.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "casekit/error.hpp"

namespace casekit {
namespace {

// Returns the index one past the closing brace matching text[open], or npos.
std::size_t match_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

Json scalar_to_json(const YAML::Node& node) {
  const std::string& value = node.Scalar();
  // Quoted scalars carry the non-specific tag "!".
  if (node.Tag() == "!") return value;
  if (value == "~" || value == "null" || value == "Null" || value == "NULL") return nullptr;
  if (value == "true" || value == "True" || value == "TRUE") return true;
  if (value == "false" || value == "False" || value == "FALSE") return false;
  if (!value.empty()) {
    try {
      std::size_t used = 0;
      const long long as_int = std::stoll(value, &used, 10);
      if (used == value.size()) return as_int;
    } catch (const std::exception&) {
    }
    try {
      std::size_t used = 0;
      const double as_double = std::stod(value, &used);
      if (used == value.size() && value.find_first_of("0123456789") != std::string::npos) {
        return as_double;
      }
    } catch (const std::exception&) {
    }
  }
  return value;
}

Json node_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      Json out = Json::array();
      for (const auto& item : node) out.push_back(node_to_json(item));
      return out;
    }
    case YAML::NodeType::Map: {
      Json out = Json::object();
      for (const auto& kv : node) out[kv.first.as<std::string>()] = node_to_json(kv.second);
      return out;
    }
  }
  return nullptr;
}

}  // namespace

std::optional<Json> find_first_json_object(std::string_view text) {
  std::size_t pos = text.find('{');
  while (pos != std::string_view::npos) {
    const std::size_t end = match_brace(text, pos);
    if (end != std::string_view::npos) {
      Json parsed = Json::parse(text.substr(pos, end - pos), nullptr, /*allow_exceptions=*/false);
      if (parsed.is_object()) return parsed;
    }
    pos = text.find('{', pos + 1);
  }
  return std::nullopt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Json yaml_to_json(std::string_view yaml_text) {
  try {
    return node_to_json(YAML::Load(std::string(yaml_text)));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("YAML parse error: ") + e.what());
  }
}

Json load_document(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::string ext = path.extension().string();
  if (ext == ".yaml" || ext == ".yml") {
    try {
      return yaml_to_json(text);
    } catch (const Error& e) {
      throw Error(ErrorCode::invalid_config, path.string() + ": " + e.what());
    }
  }
  Json doc = Json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    throw Error(ErrorCode::invalid_config, "JSON parse error in " + path.string());
  }
  return doc;
}

std::vector<Json> load_ndjson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open file: " + path.string());
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    Json value = Json::parse(line, nullptr, false);
    if (value.is_discarded()) {
      throw Error(ErrorCode::invalid_config,
                  path.string() + ":" + std::to_string(lineno) + ": invalid JSON line");
    }
    out.push_back(std::move(value));
  }
  return out;
}

std::size_t count_words(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return words;
}

std::string trim(std::string_view text) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = text.size();
  while (b < e && is_space(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

std::string sanitize_utf8(std::string_view text) {
  const std::string dumped =
      Json(std::string(text)).dump(-1, ' ', false, Json::error_handler_t::replace);
  return Json::parse(dumped).get<std::string>();
}

}  // namespace casekit
