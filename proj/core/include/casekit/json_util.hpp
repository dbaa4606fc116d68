#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace casekit {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

// Locates the first balanced {...} span in `text` that parses as a JSON
// object. Leading and trailing noise (prose, markdown fences) is skipped.
// Never throws.
std::optional<Json> find_first_json_object(std::string_view text);

// Loads a JSON or YAML document; format is chosen by extension
// (.yaml/.yml are YAML, anything else JSON). Throws Error(io_error) when
// the file is unreadable and Error(invalid_config) when it fails to parse.
Json load_document(const std::filesystem::path& path);

// Parses YAML text into the equivalent JSON value. Plain scalars are typed
// (bool, null, integer, float); quoted scalars stay strings.
Json yaml_to_json(std::string_view yaml_text);

// Reads an NDJSON file; blank lines are skipped.
std::vector<Json> load_ndjson(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

// Number of whitespace separated words.
std::size_t count_words(std::string_view text);

std::string trim(std::string_view text);

// Replaces every invalid UTF-8 sequence with U+FFFD so the text can always be
// serialized as JSON.
std::string sanitize_utf8(std::string_view text);

}  // namespace casekit
