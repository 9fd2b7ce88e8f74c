#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cupid/error.hpp"

namespace cupid::io {

using json = nlohmann::ordered_json;

/// Parses a JSON-lines file. Blank lines are skipped; a malformed line raises a
/// format error naming the file and line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partial file.
void write_atomic(const std::filesystem::path& path, std::string_view content);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Compact single-line dump with stable key order.
std::string dump_line(const json& value);

/// Typed field access that reports a format error instead of a json exception.
template <typename T>
T field(const json& row, const char* key, const std::string& where) {
    auto it = row.find(key);
    if (it == row.end()) {
        fail(ErrorKind::format, where + ": missing field \"" + key + "\"");
    }
    try {
        return it->template get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(ErrorKind::format, where + ": field \"" + key + "\" has the wrong type");
    }
}

}  // namespace cupid::io
