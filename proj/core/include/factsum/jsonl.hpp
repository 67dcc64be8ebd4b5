#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace factsum {

using Json = nlohmann::json;

// Calls `fn(line_number, object)` for every non-blank line of a JSON-lines
// file. Parse failures and non-object lines raise kInvalidInput naming the
// 1-based line number. Returns the number of records visited.
std::size_t for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(std::size_t, const Json&)>& fn);

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Field accessors that report the offending line on type mismatch.
std::string require_string(const Json& obj, const char* key, std::size_t line);
std::vector<std::string> require_string_array(const Json& obj, const char* key,
                                              std::size_t line);

}  // namespace factsum
