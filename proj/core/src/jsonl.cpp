#include "factsum/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "factsum/error.hpp"

namespace factsum {
namespace {

std::string line_prefix(std::size_t line) { return "line " + std::to_string(line) + ": "; }

}  // namespace

std::size_t for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(std::size_t, const Json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t records = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error(ErrorKind::kInvalidInput,
                  path.string() + ": " + line_prefix(line_no) + "malformed JSON");
    }
    if (!obj.is_object()) {
      throw Error(ErrorKind::kInvalidInput,
                  path.string() + ": " + line_prefix(line_no) + "expected a JSON object");
    }
    try {
      fn(line_no, obj);
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ": " + e.what());
    }
    ++records;
  }
  return records;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::ostringstream out;
  for (const Json& r : records) out << r.dump() << '\n';
  write_text_file(path, out.str());
}

Json read_json_file(const std::filesystem::path& path) {
  std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::kInvalidInput, path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& value) {
  write_text_file(path, value.dump(2) + "\n");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

std::string require_string(const Json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorKind::kInvalidInput,
                line_prefix(line) + "missing \"" + std::string(key) + "\" field");
  }
  if (!it->is_string()) {
    throw Error(ErrorKind::kInvalidInput,
                line_prefix(line) + "\"" + std::string(key) + "\" must be a string");
  }
  return it->get<std::string>();
}

std::vector<std::string> require_string_array(const Json& obj, const char* key,
                                              std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorKind::kInvalidInput,
                line_prefix(line) + "missing \"" + std::string(key) + "\" field");
  }
  if (!it->is_array()) {
    throw Error(ErrorKind::kInvalidInput,
                line_prefix(line) + "\"" + std::string(key) + "\" must be an array");
  }
  std::vector<std::string> out;
  for (const Json& v : *it) {
    if (!v.is_string()) {
      throw Error(ErrorKind::kInvalidInput,
                  line_prefix(line) + "\"" + std::string(key) + "\" must hold strings");
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace factsum
