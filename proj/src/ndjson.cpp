#include "curate/ndjson.hpp"

#include <fstream>
#include <sstream>

namespace curate {

void ForEachNdjson(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const Json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoError, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json value;
    try {
      value = Json::parse(line);
    } catch (const Json::parse_error&) {
      throw Error(Errc::kMalformedRecord,
                  "line " + std::to_string(line_no) + ": invalid JSON");
    } catch (const Json::out_of_range&) {
      // The parser refuses numbers that overflow a double.
      throw Error(Errc::kNonFiniteComponent,
                  "line " + std::to_string(line_no) + ": number overflows a double");
    }
    if (!value.is_object()) {
      throw Error(Errc::kMalformedRecord,
                  "line " + std::to_string(line_no) + ": expected an object");
    }
    fn(line_no, value);
  }
}

void WriteTextFile(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::kIoError, "write failed: " + path.string());
}

std::string ReadTextFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace curate
