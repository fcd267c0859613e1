#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace curate {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Calls `fn(line_no, object)` for every non-blank line of an NDJSON file.
/// Line numbers are 1-based. A line that is not a JSON object raises
/// Error(kMalformedRecord).
void ForEachNdjson(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const Json&)>& fn);

/// Writes one compact JSON value per line, creating parent directories.
template <typename T, typename ToJson>
void WriteNdjson(const std::filesystem::path& path, const std::vector<T>& items,
                 ToJson&& to_json);

void WriteTextFile(const std::filesystem::path& path, const std::string& text);
std::string ReadTextFile(const std::filesystem::path& path);

}  // namespace curate

#include <fstream>

#include "curate/error.hpp"

namespace curate {

template <typename T, typename ToJson>
void WriteNdjson(const std::filesystem::path& path, const std::vector<T>& items,
                 ToJson&& to_json) {
  std::string text;
  for (const auto& item : items) {
    text += to_json(item).dump();
    text.push_back('\n');
  }
  WriteTextFile(path, text);
}

}  // namespace curate
