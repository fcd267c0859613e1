#include "curate/genclient/parse.hpp"

#include <regex>

#include "curate/error.hpp"
#include "curate/ndjson.hpp"

namespace curate::genclient {
namespace {

std::string Excerpt(const std::string& raw) {
  constexpr std::size_t kMax = 80;
  return raw.size() <= kMax ? raw : raw.substr(0, kMax) + "...";
}

}  // namespace

std::vector<std::string> JsonCandidates(const std::string& raw, char open) {
  const char close = open == '[' ? ']' : '}';
  std::vector<std::string> out;
  for (std::size_t start = raw.find(open); start != std::string::npos;
       start = raw.find(open, start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < raw.size(); ++i) {
      const char c = raw[i];
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
      } else if (c == '[' || c == '{') {
        ++depth;
      } else if (c == ']' || c == '}') {
        if (--depth == 0) {
          if (c == close) out.push_back(raw.substr(start, i - start + 1));
          break;
        }
      }
    }
  }
  return out;
}

GenerationOutput ParseGeneration(const std::string& raw) {
  GenerationOutput out;
  out.raw = raw;
  out.reason = "no JSON list of question/answer objects found";
  for (const auto& candidate : JsonCandidates(raw, '[')) {
    Json parsed = Json::parse(candidate, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.is_array() || parsed.empty()) continue;
    std::vector<QaRound> rounds;
    bool ok = true;
    for (const auto& item : parsed) {
      if (!item.is_object() || !item.contains("question") || !item.contains("answer") ||
          !item["question"].is_string() || !item["answer"].is_string()) {
        ok = false;
        break;
      }
      rounds.push_back({item["question"].get<std::string>(), item["answer"].get<std::string>()});
    }
    if (!ok) continue;
    out.rounds = std::move(rounds);
    if (out.rounds.size() > kMaxRounds) {
      out.reason = "too many rounds (" + std::to_string(out.rounds.size()) + ")";
      return out;
    }
    out.usable = true;
    out.reason.clear();
    return out;
  }
  return out;
}

int ParseRating(const std::string& raw) {
  static const std::regex kTag(R"(SCORE\s*:\s*\**\s*(-?\d+(?:\.\d+)?))", std::regex::icase);
  std::string value;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kTag); it != std::sregex_iterator(); ++it) {
    value = (*it)[1].str();
  }
  if (value.empty() || value.find('.') != std::string::npos) {
    throw Error(Errc::kUnparseableRating, "no integer SCORE tag in: " + Excerpt(raw));
  }
  const int score = value.size() > 3 ? 11 : std::stoi(value);
  if (score < 0 || score > 10) {
    throw Error(Errc::kUnparseableRating, "score " + value + " outside 0..10 in: " + Excerpt(raw));
  }
  return score;
}

}  // namespace curate::genclient
