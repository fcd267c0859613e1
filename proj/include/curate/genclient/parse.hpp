#pragma once

#include <string>
#include <vector>

namespace curate::genclient {

struct QaRound {
  std::string question;
  std::string answer;

  friend bool operator==(const QaRound&, const QaRound&) = default;
};

struct GenerationOutput {
  std::string raw;
  std::vector<QaRound> rounds;
  bool usable = false;
  std::string reason;
};

inline constexpr std::size_t kMaxRounds = 6;

/// Finds the first JSON list of {question, answer} objects in `raw`, ignoring
/// surrounding prose or code fences. Never throws; failures set usable=false
/// with a reason.
GenerationOutput ParseGeneration(const std::string& raw);

/// Value of the last `SCORE: n` tag. Throws UnparseableRating when missing,
/// fractional, or outside 0..10.
int ParseRating(const std::string& raw);

/// Balanced-bracket JSON candidates starting with `open` ('[' or '{'), in
/// order of appearance. Strings and escapes are respected.
std::vector<std::string> JsonCandidates(const std::string& raw, char open);

}  // namespace curate::genclient
