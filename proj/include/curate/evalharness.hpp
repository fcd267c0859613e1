#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/genclient/backend.hpp"
#include "curate/genclient/prompt.hpp"
#include "curate/ndjson.hpp"

namespace curate::evalharness {

enum class QuestionType { kConversation, kDescription, kClosed, kOpen };
std::string_view QuestionTypeName(QuestionType type);
std::optional<QuestionType> ParseQuestionType(std::string_view name);

struct EvalItem {
  std::string id;
  std::string question;
  std::string reference_answer;
  std::map<std::string, std::string> candidate_answers;
  QuestionType question_type = QuestionType::kConversation;
  corpus::Domain domain = corpus::Domain::kCXR;
  /// Optional context for the judge.
  std::string caption;
  std::string image_ref;
};

struct Response {
  std::string id;
  std::string model;
  std::string answer;
};

OrderedJson ToJson(const EvalItem& item);
EvalItem EvalItemFromJson(const Json& json);
std::vector<EvalItem> LoadEvalItems(const std::filesystem::path& path);
void WriteEvalItems(const std::filesystem::path& path, const std::vector<EvalItem>& items);
std::vector<Response> LoadResponses(const std::filesystem::path& path);
void WriteResponses(const std::filesystem::path& path, const std::vector<Response>& responses);

/// Adds each response as a candidate answer. Unknown item ids raise
/// InvalidArgument.
void MergeResponses(std::vector<EvalItem>& items, const std::vector<Response>& responses);

std::vector<EvalItem> FilterItems(const std::vector<EvalItem>& items,
                                  std::optional<QuestionType> type,
                                  std::optional<corpus::Domain> domain);

/// Both scores from a "SCORES: <ref> <cand>" line (last occurrence), each in
/// [1, 10]. Throws UnparseableRating.
std::pair<double, double> ParseScores(const std::string& raw);

enum class Winner { kA, kB, kTie };
std::string_view WinnerName(Winner winner);

/// Position from a "VERDICT: 1|2|TIE" line (last occurrence): 1 or 2 for an
/// assistant, 0 for a tie. Throws UnparseableVerdict.
int ParseVerdict(const std::string& raw);

struct RelativeScore {
  std::string item_id;
  QuestionType question_type = QuestionType::kConversation;
  corpus::Domain domain = corpus::Domain::kCXR;
  double reference_score = 0.0;
  double candidate_score = 0.0;
  double relative = 0.0;
  std::string raw;
  /// Set when the judge output could not be parsed; excluded from aggregates.
  std::string error;
};

struct Aggregate {
  double mean = 0.0;
  std::size_t count = 0;
};

struct ChatScoreReport {
  std::string model;
  std::vector<RelativeScore> items;
  std::map<std::string, Aggregate> by_type;
  std::map<std::string, Aggregate> by_domain;
  Aggregate overall;
  std::size_t unparseable = 0;
};

/// Reference-guided relative scoring of `model`'s answers: the judge scores
/// reference and candidate in one call; relative = 100 * candidate / reference.
ChatScoreReport score_open_chat(const std::vector<EvalItem>& items, const std::string& model,
                                genclient::Dispatcher& judge,
                                const genclient::PromptTemplate& tmpl, int workers = 1);

/// Re-derives the aggregates from per-item records.
void Reaggregate(ChatScoreReport& report);

OrderedJson ToJson(const ChatScoreReport& report);

struct JudgeVerdict {
  std::string item_id;
  Winner winner = Winner::kTie;
  /// True when model A was shown as Assistant 1.
  bool a_first = true;
  std::string raw;
  std::string error;
};

struct WinRateReport {
  std::string model_a;
  std::string model_b;
  std::vector<JudgeVerdict> verdicts;
  std::size_t wins_a = 0;
  std::size_t wins_b = 0;
  std::size_t ties = 0;
  std::size_t unparseable = 0;
  /// wins_a / (wins_a + wins_b); empty when every verdict is a tie.
  std::optional<double> win_rate_a;
  /// (wins_a + ties / 2) / (wins_a + wins_b + ties).
  std::optional<double> win_rate_a_ties_half;
};

/// Pairwise judging with a per-item seeded choice of which model is shown
/// first. Throws InvalidArgument when an item lacks either candidate.
WinRateReport win_rate(const std::vector<EvalItem>& items, const std::string& model_a,
                       const std::string& model_b, genclient::Dispatcher& judge,
                       const genclient::PromptTemplate& tmpl, std::uint64_t seed,
                       int workers = 1);

/// Recomputes counts and rates from the verdicts.
void Tally(WinRateReport& report);

OrderedJson ToJson(const WinRateReport& report);

/// Lowercase, punctuation replaced by spaces, whitespace split, articles
/// (a, an, the) removed.
std::vector<std::string> NormalizeTokens(std::string_view text);

inline constexpr std::string_view kTokenizationRule =
    "lowercase; ASCII punctuation replaced by spaces; whitespace split; articles a/an/the dropped";

/// A closed answer is correct when the response's first N normalized tokens
/// equal the reference's N tokens (N = 1 for yes/no).
bool ClosedMatch(const std::string& reference, const std::string& response);

/// |unique reference tokens found in the response| / |unique reference tokens|.
/// Throws EmptyReference.
double OpenRecall(const std::string& reference, const std::string& response);

struct VqaItemResult {
  std::string item_id;
  double value = 0.0;
  bool answered = false;
};

struct VqaReport {
  std::string model;
  /// Percent over closed items.
  std::optional<double> closed_accuracy;
  /// Mean fraction over open items.
  std::optional<double> open_recall;
  std::vector<VqaItemResult> closed;
  std::vector<VqaItemResult> open;
};

/// Percent of closed items answered correctly; unanswered items count as
/// wrong. Throws InvalidArgument when there is no closed item.
double vqa_closed_accuracy(const std::vector<EvalItem>& items,
                           const std::map<std::string, std::string>& responses);

/// Mean recall over open items; unanswered items score 0. Throws
/// EmptyReference, InvalidArgument when there is no open item.
double vqa_open_recall(const std::vector<EvalItem>& items,
                       const std::map<std::string, std::string>& responses);

/// Both metrics for `model`'s candidate answers, with per-item values.
VqaReport vqa_evaluate(const std::vector<EvalItem>& items, const std::string& model);
OrderedJson ToJson(const VqaReport& report);

}  // namespace curate::evalharness
