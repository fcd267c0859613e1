#include "curate/evalharness.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <set>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::evalharness {
namespace {

constexpr std::array<std::string_view, 4> kTypeNames = {"conversation", "description", "closed",
                                                        "open"};

[[noreturn]] void Malformed(const std::string& reason) {
  throw Error(Errc::kMalformedRecord, reason);
}

std::string RequireString(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) Malformed(std::string("missing field '") + key + "'");
  if (!it->is_string()) Malformed(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

template <typename T, typename FromJson>
std::vector<T> LoadLines(const std::filesystem::path& path, FromJson from_json) {
  std::vector<T> out;
  ForEachNdjson(path, [&](std::size_t line_no, const Json& obj) {
    try {
      out.push_back(from_json(obj));
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return out;
}

const std::string& Candidate(const EvalItem& item, const std::string& model) {
  auto it = item.candidate_answers.find(model);
  if (it == item.candidate_answers.end()) {
    throw Error(Errc::kInvalidArgument, "item " + item.id + " has no answer from model " + model);
  }
  return it->second;
}

std::optional<double> Ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

OrderedJson Optional(const std::optional<double>& v) {
  return v ? OrderedJson(*v) : OrderedJson(nullptr);
}

OrderedJson AggregateJson(const Aggregate& a) {
  OrderedJson j;
  j["mean"] = a.count ? OrderedJson(a.mean) : OrderedJson(nullptr);
  j["count"] = a.count;
  return j;
}

}  // namespace

std::string_view QuestionTypeName(QuestionType type) {
  return kTypeNames[static_cast<std::size_t>(type)];
}

std::optional<QuestionType> ParseQuestionType(std::string_view name) {
  for (std::size_t i = 0; i < kTypeNames.size(); ++i) {
    if (kTypeNames[i] == name) return static_cast<QuestionType>(i);
  }
  return std::nullopt;
}

OrderedJson ToJson(const EvalItem& item) {
  OrderedJson j;
  j["id"] = item.id;
  j["question"] = item.question;
  j["reference_answer"] = item.reference_answer;
  j["candidate_answers"] = item.candidate_answers;
  j["question_type"] = QuestionTypeName(item.question_type);
  j["domain"] = corpus::DomainName(item.domain);
  if (!item.caption.empty()) j["caption"] = item.caption;
  if (!item.image_ref.empty()) j["image_ref"] = item.image_ref;
  return j;
}

EvalItem EvalItemFromJson(const Json& j) {
  if (!j.is_object()) Malformed("expected an object");
  EvalItem item;
  item.id = RequireString(j, "id");
  if (item.id.empty()) Malformed("empty id");
  item.question = RequireString(j, "question");
  item.reference_answer = RequireString(j, "reference_answer");
  if (item.reference_answer.empty()) Malformed("empty reference_answer");
  if (j.contains("candidate_answers")) {
    const auto& c = j.at("candidate_answers");
    if (!c.is_object()) Malformed("candidate_answers must be an object");
    for (const auto& [model, answer] : c.items()) {
      if (!answer.is_string()) Malformed("candidate answer must be a string");
      item.candidate_answers[model] = answer.get<std::string>();
    }
  }
  const auto type = ParseQuestionType(RequireString(j, "question_type"));
  if (!type) Malformed("unknown question_type");
  item.question_type = *type;
  const auto domain = corpus::ParseDomain(RequireString(j, "domain"));
  if (!domain) Malformed("unknown domain");
  item.domain = *domain;
  if (j.contains("caption")) item.caption = RequireString(j, "caption");
  if (j.contains("image_ref")) item.image_ref = RequireString(j, "image_ref");
  return item;
}

std::vector<EvalItem> LoadEvalItems(const std::filesystem::path& path) {
  auto items = LoadLines<EvalItem>(path, EvalItemFromJson);
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (!seen.insert(item.id).second) throw Error(Errc::kDuplicateId, item.id);
  }
  return items;
}

void WriteEvalItems(const std::filesystem::path& path, const std::vector<EvalItem>& items) {
  WriteNdjson(path, items, [](const EvalItem& i) { return ToJson(i); });
}

std::vector<Response> LoadResponses(const std::filesystem::path& path) {
  return LoadLines<Response>(path, [](const Json& j) {
    return Response{RequireString(j, "id"), RequireString(j, "model"), RequireString(j, "answer")};
  });
}

void WriteResponses(const std::filesystem::path& path, const std::vector<Response>& responses) {
  WriteNdjson(path, responses, [](const Response& r) {
    OrderedJson j;
    j["id"] = r.id;
    j["model"] = r.model;
    j["answer"] = r.answer;
    return j;
  });
}

void MergeResponses(std::vector<EvalItem>& items, const std::vector<Response>& responses) {
  std::map<std::string, EvalItem*> index;
  for (auto& item : items) index[item.id] = &item;
  for (const auto& r : responses) {
    auto it = index.find(r.id);
    if (it == index.end()) throw Error(Errc::kInvalidArgument, "response for unknown item " + r.id);
    it->second->candidate_answers[r.model] = r.answer;
  }
}

std::vector<EvalItem> FilterItems(const std::vector<EvalItem>& items,
                                  std::optional<QuestionType> type,
                                  std::optional<corpus::Domain> domain) {
  std::vector<EvalItem> out;
  for (const auto& item : items) {
    if (type && item.question_type != *type) continue;
    if (domain && item.domain != *domain) continue;
    out.push_back(item);
  }
  return out;
}

std::pair<double, double> ParseScores(const std::string& raw) {
  static const std::regex kScores(
      R"(SCORES\s*:\s*\**\s*(\d+(?:\.\d+)?)\s*(?:,|/|\s)\s*(\d+(?:\.\d+)?))",
      std::regex::icase);
  std::smatch last;
  bool found = false;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kScores);
       it != std::sregex_iterator(); ++it) {
    last = *it;
    found = true;
  }
  const std::string excerpt = raw.substr(0, 120);
  if (!found) throw Error(Errc::kUnparseableRating, "no SCORES line in: " + excerpt);
  const double a = std::stod(last[1].str());
  const double b = std::stod(last[2].str());
  if (a < 1 || a > 10 || b < 1 || b > 10) {
    throw Error(Errc::kUnparseableRating, "scores outside 1..10 in: " + excerpt);
  }
  return {a, b};
}

std::string_view WinnerName(Winner winner) {
  switch (winner) {
    case Winner::kA: return "A";
    case Winner::kB: return "B";
    case Winner::kTie: break;
  }
  return "Tie";
}

int ParseVerdict(const std::string& raw) {
  static const std::regex kVerdict(R"(VERDICT\s*:\s*\**\s*(1|2|TIE)\b)", std::regex::icase);
  std::smatch last;
  bool found = false;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kVerdict);
       it != std::sregex_iterator(); ++it) {
    last = *it;
    found = true;
  }
  if (!found) throw Error(Errc::kUnparseableVerdict, "no VERDICT line in: " + raw.substr(0, 120));
  const auto v = last[1].str();
  if (v == "1") return 1;
  if (v == "2") return 2;
  return 0;
}

ChatScoreReport score_open_chat(const std::vector<EvalItem>& items, const std::string& model,
                                genclient::Dispatcher& judge,
                                const genclient::PromptTemplate& tmpl, int workers) {
  ChatScoreReport report;
  report.model = model;
  std::vector<genclient::ChatRequest> requests;
  for (const auto& item : items) {
    auto request = tmpl.Render({{"caption", item.caption},
                                {"question", item.question},
                                {"reference", item.reference_answer},
                                {"answer", Candidate(item, model)}},
                               {"question", "reference", "answer"});
    request.kind = genclient::PromptKind::kChatScore;
    request.temperature = 0.0;
    if (!item.image_ref.empty()) {
      request.messages.back().parts.push_back(genclient::ContentPart::Image(item.image_ref));
    }
    requests.push_back(std::move(request));
    report.items.push_back({item.id, item.question_type, item.domain, 0, 0, 0, "", ""});
  }
  genclient::ParallelFor(items.size(), workers, [&](std::size_t i) {
    auto& rec = report.items[i];
    rec.raw = judge.Call(requests[i]);
    try {
      std::tie(rec.reference_score, rec.candidate_score) = ParseScores(rec.raw);
      rec.relative = 100.0 * rec.candidate_score / rec.reference_score;
    } catch (const Error& e) {
      if (e.code() != Errc::kUnparseableRating) throw;
      rec.error = e.what();
    }
  });
  Reaggregate(report);
  return report;
}

void Reaggregate(ChatScoreReport& report) {
  std::map<std::string, std::pair<double, std::size_t>> by_type, by_domain;
  double total = 0.0;
  std::size_t n = 0;
  report.unparseable = 0;
  for (const auto& rec : report.items) {
    if (!rec.error.empty()) {
      ++report.unparseable;
      continue;
    }
    auto& t = by_type[std::string(QuestionTypeName(rec.question_type))];
    t.first += rec.relative;
    ++t.second;
    auto& d = by_domain[std::string(corpus::DomainName(rec.domain))];
    d.first += rec.relative;
    ++d.second;
    total += rec.relative;
    ++n;
  }
  auto mean = [](const std::pair<double, std::size_t>& p) {
    return Aggregate{p.first / static_cast<double>(p.second), p.second};
  };
  report.by_type.clear();
  report.by_domain.clear();
  for (const auto& [k, v] : by_type) report.by_type[k] = mean(v);
  for (const auto& [k, v] : by_domain) report.by_domain[k] = mean(v);
  report.overall = n ? Aggregate{total / static_cast<double>(n), n} : Aggregate{};
}

OrderedJson ToJson(const ChatScoreReport& report) {
  OrderedJson j;
  j["model"] = report.model;
  j["metric"] = "relative score = 100 * candidate judge score / reference judge score";
  OrderedJson agg;
  OrderedJson types = OrderedJson::object();
  for (const auto& [k, v] : report.by_type) types[k] = AggregateJson(v);
  OrderedJson domains = OrderedJson::object();
  for (const auto& [k, v] : report.by_domain) domains[k] = AggregateJson(v);
  agg["by_question_type"] = types;
  agg["by_domain"] = domains;
  agg["overall"] = AggregateJson(report.overall);
  agg["unparseable"] = report.unparseable;
  j["aggregates"] = agg;
  j["items"] = OrderedJson::array();
  for (const auto& r : report.items) {
    OrderedJson i;
    i["id"] = r.item_id;
    i["question_type"] = QuestionTypeName(r.question_type);
    i["domain"] = corpus::DomainName(r.domain);
    if (r.error.empty()) {
      i["reference_score"] = r.reference_score;
      i["candidate_score"] = r.candidate_score;
      i["relative"] = r.relative;
    } else {
      i["error"] = r.error;
    }
    i["raw"] = r.raw;
    j["items"].push_back(i);
  }
  return j;
}

WinRateReport win_rate(const std::vector<EvalItem>& items, const std::string& model_a,
                       const std::string& model_b, genclient::Dispatcher& judge,
                       const genclient::PromptTemplate& tmpl, std::uint64_t seed, int workers) {
  WinRateReport report;
  report.model_a = model_a;
  report.model_b = model_b;
  std::vector<genclient::ChatRequest> requests;
  for (const auto& item : items) {
    const auto& a = Candidate(item, model_a);
    const auto& b = Candidate(item, model_b);
    const bool a_first = (DeriveSeed(seed, "order:" + item.id) & 1) == 0;
    auto request = tmpl.Render({{"question", item.question},
                                {"reference", item.reference_answer},
                                {"answer_a", a_first ? a : b},
                                {"answer_b", a_first ? b : a}},
                               {"question", "answer_a", "answer_b"});
    request.kind = genclient::PromptKind::kWinRate;
    request.temperature = 0.0;
    if (!item.image_ref.empty()) {
      request.messages.back().parts.push_back(genclient::ContentPart::Image(item.image_ref));
    }
    requests.push_back(std::move(request));
    report.verdicts.push_back({item.id, Winner::kTie, a_first, "", ""});
  }
  genclient::ParallelFor(items.size(), workers, [&](std::size_t i) {
    auto& v = report.verdicts[i];
    v.raw = judge.Call(requests[i]);
    try {
      const int pos = ParseVerdict(v.raw);
      if (pos == 0) {
        v.winner = Winner::kTie;
      } else {
        v.winner = (pos == 1) == v.a_first ? Winner::kA : Winner::kB;
      }
    } catch (const Error& e) {
      if (e.code() != Errc::kUnparseableVerdict) throw;
      v.error = e.what();
    }
  });
  Tally(report);
  return report;
}

void Tally(WinRateReport& report) {
  report.wins_a = report.wins_b = report.ties = report.unparseable = 0;
  for (const auto& v : report.verdicts) {
    if (!v.error.empty()) {
      ++report.unparseable;
    } else if (v.winner == Winner::kA) {
      ++report.wins_a;
    } else if (v.winner == Winner::kB) {
      ++report.wins_b;
    } else {
      ++report.ties;
    }
  }
  const double a = static_cast<double>(report.wins_a);
  const double b = static_cast<double>(report.wins_b);
  const double t = static_cast<double>(report.ties);
  report.win_rate_a = Ratio(a, a + b);
  report.win_rate_a_ties_half = Ratio(a + t / 2.0, a + b + t);
}

OrderedJson ToJson(const WinRateReport& r) {
  OrderedJson j;
  j["model_a"] = r.model_a;
  j["model_b"] = r.model_b;
  j["wins_a"] = r.wins_a;
  j["wins_b"] = r.wins_b;
  j["ties"] = r.ties;
  j["unparseable"] = r.unparseable;
  j["win_rate_a"] = Optional(r.win_rate_a);
  j["win_rate_a_ties_half"] = Optional(r.win_rate_a_ties_half);
  j["verdicts"] = OrderedJson::array();
  for (const auto& v : r.verdicts) {
    OrderedJson i;
    i["id"] = v.item_id;
    i["a_first"] = v.a_first;
    if (v.error.empty()) {
      i["winner"] = WinnerName(v.winner);
    } else {
      i["error"] = v.error;
    }
    i["raw"] = v.raw;
    j["verdicts"].push_back(i);
  }
  return j;
}

std::vector<std::string> NormalizeTokens(std::string_view text) {
  static const std::set<std::string> kArticles = {"a", "an", "the"};
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !kArticles.count(cur)) tokens.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c) || std::ispunct(c)) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

bool ClosedMatch(const std::string& reference, const std::string& response) {
  const auto ref = NormalizeTokens(reference);
  if (ref.empty()) throw Error(Errc::kEmptyReference, "reference '" + reference + "' has no tokens");
  const auto resp = NormalizeTokens(response);
  if (resp.size() < ref.size()) return false;
  return std::equal(ref.begin(), ref.end(), resp.begin());
}

double OpenRecall(const std::string& reference, const std::string& response) {
  const auto ref_tokens = NormalizeTokens(reference);
  const std::set<std::string> ref(ref_tokens.begin(), ref_tokens.end());
  if (ref.empty()) throw Error(Errc::kEmptyReference, "reference '" + reference + "' has no tokens");
  const auto resp_tokens = NormalizeTokens(response);
  const std::set<std::string> resp(resp_tokens.begin(), resp_tokens.end());
  std::size_t hit = 0;
  for (const auto& t : ref) hit += resp.count(t);
  return static_cast<double>(hit) / static_cast<double>(ref.size());
}

double vqa_closed_accuracy(const std::vector<EvalItem>& items,
                           const std::map<std::string, std::string>& responses) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (const auto& item : items) {
    if (item.question_type != QuestionType::kClosed) continue;
    ++total;
    auto it = responses.find(item.id);
    try {
      if (it != responses.end() && ClosedMatch(item.reference_answer, it->second)) ++correct;
    } catch (const Error& e) {
      throw Error(e.code(), "item " + item.id + ": " + e.what());
    }
  }
  if (total == 0) throw Error(Errc::kInvalidArgument, "no closed items");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double vqa_open_recall(const std::vector<EvalItem>& items,
                       const std::map<std::string, std::string>& responses) {
  std::size_t total = 0;
  double sum = 0.0;
  for (const auto& item : items) {
    if (item.question_type != QuestionType::kOpen) continue;
    ++total;
    auto it = responses.find(item.id);
    try {
      sum += OpenRecall(item.reference_answer, it == responses.end() ? "" : it->second);
    } catch (const Error& e) {
      throw Error(e.code(), "item " + item.id + ": " + e.what());
    }
  }
  if (total == 0) throw Error(Errc::kInvalidArgument, "no open items");
  return sum / static_cast<double>(total);
}

VqaReport vqa_evaluate(const std::vector<EvalItem>& items, const std::string& model) {
  VqaReport report;
  report.model = model;
  std::map<std::string, std::string> responses;
  for (const auto& item : items) {
    auto it = item.candidate_answers.find(model);
    if (it != item.candidate_answers.end()) responses[item.id] = it->second;
    const bool answered = it != item.candidate_answers.end();
    const std::string response = answered ? it->second : "";
    if (item.question_type == QuestionType::kClosed) {
      report.closed.push_back({item.id, ClosedMatch(item.reference_answer, response) ? 1.0 : 0.0, answered});
    } else if (item.question_type == QuestionType::kOpen) {
      report.open.push_back({item.id, OpenRecall(item.reference_answer, response), answered});
    }
  }
  if (!report.closed.empty()) report.closed_accuracy = vqa_closed_accuracy(items, responses);
  if (!report.open.empty()) report.open_recall = vqa_open_recall(items, responses);
  return report;
}

OrderedJson ToJson(const VqaReport& r) {
  OrderedJson j;
  j["model"] = r.model;
  j["closed_accuracy_percent"] = Optional(r.closed_accuracy);
  j["open_recall"] = Optional(r.open_recall);
  j["closed_count"] = r.closed.size();
  j["open_count"] = r.open.size();
  j["tokenization"] = kTokenizationRule;
  j["closed_rule"] = "first N normalized response tokens equal the N reference tokens";
  auto items = [](const std::vector<VqaItemResult>& v) {
    OrderedJson a = OrderedJson::array();
    for (const auto& x : v) a.push_back({{"id", x.item_id}, {"value", x.value}, {"answered", x.answered}});
    return a;
  };
  j["closed_items"] = items(r.closed);
  j["open_items"] = items(r.open);
  return j;
}

}  // namespace curate::evalharness
