#include "curate/preference.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::preference {
namespace {

constexpr std::array<std::string_view, 4> kChoiceNames = {"First", "Second", "Both", "Neither"};

[[noreturn]] void Malformed(const std::string& reason) {
  throw Error(Errc::kMalformedRecord, reason);
}

std::string RequireString(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) Malformed(std::string("missing field '") + key + "'");
  if (!it->is_string()) Malformed(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

std::int64_t RequireInteger(const Json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) Malformed(std::string("missing field '") + key + "'");
  if (!it->is_number_integer()) Malformed(std::string("field '") + key + "' must be an integer");
  return it->get<std::int64_t>();
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

PreferencePair MakePair(const SampleRef& a, const SampleRef& b, double r_a, double r_b,
                        Source source, const FeatureFn& featurize) {
  PreferencePair pair;
  pair.x_i = featurize(a);
  pair.x_j = featurize(b);
  std::tie(pair.z_i, pair.z_j) = z_assign(r_a, r_b);
  pair.source = source;
  pair.id_i = SampleKey(a);
  pair.id_j = SampleKey(b);
  return pair;
}

}  // namespace

std::string SampleKey(const SampleRef& ref) {
  return corpus::SampleKey(ref.image_id, ref.question, ref.answer);
}

std::string_view ChoiceName(Choice choice) { return kChoiceNames[static_cast<std::size_t>(choice)]; }

std::optional<Choice> ParseChoice(std::string_view name) {
  for (std::size_t i = 0; i < kChoiceNames.size(); ++i) {
    if (kChoiceNames[i] == name) return static_cast<Choice>(i);
  }
  return std::nullopt;
}

std::string_view SourceName(Source source) { return source == Source::kHuman ? "human" : "model"; }

Choice HumanPreference::EffectiveChoice() const {
  if (answer_a == answer_b && (choice == Choice::kFirst || choice == Choice::kSecond)) {
    return Choice::kBoth;
  }
  return choice;
}

std::string HumanPreference::SampleA() const { return corpus::SampleKey(image_id, question, answer_a); }
std::string HumanPreference::SampleB() const { return corpus::SampleKey(image_id, question, answer_b); }

std::pair<int, int> z_assign(double r_i, double r_j) {
  if (r_i >= r_j) return {1, 0};
  return {0, 1};
}

std::vector<PreferencePair> pairs_from_human(const std::vector<HumanPreference>& prefs,
                                             const FeatureFn& featurize) {
  std::vector<PreferencePair> pairs;
  for (const auto& p : prefs) {
    const Choice c = p.EffectiveChoice();
    if (c != Choice::kFirst && c != Choice::kSecond) continue;
    const double r_a = c == Choice::kFirst ? 1.0 : 0.0;
    pairs.push_back(MakePair({p.image_id, p.question, p.answer_a},
                             {p.image_id, p.question, p.answer_b}, r_a, 1.0 - r_a,
                             Source::kHuman, featurize));
  }
  return pairs;
}

ModelPairing pairs_from_model(const std::vector<ModelRating>& ratings,
                              const FeatureFn& featurize, std::uint64_t seed) {
  ModelPairing out;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    const auto& d = ratings[i].domain;
    groups[d ? std::string(corpus::DomainName(*d)) : std::string()].push_back(i);
  }

  auto match = [&](const ModelRating& a, const ModelRating& b) {
    ++out.matched;
    if (a.score == b.score) {
      ++out.ties_dropped;
      return;
    }
    out.pairs.push_back(MakePair({a.image_id, a.question, a.answer},
                                 {b.image_id, b.question, b.answer}, a.score, b.score,
                                 Source::kModel, featurize));
    out.pairs.back().id_i = a.sample_id;
    out.pairs.back().id_j = b.sample_id;
  };

  std::vector<std::size_t> leftovers;
  for (auto& [name, members] : groups) {
    std::mt19937_64 rng(DeriveSeed(seed, "domain:" + name));
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t i = 0;
    for (; i + 1 < members.size(); i += 2) match(ratings[members[i]], ratings[members[i + 1]]);
    if (i < members.size()) leftovers.push_back(members[i]);
  }
  std::mt19937_64 rng(DeriveSeed(seed, "leftover"));
  std::shuffle(leftovers.begin(), leftovers.end(), rng);
  std::size_t i = 0;
  for (; i + 1 < leftovers.size(); i += 2) match(ratings[leftovers[i]], ratings[leftovers[i + 1]]);
  out.leftover = leftovers.size() - i;
  return out;
}

std::map<std::string, Label> derive_binary_labels(const std::vector<HumanPreference>& prefs,
                                                  const std::vector<ModelRating>& ratings,
                                                  int threshold) {
  if (threshold < 0 || threshold > 10) {
    throw Error(Errc::kInvalidArgument, "threshold must be in 0..10");
  }
  std::map<std::string, Label> labels;
  for (const auto& r : ratings) {
    labels[r.sample_id] = r.score >= threshold ? Label::kPositive : Label::kNegative;
  }
  for (const auto& p : prefs) {
    Label a = Label::kNegative;
    Label b = Label::kNegative;
    switch (p.EffectiveChoice()) {
      case Choice::kFirst: a = Label::kPositive; break;
      case Choice::kSecond: b = Label::kPositive; break;
      case Choice::kBoth: a = b = Label::kPositive; break;
      case Choice::kNeither: break;
    }
    labels[p.SampleA()] = a;
    labels[p.SampleB()] = b;
  }
  return labels;
}

Choice majority_choice(const std::vector<Choice>& votes) {
  if (votes.empty()) throw Error(Errc::kInvalidArgument, "no votes");
  std::array<int, 4> counts{};
  for (Choice c : votes) ++counts[static_cast<std::size_t>(c)];
  const int top = *std::max_element(counts.begin(), counts.end());
  if (std::count(counts.begin(), counts.end(), top) > 1) return Choice::kBoth;
  return static_cast<Choice>(std::find(counts.begin(), counts.end(), top) - counts.begin());
}

OrderedJson ToJson(const HumanPreference& p) {
  OrderedJson j;
  j["task_id"] = p.task_id;
  j["image_id"] = p.image_id;
  j["question"] = p.question;
  j["answer_a"] = p.answer_a;
  j["answer_b"] = p.answer_b;
  j["choice"] = ChoiceName(p.choice);
  j["annotator"] = p.annotator;
  j["timestamp"] = p.timestamp;
  return j;
}

HumanPreference HumanPreferenceFromJson(const Json& j) {
  if (!j.is_object()) Malformed("expected an object");
  HumanPreference p;
  p.task_id = RequireString(j, "task_id");
  p.image_id = RequireString(j, "image_id");
  p.question = RequireString(j, "question");
  p.answer_a = RequireString(j, "answer_a");
  p.answer_b = RequireString(j, "answer_b");
  auto choice = ParseChoice(RequireString(j, "choice"));
  if (!choice) Malformed("unknown choice");
  p.choice = *choice;
  p.annotator = RequireString(j, "annotator");
  p.timestamp = RequireInteger(j, "timestamp");
  return p;
}

OrderedJson ToJson(const ModelRating& r) {
  OrderedJson j;
  j["sample_id"] = r.sample_id;
  j["image_id"] = r.image_id;
  j["question"] = r.question;
  j["answer"] = r.answer;
  j["score"] = r.score;
  if (r.domain) j["domain"] = corpus::DomainName(*r.domain);
  return j;
}

ModelRating ModelRatingFromJson(const Json& j) {
  if (!j.is_object()) Malformed("expected an object");
  ModelRating r;
  r.sample_id = RequireString(j, "sample_id");
  r.image_id = RequireString(j, "image_id");
  r.question = RequireString(j, "question");
  r.answer = RequireString(j, "answer");
  const auto score = RequireInteger(j, "score");
  if (score < 0 || score > 10) Malformed("score out of range 0..10");
  r.score = static_cast<int>(score);
  if (j.contains("domain")) {
    auto d = corpus::ParseDomain(RequireString(j, "domain"));
    if (!d) Malformed("unknown domain");
    r.domain = d;
  }
  return r;
}

std::vector<HumanPreference> LoadHumanPreferences(const std::filesystem::path& path) {
  return LoadLines<HumanPreference>(path, HumanPreferenceFromJson);
}

void WriteHumanPreferences(const std::filesystem::path& path,
                           const std::vector<HumanPreference>& prefs) {
  WriteNdjson(path, prefs, [](const HumanPreference& p) { return ToJson(p); });
}

std::vector<ModelRating> LoadModelRatings(const std::filesystem::path& path) {
  return LoadLines<ModelRating>(path, ModelRatingFromJson);
}

void WriteModelRatings(const std::filesystem::path& path, const std::vector<ModelRating>& ratings) {
  WriteNdjson(path, ratings, [](const ModelRating& r) { return ToJson(r); });
}

}  // namespace curate::preference
