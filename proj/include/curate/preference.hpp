#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "curate/corpus.hpp"
#include "curate/ndjson.hpp"

namespace curate::preference {

enum class Choice { kFirst, kSecond, kBoth, kNeither };

/// Wire names "First", "Second", "Both", "Neither".
std::string_view ChoiceName(Choice choice);
std::optional<Choice> ParseChoice(std::string_view name);

struct HumanPreference {
  std::string task_id;
  std::string image_id;
  std::string question;
  std::string answer_a;
  std::string answer_b;
  Choice choice = Choice::kBoth;
  std::string annotator;
  std::int64_t timestamp = 0;

  /// Identical answers carry no ordering, so First/Second collapse to Both.
  Choice EffectiveChoice() const;
  std::string SampleA() const;
  std::string SampleB() const;

  friend bool operator==(const HumanPreference&, const HumanPreference&) = default;
};

struct ModelRating {
  std::string sample_id;
  std::string image_id;
  std::string question;
  std::string answer;
  int score = 0;
  /// Used to pair ratings within one imaging domain; optional on disk.
  std::optional<corpus::Domain> domain;

  friend bool operator==(const ModelRating&, const ModelRating&) = default;
};

enum class Source { kHuman, kModel };
std::string_view SourceName(Source source);

/// The (image, question, answer) triple a score or feature refers to.
struct SampleRef {
  std::string image_id;
  std::string question;
  std::string answer;
};

std::string SampleKey(const SampleRef& ref);

using FeatureFn = std::function<Eigen::VectorXd(const SampleRef&)>;

struct PreferencePair {
  Eigen::VectorXd x_i;
  Eigen::VectorXd x_j;
  int z_i = 1;
  int z_j = 0;
  /// Per-pair multiplier; the trainer additionally applies w_human to
  /// human-source pairs.
  double weight = 1.0;
  Source source = Source::kModel;
  std::string id_i;
  std::string id_j;
};

std::pair<int, int> z_assign(double r_i, double r_j);

/// One pair per First/Second annotation, none for Both/Neither.
/// Throws MissingEmbedding via the feature function.
std::vector<PreferencePair> pairs_from_human(const std::vector<HumanPreference>& prefs,
                                             const FeatureFn& featurize);

struct ModelPairing {
  std::vector<PreferencePair> pairs;
  std::size_t matched = 0;
  std::size_t ties_dropped = 0;
  std::size_t leftover = 0;
};

/// Seeded disjoint matching, within a domain first, then across domains for
/// the leftovers. Equal-score matches are dropped.
ModelPairing pairs_from_model(const std::vector<ModelRating>& ratings,
                              const FeatureFn& featurize, std::uint64_t seed);

enum class Label { kPositive, kNegative };

inline constexpr int kDefaultThreshold = 7;

/// Human labels override model labels; among human annotations of the same
/// sample the later one wins.
std::map<std::string, Label> derive_binary_labels(const std::vector<HumanPreference>& prefs,
                                                  const std::vector<ModelRating>& ratings,
                                                  int threshold = kDefaultThreshold);

/// Plurality over redundant annotations of one task; a tie for first place
/// is Both. Empty input is InvalidArgument.
Choice majority_choice(const std::vector<Choice>& votes);

OrderedJson ToJson(const HumanPreference& pref);
HumanPreference HumanPreferenceFromJson(const Json& json);
OrderedJson ToJson(const ModelRating& rating);
ModelRating ModelRatingFromJson(const Json& json);

std::vector<HumanPreference> LoadHumanPreferences(const std::filesystem::path& path);
void WriteHumanPreferences(const std::filesystem::path& path,
                           const std::vector<HumanPreference>& prefs);
std::vector<ModelRating> LoadModelRatings(const std::filesystem::path& path);
void WriteModelRatings(const std::filesystem::path& path,
                       const std::vector<ModelRating>& ratings);

}  // namespace curate::preference
