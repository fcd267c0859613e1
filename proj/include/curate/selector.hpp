#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "curate/corpus.hpp"
#include "curate/ndjson.hpp"
#include "curate/preference.hpp"

namespace curate::selector {

using preference::PreferencePair;
using preference::SampleRef;

enum class FeatureMode { kConcatImageText };

struct FeatureSpec {
  FeatureMode mode = FeatureMode::kConcatImageText;
  std::size_t d_image = 0;
  std::size_t d_text = 0;
  bool normalize = true;

  std::size_t d_in() const { return d_image + d_text; }
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

OrderedJson ToJson(const FeatureSpec& spec);
FeatureSpec FeatureSpecFromJson(const Json& json);

/// Image embedding of `image_id` followed by the text embedding stored under
/// corpus::TextKey(question, answer), each L2-normalized when requested.
class Featurizer {
 public:
  /// Throws DimensionMismatch when the store disagrees with the FeatureSpec dimensions.
  Featurizer(const corpus::EmbeddingStore& store, FeatureSpec spec);
  /// Spec taken from the dimensions present in the store.
  explicit Featurizer(const corpus::EmbeddingStore& store);

  /// Throws MissingEmbedding.
  Eigen::VectorXd operator()(const SampleRef& sample) const;
  const FeatureSpec& spec() const { return spec_; }

 private:
  const corpus::EmbeddingStore* store_;
  FeatureSpec spec_;
};

/// Feed-forward scorer: rectifier hidden layers and a scalar linear output.
/// All parameters live in one flat vector, layer by layer, each layer's
/// weight matrix (out x in, column-major) followed by its bias.
class RatingModel {
 public:
  RatingModel() = default;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from `seed`.
  RatingModel(std::size_t d_in, std::vector<std::size_t> hidden_dims, std::uint64_t seed);
  static RatingModel Zeros(std::size_t d_in, std::vector<std::size_t> hidden_dims);

  std::size_t d_in() const { return widths_.empty() ? 0 : widths_.front(); }
  std::vector<std::size_t> hidden_dims() const;
  std::uint64_t seed() const { return seed_; }
  std::size_t num_layers() const { return widths_.empty() ? 0 : widths_.size() - 1; }

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);

  const Eigen::VectorXd& params() const { return params_; }
  Eigen::VectorXd& params() { return params_; }
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  friend bool operator==(const RatingModel& a, const RatingModel& b) {
    return a.widths_ == b.widths_ && a.seed_ == b.seed_ && a.params_ == b.params_;
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  Eigen::VectorXd params_;
  std::uint64_t seed_ = 0;
};

/// Pre-sigmoid score f(x). Throws ShapeMismatch.
double forward(const RatingModel& model, const Eigen::VectorXd& x);

/// f(x), adding `scale` * df/dparams into `grad` (same layout as params()).
double forward_backward(const RatingModel& model, const Eigen::VectorXd& x, double scale,
                        Eigen::VectorXd& grad);

enum class LossForm { kLiteralEq1, kBce };
std::string_view LossFormName(LossForm form);
LossForm ParseLossForm(std::string_view name);

inline constexpr double kLogClamp = 1e-12;

/// Effective multiplier: pair.weight, times w_human for human pairs.
double pair_weight(const PreferencePair& pair, double w_human);

/// Loss from precomputed scores, with weight `w` applied last.
double loss_from_scores(double f_i, double f_j, int z_i, int z_j, double w, LossForm form);

double pair_loss(const RatingModel& model, const PreferencePair& pair, LossForm form,
                 double w_human = 1.0);

/// pair_loss, also accumulating its parameter gradient into `grad` when
/// non-null.
double pair_loss_grad(const RatingModel& model, const PreferencePair& pair, LossForm form,
                      double w_human, Eigen::VectorXd* grad);

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int epochs = 6;
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  double w_human = 1.0;
  LossForm loss_form = LossForm::kBce;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  std::vector<std::size_t> hidden_dims{256};
};

OrderedJson ToJson(const TrainConfig& cfg);
/// Missing keys keep their defaults; invalid values raise ConfigError.
TrainConfig TrainConfigFromJson(const Json& json);
void Validate(const TrainConfig& cfg);

/// Loss accounting over one pass. Source losses are weighted sums.
struct EpochStats {
  double mean_loss = 0.0;
  double human_loss = 0.0;
  double model_loss = 0.0;
  std::size_t human_pairs = 0;
  std::size_t model_pairs = 0;
  std::vector<std::size_t> batch_human_counts;

  double human_share() const;
};

struct TrainReport {
  /// Losses at the initial parameters, before any update.
  EpochStats initial;
  std::vector<EpochStats> epochs;
};

OrderedJson ToJson(const TrainReport& report);

struct TrainResult {
  RatingModel model;
  TrainReport report;
};

/// Seeded minibatch training over the union of both pair sources.
/// Throws InvalidArgument on empty input, ShapeMismatch on feature size,
/// DivergenceDetected when an epoch's mean loss is not finite.
TrainResult train(const std::vector<PreferencePair>& pairs, const TrainConfig& cfg,
                  std::size_t d_in);

struct ScoreItem {
  std::string id;
  SampleRef sample;
};

struct ScoreResult {
  std::map<std::string, double> scores;
  /// Items skipped for want of an embedding, by id.
  std::vector<std::string> missing;
};

/// Throws DuplicateId; samples without embeddings are reported in `missing`.
ScoreResult score(const RatingModel& model, const std::vector<ScoreItem>& items,
                  const preference::FeatureFn& featurize, std::size_t threads = 1);

struct Checkpoint {
  RatingModel model;
  FeatureSpec spec;
  TrainConfig config;
};

OrderedJson ToJson(const Checkpoint& checkpoint);
Checkpoint CheckpointFromJson(const Json& json);
void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

/// Offline stand-in for a text encoder: signed feature hashing of lowercase
/// alphanumeric tokens, L2-normalized.
std::vector<double> HashEmbed(std::string_view text, std::size_t dim);

}  // namespace curate::selector
