#include "curate/selector.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::selector {
namespace {

double Sigmoid(double f) {
  if (f >= 0) return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

bool Unclamped(double p) { return p > kLogClamp && p < 1.0 - kLogClamp; }

double ClampedLog(double p) { return std::log(std::clamp(p, kLogClamp, 1.0 - kLogClamp)); }

// Unweighted loss of one side and its derivative with respect to f.
struct Side {
  double loss = 0.0;
  double dloss = 0.0;
};

Side SideLoss(double f, int z, LossForm form) {
  const double p = Sigmoid(f);
  const double q = Sigmoid(-f);
  Side s;
  if (z == 1) {
    s.loss -= ClampedLog(p);
    if (Unclamped(p)) s.dloss -= q;
  } else if (form == LossForm::kBce) {
    s.loss -= ClampedLog(q);
    if (Unclamped(q)) s.dloss += p;
  }
  return s;
}

// Uniform [0, 1) from the top 53 bits, independent of the standard library's
// distribution implementation.
double Unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

[[noreturn]] void BadConfig(const std::string& what) { throw Error(Errc::kConfigError, what); }

void CheckShape(const RatingModel& model, const Eigen::VectorXd& x) {
  if (static_cast<std::size_t>(x.size()) != model.d_in()) {
    throw Error(Errc::kShapeMismatch, "feature has " + std::to_string(x.size()) +
                                          " components, model expects " +
                                          std::to_string(model.d_in()));
  }
}

OrderedJson StatsJson(const EpochStats& s) {
  OrderedJson j;
  j["mean_loss"] = s.mean_loss;
  j["human_loss"] = s.human_loss;
  j["model_loss"] = s.model_loss;
  j["human_pairs"] = s.human_pairs;
  j["model_pairs"] = s.model_pairs;
  j["human_share"] = s.human_share();
  if (!s.batch_human_counts.empty()) j["batch_human_counts"] = s.batch_human_counts;
  return j;
}

void FinishStats(EpochStats& stats, const std::vector<PreferencePair>& pairs,
                 const std::vector<double>& losses) {
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    total += losses[i];
    if (pairs[i].source == preference::Source::kHuman) {
      stats.human_loss += losses[i];
      ++stats.human_pairs;
    } else {
      stats.model_loss += losses[i];
      ++stats.model_pairs;
    }
  }
  stats.mean_loss = total / static_cast<double>(pairs.size());
}

}  // namespace

OrderedJson ToJson(const FeatureSpec& spec) {
  OrderedJson j;
  j["mode"] = "concat_image_text";
  j["d_image"] = spec.d_image;
  j["d_text"] = spec.d_text;
  j["normalize"] = spec.normalize;
  return j;
}

FeatureSpec FeatureSpecFromJson(const Json& j) {
  try {
    if (j.at("mode") != "concat_image_text") BadConfig("unknown feature mode");
    FeatureSpec spec;
    spec.d_image = j.at("d_image").get<std::size_t>();
    spec.d_text = j.at("d_text").get<std::size_t>();
    spec.normalize = j.value("normalize", true);
    return spec;
  } catch (const Json::exception& e) {
    BadConfig(std::string("feature_spec: ") + e.what());
  }
}

Featurizer::Featurizer(const corpus::EmbeddingStore& store, FeatureSpec spec)
    : store_(&store), spec_(spec) {
  const auto di = store.dimension(corpus::EmbeddingKind::kImage);
  const auto dt = store.dimension(corpus::EmbeddingKind::kText);
  if ((di != 0 && di != spec.d_image) || (dt != 0 && dt != spec.d_text)) {
    throw Error(Errc::kDimensionMismatch,
                "embeddings have image/text dimensions " + std::to_string(di) + "/" +
                    std::to_string(dt) + ", feature spec expects " +
                    std::to_string(spec.d_image) + "/" + std::to_string(spec.d_text));
  }
}

Featurizer::Featurizer(const corpus::EmbeddingStore& store)
    : Featurizer(store, FeatureSpec{FeatureMode::kConcatImageText,
                                    store.dimension(corpus::EmbeddingKind::kImage),
                                    store.dimension(corpus::EmbeddingKind::kText), true}) {}

Eigen::VectorXd Featurizer::operator()(const SampleRef& sample) const {
  const auto& image = store_->Get(sample.image_id, corpus::EmbeddingKind::kImage);
  const auto& text =
      store_->Get(corpus::TextKey(sample.question, sample.answer), corpus::EmbeddingKind::kText);
  Eigen::VectorXd x(static_cast<Eigen::Index>(spec_.d_in()));
  auto put = [&](const std::vector<double>& v, Eigen::Index offset, const char* what) {
    Eigen::Map<const Eigen::VectorXd> src(v.data(), static_cast<Eigen::Index>(v.size()));
    double scale = 1.0;
    if (spec_.normalize) {
      const double norm = src.norm();
      if (norm == 0.0) {
        throw Error(Errc::kInvalidArgument, std::string("zero-norm ") + what + " embedding");
      }
      scale = 1.0 / norm;
    }
    x.segment(offset, src.size()) = src * scale;
  };
  put(image, 0, "image");
  put(text, static_cast<Eigen::Index>(spec_.d_image), "text");
  return x;
}

RatingModel::RatingModel(std::size_t d_in, std::vector<std::size_t> hidden_dims,
                         std::uint64_t seed)
    : RatingModel(Zeros(d_in, std::move(hidden_dims))) {
  seed_ = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
    auto w = weight(l);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = (2.0 * Unit(rng) - 1.0) * bound;
    }
    auto b = bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = (2.0 * Unit(rng) - 1.0) * bound;
  }
}

RatingModel RatingModel::Zeros(std::size_t d_in, std::vector<std::size_t> hidden_dims) {
  if (d_in == 0) throw Error(Errc::kShapeMismatch, "input dimension must be positive");
  RatingModel m;
  m.widths_.push_back(d_in);
  for (auto h : hidden_dims) {
    if (h == 0) throw Error(Errc::kShapeMismatch, "hidden layer width must be positive");
    m.widths_.push_back(h);
  }
  m.widths_.push_back(1);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
    m.offsets_.push_back(offset);
    offset += m.widths_[l] * m.widths_[l + 1] + m.widths_[l + 1];
  }
  m.params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
  return m;
}

std::vector<std::size_t> RatingModel::hidden_dims() const {
  if (widths_.size() < 2) return {};
  return {widths_.begin() + 1, widths_.end() - 1};
}

Eigen::Map<const Eigen::MatrixXd> RatingModel::weight(std::size_t l) const {
  return {params_.data() + offsets_[l], static_cast<Eigen::Index>(widths_[l + 1]),
          static_cast<Eigen::Index>(widths_[l])};
}

Eigen::Map<Eigen::MatrixXd> RatingModel::weight(std::size_t l) {
  return {params_.data() + offsets_[l], static_cast<Eigen::Index>(widths_[l + 1]),
          static_cast<Eigen::Index>(widths_[l])};
}

Eigen::Map<const Eigen::VectorXd> RatingModel::bias(std::size_t l) const {
  return {params_.data() + offsets_[l] + widths_[l] * widths_[l + 1],
          static_cast<Eigen::Index>(widths_[l + 1])};
}

Eigen::Map<Eigen::VectorXd> RatingModel::bias(std::size_t l) {
  return {params_.data() + offsets_[l] + widths_[l] * widths_[l + 1],
          static_cast<Eigen::Index>(widths_[l + 1])};
}

double forward(const RatingModel& model, const Eigen::VectorXd& x) {
  CheckShape(model, x);
  Eigen::VectorXd h = x;
  const std::size_t last = model.num_layers() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    h = (model.weight(l) * h + model.bias(l)).cwiseMax(0.0);
  }
  return (model.weight(last) * h + model.bias(last))(0);
}

double forward_backward(const RatingModel& model, const Eigen::VectorXd& x, double scale,
                        Eigen::VectorXd& grad) {
  CheckShape(model, x);
  if (grad.size() != model.params().size()) grad = Eigen::VectorXd::Zero(model.params().size());
  const std::size_t layers = model.num_layers();
  std::vector<Eigen::VectorXd> acts{x};
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    acts.push_back((model.weight(l) * acts.back() + model.bias(l)).cwiseMax(0.0));
  }
  const double f = (model.weight(layers - 1) * acts.back() + model.bias(layers - 1))(0);

  Eigen::VectorXd delta = Eigen::VectorXd::Constant(1, scale);
  for (std::size_t l = layers; l-- > 0;) {
    const auto& in = acts[l];
    const auto rows = delta.size();
    const auto cols = in.size();
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + model.weight_offset(l), rows, cols);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + model.weight_offset(l) + rows * cols, rows);
    gw.noalias() += delta * in.transpose();
    gb += delta;
    if (l == 0) break;
    Eigen::VectorXd back = model.weight(l).transpose() * delta;
    for (Eigen::Index i = 0; i < back.size(); ++i) {
      if (in(i) <= 0.0) back(i) = 0.0;
    }
    delta = std::move(back);
  }
  return f;
}

std::string_view LossFormName(LossForm form) {
  return form == LossForm::kBce ? "bce" : "literal_eq1";
}

LossForm ParseLossForm(std::string_view name) {
  if (name == "bce") return LossForm::kBce;
  if (name == "literal_eq1") return LossForm::kLiteralEq1;
  BadConfig("unknown loss_form '" + std::string(name) + "'");
}

double pair_weight(const PreferencePair& pair, double w_human) {
  return pair.source == preference::Source::kHuman ? pair.weight * w_human : pair.weight;
}

double loss_from_scores(double f_i, double f_j, int z_i, int z_j, double w, LossForm form) {
  const double base = SideLoss(f_i, z_i, form).loss + SideLoss(f_j, z_j, form).loss;
  return w * base;
}

double pair_loss(const RatingModel& model, const PreferencePair& pair, LossForm form,
                 double w_human) {
  return loss_from_scores(forward(model, pair.x_i), forward(model, pair.x_j), pair.z_i,
                          pair.z_j, pair_weight(pair, w_human), form);
}

double pair_loss_grad(const RatingModel& model, const PreferencePair& pair, LossForm form,
                      double w_human, Eigen::VectorXd* grad) {
  if (grad == nullptr) return pair_loss(model, pair, form, w_human);
  const double w = pair_weight(pair, w_human);
  const double f_i = forward(model, pair.x_i);
  const double f_j = forward(model, pair.x_j);
  const Side si = SideLoss(f_i, pair.z_i, form);
  const Side sj = SideLoss(f_j, pair.z_j, form);
  if (si.dloss != 0.0) forward_backward(model, pair.x_i, w * si.dloss, *grad);
  if (sj.dloss != 0.0) forward_backward(model, pair.x_j, w * sj.dloss, *grad);
  return w * (si.loss + sj.loss);
}

OrderedJson ToJson(const TrainConfig& cfg) {
  OrderedJson j;
  j["epochs"] = cfg.epochs;
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["w_human"] = cfg.w_human;
  j["loss_form"] = LossFormName(cfg.loss_form);
  j["seed"] = cfg.seed;
  OrderedJson opt;
  opt["kind"] = cfg.optimizer.kind == OptimizerConfig::Kind::kAdam ? "adam" : "sgd";
  opt["beta1"] = cfg.optimizer.beta1;
  opt["beta2"] = cfg.optimizer.beta2;
  opt["epsilon"] = cfg.optimizer.epsilon;
  j["optimizer"] = opt;
  j["hidden_dims"] = cfg.hidden_dims;
  return j;
}

TrainConfig TrainConfigFromJson(const Json& j) {
  TrainConfig cfg;
  if (!j.is_object()) BadConfig("selector config must be an object");
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.w_human = j.value("w_human", cfg.w_human);
    if (j.contains("loss_form")) cfg.loss_form = ParseLossForm(j.at("loss_form").get<std::string>());
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      const auto kind = o.value("kind", std::string("adam"));
      if (kind == "adam") {
        cfg.optimizer.kind = OptimizerConfig::Kind::kAdam;
      } else if (kind == "sgd") {
        cfg.optimizer.kind = OptimizerConfig::Kind::kSgd;
      } else {
        BadConfig("unknown optimizer '" + kind + "'");
      }
      cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
      cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
      cfg.optimizer.epsilon = o.value("epsilon", cfg.optimizer.epsilon);
    }
    if (j.contains("hidden_dims")) cfg.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  } catch (const Json::exception& e) {
    BadConfig(std::string("selector config: ") + e.what());
  }
  Validate(cfg);
  return cfg;
}

void Validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) BadConfig("epochs must be >= 1");
  if (!std::isfinite(cfg.learning_rate) || cfg.learning_rate < 0) {
    BadConfig("learning_rate must be finite and non-negative");
  }
  if (cfg.batch_size < 1) BadConfig("batch_size must be >= 1");
  if (!std::isfinite(cfg.w_human) || cfg.w_human <= 0) BadConfig("w_human must be positive");
  for (auto h : cfg.hidden_dims) {
    if (h == 0) BadConfig("hidden_dims entries must be positive");
  }
  const auto& o = cfg.optimizer;
  if (o.beta1 < 0 || o.beta1 >= 1 || o.beta2 < 0 || o.beta2 >= 1 || !(o.epsilon > 0)) {
    BadConfig("adam parameters out of range");
  }
}

double EpochStats::human_share() const {
  const double total = human_loss + model_loss;
  return total > 0 ? human_loss / total : 0.0;
}

OrderedJson ToJson(const TrainReport& report) {
  OrderedJson j;
  j["initial"] = StatsJson(report.initial);
  j["epochs"] = OrderedJson::array();
  for (const auto& e : report.epochs) j["epochs"].push_back(StatsJson(e));
  return j;
}

TrainResult train(const std::vector<PreferencePair>& pairs, const TrainConfig& cfg,
                  std::size_t d_in) {
  Validate(cfg);
  if (pairs.empty()) throw Error(Errc::kInvalidArgument, "no training pairs");
  for (const auto& p : pairs) {
    if (static_cast<std::size_t>(p.x_i.size()) != d_in ||
        static_cast<std::size_t>(p.x_j.size()) != d_in) {
      throw Error(Errc::kShapeMismatch, "pair features do not match d_in " + std::to_string(d_in));
    }
  }

  TrainResult result{RatingModel(d_in, cfg.hidden_dims, cfg.seed), {}};
  RatingModel& model = result.model;
  const auto n_params = model.params().size();
  const std::size_t n = pairs.size();

  std::vector<double> losses(n);
  for (std::size_t i = 0; i < n; ++i) {
    losses[i] = pair_loss(model, pairs[i], cfg.loss_form, cfg.w_human);
  }
  FinishStats(result.report.initial, pairs, losses);

  Eigen::VectorXd grad(n_params);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
  std::int64_t step = 0;
  const auto& opt = cfg.optimizer;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(DeriveSeed(cfg.seed, "shuffle"));

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      grad.setZero();
      std::size_t humans = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& pair = pairs[order[k]];
        if (pair.source == preference::Source::kHuman) ++humans;
        losses[order[k]] = pair_loss_grad(model, pair, cfg.loss_form, cfg.w_human, &grad);
      }
      stats.batch_human_counts.push_back(humans);
      grad /= static_cast<double>(end - start);
      ++step;
      if (opt.kind == OptimizerConfig::Kind::kSgd) {
        model.params() -= cfg.learning_rate * grad;
      } else {
        m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
        v = opt.beta2 * v + (1.0 - opt.beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
        model.params().array() -=
            cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.epsilon);
      }
    }
    FinishStats(stats, pairs, losses);
    result.report.epochs.push_back(std::move(stats));
    if (!std::isfinite(result.report.epochs.back().mean_loss) || !model.params().allFinite()) {
      throw Error(Errc::kDivergenceDetected,
                  "epoch " + std::to_string(epoch) + ": mean loss " +
                      std::to_string(result.report.epochs.back().mean_loss));
    }
  }
  return result;
}

ScoreResult score(const RatingModel& model, const std::vector<ScoreItem>& items,
                  const preference::FeatureFn& featurize, std::size_t threads) {
  std::set<std::string_view> seen;
  for (const auto& item : items) {
    if (!seen.insert(item.id).second) throw Error(Errc::kDuplicateId, item.id);
  }
  const std::size_t n = items.size();
  std::vector<double> values(n);
  std::vector<char> ok(n, 0);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        values[i] = forward(model, featurize(items[i].sample));
        ok[i] = 1;
      } catch (const Error& e) {
        if (e.code() != Errc::kMissingEmbedding) throw;
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads <= 1) {
    run(0, n);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          run(t * chunk, std::min(n, (t + 1) * chunk));
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  ScoreResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      result.scores.emplace(items[i].id, values[i]);
    } else {
      result.missing.push_back(items[i].id);
    }
  }
  std::sort(result.missing.begin(), result.missing.end());
  return result;
}

OrderedJson ToJson(const Checkpoint& c) {
  OrderedJson j;
  j["d_in"] = c.model.d_in();
  j["hidden_dims"] = c.model.hidden_dims();
  j["activation"] = "relu";
  j["seed"] = c.model.seed();
  j["feature_spec"] = ToJson(c.spec);
  j["config"] = ToJson(c.config);
  const auto& p = c.model.params();
  j["params"] = std::vector<double>(p.data(), p.data() + p.size());
  return j;
}

Checkpoint CheckpointFromJson(const Json& j) {
  try {
    Checkpoint c;
    c.model = RatingModel::Zeros(j.at("d_in").get<std::size_t>(),
                                 j.at("hidden_dims").get<std::vector<std::size_t>>());
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != static_cast<std::size_t>(c.model.params().size())) {
      throw Error(Errc::kShapeMismatch, "checkpoint has " + std::to_string(params.size()) +
                                            " parameters, shapes need " +
                                            std::to_string(c.model.params().size()));
    }
    c.model = RatingModel(c.model.d_in(), c.model.hidden_dims(), j.at("seed").get<std::uint64_t>());
    c.model.params() = Eigen::Map<const Eigen::VectorXd>(params.data(), c.model.params().size());
    if (!c.model.params().allFinite()) throw Error(Errc::kNonFiniteComponent, "checkpoint parameters");
    c.spec = FeatureSpecFromJson(j.at("feature_spec"));
    c.config = TrainConfigFromJson(j.at("config"));
    return c;
  } catch (const Json::exception& e) {
    throw Error(Errc::kMalformedRecord, std::string("checkpoint: ") + e.what());
  }
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  WriteTextFile(path, ToJson(checkpoint).dump() + "\n");
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(ReadTextFile(path));
  } catch (const Json::exception& e) {
    throw Error(Errc::kMalformedRecord, std::string("checkpoint: ") + e.what());
  }
  return CheckpointFromJson(j);
}

std::vector<double> HashEmbed(std::string_view text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  if (dim == 0) return v;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : token) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    v[h % dim] += (h >> 63) ? -1.0 : 1.0;
    token.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v[0] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace curate::selector
