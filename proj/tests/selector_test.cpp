#include <doctest.h>

#include <cmath>
#include <random>

#include "curate/selector.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace curate;
using namespace curate::selector;
using curate::corpus::EmbeddingKind;
using curate::preference::Source;
using curate::testing::CaptureErrc;
using curate::testing::TempDir;

namespace {

Eigen::VectorXd RandomVector(std::mt19937_64& rng, int d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = n(rng);
  return v;
}

PreferencePair RandomPair(std::mt19937_64& rng, int d) {
  PreferencePair p;
  p.x_i = RandomVector(rng, d);
  p.x_j = RandomVector(rng, d);
  const bool first = rng() % 2;
  p.z_i = first ? 1 : 0;
  p.z_j = 1 - p.z_i;
  p.source = rng() % 2 ? Source::kHuman : Source::kModel;
  return p;
}

corpus::EmbeddingStore SmallStore() {
  corpus::EmbeddingStore store;
  store.Insert({"img", EmbeddingKind::kImage, {1.0, 0.0}});
  store.Insert({corpus::TextKey("q", "a"), EmbeddingKind::kText, {0.0, 2.0}});
  return store;
}

}  // namespace

TEST_CASE("featurize") {
  const auto store = SmallStore();
  const Featurizer featurize(store);
  CHECK(featurize.spec().d_in() == 4);
  const auto x = featurize({"img", "q", "a"});
  REQUIRE(x.size() == 4);
  CHECK(x(0) == 1.0);
  CHECK(x(1) == 0.0);
  CHECK(x(2) == 0.0);
  CHECK(x(3) == 1.0);
  CHECK(CaptureErrc([&] { featurize({"img", "q", "other"}); }) == Errc::kMissingEmbedding);
  CHECK(CaptureErrc([&] { featurize({"nope", "q", "a"}); }) == Errc::kMissingEmbedding);
  CHECK(CaptureErrc([&] { Featurizer(store, FeatureSpec{FeatureMode::kConcatImageText, 3, 2, true}); }) ==
        Errc::kDimensionMismatch);
  const Featurizer raw(store, FeatureSpec{FeatureMode::kConcatImageText, 2, 2, false});
  CHECK(raw({"img", "q", "a"})(3) == 2.0);
}

TEST_CASE("forward") {
  Eigen::VectorXd x = Eigen::VectorXd::Random(5);
  CHECK(forward(RatingModel::Zeros(5, {}), x) == 0.0);
  CHECK(forward(RatingModel::Zeros(5, {7, 3}), x) == 0.0);

  auto linear = RatingModel::Zeros(5, {});
  linear.weight(0)(0, 0) = 1.0;
  CHECK(forward(linear, Eigen::VectorXd::Unit(5, 0)) == 1.0);

  const RatingModel model(5, {16, 8}, 3);
  CHECK(forward(model, x) == forward(model, x));
  CHECK(model == RatingModel(5, {16, 8}, 3));
  CHECK_FALSE(model == RatingModel(5, {16, 8}, 4));
  CHECK(CaptureErrc([&] { forward(model, Eigen::VectorXd::Zero(4)); }) == Errc::kShapeMismatch);

  // Explicit two-layer evaluation.
  const Eigen::VectorXd h = (model.weight(0) * x + model.bias(0)).cwiseMax(0.0);
  const Eigen::VectorXd h2 = (model.weight(1) * h + model.bias(1)).cwiseMax(0.0);
  CHECK(forward(model, x) == doctest::Approx((model.weight(2) * h2 + model.bias(2))(0)).epsilon(1e-12));
}

TEST_CASE("initialization bounds") {
  const RatingModel model(64, {256}, 7);
  CHECK(model.params().size() == 64 * 256 + 256 + 256 + 1);
  CHECK(model.weight(0).cwiseAbs().maxCoeff() <= 1.0 / 8.0);
  CHECK(model.weight(1).cwiseAbs().maxCoeff() <= 1.0 / 16.0);
  CHECK(model.weight(0).cwiseAbs().maxCoeff() > 0.1);
}

TEST_CASE("pair_loss examples") {
  const auto zero = RatingModel::Zeros(3, {4});
  PreferencePair p;
  p.x_i = Eigen::VectorXd::Ones(3);
  p.x_j = Eigen::VectorXd::Zero(3);
  p.z_i = 1;
  p.z_j = 0;
  CHECK(pair_loss(zero, p, LossForm::kLiteralEq1) == doctest::Approx(std::log(2.0)));
  CHECK(pair_loss(zero, p, LossForm::kBce) == doctest::Approx(2 * std::log(2.0)));
  p.source = Source::kHuman;
  CHECK(pair_loss(zero, p, LossForm::kLiteralEq1, 400) == doctest::Approx(400 * std::log(2.0)));
  p.source = Source::kModel;
  CHECK(pair_loss(zero, p, LossForm::kLiteralEq1, 400) == doctest::Approx(std::log(2.0)));
  // Clamped logs keep extreme scores finite.
  CHECK(loss_from_scores(-1e6, 1e6, 1, 0, 1.0, LossForm::kBce) == doctest::Approx(-2 * std::log(1e-12)));
}

TEST_CASE("loss properties") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int t = 0; t < 1000; ++t) {
    const double fi = n(rng);
    const double fj = n(rng);
    const int zi = static_cast<int>(rng() % 2);
    for (auto form : {LossForm::kLiteralEq1, LossForm::kBce}) {
      const double base = loss_from_scores(fi, fj, zi, 1 - zi, 1.0, form);
      CHECK(base >= 0.0);
      for (double w : {2.0, 0.5, 1024.0, 400.0, 3.7}) {
        CHECK(loss_from_scores(fi, fj, zi, 1 - zi, w, form) == w * base);
      }
    }
    // bce with z=(1,0): decreasing in f_i, increasing in f_j
    CHECK(loss_from_scores(fi + 0.5, fj, 1, 0, 1, LossForm::kBce) <
          loss_from_scores(fi, fj, 1, 0, 1, LossForm::kBce));
    CHECK(loss_from_scores(fi, fj + 0.5, 1, 0, 1, LossForm::kBce) >
          loss_from_scores(fi, fj, 1, 0, 1, LossForm::kBce));
  }
}

TEST_CASE("analytic gradient matches finite differences") {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 20; ++t) {
    const int d = 2 + static_cast<int>(rng() % 7);
    std::vector<std::size_t> hidden;
    for (std::size_t l = 0, layers = rng() % 3; l < layers; ++l) hidden.push_back(1 + rng() % 12);
    RatingModel model(d, hidden, rng());
    const auto pair = RandomPair(rng, d);
    for (auto form : {LossForm::kLiteralEq1, LossForm::kBce}) {
      Eigen::VectorXd analytic = Eigen::VectorXd::Zero(model.params().size());
      pair_loss_grad(model, pair, form, 3.0, &analytic);
      const auto numeric = curate::testing::NumericGradient(
          model.params(), [&] { return pair_loss(model, pair, form, 3.0); });
      CHECK(curate::testing::RelativeError(analytic, numeric) < 1e-4);
    }
  }
}

TEST_CASE("training: linearly separable pairs") {
  std::mt19937_64 rng(5);
  const int d = 16;
  auto make = [&](std::size_t n) {
    std::vector<PreferencePair> pairs;
    for (std::size_t k = 0; k < n; ++k) {
      PreferencePair p;
      Eigen::VectorXd base = RandomVector(rng, d, 0.3);
      Eigen::VectorXd better = RandomVector(rng, d, 0.3);
      better(0) += 1.0;
      const bool flip = rng() % 2;
      p.x_i = flip ? base : better;
      p.x_j = flip ? better : base;
      p.z_i = flip ? 0 : 1;
      p.z_j = 1 - p.z_i;
      pairs.push_back(std::move(p));
    }
    return pairs;
  };
  const auto train_pairs = make(2000);
  const auto holdout = make(500);
  const auto result = train(train_pairs, TrainConfig{}, d);
  // brute-force ordering check
  std::size_t correct = 0;
  for (const auto& p : holdout) {
    const bool i_higher = forward(result.model, p.x_i) > forward(result.model, p.x_j);
    if (i_higher == (p.z_i == 1)) ++correct;
  }
  CHECK(static_cast<double>(correct) / holdout.size() >= 0.95);
  REQUIRE(result.report.epochs.size() == 6);
  CHECK(result.report.epochs.back().mean_loss < result.report.initial.mean_loss);
}

TEST_CASE("training: zero learning rate") {
  std::mt19937_64 rng(6);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 300; ++i) pairs.push_back(RandomPair(rng, 6));
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.hidden_dims = {8};
  const auto result = train(pairs, cfg, 6);
  CHECK(result.model == RatingModel(6, {8}, cfg.seed));
  for (const auto& e : result.report.epochs) CHECK(e.mean_loss == result.report.initial.mean_loss);
  cfg.optimizer.kind = OptimizerConfig::Kind::kSgd;
  CHECK(train(pairs, cfg, 6).model == RatingModel(6, {8}, cfg.seed));
}

TEST_CASE("training: determinism and options") {
  std::mt19937_64 rng(7);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 200; ++i) pairs.push_back(RandomPair(rng, 5));
  TrainConfig cfg;
  cfg.hidden_dims = {12};
  cfg.seed = 17;
  cfg.learning_rate = 1e-2;
  const auto a = train(pairs, cfg, 5);
  const auto b = train(pairs, cfg, 5);
  CHECK(a.model == b.model);
  cfg.seed = 18;
  CHECK_FALSE(train(pairs, cfg, 5).model == a.model);

  cfg.optimizer.kind = OptimizerConfig::Kind::kSgd;
  cfg.loss_form = LossForm::kLiteralEq1;
  CHECK(train(pairs, cfg, 5).report.epochs.size() == 6);

  CHECK(CaptureErrc([&] { train({}, cfg, 5); }) == Errc::kInvalidArgument);
  CHECK(CaptureErrc([&] { train(pairs, cfg, 4); }) == Errc::kShapeMismatch);
  cfg.epochs = 0;
  CHECK(CaptureErrc([&] { train(pairs, cfg, 5); }) == Errc::kConfigError);
}

TEST_CASE("training: divergence") {
  std::mt19937_64 rng(8);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 256; ++i) pairs.push_back(RandomPair(rng, 4));
  TrainConfig cfg;
  cfg.optimizer.kind = OptimizerConfig::Kind::kSgd;
  cfg.learning_rate = 1e300;
  cfg.hidden_dims = {8};
  CHECK(CaptureErrc([&] { train(pairs, cfg, 4); }) == Errc::kDivergenceDetected);
}

TEST_CASE("training: batches mix sources") {
  std::mt19937_64 rng(9);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 1280; ++i) {
    auto p = RandomPair(rng, 3);
    p.source = i < 128 ? Source::kHuman : Source::kModel;
    pairs.push_back(std::move(p));
  }
  TrainConfig cfg;
  cfg.hidden_dims = {2};
  cfg.epochs = 40;
  cfg.learning_rate = 0.0;
  const auto result = train(pairs, cfg, 3);
  // 20 batches of 64 per epoch; expected 6.4 human pairs per batch,
  // hypergeometric variance 64 * 0.1 * 0.9 * (1280 - 64) / 1279.
  double sum = 0;
  double sq = 0;
  std::size_t batches = 0;
  std::size_t mixed = 0;
  for (const auto& e : result.report.epochs) {
    for (auto h : e.batch_human_counts) {
      sum += static_cast<double>(h);
      sq += static_cast<double>(h) * static_cast<double>(h);
      ++batches;
      if (h > 0 && h < 64) ++mixed;
    }
  }
  const double mean = sum / batches;
  const double var = sq / batches - mean * mean;
  const double expected_var = 64 * 0.1 * 0.9 * (1280.0 - 64) / 1279.0;
  CHECK(batches == 800);
  CHECK(std::abs(mean - 6.4) < 1e-9);  // totals per epoch are fixed
  CHECK(var == doctest::Approx(expected_var).epsilon(0.2));
  CHECK(mixed >= batches * 95 / 100);
}

TEST_CASE("training: mixture weight balances sources") {
  std::mt19937_64 rng(10);
  const int ratio = 50;
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 20 * (ratio + 1); ++i) {
    auto p = RandomPair(rng, 8);
    p.source = i % (ratio + 1) == 0 ? Source::kHuman : Source::kModel;
    pairs.push_back(std::move(p));
  }
  TrainConfig cfg;
  cfg.w_human = ratio;
  const auto balanced = train(pairs, cfg, 8).report.epochs.front();
  CHECK(balanced.human_share() >= 0.48);
  CHECK(balanced.human_share() <= 0.52);
  cfg.w_human = 1;
  const auto unweighted = train(pairs, cfg, 8).report.epochs.front();
  CHECK(unweighted.human_share() == doctest::Approx(1.0 / (ratio + 1)).epsilon(0.2));
}

TEST_CASE("training: latent preference recovery") {
  const auto task = curate::testing::MakeLatentTask(1);
  const auto result = train(task.train, TrainConfig{}, 32);
  std::vector<double> scores;
  for (const auto& x : task.holdout_x) scores.push_back(forward(result.model, x));
  CHECK(curate::testing::OrderAgreement(scores, task.holdout_q) >= 0.9);
  CHECK(curate::testing::Spearman(scores, task.holdout_q) >= 0.9);
}

TEST_CASE("score") {
  const auto store = SmallStore();
  const Featurizer featurize(store);
  corpus::EmbeddingStore big;
  std::vector<ScoreItem> items;
  std::mt19937_64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const auto id = std::to_string(i);
    const auto img = RandomVector(rng, 4);
    const auto txt = RandomVector(rng, 3);
    big.Insert({"img" + id, EmbeddingKind::kImage, {img.data(), img.data() + 4}});
    if (i % 17 != 0) big.Insert({corpus::TextKey("q", id), EmbeddingKind::kText, {txt.data(), txt.data() + 3}});
    items.push_back({"s" + id, {"img" + id, "q", id}});
  }
  const Featurizer f(big);
  const RatingModel model(7, {8}, 1);

  CHECK(score(model, {}, f).scores.empty());
  const auto single = score(model, items, f, 1);
  CHECK(single.scores.size() + single.missing.size() == 200);
  CHECK(single.missing.size() == 12);
  const auto threaded = score(model, items, f, 4);
  CHECK(threaded.scores == single.scores);
  CHECK(threaded.missing == single.missing);
  auto shuffled = items;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(score(model, shuffled, f, 3).scores == single.scores);

  items.push_back(items.front());
  CHECK(CaptureErrc([&] { score(model, items, f); }) == Errc::kDuplicateId);
}

TEST_CASE("checkpoint round-trip") {
  TempDir dir;
  std::mt19937_64 rng(13);
  Checkpoint c{RatingModel(6, {5, 3}, 77), {FeatureMode::kConcatImageText, 4, 2, true}, TrainConfig{}};
  c.model.params() += Eigen::VectorXd::Random(c.model.params().size()) * 1e-3;
  c.config.w_human = 400;
  c.config.loss_form = LossForm::kLiteralEq1;
  SaveCheckpoint(dir / "model.json", c);
  const auto back = LoadCheckpoint(dir / "model.json");
  CHECK(back.model == c.model);
  CHECK(back.spec == c.spec);
  CHECK(ToJson(back.config) == ToJson(c.config));
  const auto x = RandomVector(rng, 6);
  CHECK(forward(back.model, x) == forward(c.model, x));

  auto j = ToJson(c);
  j["params"].erase(0);
  CHECK(CaptureErrc([&] { CheckpointFromJson(Json::parse(j.dump())); }) == Errc::kShapeMismatch);
}

TEST_CASE("train config JSON") {
  const auto cfg = TrainConfigFromJson(Json::parse(R"({"epochs":3,"optimizer":{"kind":"sgd"}})"));
  CHECK(cfg.epochs == 3);
  CHECK(cfg.optimizer.kind == OptimizerConfig::Kind::kSgd);
  CHECK(cfg.learning_rate == 1e-4);
  CHECK(CaptureErrc([] { TrainConfigFromJson(Json::parse(R"({"w_human":0})")); }) == Errc::kConfigError);
  CHECK(CaptureErrc([] { TrainConfigFromJson(Json::parse(R"({"loss_form":"hinge"})")); }) == Errc::kConfigError);
  CHECK(CaptureErrc([] { TrainConfigFromJson(Json::parse(R"({"epochs":"six"})")); }) == Errc::kConfigError);
}

TEST_CASE("hash text encoder") {
  const auto a = HashEmbed("Right lower lobe consolidation.", 64);
  CHECK(a == HashEmbed("right LOWER lobe consolidation", 64));
  double norm = 0;
  for (double x : a) norm += x * x;
  CHECK(norm == doctest::Approx(1.0));
  CHECK(a != HashEmbed("Normal study.", 64));
  CHECK(HashEmbed("", 8)[0] == 1.0);
}
