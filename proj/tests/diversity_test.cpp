#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "curate/diversity.hpp"
#include "test_util.hpp"

using namespace curate;
using namespace curate::diversity;
using curate::corpus::Domain;
using curate::corpus::ImageTextPair;
using curate::testing::CaptureErrc;

namespace {

PointSet RandomPoints(std::mt19937_64& rng, int n, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  PointSet points;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    const double shift = static_cast<double>(i % 5) * 3.0;
    for (auto& x : v) x = normal(rng) + shift;
    points["p" + std::to_string(i)] = v;
  }
  return points;
}

double BruteSq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("k-means separates two clouds") {
  PointSet points{{"a", {0, 0}}, {"b", {0, 1}}, {"c", {10, 10}}, {"d", {10, 11}}};
  const auto model = KMeansFit(points, {.k = 2, .seed = 3, .max_iters = 50, .tol = 0.0});
  std::set<std::vector<double>> centroids(model.centroids.begin(), model.centroids.end());
  CHECK(centroids == std::set<std::vector<double>>{{0, 0.5}, {10, 10.5}});
  CHECK(model.assignments.at("a") == model.assignments.at("b"));
  CHECK(model.assignments.at("c") != model.assignments.at("a"));
  CHECK(model.inertia == doctest::Approx(1.0));
}

TEST_CASE("k-means with k=1 gives the mean") {
  PointSet points{{"a", {1, 2}}, {"b", {3, 4}}, {"c", {5, 0}}};
  const auto model = KMeansFit(points, {.k = 1, .seed = 0});
  CHECK(model.centroids[0][0] == doctest::Approx(3.0));
  CHECK(model.centroids[0][1] == doctest::Approx(2.0));
}

TEST_CASE("k-means errors") {
  PointSet dupes{{"a", {1, 1}}, {"b", {1, 1}}, {"c", {2, 2}}};
  CHECK(CaptureErrc([&] { KMeansFit(dupes, {.k = 3}); }) == Errc::kKTooLarge);
  CHECK_NOTHROW(KMeansFit(dupes, {.k = 2}));
  PointSet ragged{{"a", {1, 1}}, {"b", {1}}};
  CHECK(CaptureErrc([&] { KMeansFit(ragged, {.k = 1}); }) == Errc::kDimensionMismatch);
}

TEST_CASE("k-means inertia is monotone and assignments are nearest") {
  std::mt19937_64 rng(11);
  const auto points = RandomPoints(rng, 500, 4);
  const auto model = KMeansFit(points, {.k = 8, .seed = 5, .max_iters = 100, .tol = 0.0});
  for (std::size_t i = 1; i < model.inertia_history.size(); ++i) {
    CHECK(model.inertia_history[i] <= model.inertia_history[i - 1]);
  }
  double inertia = 0;
  for (const auto& [id, vec] : points) {
    double best = INFINITY;
    int best_c = -1;
    for (std::size_t c = 0; c < model.centroids.size(); ++c) {
      const double d = BruteSq(vec, model.centroids[c]);
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    CHECK(model.assignments.at(id) == best_c);
    inertia += best;
  }
  CHECK(model.inertia == doctest::Approx(inertia).epsilon(1e-12));
  CHECK(model == KMeansFit(points, {.k = 8, .seed = 5, .max_iters = 100, .tol = 0.0}));
  CHECK(ToJson(ClusterModelFromJson(ToJson(model))) == ToJson(model));
}

TEST_CASE("joint feature normalizes both blocks") {
  corpus::EmbeddingStore store;
  store.Insert({"p", corpus::EmbeddingKind::kImage, {3, 4}});
  store.Insert({"p", corpus::EmbeddingKind::kText, {0, 1}});
  ImageTextPair pair{.id = "p", .image_ref = "p.png", .caption = "x"};
  CHECK(JointFeature(pair, store) == std::vector<double>{0.6, 0.8, 0, 1});

  corpus::EmbeddingStore partial;
  partial.Insert({"p", corpus::EmbeddingKind::kImage, {3, 4}});
  CHECK(CaptureErrc([&] { JointFeature(pair, partial); }) == Errc::kMissingEmbedding);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  for (int t = 0; t < 50; ++t) {
    corpus::EmbeddingStore s;
    std::vector<double> a(7), b(5);
    for (auto& x : a) x = normal(rng);
    for (auto& x : b) x = normal(rng);
    s.Insert({"q", corpus::EmbeddingKind::kImage, a});
    s.Insert({"q", corpus::EmbeddingKind::kText, b});
    ImageTextPair q{.id = "q", .caption = "y"};
    const auto f = JointFeature(q, s);
    double n = 0;
    for (double x : f) n += x * x;
    CHECK(std::sqrt(n) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }
}

namespace {

std::vector<ImageTextPair> RandomCorpus(std::mt19937_64& rng, int n) {
  std::vector<ImageTextPair> out;
  for (int i = 0; i < n; ++i) {
    ImageTextPair p;
    p.id = "s" + std::to_string(i);
    p.image_ref = p.id + ".png";
    const int words = 1 + static_cast<int>(rng() % 40);
    for (int w = 0; w < words; ++w) p.caption += "w ";
    if (rng() % 2) p.inline_mentions.push_back("mention with " + std::to_string(rng() % 9) + " words");
    p.domain = corpus::kAllDomains[static_cast<std::size_t>(i) % 5];
    out.push_back(p);
  }
  return out;
}

ClusterModel FakeModel(const std::vector<ImageTextPair>& corpus, int k,
                       const std::function<int(std::size_t)>& cluster_of) {
  ClusterModel model;
  model.k = k;
  model.centroids.assign(static_cast<std::size_t>(k), {0.0});
  for (std::size_t i = 0; i < corpus.size(); ++i) model.assignments[corpus[i].id] = cluster_of(i);
  return model;
}

}  // namespace

TEST_CASE("demonstration sampling quotas") {
  std::mt19937_64 rng(3);
  const auto corpus = RandomCorpus(rng, 40);
  SUBCASE("M = k gives one per cluster") {
    const auto model = FakeModel(corpus, 4, [](std::size_t i) { return static_cast<int>(i % 4); });
    const auto set = SampleDemonstrations(model, corpus, 4, 1);
    CHECK(set.sample_ids.size() == 4);
    for (int c = 0; c < 4; ++c) CHECK(set.per_cluster_counts.at(c) == 1);
  }
  SUBCASE("empty cluster share moves to the largest") {
    // cluster 3 empty, cluster 1 largest
    const auto model = FakeModel(corpus, 4, [](std::size_t i) {
      if (i < 20) return 1;
      return i < 30 ? 0 : 2;
    });
    const auto set = SampleDemonstrations(model, corpus, 4, 1);
    CHECK(set.sample_ids.size() == 4);
    CHECK(set.per_cluster_counts.at(1) == 2);
    CHECK(set.per_cluster_counts.at(0) == 1);
    CHECK(set.per_cluster_counts.at(2) == 1);
    CHECK_FALSE(set.per_cluster_counts.contains(3));
  }
  SUBCASE("same seed, same draw") {
    const auto model = FakeModel(corpus, 4, [](std::size_t i) { return static_cast<int>(i % 4); });
    const auto a = SampleDemonstrations(model, corpus, 8, 9);
    const auto b = SampleDemonstrations(model, corpus, 8, 9);
    CHECK(a.sample_ids == b.sample_ids);
  }
}

TEST_CASE("sampled demonstrations come from each cluster's top quartile") {
  std::mt19937_64 rng(17);
  const auto corpus = RandomCorpus(rng, 1000);
  const auto model = FakeModel(corpus, 10, [&](std::size_t i) {
    return static_cast<int>((i * 7 + i / 13) % 10);
  });
  const auto set = SampleDemonstrations(model, corpus, 100, 4);
  REQUIRE(set.sample_ids.size() == 100);
  std::set<std::string> unique(set.sample_ids.begin(), set.sample_ids.end());
  CHECK(unique.size() == 100);

  // Independent quartile: complexity threshold at the ceil(n/4)-th largest.
  std::map<int, std::vector<std::pair<std::size_t, std::string>>> by_cluster;
  for (const auto& p : corpus) {
    std::size_t words = 0;
    std::string all = p.caption;
    for (const auto& m : p.inline_mentions) all += " " + m;
    bool in_word = false;
    for (char ch : all) {
      const bool space = ch == ' ' || ch == '\n' || ch == '\t';
      if (!space && !in_word) ++words;
      in_word = !space;
    }
    by_cluster[model.assignments.at(p.id)].push_back({words, p.id});
  }
  std::map<std::string, bool> in_quartile;
  int total_count = 0;
  for (auto& [c, members] : by_cluster) {
    std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const std::size_t q = (members.size() + 3) / 4;
    for (std::size_t i = 0; i < members.size(); ++i) in_quartile[members[i].second] = i < q;
    total_count += set.per_cluster_counts.at(c);
    CHECK(set.per_cluster_counts.at(c) <= (100 + 9) / 10 + 1);
  }
  CHECK(total_count == 100);
  for (const auto& id : set.sample_ids) CHECK(in_quartile.at(id));
}

TEST_CASE("per-call demonstrations") {
  std::vector<Demonstration> pool;
  for (Domain d : corpus::kAllDomains) {
    for (int i = 0; i < 2; ++i) {
      pool.push_back({std::string(corpus::DomainName(d)) + std::to_string(i), d, "ctx", "resp", true});
    }
  }
  SUBCASE("exact pool is used completely") {
    const auto demos = PerCallDemos(pool, 1);
    CHECK(demos.size() == 10);
    std::set<std::string> ids;
    for (const auto& d : demos) ids.insert(d.id);
    CHECK(ids.size() == 10);
  }
  SUBCASE("missing domain") {
    std::erase_if(pool, [](const Demonstration& d) { return d.domain == Domain::kMRI; });
    try {
      PerCallDemos(pool, 1);
      FAIL("expected InsufficientPool");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kInsufficientPool);
      CHECK(std::string(e.what()) == "InsufficientPool(MRI, have 0, need 2)");
    }
  }
  SUBCASE("unapproved entries do not count") {
    pool[0].approved = false;
    CHECK(CaptureErrc([&] { PerCallDemos(pool, 1); }) == Errc::kInsufficientPool);
  }
  SUBCASE("seed sensitivity on a large pool") {
    std::vector<Demonstration> big;
    for (Domain d : corpus::kAllDomains) {
      for (int i = 0; i < 20; ++i) big.push_back({std::string(corpus::DomainName(d)) + std::to_string(i), d, "c", "r", true});
    }
    auto key = [](const std::vector<Demonstration>& v) {
      std::set<std::string> s;
      for (const auto& d : v) s.insert(d.id);
      return s;
    };
    int differing = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      if (key(PerCallDemos(big, s)) != key(PerCallDemos(big, s + 1000))) ++differing;
      CHECK(PerCallDemos(big, s) == PerCallDemos(big, s));
    }
    CHECK(differing >= 99);
  }
}
