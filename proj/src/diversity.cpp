#include "curate/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "curate/error.hpp"
#include "curate/hash.hpp"

namespace curate::diversity {
namespace {

double SquaredDistance(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

struct Assignment {
  std::vector<int> labels;
  double inertia = 0.0;
};

Assignment Assign(const std::vector<const std::vector<double>*>& points,
                  const std::vector<std::vector<double>>& centroids) {
  Assignment out;
  out.labels.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int c = NearestCentroid(centroids, *points[i]);
    out.labels[i] = c;
    out.inertia += SquaredDistance(*points[i], centroids[static_cast<std::size_t>(c)]);
  }
  return out;
}

std::vector<std::vector<double>> SeedPlusPlus(const std::vector<const std::vector<double>*>& points,
                                              int k, std::mt19937_64& rng) {
  std::vector<std::vector<double>> centroids;
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  centroids.push_back(*points[pick(rng)]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = SquaredDistance(*points[i], centroids[0]);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (static_cast<int>(centroids.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    const double target = unit(rng) * total;
    double cumulative = 0.0;
    std::size_t chosen = points.size();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (d2[i] <= 0.0) continue;
      cumulative += d2[i];
      chosen = i;
      if (cumulative > target) break;
    }
    centroids.push_back(*points[chosen]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], SquaredDistance(*points[i], centroids.back()));
    }
  }
  return centroids;
}

std::vector<std::vector<double>> UpdateCentroids(
    const std::vector<const std::vector<double>*>& points, const std::vector<int>& labels,
    const std::vector<std::vector<double>>& previous) {
  const std::size_t dim = previous.front().size();
  std::vector<std::vector<double>> sums(previous.size(), std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(previous.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    for (std::size_t j = 0; j < dim; ++j) sums[c][j] += (*points[i])[j];
  }
  for (std::size_t c = 0; c < sums.size(); ++c) {
    if (counts[c] == 0) {
      sums[c] = previous[c];  // empty cluster keeps its centroid
      continue;
    }
    for (double& v : sums[c]) v /= static_cast<double>(counts[c]);
  }
  return sums;
}

double Norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::size_t CountTokens(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string tok; in >> tok;) ++n;
  return n;
}

// Complexity descending, then id ascending.
std::vector<std::string> RankByComplexity(const std::vector<const corpus::ImageTextPair*>& members);

}  // namespace

std::vector<std::vector<std::string>> ClusterModel::Members() const {
  std::vector<std::vector<std::string>> members(static_cast<std::size_t>(k));
  for (const auto& [id, c] : assignments) members[static_cast<std::size_t>(c)].push_back(id);
  return members;
}

int NearestCentroid(const std::vector<std::vector<double>>& centroids,
                    const std::vector<double>& point) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = SquaredDistance(point, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

ClusterModel KMeansFit(const PointSet& points, const KMeansOptions& options) {
  if (options.k < 1) throw Error(Errc::kInvalidArgument, "k must be >= 1");
  if (points.empty()) throw Error(Errc::kInvalidArgument, "no points to cluster");
  const std::size_t dim = points.begin()->second.size();
  if (dim == 0) throw Error(Errc::kDimensionMismatch, "points have dimension 0");

  std::vector<std::string> ids;
  std::vector<const std::vector<double>*> data;
  std::set<std::vector<double>> distinct;
  for (const auto& [id, vec] : points) {
    if (vec.size() != dim) {
      throw Error(Errc::kDimensionMismatch, "point '" + id + "': expected dimension " +
                                                std::to_string(dim) + ", got " +
                                                std::to_string(vec.size()));
    }
    for (double v : vec) {
      if (!std::isfinite(v)) throw Error(Errc::kNonFiniteComponent, "point '" + id + "' is not finite");
    }
    ids.push_back(id);
    data.push_back(&vec);
    distinct.insert(vec);
  }
  if (static_cast<std::size_t>(options.k) > distinct.size()) {
    throw Error(Errc::kKTooLarge, "k=" + std::to_string(options.k) + " exceeds " +
                                      std::to_string(distinct.size()) + " distinct points");
  }

  std::mt19937_64 rng(options.seed);
  auto centroids = SeedPlusPlus(data, options.k, rng);
  Assignment current = Assign(data, centroids);
  std::vector<double> history{current.inertia};

  for (int iter = 0; iter < options.max_iters; ++iter) {
    auto next_centroids = UpdateCentroids(data, current.labels, centroids);
    Assignment next = Assign(data, next_centroids);
    // Rounding can make an exact fixed point look like a tiny increase; keep
    // the previous state so the recorded sequence never goes up.
    if (next.inertia > current.inertia) break;
    const bool changed = next.labels != current.labels;
    const double decrease = current.inertia - next.inertia;
    centroids = std::move(next_centroids);
    current = std::move(next);
    history.push_back(current.inertia);
    if (!changed || decrease < options.tol) break;
  }

  ClusterModel model;
  model.k = options.k;
  model.centroids = std::move(centroids);
  model.inertia = current.inertia;
  model.seed = options.seed;
  model.inertia_history = std::move(history);
  for (std::size_t i = 0; i < ids.size(); ++i) model.assignments.emplace(ids[i], current.labels[i]);
  return model;
}

Json ToJson(const ClusterModel& model) {
  return Json{{"k", model.k},
              {"seed", model.seed},
              {"inertia", model.inertia},
              {"inertia_history", model.inertia_history},
              {"centroids", model.centroids},
              {"assignments", model.assignments}};
}

ClusterModel ClusterModelFromJson(const Json& json) {
  ClusterModel model;
  try {
    model.k = json.at("k").get<int>();
    model.seed = json.at("seed").get<std::uint64_t>();
    model.inertia = json.at("inertia").get<double>();
    model.inertia_history = json.value("inertia_history", std::vector<double>{});
    model.centroids = json.at("centroids").get<std::vector<std::vector<double>>>();
    model.assignments = json.at("assignments").get<std::map<std::string, int>>();
  } catch (const Json::exception& e) {
    throw Error(Errc::kMalformedRecord, std::string("cluster model: ") + e.what());
  }
  if (static_cast<int>(model.centroids.size()) != model.k) {
    throw Error(Errc::kMalformedRecord, "cluster model: centroid count differs from k");
  }
  return model;
}

std::vector<double> JointFeature(const corpus::ImageTextPair& pair,
                                 const corpus::EmbeddingStore& embeddings) {
  const auto& image = embeddings.Get(pair.id, corpus::EmbeddingKind::kImage);
  const auto& text = embeddings.Get(pair.id, corpus::EmbeddingKind::kText);
  const double ni = Norm(image);
  const double nt = Norm(text);
  if (ni == 0.0 || nt == 0.0) {
    throw Error(Errc::kInvalidArgument, "zero-norm embedding for '" + pair.id + "'");
  }
  std::vector<double> out;
  out.reserve(image.size() + text.size());
  for (double v : image) out.push_back(v / ni);
  for (double v : text) out.push_back(v / nt);
  return out;
}

std::size_t ComplexityScore(const corpus::ImageTextPair& pair) {
  std::size_t n = CountTokens(pair.caption);
  for (const auto& m : pair.inline_mentions) n += CountTokens(m);
  return n;
}

namespace {

std::vector<std::string> RankByComplexity(const std::vector<const corpus::ImageTextPair*>& members) {
  std::vector<std::pair<std::size_t, const std::string*>> ranked;
  ranked.reserve(members.size());
  for (const auto* p : members) ranked.emplace_back(ComplexityScore(*p), &p->id);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return *a.second < *b.second;
  });
  std::vector<std::string> out;
  out.reserve(ranked.size());
  for (const auto& r : ranked) out.push_back(*r.second);
  return out;
}

}  // namespace

std::vector<std::string> TopQuartile(const std::vector<const corpus::ImageTextPair*>& members) {
  auto ranked = RankByComplexity(members);
  ranked.resize((members.size() + 3) / 4);
  return ranked;
}

DemoCandidateSet SampleDemonstrations(const ClusterModel& model,
                                      const std::vector<corpus::ImageTextPair>& corpus, int m,
                                      std::uint64_t seed) {
  if (m < 0) throw Error(Errc::kInvalidArgument, "M must be non-negative");
  const auto k = static_cast<std::size_t>(model.k);
  std::vector<std::vector<const corpus::ImageTextPair*>> members(k);
  std::size_t assigned = 0;
  for (const auto& pair : corpus) {
    auto it = model.assignments.find(pair.id);
    if (it == model.assignments.end()) continue;
    members[static_cast<std::size_t>(it->second)].push_back(&pair);
    ++assigned;
  }
  if (static_cast<std::size_t>(m) > assigned) {
    throw Error(Errc::kInvalidArgument, "M=" + std::to_string(m) + " exceeds " +
                                            std::to_string(assigned) + " clustered samples");
  }

  // Full complexity ranking per cluster; the quartile is its prefix.
  std::vector<std::vector<std::string>> ranked(k);
  std::vector<std::size_t> quartile_cap(k);
  for (std::size_t c = 0; c < k; ++c) {
    ranked[c] = RankByComplexity(members[c]);
    quartile_cap[c] = (members[c].size() + 3) / 4;
  }

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return members[a].size() > members[b].size();
  });

  const std::size_t base = static_cast<std::size_t>(m) / k;
  const std::size_t remainder = static_cast<std::size_t>(m) % k;
  std::vector<std::size_t> quota(k, base);
  for (std::size_t r = 0; r < remainder; ++r) ++quota[order[r]];

  std::size_t excess = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (quota[c] > quartile_cap[c]) {
      excess += quota[c] - quartile_cap[c];
      quota[c] = quartile_cap[c];
    }
  }
  auto distribute = [&](const std::vector<std::size_t>& cap) {
    while (excess > 0) {
      bool placed = false;
      for (std::size_t c : order) {
        if (excess == 0) break;
        if (quota[c] < cap[c]) {
          ++quota[c];
          --excess;
          placed = true;
        }
      }
      if (!placed) break;
    }
  };
  distribute(quartile_cap);
  if (excess > 0) {
    std::vector<std::size_t> full_cap(k);
    for (std::size_t c = 0; c < k; ++c) full_cap[c] = members[c].size();
    distribute(full_cap);
  }

  DemoCandidateSet out;
  for (std::size_t c = 0; c < k; ++c) {
    if (quota[c] == 0) continue;
    const std::size_t q = quartile_cap[c];
    std::vector<std::string> pool(ranked[c].begin(), ranked[c].begin() + static_cast<long>(q));
    std::mt19937_64 rng(DeriveSeed(seed, "cluster:" + std::to_string(c)));
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t from_pool = std::min(quota[c], q);
    for (std::size_t i = 0; i < from_pool; ++i) out.sample_ids.push_back(pool[i]);
    // Only when the quartiles cannot cover M: continue down the ranking.
    for (std::size_t i = q; i < q + (quota[c] - from_pool); ++i) out.sample_ids.push_back(ranked[c][i]);
    out.per_cluster_counts[static_cast<int>(c)] = static_cast<int>(quota[c]);
  }
  return out;
}

Json ToJson(const Demonstration& demo) {
  return Json{{"id", demo.id},
              {"domain", corpus::DomainName(demo.domain)},
              {"context", demo.context},
              {"response", demo.response},
              {"approved", demo.approved}};
}

Demonstration DemonstrationFromJson(const Json& json) {
  Demonstration demo;
  try {
    demo.id = json.at("id").get<std::string>();
    const auto domain = corpus::ParseDomain(json.at("domain").get<std::string>());
    if (!domain) throw Error(Errc::kMalformedRecord, "demonstration '" + demo.id + "': unknown domain");
    demo.domain = *domain;
    demo.context = json.at("context").get<std::string>();
    demo.response = json.at("response").get<std::string>();
    demo.approved = json.value("approved", true);
  } catch (const Json::exception& e) {
    throw Error(Errc::kMalformedRecord, std::string("demonstration: ") + e.what());
  }
  return demo;
}

std::vector<Demonstration> PerCallDemos(const std::vector<Demonstration>& pool,
                                        std::uint64_t seed, int per_domain) {
  if (per_domain < 0) throw Error(Errc::kInvalidArgument, "per_domain must be non-negative");
  std::mt19937_64 rng(seed);
  std::vector<Demonstration> out;
  for (corpus::Domain domain : corpus::kAllDomains) {
    std::vector<const Demonstration*> candidates;
    for (const auto& d : pool) {
      if (d.approved && d.domain == domain) candidates.push_back(&d);
    }
    if (static_cast<int>(candidates.size()) < per_domain) {
      throw Error(Errc::kInsufficientPool,
                  "InsufficientPool(" + std::string(corpus::DomainName(domain)) + ", have " +
                      std::to_string(candidates.size()) + ", need " + std::to_string(per_domain) +
                      ")");
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (int i = 0; i < per_domain; ++i) out.push_back(*candidates[static_cast<std::size_t>(i)]);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace curate::diversity
