#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "curate/corpus.hpp"
#include "curate/ndjson.hpp"

namespace curate::diversity {

using PointSet = std::map<std::string, std::vector<double>>;

struct KMeansOptions {
  int k = 10;
  std::uint64_t seed = 0;
  int max_iters = 100;
  double tol = 1e-6;
};

struct ClusterModel {
  int k = 0;
  std::vector<std::vector<double>> centroids;
  std::map<std::string, int> assignments;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  /// Inertia after each assignment step, first entry from the k-means++ seeds.
  std::vector<double> inertia_history;

  /// Member ids of each cluster, in id order.
  std::vector<std::vector<std::string>> Members() const;

  friend bool operator==(const ClusterModel&, const ClusterModel&) = default;
};

/// Lloyd's algorithm with k-means++ seeding. Points are visited in id order,
/// so the result depends only on the point set and the seed. Stops after
/// max_iters updates, when assignments stop changing, or when the inertia
/// decrease falls below tol. Throws KTooLarge when k exceeds the number of
/// distinct points.
ClusterModel KMeansFit(const PointSet& points, const KMeansOptions& options);

/// Nearest centroid index (lowest index on ties).
int NearestCentroid(const std::vector<std::vector<double>>& centroids,
                    const std::vector<double>& point);

Json ToJson(const ClusterModel& model);
ClusterModel ClusterModelFromJson(const Json& json);

/// L2-normalized image embedding followed by L2-normalized text embedding.
std::vector<double> JointFeature(const corpus::ImageTextPair& pair,
                                 const corpus::EmbeddingStore& embeddings);

/// Whitespace token count of caption plus inline mentions.
std::size_t ComplexityScore(const corpus::ImageTextPair& pair);

struct DemoCandidateSet {
  std::vector<std::string> sample_ids;
  std::map<int, int> per_cluster_counts;
};

/// Cluster-balanced draw of M demonstration candidates from each cluster's
/// top complexity quartile. Every cluster gets floor(M/k); the remainder and
/// shares of clusters that cannot fill theirs go to the largest clusters
/// first (lowest index on ties).
DemoCandidateSet SampleDemonstrations(const ClusterModel& model,
                                      const std::vector<corpus::ImageTextPair>& corpus, int m,
                                      std::uint64_t seed);

/// Top complexity quartile of one cluster: the first ceil(n/4) members when
/// ordered by complexity descending, then id ascending.
std::vector<std::string> TopQuartile(const std::vector<const corpus::ImageTextPair*>& members);

/// A clinician-reviewed few-shot example.
struct Demonstration {
  std::string id;
  corpus::Domain domain = corpus::Domain::kCXR;
  std::string context;
  std::string response;
  bool approved = true;

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

Json ToJson(const Demonstration& demo);
Demonstration DemonstrationFromJson(const Json& json);

/// Draws `per_domain` approved demonstrations for each of the five domains
/// and shuffles them. Throws InsufficientPool("<domain>", have, need).
std::vector<Demonstration> PerCallDemos(const std::vector<Demonstration>& pool,
                                        std::uint64_t seed, int per_domain = 2);

}  // namespace curate::diversity
