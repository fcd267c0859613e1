#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "curate/ndjson.hpp"
#include "curate/preference.hpp"

namespace curate::ranking {

using Scores = std::map<std::string, double>;
using Labels = std::map<std::string, preference::Label>;

/// A labeled, scored sample.
struct LabeledScore {
  std::string id;
  double score = 0.0;
  bool positive = false;
};

/// Every labeled id must be scored (MissingScore); unlabeled scores are
/// ignored. Output is ordered by id.
std::vector<LabeledScore> JoinLabels(const Scores& scores, const Labels& labels);

struct OrderedPair {
  std::string preferred;
  std::string other;
};

/// Percent of pairs whose preferred sample scores strictly higher; exact
/// ties earn half credit. Throws MissingScore, InvalidArgument when empty.
double pairwise_acc(const Scores& scores, const std::vector<OrderedPair>& pairs);

/// Wilcoxon-Mann-Whitney AUC in percent via the rank sum. Throws SingleClass.
double auc(const std::vector<LabeledScore>& samples);

/// Mean over positives of 100 * rank / n, ranking by descending score with
/// average ranks for ties. Throws SingleClass.
double mean_rank(const std::vector<LabeledScore>& samples);

/// Global average precision in percent, descending score, ties by id.
/// Throws NoPositives.
double average_precision(const std::vector<LabeledScore>& samples);

struct RankMetrics {
  double acc = 0.0;
  double auc = 0.0;
  double mr = 0.0;
  double map = 0.0;
};

/// All four metrics; ACC over `pairs`, the others over the labeled samples.
RankMetrics evaluate(const Scores& scores, const Labels& labels,
                     const std::vector<OrderedPair>& pairs);

OrderedJson ToJson(const RankMetrics& metrics);

struct CurvePoint {
  double k_percent = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// 1, 2, ..., 100.
std::vector<double> DefaultGrid();

/// Number of items in the top k percent of n: ceil(k * n / 100).
std::size_t TopCount(double k_percent, std::size_t n);

/// Precision/recall/F1 of the top ceil(k*n/100) samples by descending score
/// (ties by id) for each k of the grid. Throws InvalidArgument for k outside
/// (0, 100].
std::vector<CurvePoint> pk_f1_curve(const std::vector<LabeledScore>& samples,
                                    const std::vector<double>& grid = DefaultGrid());

struct CriticalOptions {
  double plateau_eps = 0.002;
  std::size_t plateau_window = 3;
};

/// Percentiles where F1 is a local maximum (no smaller than its neighbors and
/// larger than at least one) or where a plateau starts (the next
/// `plateau_window` forward differences are all below `plateau_eps` in
/// magnitude). Sorted, without duplicates.
std::vector<double> detect_critical(const std::vector<CurvePoint>& curve,
                                    const CriticalOptions& options = {});

struct SelectionReport {
  double percentile = 0.0;
  std::vector<CurvePoint> curve;
  std::vector<double> critical_percentiles;
  /// Descending score, ties by id.
  std::vector<std::string> selected_ids;
  std::map<int, std::size_t> per_cluster_counts;
};

/// Per cluster with N_c scored members, the top round(p * N_c / 100) by score
/// (ties by id). Throws InvalidArgument when a scored id has no cluster or p
/// is outside [0, 100].
SelectionReport select_balanced(const Scores& scores, const std::map<std::string, int>& clusters,
                                double p);

OrderedJson ToJson(const CurvePoint& point);
OrderedJson ToJson(const SelectionReport& report);
/// "k,precision,recall,f1" header plus one row per point.
std::string CurveCsv(const std::vector<CurvePoint>& curve);

}  // namespace curate::ranking
