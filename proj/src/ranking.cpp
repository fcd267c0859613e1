#include "curate/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "curate/error.hpp"

namespace curate::ranking {
namespace {

std::size_t CountPositives(const std::vector<LabeledScore>& samples) {
  return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                [](const LabeledScore& s) { return s.positive; }));
}

void RequireBothClasses(const std::vector<LabeledScore>& samples) {
  const auto pos = CountPositives(samples);
  if (pos == 0 || pos == samples.size()) {
    throw Error(Errc::kSingleClass, "labels contain a single class (" + std::to_string(pos) +
                                        " positive of " + std::to_string(samples.size()) + ")");
  }
}

// 1-based average ranks; ascending when `descending` is false.
std::vector<double> AverageRanks(const std::vector<LabeledScore>& samples, bool descending) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? samples[a].score > samples[b].score : samples[a].score < samples[b].score;
  });
  std::vector<double> ranks(samples.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && samples[order[j + 1]].score == samples[order[i]].score) ++j;
    const double avg = static_cast<double>(i + j) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Indices by descending score, ties by id.
std::vector<std::size_t> RankOrder(const std::vector<LabeledScore>& samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].score != samples[b].score) return samples[a].score > samples[b].score;
    return samples[a].id < samples[b].id;
  });
  return order;
}

std::string Num(double x) { return Json(x).dump(); }

}  // namespace

std::vector<LabeledScore> JoinLabels(const Scores& scores, const Labels& labels) {
  std::vector<LabeledScore> out;
  out.reserve(labels.size());
  for (const auto& [id, label] : labels) {
    auto it = scores.find(id);
    if (it == scores.end()) throw Error(Errc::kMissingScore, id);
    out.push_back({id, it->second, label == preference::Label::kPositive});
  }
  return out;
}

double pairwise_acc(const Scores& scores, const std::vector<OrderedPair>& pairs) {
  if (pairs.empty()) throw Error(Errc::kInvalidArgument, "no test pairs");
  auto get = [&](const std::string& id) {
    auto it = scores.find(id);
    if (it == scores.end()) throw Error(Errc::kMissingScore, id);
    return it->second;
  };
  double credit = 0.0;
  for (const auto& p : pairs) {
    const double a = get(p.preferred);
    const double b = get(p.other);
    if (a > b) {
      credit += 1.0;
    } else if (a == b) {
      credit += 0.5;
    }
  }
  return 100.0 * credit / static_cast<double>(pairs.size());
}

double auc(const std::vector<LabeledScore>& samples) {
  RequireBothClasses(samples);
  const auto ranks = AverageRanks(samples, false);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].positive) rank_sum += ranks[i];
  }
  const double pos = static_cast<double>(CountPositives(samples));
  const double neg = static_cast<double>(samples.size()) - pos;
  const double u = rank_sum - pos * (pos + 1.0) / 2.0;
  return 100.0 * u / (pos * neg);
}

double mean_rank(const std::vector<LabeledScore>& samples) {
  RequireBothClasses(samples);
  const auto ranks = AverageRanks(samples, true);
  const double n = static_cast<double>(samples.size());
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].positive) total += 100.0 * ranks[i] / n;
  }
  return total / static_cast<double>(CountPositives(samples));
}

double average_precision(const std::vector<LabeledScore>& samples) {
  const auto pos = CountPositives(samples);
  if (pos == 0) throw Error(Errc::kNoPositives, "no positive samples");
  const auto order = RankOrder(samples);
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!samples[order[r]].positive) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(r + 1);
  }
  return 100.0 * sum / static_cast<double>(pos);
}

RankMetrics evaluate(const Scores& scores, const Labels& labels,
                     const std::vector<OrderedPair>& pairs) {
  const auto joined = JoinLabels(scores, labels);
  return {pairwise_acc(scores, pairs), auc(joined), mean_rank(joined), average_precision(joined)};
}

OrderedJson ToJson(const RankMetrics& m) {
  OrderedJson j;
  j["acc"] = m.acc;
  j["auc"] = m.auc;
  j["mr"] = m.mr;
  j["map"] = m.map;
  j["definitions"] = {
      {"acc", "percent of test pairs whose preferred sample scores strictly higher; ties 0.5"},
      {"auc", "Wilcoxon-Mann-Whitney statistic over positive/negative samples, percent"},
      {"mr", "mean over positives of 100*rank/n, descending score, average-rank ties; lower is better"},
      {"map", "global average precision of the descending-score ranking, ties by id, percent"}};
  return j;
}

std::vector<double> DefaultGrid() {
  std::vector<double> grid;
  for (int k = 1; k <= 100; ++k) grid.push_back(k);
  return grid;
}

std::size_t TopCount(double k_percent, std::size_t n) {
  // The tolerance keeps exact products such as 7 * 100 / 100 from rounding up.
  const double raw = k_percent * static_cast<double>(n) / 100.0;
  const auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(count, n);
}

std::vector<CurvePoint> pk_f1_curve(const std::vector<LabeledScore>& samples,
                                    const std::vector<double>& grid) {
  for (double k : grid) {
    if (!(k > 0.0 && k <= 100.0)) {
      throw Error(Errc::kInvalidArgument, "grid percentile " + Num(k) + " outside (0, 100]");
    }
  }
  const auto order = RankOrder(samples);
  std::vector<std::size_t> prefix_hits(order.size() + 1, 0);
  for (std::size_t r = 0; r < order.size(); ++r) {
    prefix_hits[r + 1] = prefix_hits[r] + (samples[order[r]].positive ? 1 : 0);
  }
  const double positives = static_cast<double>(prefix_hits.back());
  std::vector<CurvePoint> curve;
  for (double k : grid) {
    CurvePoint pt;
    pt.k_percent = k;
    const auto count = TopCount(k, samples.size());
    const double tp = static_cast<double>(prefix_hits[count]);
    pt.precision = count > 0 ? tp / static_cast<double>(count) : 0.0;
    pt.recall = positives > 0 ? tp / positives : 0.0;
    pt.f1 = pt.precision + pt.recall > 0
                ? 2.0 * pt.precision * pt.recall / (pt.precision + pt.recall)
                : 0.0;
    curve.push_back(pt);
  }
  return curve;
}

std::vector<double> detect_critical(const std::vector<CurvePoint>& curve,
                                    const CriticalOptions& options) {
  std::vector<double> out;
  const std::size_t n = curve.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double f = curve[i].f1;
    bool ge = true;
    bool gt = false;
    if (i > 0) {
      ge = ge && f >= curve[i - 1].f1;
      gt = gt || f > curve[i - 1].f1;
    }
    if (i + 1 < n) {
      ge = ge && f >= curve[i + 1].f1;
      gt = gt || f > curve[i + 1].f1;
    }
    if (ge && gt) out.push_back(curve[i].k_percent);
  }
  const std::size_t w = options.plateau_window;
  auto flat_from = [&](std::size_t i) {
    if (w == 0 || i + w >= n) return false;
    for (std::size_t s = i; s < i + w; ++s) {
      if (std::abs(curve[s + 1].f1 - curve[s].f1) >= options.plateau_eps) return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (flat_from(i) && !(i > 0 && flat_from(i - 1))) out.push_back(curve[i].k_percent);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SelectionReport select_balanced(const Scores& scores, const std::map<std::string, int>& clusters,
                                double p) {
  if (!(p >= 0.0 && p <= 100.0)) {
    throw Error(Errc::kInvalidArgument, "percentile " + Num(p) + " outside [0, 100]");
  }
  std::map<int, std::vector<LabeledScore>> members;
  for (const auto& [id, s] : scores) {
    auto it = clusters.find(id);
    if (it == clusters.end()) throw Error(Errc::kInvalidArgument, "no cluster for scored id " + id);
    members[it->second].push_back({id, s, false});
  }
  SelectionReport report;
  report.percentile = p;
  std::vector<LabeledScore> chosen;
  for (const auto& [c, list] : members) {
    const auto quota = static_cast<std::size_t>(
        std::lround(p * static_cast<double>(list.size()) / 100.0));
    const auto order = RankOrder(list);
    const auto take = std::min(quota, list.size());
    for (std::size_t r = 0; r < take; ++r) chosen.push_back(list[order[r]]);
    report.per_cluster_counts[c] = take;
  }
  for (auto i : RankOrder(chosen)) report.selected_ids.push_back(chosen[i].id);
  return report;
}

OrderedJson ToJson(const CurvePoint& pt) {
  OrderedJson j;
  j["k"] = pt.k_percent;
  j["precision"] = pt.precision;
  j["recall"] = pt.recall;
  j["f1"] = pt.f1;
  return j;
}

OrderedJson ToJson(const SelectionReport& r) {
  OrderedJson j;
  j["percentile"] = r.percentile;
  j["curve"] = OrderedJson::array();
  for (const auto& pt : r.curve) j["curve"].push_back(ToJson(pt));
  j["critical_percentiles"] = r.critical_percentiles;
  j["selected_ids"] = r.selected_ids;
  OrderedJson counts = OrderedJson::object();
  for (const auto& [c, n] : r.per_cluster_counts) counts[std::to_string(c)] = n;
  j["per_cluster_counts"] = counts;
  return j;
}

std::string CurveCsv(const std::vector<CurvePoint>& curve) {
  std::string out = "k,precision,recall,f1\n";
  for (const auto& pt : curve) {
    out += Num(pt.k_percent) + "," + Num(pt.precision) + "," + Num(pt.recall) + "," + Num(pt.f1) + "\n";
  }
  return out;
}

}  // namespace curate::ranking
