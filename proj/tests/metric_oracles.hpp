#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "curate/ranking.hpp"

namespace curate::testing {

using ranking::LabeledScore;

// O(n^2) reference implementations.
inline double BruteAuc(const std::vector<LabeledScore>& s) {
  double credit = 0, pairs = 0;
  for (const auto& p : s) {
    if (!p.positive) continue;
    for (const auto& q : s) {
      if (q.positive) continue;
      pairs += 1;
      credit += p.score > q.score ? 1.0 : (p.score == q.score ? 0.5 : 0.0);
    }
  }
  return 100.0 * credit / pairs;
}

inline double BruteMeanRank(const std::vector<LabeledScore>& s) {
  double total = 0, positives = 0;
  for (const auto& p : s) {
    if (!p.positive) continue;
    double above = 0, equal = 0;
    for (const auto& q : s) {
      if (q.score > p.score) above += 1;
      if (q.score == p.score) equal += 1;
    }
    total += 100.0 * (above + (equal + 1) / 2.0) / static_cast<double>(s.size());
    positives += 1;
  }
  return total / positives;
}

inline bool RanksAhead(const LabeledScore& a, const LabeledScore& b) {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

inline double BruteAp(const std::vector<LabeledScore>& s) {
  double sum = 0, positives = 0;
  for (const auto& p : s) {
    if (!p.positive) continue;
    positives += 1;
    double position = 1, hits = 1;
    for (const auto& q : s) {
      if (&q == &p || !RanksAhead(q, p)) continue;
      position += 1;
      if (q.positive) hits += 1;
    }
    sum += hits / position;
  }
  return 100.0 * sum / positives;
}

inline double BruteAcc(const ranking::Scores& scores, const std::vector<ranking::OrderedPair>& pairs) {
  double credit = 0;
  for (const auto& p : pairs) {
    const double a = scores.at(p.preferred), b = scores.at(p.other);
    credit += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return 100.0 * credit / static_cast<double>(pairs.size());
}

// Strictly increasing maps on [-5, 5].
inline std::vector<std::function<double(double)>> MonotoneTransforms() {
  return {[](double x) { return 3.0 * x + 7.0; },
          [](double x) { return std::exp(x); },
          [](double x) { return x * x * x + x; },
          [](double x) { return std::atan(x); },
          [](double x) { return std::log(x + 10.0); },
          [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
          [](double x) { return x < 0 ? x : 2.0 * x; },
          [](double x) { return std::cbrt(x); },
          [](double x) { return 0.5 * x - 100.0; },
          [](double x) { return std::sinh(x); }};
}

// Scores on a coarse grid so that ties occur.
inline std::vector<LabeledScore> RandomLabeled(std::mt19937_64& rng, std::size_t n, double pos_rate) {
  std::uniform_int_distribution<int> grid(-100, 100);
  std::bernoulli_distribution label(pos_rate);
  std::vector<LabeledScore> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"s" + std::to_string(i), grid(rng) / 20.0, label(rng)});
  }
  out[0].positive = true;
  out[1].positive = false;
  return out;
}

// Peak at 10, trough at 30, steady rise to 80, flat afterwards.
inline std::vector<ranking::CurvePoint> PeakPlateauFixture() {
  std::vector<ranking::CurvePoint> curve;
  for (int k = 1; k <= 100; ++k) {
    double f;
    if (k <= 10) {
      f = 0.5 + 0.03 * k;
    } else if (k <= 30) {
      f = 0.8 - 0.01 * (k - 10);
    } else if (k <= 80) {
      f = 0.6 + 0.003 * (k - 30);
    } else {
      f = 0.75;
    }
    curve.push_back({static_cast<double>(k), f, 0.0, f});
  }
  return curve;
}

}  // namespace curate::testing
