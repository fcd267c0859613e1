#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "curate/preference.hpp"

namespace curate::testing {

// Items with latent quality q ~ N(0, q_scale^2) embedded as q*u + N(0, noise^2 I),
// training pairs labeled by a Bradley-Terry draw on q.
struct LatentTask {
  std::vector<preference::PreferencePair> train;
  std::vector<Eigen::VectorXd> holdout_x;
  std::vector<double> holdout_q;
};

inline LatentTask MakeLatentTask(std::uint64_t seed, int d = 32, std::size_t n_pairs = 2000,
                                 double q_scale = 3.0, double noise = 0.5,
                                 std::size_t n_items = 1000, std::size_t n_holdout = 500) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd u(d);
  for (int i = 0; i < d; ++i) u(i) = normal(rng);
  u.normalize();
  auto item = [&](double q) {
    Eigen::VectorXd x(d);
    for (int i = 0; i < d; ++i) x(i) = q * u(i) + noise * normal(rng);
    return x;
  };
  std::vector<double> q(n_items);
  std::vector<Eigen::VectorXd> xs;
  for (auto& v : q) {
    v = q_scale * normal(rng);
    xs.push_back(item(v));
  }
  LatentTask task;
  std::uniform_int_distribution<std::size_t> pick(0, n_items - 1);
  while (task.train.size() < n_pairs) {
    const auto i = pick(rng);
    const auto j = pick(rng);
    if (i == j) continue;
    preference::PreferencePair p;
    p.x_i = xs[i];
    p.x_j = xs[j];
    const bool i_wins = unit(rng) < 1.0 / (1.0 + std::exp(q[j] - q[i]));
    p.z_i = i_wins ? 1 : 0;
    p.z_j = 1 - p.z_i;
    task.train.push_back(std::move(p));
  }
  for (std::size_t k = 0; k < n_holdout; ++k) {
    task.holdout_q.push_back(q_scale * normal(rng));
    task.holdout_x.push_back(item(task.holdout_q.back()));
  }
  return task;
}

// Fraction of item pairs whose score order agrees with the latent order.
inline double OrderAgreement(const std::vector<double>& score, const std::vector<double>& truth) {
  double agree = 0;
  double total = 0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    for (std::size_t j = i + 1; j < score.size(); ++j) {
      if (truth[i] == truth[j]) continue;
      total += 1;
      const double s = (score[i] - score[j]) * (truth[i] - truth[j]);
      if (s > 0) agree += 1;
      if (s == 0) agree += 0.5;
    }
  }
  return agree / total;
}

inline std::vector<double> AverageRanks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
    i = j + 1;
  }
  return r;
}

inline double Spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = AverageRanks(a);
  const auto rb = AverageRanks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Central finite differences of fn at params; returns the gradient.
template <typename Fn>
Eigen::VectorXd NumericGradient(Eigen::VectorXd& params, Fn&& fn, double h = 1e-5) {
  Eigen::VectorXd g(params.size());
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    const double saved = params(k);
    params(k) = saved + h;
    const double up = fn();
    params(k) = saved - h;
    const double down = fn();
    params(k) = saved;
    g(k) = (up - down) / (2 * h);
  }
  return g;
}

inline double RelativeError(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace curate::testing
