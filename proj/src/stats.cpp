#include "clopa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace clopa::stats {
namespace {

constexpr double kMinP = std::numeric_limits<double>::min();

double clamp_p(double p) { return std::clamp(p, kMinP, 1.0); }

}  // namespace

std::vector<long> pratt_doubled_ranks(std::span<const double> diffs) {
  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<long> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    // positions i..j (0-based) share the mean rank ((i+1)+(j+1))/2
    const long doubled = static_cast<long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled;
    i = j + 1;
  }
  return ranks;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> diffs) {
  if (diffs.empty()) throw std::invalid_argument("wilcoxon_signed_rank: no pairs");
  for (double d : diffs)
    if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon_signed_rank: non-finite difference");

  const auto ranks = pratt_doubled_ranks(diffs);
  WilcoxonResult r;
  std::vector<long> nz;
  long w2 = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    if (diffs[i] == 0.0) continue;
    nz.push_back(ranks[i]);
    if (diffs[i] > 0) {
      w2 += ranks[i];
      r.w_plus += 0.5 * static_cast<double>(ranks[i]);
    } else {
      r.w_minus += 0.5 * static_cast<double>(ranks[i]);
    }
  }
  r.n_nonzero = static_cast<int>(nz.size());
  if (nz.empty()) return r;

  if (r.n_nonzero <= kWilcoxonExactMax) {
    r.exact = true;
    const long total = std::accumulate(nz.begin(), nz.end(), 0L);
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (long rk : nz) {
      for (long s = reach; s >= 0; --s) count[static_cast<std::size_t>(s + rk)] += count[static_cast<std::size_t>(s)];
      reach += rk;
    }
    double lo = 0.0, hi = 0.0;
    for (long s = 0; s <= total; ++s) {
      if (s <= w2) lo += count[static_cast<std::size_t>(s)];
      if (s >= w2) hi += count[static_cast<std::size_t>(s)];
    }
    const double denom = std::ldexp(1.0, r.n_nonzero);
    r.p = clamp_p(2.0 * std::min(lo, hi) / denom);
    return r;
  }

  double sum = 0.0, sum_sq = 0.0;
  for (long rk : nz) {
    const double v = 0.5 * static_cast<double>(rk);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / 2.0;
  const double sd = std::sqrt(sum_sq / 4.0);
  const double dev = std::max(0.0, std::abs(r.w_plus - mean) - 0.5);
  r.p = clamp_p(std::erfc(dev / sd / std::sqrt(2.0)));
  return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon_signed_rank: unpaired inputs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return wilcoxon_signed_rank(d);
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double v = 1.0;
  for (int i = 1; i <= k; ++i) v = v * (n - k + i) / i;
  return std::round(v);
}

double mcnemar(int b, int c) {
  if (b < 0 || c < 0) throw std::invalid_argument("mcnemar: negative count");
  const int n = b + c;
  if (n == 0) return 1.0;
  if (n <= kMcNemarExactMax) {
    double tail = 0.0;
    for (int k = 0; k <= std::min(b, c); ++k) tail += binomial(n, k);
    return clamp_p(2.0 * tail / std::ldexp(1.0, n));
  }
  const double dev = std::max(0.0, std::abs(static_cast<double>(b - c)) - 1.0);
  const double chi2 = dev * dev / n;
  return clamp_p(std::erfc(std::sqrt(chi2 / 2.0)));
}

RankTable rank_algorithms(const std::vector<std::string>& algorithms, const std::vector<std::vector<double>>& pvalues,
                          const std::vector<std::vector<bool>>& better, double alpha) {
  const std::size_t k = algorithms.size();
  if (pvalues.size() != k || better.size() != k) throw std::invalid_argument("rank_algorithms: matrix size mismatch");
  RankTable t;
  t.algorithms = algorithms;
  t.rank.assign(k, 1);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      PairwiseResult pr{static_cast<int>(i), static_cast<int>(j), pvalues[i][j], -1};
      if (pr.p < alpha) {
        if (better[i][j]) {
          pr.winner = static_cast<int>(i);
          ++t.rank[j];
        } else if (better[j][i]) {
          pr.winner = static_cast<int>(j);
          ++t.rank[i];
        }
      }
      t.pairs.push_back(pr);
    }
  }
  return t;
}

RankTable rank_continuous(const std::vector<std::string>& algorithms, const std::vector<std::vector<double>>& values,
                          Direction direction, double alpha) {
  const std::size_t k = algorithms.size();
  std::vector<std::vector<double>> p(k, std::vector<double>(k, 1.0));
  std::vector<std::vector<bool>> better(k, std::vector<bool>(k, false));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const auto w = wilcoxon_signed_rank(values[i], values[j]);
      p[i][j] = p[j][i] = w.p;
      const bool i_higher = w.w_plus > w.w_minus;
      const bool j_higher = w.w_minus > w.w_plus;
      better[i][j] = direction == Direction::HigherIsBetter ? i_higher : j_higher;
      better[j][i] = direction == Direction::HigherIsBetter ? j_higher : i_higher;
    }
  }
  return rank_algorithms(algorithms, p, better, alpha);
}

RankTable rank_binary(const std::vector<std::string>& algorithms, const std::vector<std::vector<bool>>& failed,
                      double alpha) {
  const std::size_t k = algorithms.size();
  std::vector<std::vector<double>> p(k, std::vector<double>(k, 1.0));
  std::vector<std::vector<bool>> better(k, std::vector<bool>(k, false));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (failed[i].size() != failed[j].size()) throw std::invalid_argument("rank_binary: unpaired inputs");
      int b = 0, c = 0;
      for (std::size_t u = 0; u < failed[i].size(); ++u) {
        b += failed[i][u] && !failed[j][u];
        c += !failed[i][u] && failed[j][u];
      }
      p[i][j] = p[j][i] = mcnemar(b, c);
      better[i][j] = c > b;
      better[j][i] = b > c;
    }
  }
  return rank_algorithms(algorithms, p, better, alpha);
}

}  // namespace clopa::stats
