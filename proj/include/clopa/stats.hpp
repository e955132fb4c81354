#pragma once

#include <span>
#include <string>
#include <vector>

// Paired significance tests and count-of-better ranking.

namespace clopa::stats {

inline constexpr double kAlpha = 0.05;
inline constexpr int kWilcoxonExactMax = 12;
inline constexpr int kMcNemarExactMax = 25;

struct WilcoxonResult {
  double p = 1.0;
  double w_plus = 0.0;   // rank sum of positive differences
  double w_minus = 0.0;  // rank sum of negative differences
  int n_nonzero = 0;
  bool exact = false;
};

/// Pratt ranks of |d|: zeros take part in the ranking, ties share the mean
/// rank. Returned doubled so every rank is an integer.
std::vector<long> pratt_doubled_ranks(std::span<const double> diffs);

/// Two-sided signed-rank test on paired differences. Exact null
/// distribution when at most kWilcoxonExactMax differences are nonzero,
/// otherwise the normal approximation with tie-aware variance and a 0.5
/// continuity correction. All-zero differences give p = 1.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> diffs);
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Two-sided McNemar test on the discordant counts b and c: exact binomial
/// for b + c <= kMcNemarExactMax, continuity-corrected chi-square beyond.
double mcnemar(int b, int c);

/// Binomial coefficient as a double; exact for the sizes used here.
double binomial(int n, int k);

enum class Direction { HigherIsBetter, LowerIsBetter };

struct PairwiseResult {
  int a = 0;
  int b = 0;
  double p = 1.0;
  int winner = -1;  // index of the significantly better algorithm, -1 if none
};

struct RankTable {
  std::vector<std::string> algorithms;
  std::vector<int> rank;  // 1 + number of significantly better opponents
  std::vector<PairwiseResult> pairs;

  bool first_ranked(std::size_t i) const { return rank[i] == 1; }
};

/// better[i][j] says algorithm i beats j in the observed direction;
/// pvalues is symmetric. A pair is decided when p < alpha.
RankTable rank_algorithms(const std::vector<std::string>& algorithms, const std::vector<std::vector<double>>& pvalues,
                          const std::vector<std::vector<bool>>& better, double alpha = kAlpha);

/// Wilcoxon comparison of every pair of rows in values[algorithm][unit].
RankTable rank_continuous(const std::vector<std::string>& algorithms, const std::vector<std::vector<double>>& values,
                          Direction direction, double alpha = kAlpha);

/// McNemar comparison of every pair of rows in failed[algorithm][unit];
/// fewer failures is better.
RankTable rank_binary(const std::vector<std::string>& algorithms, const std::vector<std::vector<bool>>& failed,
                      double alpha = kAlpha);

}  // namespace clopa::stats
