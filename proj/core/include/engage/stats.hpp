#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace engage::stats {

/// Sample sizes up to this use the exact null distribution.
inline constexpr std::size_t kWilcoxonExactLimit = 25;

struct WilcoxonResult {
  double p_value = 1.0;  // two-tailed
  double w_plus = 0.0;   // rank sum of positive differences (midranks for ties)
  double w_minus = 0.0;
  std::size_t n = 0;     // nonzero differences
  bool exact = true;
};

/// Paired two-tailed Wilcoxon signed-rank test on a - b. Zero differences
/// are dropped; tied |d| share midranks. p = min(1, 2 min(P(W+ <= w),
/// P(W+ >= w))) under the exact sign-flip distribution for n <= 25, normal
/// approximation with tie and continuity correction above. All-zero
/// differences give p = 1.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// min(1, m * p) for each of the m p-values.
std::vector<double> bonferroni_adjust(std::span<const double> p_values);
/// p < alpha / m.
std::vector<bool> bonferroni_significant(std::span<const double> p_values, double alpha = 0.05);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;             // population standard deviation
  double ci_half_width = 0.0;  // 1.96 * sd / sqrt(n)
  double best = 0.0;
};

Summary summarize(std::span<const double> values);

}  // namespace engage::stats
