#include "engage/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "engage/error.hpp"

namespace engage::stats {

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("wilcoxon: paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (!std::isfinite(diff)) throw DataError("wilcoxon: non-finite value");
    if (diff != 0.0) d.push_back(diff);
  }
  WilcoxonResult res;
  res.n = d.size();
  if (d.empty()) return res;

  // Doubled midranks are integers: a tie group occupying sorted positions
  // i..j (1-based) gets rank (i + j) / 2.
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long r2 = static_cast<long>((i + 1) + (j + 1));
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  long w2_plus = 0;
  long total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0.0) w2_plus += rank2[i];
  }
  res.w_plus = static_cast<double>(w2_plus) / 2.0;
  res.w_minus = static_cast<double>(total2 - w2_plus) / 2.0;

  if (n <= kWilcoxonExactLimit) {
    // counts[s] = number of sign patterns whose doubled positive rank sum is s.
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s) {
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + rank2[i])] += counts[static_cast<std::size_t>(s)];
      }
      reach += rank2[i];
    }
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= total2; ++s) {
      if (s <= w2_plus) lower += counts[static_cast<std::size_t>(s)];
      if (s >= w2_plus) upper += counts[static_cast<std::size_t>(s)];
    }
    const double patterns = std::ldexp(1.0, static_cast<int>(n));
    res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
    res.exact = true;
    return res;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double dev = std::max(0.0, std::abs(res.w_plus - mean) - 0.5);
  const double z = var > 0.0 ? dev / std::sqrt(var) : 0.0;
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  res.exact = false;
  return res;
}

std::vector<double> bonferroni_adjust(std::span<const double> p_values) {
  const double m = static_cast<double>(p_values.size());
  std::vector<double> out;
  out.reserve(p_values.size());
  for (double p : p_values) out.push_back(std::min(1.0, m * p));
  return out;
}

std::vector<bool> bonferroni_significant(std::span<const double> p_values, double alpha) {
  const double threshold = alpha / static_cast<double>(p_values.size());
  std::vector<bool> out;
  out.reserve(p_values.size());
  for (double p : p_values) out.push_back(p < threshold);
  return out;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / n);
  s.ci_half_width = 1.96 * s.sd / std::sqrt(n);
  s.best = *std::max_element(values.begin(), values.end());
  return s;
}

}  // namespace engage::stats
