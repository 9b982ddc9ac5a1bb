// Summary statistics for error distributions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace patchtrack {

struct BoxplotStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

/// Quantile of sorted data by linear interpolation between order statistics
/// at position p * (n - 1) (the "inclusive" method, numpy's default).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty list");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline BoxplotStats boxplot_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("boxplot_stats: empty list");
  std::sort(values.begin(), values.end());
  return {values.front(), quantile_sorted(values, 0.25), quantile_sorted(values, 0.5), quantile_sorted(values, 0.75),
          values.back()};
}

inline double median(std::vector<double> values) { return boxplot_stats(std::move(values)).median; }

struct WilcoxonResult {
  std::size_t n = 0;         ///< nonzero differences
  double w_plus = 0.0;       ///< rank sum of positive differences (a > b)
  double p_two_sided = 1.0;  ///< exact, from the permutation distribution of midranks
};

/// Exact paired Wilcoxon signed-rank test of a against b. Zero differences
/// are dropped; ties get midranks and the null distribution is enumerated
/// over sign flips of those midranks.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  WilcoxonResult res;
  res.n = d.size();
  if (d.empty()) return res;

  std::vector<std::size_t> order(d.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(d.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0) res.w_plus += rank[i];
  }

  // Midranks are multiples of 1/2, so count sign assignments on doubled ranks.
  std::vector<int> r2(d.size());
  int total = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    r2[i] = static_cast<int>(std::lround(2.0 * rank[i]));
    total += r2[i];
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  int reach = 0;
  for (int r : r2) {
    reach += r;
    for (int s = reach; s >= r; --s) counts[s] += counts[s - r];
  }
  const double n_assign = std::ldexp(1.0, static_cast<int>(d.size()));
  const double mean2 = 0.5 * total;
  const double obs_dev = std::abs(2.0 * res.w_plus - mean2);
  double tail = 0.0;
  for (int s = 0; s <= total; ++s) {
    if (std::abs(s - mean2) >= obs_dev - 1e-9) tail += counts[s];
  }
  res.p_two_sided = std::min(1.0, tail / n_assign);
  return res;
}

}  // namespace patchtrack
