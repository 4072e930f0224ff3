#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "bsdiff/errors.hpp"

namespace bsdiff {

struct StatsResult {
  enum class Method { ExactEnumeration, NormalApproximation };

  /// U of the first sample: pairs (a_i, b_j) with a_i > b_j, ties counted one half.
  double u = 0.0;
  double p_value = 1.0;
  Method method = Method::ExactEnumeration;
  std::size_t n = 0;
  std::size_t m = 0;
};

inline constexpr std::size_t kExactTestLimit = 400;

namespace detail {

/// Midranks (1-based) of the pooled sample, doubled so they are integers.
inline std::vector<std::int64_t> doubled_midranks(std::span<const double> pooled) {
  const std::size_t total = pooled.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<std::int64_t> ranks(total);
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    // ranks i+1 .. j+1 share (i + j + 2) / 2; doubled that is i + j + 2.
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = static_cast<std::int64_t>(i + j + 2);
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/// Two-sample Mann-Whitney U with midranks. The two-sided p-value is exact
/// (enumeration of every split of the pooled ranks, ties kept) when n m <= 400,
/// otherwise the tie-corrected normal approximation with continuity correction.
inline StatsResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InvalidArgument("Mann-Whitney needs two non-empty samples");
  for (double v : a)
    if (!std::isfinite(v)) throw InvalidArgument("Mann-Whitney samples must be finite");
  for (double v : b)
    if (!std::isfinite(v)) throw InvalidArgument("Mann-Whitney samples must be finite");

  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::vector<std::int64_t> ranks = detail::doubled_midranks(pooled);

  std::int64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < n; ++i) rank_sum2 += ranks[i];
  const auto nn = static_cast<std::int64_t>(n);
  // 2U = 2R - n (n + 1)
  const std::int64_t u2 = rank_sum2 - nn * (nn + 1);

  StatsResult res;
  res.n = n;
  res.m = m;
  res.u = static_cast<double>(u2) / 2.0;
  const double center2 = static_cast<double>(n * m);  // 2 * (n m / 2)
  const double observed = std::abs(static_cast<double>(u2) - center2);

  if (n * m <= kExactTestLimit) {
    res.method = StatsResult::Method::ExactEnumeration;
    const std::int64_t max_sum = std::accumulate(ranks.begin(), ranks.end(), std::int64_t{0});
    // ways[k][s]: subsets of size k whose doubled ranks sum to s.
    std::vector<std::vector<double>> ways(n + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::int64_t r : ranks) {
      for (std::size_t k = n; k >= 1; --k) {
        auto& dst = ways[k];
        const auto& src = ways[k - 1];
        for (std::int64_t s = max_sum; s >= r; --s) dst[static_cast<std::size_t>(s)] += src[static_cast<std::size_t>(s - r)];
      }
    }
    double total = 0.0;
    double extreme = 0.0;
    for (std::int64_t s = 0; s <= max_sum; ++s) {
      const double w = ways[n][static_cast<std::size_t>(s)];
      if (w == 0.0) continue;
      total += w;
      const double dev = std::abs(static_cast<double>(s - nn * (nn + 1)) - center2);
      if (dev >= observed - 1e-9) extreme += w;
    }
    res.p_value = std::min(1.0, extreme / total);
    return res;
  }

  res.method = StatsResult::Method::NormalApproximation;
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  const double big_n = nd + md;
  std::vector<std::int64_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = nd * md / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (!(var > 0.0)) {
    res.p_value = 1.0;
    return res;
  }
  const double z = std::max(0.0, observed / 2.0 - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

}  // namespace bsdiff
