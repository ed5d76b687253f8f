// SPDX-License-Identifier: Apache-2.0
//
// Classification metrics, rank consistency and box-plot statistics.
#ifndef DKG_METRICS_HPP
#define DKG_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dkg/attribution.hpp"
#include "dkg/error.hpp"

namespace dkg {

struct ConfusionCounts {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // row = true class, col = predicted

  explicit ConfusionCounts(std::size_t c = 0) : num_classes(c), counts(c * c, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * num_classes + pred];
  }
  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * num_classes + pred];
  }
  std::uint64_t total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  }
  std::uint64_t correct() const {
    std::uint64_t c = 0;
    for (std::size_t i = 0; i < num_classes; ++i) c += at(i, i);
    return c;
  }
};

inline ConfusionCounts confusion(std::span<const int> truth,
                                 std::span<const int> predicted,
                                 std::size_t num_classes) {
  require(truth.size() == predicted.size(), ErrorKind::LengthMismatch,
          "truth and prediction lengths differ");
  ConfusionCounts cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < num_classes &&
                predicted[i] >= 0 &&
                static_cast<std::size_t>(predicted[i]) < num_classes,
            ErrorKind::LabelOutOfRange, "class index out of range");
    ++cm.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

// Per-class F1; a zero denominator (class neither true nor predicted) is 0.
inline std::vector<double> per_class_f1(const ConfusionCounts& cm) {
  std::vector<double> f1(cm.num_classes, 0.0);
  for (std::size_t c = 0; c < cm.num_classes; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (std::size_t o = 0; o < cm.num_classes; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const auto denom = 2 * tp + fp + fn;
    f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return f1;
}

inline double macro_f1(const ConfusionCounts& cm) {
  require(cm.total() > 0, ErrorKind::EmptyCounts, "confusion matrix is empty");
  const auto f1 = per_class_f1(cm);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
}

// Pooled F1; for single-label multi-class this is accuracy.
inline double micro_f1(const ConfusionCounts& cm) {
  require(cm.total() > 0, ErrorKind::EmptyCounts, "confusion matrix is empty");
  return static_cast<double>(cm.correct()) / static_cast<double>(cm.total());
}

// ---------------------------------------------------------------------------
// Kendall tau

struct KendallResult {
  double tau = 0.0;
  std::uint64_t concordant = 0;
  std::uint64_t discordant = 0;
  std::size_t n = 0;
};

namespace detail {

inline std::vector<std::size_t> positions_of(std::span<const std::size_t> order) {
  const auto n = order.size();
  std::vector<std::size_t> pos(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    require(order[r] < n && pos[order[r]] == n, ErrorKind::NotAPermutation,
            "ranking is not a permutation of 0.." + std::to_string(n - 1));
    pos[order[r]] = r;
  }
  return pos;
}

}  // namespace detail

// Tau-a between two strict orderings of the same n items. Each argument lists
// item ids from first to last place.
inline KendallResult kendall_tau(std::span<const std::size_t> order_a,
                                 std::span<const std::size_t> order_b) {
  require(order_a.size() == order_b.size(), ErrorKind::LengthMismatch,
          "rankings differ in length");
  require(order_a.size() >= 2, ErrorKind::LengthMismatch,
          "kendall tau needs n >= 2");
  const auto pa = detail::positions_of(order_a);
  const auto pb = detail::positions_of(order_b);
  KendallResult r;
  r.n = order_a.size();
  for (std::size_t i = 0; i < r.n; ++i) {
    for (std::size_t j = i + 1; j < r.n; ++j) {
      const bool a = pa[i] < pa[j];
      const bool b = pb[i] < pb[j];
      (a == b ? r.concordant : r.discordant) += 1;
    }
  }
  const double pairs = static_cast<double>(r.n) * static_cast<double>(r.n - 1) / 2.0;
  r.tau = (static_cast<double>(r.concordant) - static_cast<double>(r.discordant)) / pairs;
  return r;
}

inline KendallResult kendall_tau(const FactorRanking& a, const FactorRanking& b) {
  return kendall_tau(a.order, b.order);
}

struct ConsistencyMatrix {
  std::vector<std::vector<double>> tau;  // symmetric, unit diagonal
  double mean = 0.0;                     // over the strict upper triangle
};

inline ConsistencyMatrix pairwise_consistency(std::span<const FactorRanking> rankings) {
  require(rankings.size() >= 2, ErrorKind::EmptyInput,
          "pairwise consistency needs at least two rankings");
  const auto F = rankings.size();
  ConsistencyMatrix m{std::vector<std::vector<double>>(F, std::vector<double>(F, 1.0)),
                      0.0};
  double sum = 0.0;
  for (std::size_t a = 0; a < F; ++a) {
    for (std::size_t b = a + 1; b < F; ++b) {
      const double t = kendall_tau(rankings[a], rankings[b]).tau;
      m.tau[a][b] = m.tau[b][a] = t;
      sum += t;
    }
  }
  m.mean = sum / (static_cast<double>(F * (F - 1)) / 2.0);
  return m;
}

// ---------------------------------------------------------------------------
// Box statistics

struct StabilitySummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
  double iqr() const { return q3 - q1; }
};

// Quantile by linear interpolation between closest ranks: position q*(n-1)
// in the sorted sample.
inline double quantile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline StabilitySummary stability_summary(std::span<const double> values) {
  require(!values.empty(), ErrorKind::EmptyInput, "no values to summarize");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  StabilitySummary s;
  s.min = v.front();
  s.max = v.back();
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  return s;
}

}  // namespace dkg

#endif  // DKG_METRICS_HPP
