// SPDX-License-Identifier: Apache-2.0
#include "dkg/metrics.hpp"

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace dkg {
namespace {

ConfusionCounts from_rows(std::vector<std::vector<std::uint64_t>> m) {
  ConfusionCounts c(m.size());
  for (std::size_t t = 0; t < m.size(); ++t) {
    for (std::size_t p = 0; p < m.size(); ++p) c.at(t, p) = m[t][p];
  }
  return c;
}

TEST(F1, PerfectClassifier) {
  auto c = from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 5}});
  EXPECT_EQ(macro_f1(c), 1.0);
  EXPECT_EQ(micro_f1(c), 1.0);
}

TEST(F1, UniformTwoByTwo) {
  auto c = from_rows({{1, 1}, {1, 1}});
  EXPECT_DOUBLE_EQ(micro_f1(c), 0.5);
  EXPECT_DOUBLE_EQ(macro_f1(c), 0.5);
}

TEST(F1, SingleClassPredictor) {
  auto c = from_rows({{2, 0}, {2, 0}});
  EXPECT_DOUBLE_EQ(micro_f1(c), 0.5);
  EXPECT_DOUBLE_EQ(macro_f1(c), 1.0 / 3.0);
}

TEST(F1, AbsentClassCountsAsZero) {
  auto c = from_rows({{2, 0, 0}, {0, 2, 0}, {0, 0, 0}});
  EXPECT_DOUBLE_EQ(macro_f1(c), 2.0 / 3.0);
}

TEST(F1, EmptyCounts) {
  ConfusionCounts c(3);
  try {
    macro_f1(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyCounts);
  }
  EXPECT_THROW(micro_f1(c), Error);
}

TEST(F1, MicroEqualsAccuracyOnRandomMatrices) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 2 + rng() % 6;
    std::vector<int> truth, pred;
    const std::size_t n = 1 + rng() % 200;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      truth.push_back(static_cast<int>(rng() % C));
      pred.push_back(static_cast<int>(rng() % C));
      correct += truth.back() == pred.back();
    }
    auto c = confusion(truth, pred, C);
    EXPECT_EQ(c.total(), n);
    EXPECT_EQ(micro_f1(c), static_cast<double>(correct) / static_cast<double>(n));
  }
}

TEST(F1, DiagonalMatrixMacroEqualsMicro) {
  auto c = from_rows({{4, 0, 0}, {0, 1, 0}, {0, 0, 9}});
  EXPECT_EQ(macro_f1(c), micro_f1(c));
}

TEST(Kendall, Cases) {
  std::vector<std::size_t> id{0, 1, 2, 3}, rev{3, 2, 1, 0}, swap{0, 2, 1, 3};
  EXPECT_EQ(kendall_tau(id, id).tau, 1.0);
  EXPECT_EQ(kendall_tau(id, rev).tau, -1.0);
  auto r = kendall_tau(id, swap);
  EXPECT_EQ(r.concordant, 5u);
  EXPECT_EQ(r.discordant, 1u);
  EXPECT_EQ(r.tau, 4.0 / 6.0);
}

TEST(Kendall, MatchesBruteForce) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    auto a = fixtures::random_permutation(n, rng);
    auto b = fixtures::random_permutation(n, rng);
    auto r = kendall_tau(a, b);
    EXPECT_EQ(r.tau, fixtures::brute_force_tau(a, b));
    EXPECT_EQ(r.concordant + r.discordant, n * (n - 1) / 2);
    std::vector<std::size_t> reversed(b.rbegin(), b.rend());
    EXPECT_EQ(kendall_tau(a, reversed).tau, -r.tau);
  }
}

TEST(Kendall, ErrorPaths) {
  std::vector<std::size_t> a{0, 1, 2}, b{0, 1}, dup{0, 0, 2}, one{0};
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoError;
  };
  EXPECT_EQ(kind_of([&] { kendall_tau(a, b); }), ErrorKind::LengthMismatch);
  EXPECT_EQ(kind_of([&] { kendall_tau(a, dup); }), ErrorKind::NotAPermutation);
  EXPECT_EQ(kind_of([&] { kendall_tau(one, one); }), ErrorKind::LengthMismatch);
}

FactorRanking ranking_of(std::vector<std::size_t> order) {
  FactorRanking r;
  r.order = std::move(order);
  return r;
}

TEST(PairwiseConsistency, Cases) {
  std::vector<FactorRanking> same(3, ranking_of({0, 1, 2, 3}));
  auto s = pairwise_consistency(same);
  EXPECT_EQ(s.mean, 1.0);
  for (const auto& row : s.tau) {
    for (double t : row) EXPECT_EQ(t, 1.0);
  }
  std::vector<FactorRanking> opposite{ranking_of({0, 1, 2}), ranking_of({2, 1, 0})};
  EXPECT_EQ(pairwise_consistency(opposite).mean, -1.0);
  std::vector<FactorRanking> mixed{ranking_of({0, 1, 2}), ranking_of({0, 1, 2}),
                                   ranking_of({2, 1, 0})};
  auto m = pairwise_consistency(mixed);
  EXPECT_DOUBLE_EQ(m.mean, -1.0 / 3.0);
  EXPECT_EQ(m.tau[0][2], m.tau[2][0]);
  EXPECT_EQ(m.tau[1][1], 1.0);
}

TEST(Stability, Cases) {
  auto a = stability_summary(std::vector<double>{5, 1, 4, 2, 3});
  EXPECT_EQ(a.min, 1);
  EXPECT_EQ(a.q1, 2);
  EXPECT_EQ(a.median, 3);
  EXPECT_EQ(a.q3, 4);
  EXPECT_EQ(a.max, 5);
  EXPECT_EQ(a.mean, 3);
  auto b = stability_summary(std::vector<double>{7});
  for (double v : {b.min, b.q1, b.median, b.q3, b.max, b.mean}) EXPECT_EQ(v, 7);
  auto c = stability_summary(std::vector<double>{0.5, 0.6});
  EXPECT_DOUBLE_EQ(c.median, 0.55);
  EXPECT_DOUBLE_EQ(c.mean, 0.55);
  EXPECT_THROW(stability_summary(std::vector<double>{}), Error);
}

TEST(Stability, OrderedFields) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(1 + rng() % 12);
    for (auto& x : v) x = u(rng);
    auto s = stability_summary(v);
    EXPECT_LE(s.min, s.q1);
    EXPECT_LE(s.q1, s.median);
    EXPECT_LE(s.median, s.q3);
    EXPECT_LE(s.q3, s.max);
  }
}

}  // namespace
}  // namespace dkg
