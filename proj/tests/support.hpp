// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit and acceptance suites.
#ifndef DKG_TESTS_SUPPORT_HPP
#define DKG_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dkg/attribution.hpp"
#include "dkg/data.hpp"
#include "dkg/models.hpp"

namespace dkg::fixtures {

inline SurveyTable random_table(std::size_t n, std::size_t J, int C, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  SurveyTable t;
  for (std::size_t j = 0; j < J; ++j) t.factor_names.push_back("x" + std::to_string(j + 1));
  t.num_levels = C;
  std::vector<double> row(J);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : row) v = g(rng);
    t.push_row(row, static_cast<int>(rng() % static_cast<std::uint64_t>(C)));
  }
  return t;
}

inline std::vector<std::size_t> all_rows(const SurveyTable& t) {
  std::vector<std::size_t> b(t.rows());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = i;
  return b;
}

// Moves every parameter off its initial value. Zero-initialized biases put
// ReLU pre-activations exactly on the kink whenever a unit's inputs vanish,
// where central differences are not defined.
inline void jitter_params(ModelState& m, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  for (auto& p : m.params) p += g(rng);
}

// Central differences at h = 1e-4 are exact only away from ReLU kinks, so
// batches are redrawn until every pre-activation keeps a 1e-3 margin.
inline constexpr double kKinkMargin = 1e-3;

inline SurveyTable smooth_batch(const ModelState& m, std::size_t n, std::uint64_t seed,
                                std::size_t* redraws = nullptr) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto t = random_table(n, m.spec.input_dim, static_cast<int>(m.spec.num_classes),
                          seed + 7919 * attempt);
    if (relu_margin(m, m.params, t, all_rows(t)) > kKinkMargin) return t;
    if (redraws) ++*redraws;
  }
}

// Random game on J players: an arbitrary value per coalition.
inline std::vector<double> random_game_table(std::size_t J, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(std::size_t{1} << J);
  for (auto& x : v) x = u(rng);
  return v;
}

inline CoalitionGame table_game(const std::vector<double>& values) {
  return [&values](Coalition s) { return values[s]; };
}

// Eight-factor softmax-regression oracle with a fixed set of query rows.
struct LinearOracleFixture {
  ModelState model;
  std::vector<std::vector<double>> rows;
  std::vector<double> background;

  LinearOracleFixture() {
    ClassifierSpec s;
    s.kind = ModelKind::LR;
    s.input_dim = 8;
    s.num_classes = 3;
    s.seed = 2024;
    model = build_model(s);
    for (auto& p : model.params) p *= 2.0;
    auto t = random_table(10, 8, 3, 77);
    for (std::size_t i = 0; i < t.rows(); ++i) {
      rows.emplace_back(t.row(i).begin(), t.row(i).end());
    }
    background.assign(8, 0.0);
  }
};

// Pair counter that looks positions up by linear search.
inline double brute_force_tau(const std::vector<std::size_t>& a,
                              const std::vector<std::size_t>& b) {
  const auto n = a.size();
  auto pos = [](const std::vector<std::size_t>& order, std::size_t item) {
    return std::find(order.begin(), order.end(), item) - order.begin();
  };
  long long score = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto da = pos(a, i) - pos(a, j);
      const auto db = pos(b, i) - pos(b, j);
      score += (da > 0) == (db > 0) ? 1 : -1;
    }
  }
  return static_cast<double>(score) / static_cast<double>(n * (n - 1));
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace dkg::fixtures

#endif  // DKG_TESTS_SUPPORT_HPP
