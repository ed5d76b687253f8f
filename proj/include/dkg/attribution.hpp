// SPDX-License-Identifier: Apache-2.0
//
// Shapley attributions for a coalition game v: 2^J -> R.
//
// A coalition is a bit mask over the J factors. For a trained model the game
// is "target-class probability of the model on x with every factor outside
// the coalition replaced by its background value".
//
// Two estimators:
//   shapley_exact    enumerates all 2^J coalitions once and reuses them for
//                    every factor (J <= 20).
//   shapley_sampled  averages marginal contributions along M random
//                    permutations; each permutation telescopes, so the
//                    efficiency identity holds for every M.
#ifndef DKG_ATTRIBUTION_HPP
#define DKG_ATTRIBUTION_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dkg/data.hpp"
#include "dkg/error.hpp"
#include "dkg/models.hpp"

namespace dkg {

inline constexpr std::size_t kMaxExactFactors = 20;

using Coalition = std::uint32_t;
using CoalitionGame = std::function<double(Coalition)>;

enum class AttributionMethod { Exact, Sampled };

constexpr std::string_view to_string(AttributionMethod m) {
  return m == AttributionMethod::Exact ? "exact" : "sampled";
}

struct AttributionVector {
  double base = 0.0;        // v(empty)
  double full = 0.0;        // v(all factors)
  std::vector<double> phi;
  std::vector<double> std_error;  // zeros for exact
  AttributionMethod method = AttributionMethod::Exact;
  std::size_t permutations = 0;
  std::uint64_t seed = 0;

  double efficiency_residual() const {
    return std::abs(base + std::accumulate(phi.begin(), phi.end(), 0.0) - full);
  }
};

namespace detail {

inline void check_game_size(std::size_t J) {
  require(J >= 1, ErrorKind::InvalidConfig, "game needs at least one factor");
  require(J <= 31, ErrorKind::TooManyFactors,
          std::to_string(J) + " factors exceed the coalition mask width");
}

inline double checked(double v) {
  require(std::isfinite(v), ErrorKind::OracleFailure,
          "value oracle returned a non-finite value");
  return v;
}

// |S|!(J-|S|-1)!/J! for |S| = 0..J-1, i.e. 1 / (J * binom(J-1, |S|)).
inline std::vector<double> shapley_weights(std::size_t J) {
  std::vector<double> w(J);
  double binom = 1.0;  // binom(J-1, s)
  for (std::size_t s = 0; s < J; ++s) {
    w[s] = 1.0 / (static_cast<double>(J) * binom);
    binom = binom * static_cast<double>(J - 1 - s) / static_cast<double>(s + 1);
  }
  return w;
}

}  // namespace detail

inline AttributionVector shapley_exact(std::size_t J, const CoalitionGame& v) {
  detail::check_game_size(J);
  require(J <= kMaxExactFactors, ErrorKind::TooManyFactors,
          "exact enumeration limited to " + std::to_string(kMaxExactFactors) +
              " factors, got " + std::to_string(J));
  const Coalition full = (Coalition{1} << J) - 1;
  std::vector<double> values(std::size_t{full} + 1);
  for (Coalition s = 0; s <= full; ++s) values[s] = detail::checked(v(s));

  const auto weights = detail::shapley_weights(J);
  AttributionVector out;
  out.base = values[0];
  out.full = values[full];
  out.phi.assign(J, 0.0);
  out.std_error.assign(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const Coalition bit = Coalition{1} << j;
    double acc = 0.0;
    for (Coalition s = 0; s <= full; ++s) {
      if (s & bit) continue;
      acc += weights[std::popcount(s)] * (values[s | bit] - values[s]);
    }
    out.phi[j] = acc;
  }
  return out;
}

// Averages marginal contributions over the given permutations.
inline AttributionVector shapley_from_permutations(
    std::size_t J, const CoalitionGame& v,
    std::span<const std::vector<std::size_t>> permutations) {
  detail::check_game_size(J);
  require(!permutations.empty(), ErrorKind::InvalidConfig,
          "need at least one permutation");
  AttributionVector out;
  out.method = AttributionMethod::Sampled;
  out.permutations = permutations.size();
  out.phi.assign(J, 0.0);
  std::vector<double> sum_sq(J, 0.0);
  out.base = detail::checked(v(0));
  for (const auto& perm : permutations) {
    require(perm.size() == J, ErrorKind::DimensionMismatch,
            "permutation length differs from factor count");
    Coalition s = 0;
    double prev = out.base;
    for (std::size_t j : perm) {
      s |= Coalition{1} << j;
      const double cur = detail::checked(v(s));
      const double delta = cur - prev;
      out.phi[j] += delta;
      sum_sq[j] += delta * delta;
      prev = cur;
    }
    out.full = prev;
  }
  const auto M = static_cast<double>(permutations.size());
  out.std_error.assign(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const double mean = out.phi[j] / M;
    out.phi[j] = mean;
    if (permutations.size() > 1) {
      const double var = std::max(0.0, (sum_sq[j] - M * mean * mean) / (M - 1.0));
      out.std_error[j] = std::sqrt(var / M);
    }
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> sample_permutations(
    std::size_t J, std::size_t M, std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> perms(M, std::vector<std::size_t>(J));
  for (auto& p : perms) {
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
  }
  return perms;
}

// Independent stream per (seed, stream index); results do not depend on the
// order in which streams are consumed.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline AttributionVector shapley_sampled(std::size_t J, const CoalitionGame& v,
                                         std::size_t M, std::uint64_t seed) {
  require(M >= 1, ErrorKind::InvalidConfig, "permutation count must be >= 1");
  std::mt19937_64 rng(seed);
  auto out = shapley_from_permutations(J, v, sample_permutations(J, M, rng));
  out.seed = seed;
  return out;
}

// ---------------------------------------------------------------------------
// Model-backed value oracle

struct AttributionTarget {
  // nullopt: probability of the class the model predicts on the full input.
  std::optional<std::size_t> class_index;
};

class ValueOracle {
 public:
  ValueOracle(const ModelState& model, std::vector<double> background,
              AttributionTarget target = {})
      : model_(&model), background_(std::move(background)), target_(target) {
    require(background_.size() == model.spec.input_dim,
            ErrorKind::DimensionMismatch,
            "background length differs from model input_dim");
    for (double b : background_) {
      require(std::isfinite(b), ErrorKind::InvalidConfig,
              "background must be finite");
    }
    if (target_.class_index) {
      require(*target_.class_index < model.spec.num_classes,
              ErrorKind::InvalidConfig, "target class out of range");
    }
  }

  const ModelState& model() const { return *model_; }
  std::span<const double> background() const { return background_; }
  std::size_t num_factors() const { return background_.size(); }

  // Target class for instance x; fixed across all coalitions of x.
  std::size_t target_class(std::span<const double> x) const {
    if (target_.class_index) return *target_.class_index;
    return static_cast<std::size_t>(predict_class(*model_, x));
  }

  // Coalition game for one instance.
  CoalitionGame game(std::span<const double> x) const {
    check_input(*model_, x);
    const std::size_t c = target_class(x);
    std::vector<double> xs(x.begin(), x.end());
    auto cache = std::make_shared<ForwardCache>();
    auto z = std::make_shared<std::vector<double>>(xs.size());
    return [this, xs = std::move(xs), c, cache, z](Coalition s) {
      for (std::size_t j = 0; j < xs.size(); ++j) {
        (*z)[j] = (s >> j) & 1U ? xs[j] : background_[j];
      }
      auto logits = forward_logits(*model_, model_->params, *z, *cache);
      std::vector<double> p(logits.begin(), logits.end());
      softmax_inplace(p);
      return p[c];
    };
  }

 private:
  const ModelState* model_;
  std::vector<double> background_;
  AttributionTarget target_;
};

inline AttributionVector shapley_exact(const ValueOracle& oracle,
                                       std::span<const double> x) {
  return shapley_exact(oracle.num_factors(), oracle.game(x));
}

inline AttributionVector shapley_sampled(const ValueOracle& oracle,
                                         std::span<const double> x,
                                         std::size_t M, std::uint64_t seed) {
  return shapley_sampled(oracle.num_factors(), oracle.game(x), M, seed);
}

// ---------------------------------------------------------------------------
// Row-level and group-level attribution

struct AttributionOptions {
  AttributionMethod method = AttributionMethod::Exact;
  std::size_t permutations = 2000;  // sampled only
  std::size_t sample_cap = 256;     // rows attributed per table
  std::uint64_t seed = 101;
};

struct RowAttribution {
  std::size_t row_index = 0;
  AttributionVector attribution;
};

// Rows kept when the table exceeds `cap`: a seeded subset, ascending.
inline std::vector<std::size_t> subsample_rows(std::size_t n, std::size_t cap,
                                               std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (cap == 0 || n <= cap) return idx;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<double> column_means(const SurveyTable& t) {
  return column_stats(t).mean;
}

inline std::vector<RowAttribution> attribute_rows(const ValueOracle& oracle,
                                                  const SurveyTable& table,
                                                  const AttributionOptions& opt) {
  require(table.rows() > 0, ErrorKind::EmptyInput, "cannot attribute an empty table");
  require(table.cols() == oracle.num_factors(), ErrorKind::DimensionMismatch,
          "table width differs from oracle factor count");
  std::vector<RowAttribution> out;
  for (std::size_t i : subsample_rows(table.rows(), opt.sample_cap, opt.seed)) {
    auto x = table.row(i);
    RowAttribution r{i, {}};
    if (opt.method == AttributionMethod::Exact) {
      r.attribution = shapley_exact(oracle, x);
    } else {
      require(opt.permutations >= 1, ErrorKind::InvalidConfig,
              "permutation count must be >= 1");
      auto rng = stream_rng(opt.seed, i);
      r.attribution = shapley_from_permutations(
          oracle.num_factors(), oracle.game(x),
          sample_permutations(oracle.num_factors(), opt.permutations, rng));
      r.attribution.seed = opt.seed;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// score_j = mean over rows of |phi_j|.
inline std::vector<double> mean_abs_attribution(
    std::span<const RowAttribution> rows) {
  require(!rows.empty(), ErrorKind::EmptyInput, "no attributions to aggregate");
  const auto J = rows.front().attribution.phi.size();
  std::vector<double> score(J, 0.0);
  for (const auto& r : rows) {
    require(r.attribution.phi.size() == J, ErrorKind::DimensionMismatch,
            "attribution lengths differ");
    for (std::size_t j = 0; j < J; ++j) score[j] += std::abs(r.attribution.phi[j]);
  }
  for (auto& s : score) s /= static_cast<double>(rows.size());
  return score;
}

// Group importance of a model on a table, background = the table's column
// means unless given.
inline std::vector<double> group_importance(
    const ModelState& model, const SurveyTable& table,
    const AttributionOptions& opt,
    std::optional<std::vector<double>> background = std::nullopt) {
  require(table.rows() > 0, ErrorKind::EmptyInput, "empty table");
  ValueOracle oracle(model, background ? *background : column_means(table));
  const auto rows = attribute_rows(oracle, table, opt);
  return mean_abs_attribution(rows);
}

// ---------------------------------------------------------------------------
// Rankings

struct FactorRanking {
  std::vector<std::size_t> order;   // factor indices, most important first
  std::vector<double> scores;
  // Factors whose scores were exactly equal; ordered by ascending index.
  std::vector<std::vector<std::size_t>> tie_groups;

  // position[j] = rank of factor j (0 = most important)
  std::vector<std::size_t> positions() const {
    std::vector<std::size_t> pos(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) pos[order[r]] = r;
    return pos;
  }
  bool operator==(const FactorRanking&) const = default;
};

inline FactorRanking rank_factors(std::span<const double> scores) {
  for (double s : scores) {
    require(std::isfinite(s), ErrorKind::InvalidConfig, "scores must be finite");
  }
  FactorRanking r;
  r.scores.assign(scores.begin(), scores.end());
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  for (std::size_t i = 0; i < r.order.size();) {
    std::size_t k = i + 1;
    while (k < r.order.size() && scores[r.order[k]] == scores[r.order[i]]) ++k;
    if (k - i > 1) r.tie_groups.emplace_back(r.order.begin() + i, r.order.begin() + k);
    i = k;
  }
  return r;
}

}  // namespace dkg

#endif  // DKG_ATTRIBUTION_HPP
