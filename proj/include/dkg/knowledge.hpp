// SPDX-License-Identifier: Apache-2.0
//
// Domain knowledge: per-model importance vectors fused into one distribution
// over factors, plus the primary / secondary factor sets that every source
// model agrees on.
#ifndef DKG_KNOWLEDGE_HPP
#define DKG_KNOWLEDGE_HPP

#include <algorithm>
#include <cmath>
#include <iterator>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dkg/attribution.hpp"
#include "dkg/checkpoint.hpp"
#include "dkg/error.hpp"
#include "dkg/models.hpp"

namespace dkg {

inline constexpr int kKnowledgeVersion = 1;

struct KnowledgeSource {
  std::string id;
  std::vector<double> exp;  // raw importance vector of this model
  bool operator==(const KnowledgeSource&) const = default;
};

struct DomainKnowledge {
  std::vector<std::string> factor_names;
  std::vector<double> exp;      // fused importance
  std::vector<double> dist;     // softmax(exp / temperature)
  std::vector<double> lambdas;  // per-source weight in [0, 1]
  std::vector<KnowledgeSource> sources;
  std::size_t k = 0;
  std::vector<std::size_t> primary;    // ascending factor indices
  std::vector<std::size_t> secondary;  // ascending factor indices
  double temperature = 1.0;
  Json provenance = Json::object();

  bool operator==(const DomainKnowledge&) const = default;
};

// Exp = (1/|F|) * sum_f lambda_f * exp_f. The lambdas are not renormalized.
inline std::vector<double> combine_importance(
    std::span<const std::vector<double>> exp_vectors,
    std::span<const double> lambdas) {
  require(!exp_vectors.empty(), ErrorKind::EmptySourceSet,
          "no importance sources");
  require(lambdas.size() == exp_vectors.size(), ErrorKind::DimensionMismatch,
          "one lambda per source required");
  const auto J = exp_vectors.front().size();
  std::vector<double> out(J, 0.0);
  for (std::size_t f = 0; f < exp_vectors.size(); ++f) {
    require(exp_vectors[f].size() == J, ErrorKind::DimensionMismatch,
            "importance vectors differ in length");
    require(lambdas[f] >= 0.0 && lambdas[f] <= 1.0, ErrorKind::InvalidConfig,
            "lambda must lie in [0, 1]");
    for (std::size_t j = 0; j < J; ++j) out[j] += lambdas[f] * exp_vectors[f][j];
  }
  const auto inv = 1.0 / static_cast<double>(exp_vectors.size());
  for (auto& v : out) v *= inv;
  return out;
}

inline std::vector<double> normalize_distribution(std::span<const double> exp,
                                                  double temperature = 1.0) {
  require(temperature > 0.0 && std::isfinite(temperature),
          ErrorKind::InvalidConfig, "temperature must be > 0");
  for (double v : exp) {
    require(std::isfinite(v), ErrorKind::InvalidConfig,
            "importance must be finite");
  }
  return softmax(exp, temperature);
}

struct FactorSets {
  std::vector<std::size_t> primary;
  std::vector<std::size_t> secondary;
};

// Factors in the top-k (last-k) of every ranking.
inline FactorSets extract_primary_secondary(std::span<const FactorRanking> rankings,
                                            std::size_t k) {
  require(!rankings.empty(), ErrorKind::EmptySourceSet, "no rankings");
  const auto J = rankings.front().order.size();
  require(k >= 1 && k <= J / 2, ErrorKind::InvalidK,
          "k=" + std::to_string(k) + " must lie in [1, " + std::to_string(J / 2) +
              "]");
  auto intersect = [&](bool top) {
    std::set<std::size_t> acc;
    for (std::size_t f = 0; f < rankings.size(); ++f) {
      const auto& order = rankings[f].order;
      require(order.size() == J, ErrorKind::DimensionMismatch,
              "rankings differ in length");
      std::set<std::size_t> part = top ? std::set<std::size_t>(order.begin(), order.begin() + k)
                                       : std::set<std::size_t>(order.end() - k, order.end());
      if (f == 0) {
        acc = std::move(part);
      } else {
        std::set<std::size_t> next;
        std::set_intersection(acc.begin(), acc.end(), part.begin(), part.end(),
                              std::inserter(next, next.begin()));
        acc = std::move(next);
      }
    }
    return std::vector<std::size_t>(acc.begin(), acc.end());
  };
  return {intersect(true), intersect(false)};
}

// Fuses the sources, normalizes and extracts the factor sets from each
// source's own ranking.
inline DomainKnowledge build_knowledge(std::vector<std::string> factor_names,
                                       std::vector<KnowledgeSource> sources,
                                       std::vector<double> lambdas, std::size_t k,
                                       double temperature = 1.0) {
  require(!sources.empty(), ErrorKind::EmptySourceSet, "no knowledge sources");
  std::vector<std::vector<double>> vectors;
  std::vector<FactorRanking> rankings;
  for (const auto& s : sources) {
    require(s.exp.size() == factor_names.size(), ErrorKind::FactorMismatch,
            "source '" + s.id + "' has " + std::to_string(s.exp.size()) +
                " factors, expected " + std::to_string(factor_names.size()));
    vectors.push_back(s.exp);
    rankings.push_back(rank_factors(s.exp));
  }
  DomainKnowledge dk;
  dk.factor_names = std::move(factor_names);
  dk.exp = combine_importance(vectors, lambdas);
  dk.dist = normalize_distribution(dk.exp, temperature);
  dk.lambdas = std::move(lambdas);
  dk.sources = std::move(sources);
  dk.k = k;
  auto sets = extract_primary_secondary(rankings, k);
  dk.primary = std::move(sets.primary);
  dk.secondary = std::move(sets.secondary);
  dk.temperature = temperature;
  return dk;
}

inline void validate(const DomainKnowledge& dk) {
  const auto J = dk.factor_names.size();
  require(J >= 1, ErrorKind::CorruptArtifact, "knowledge has no factors");
  require(dk.exp.size() == J && dk.dist.size() == J, ErrorKind::CorruptArtifact,
          "exp/dist length differs from factor count");
  require(!dk.sources.empty() && dk.sources.size() == dk.lambdas.size(),
          ErrorKind::CorruptArtifact, "sources and lambdas disagree");
  double sum = 0.0;
  for (double p : dk.dist) {
    require(p > 0.0, ErrorKind::CorruptArtifact, "dist entries must be positive");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-12, ErrorKind::CorruptArtifact,
          "dist does not sum to 1");
  for (auto set : {&dk.primary, &dk.secondary}) {
    for (auto j : *set) {
      require(j < J, ErrorKind::CorruptArtifact, "factor set index out of range");
    }
  }
  for (auto j : dk.primary) {
    require(std::find(dk.secondary.begin(), dk.secondary.end(), j) ==
                dk.secondary.end(),
            ErrorKind::CorruptArtifact, "primary and secondary sets overlap");
  }
}

inline Json to_json(const DomainKnowledge& dk) {
  Json sources = Json::array();
  for (const auto& s : dk.sources) sources.push_back({{"id", s.id}, {"exp", s.exp}});
  return Json{{"format", "dkg-knowledge"},
              {"version", kKnowledgeVersion},
              {"factor_names", dk.factor_names},
              {"exp", dk.exp},
              {"dist", dk.dist},
              {"lambdas", dk.lambdas},
              {"sources", sources},
              {"k", dk.k},
              {"s_pri", dk.primary},
              {"s_sec", dk.secondary},
              {"temperature", dk.temperature},
              {"provenance", dk.provenance}};
}

inline DomainKnowledge knowledge_from_json(const Json& j) {
  try {
    require(j.is_object(), ErrorKind::CorruptArtifact, "knowledge is not an object");
    const int version = j.at("version").get<int>();
    require(version == kKnowledgeVersion, ErrorKind::SchemaVersionMismatch,
            "knowledge version " + std::to_string(version) + ", expected " +
                std::to_string(kKnowledgeVersion));
    DomainKnowledge dk;
    dk.factor_names = j.at("factor_names").get<std::vector<std::string>>();
    dk.exp = j.at("exp").get<std::vector<double>>();
    dk.dist = j.at("dist").get<std::vector<double>>();
    dk.lambdas = j.at("lambdas").get<std::vector<double>>();
    for (const auto& s : j.at("sources")) {
      dk.sources.push_back(
          {s.at("id").get<std::string>(), s.at("exp").get<std::vector<double>>()});
    }
    dk.k = j.at("k").get<std::size_t>();
    dk.primary = j.at("s_pri").get<std::vector<std::size_t>>();
    dk.secondary = j.at("s_sec").get<std::vector<std::size_t>>();
    dk.temperature = j.at("temperature").get<double>();
    dk.provenance = j.value("provenance", Json::object());
    validate(dk);
    return dk;
  } catch (const Json::exception& e) {
    fail(ErrorKind::CorruptArtifact, std::string("knowledge: ") + e.what());
  }
}

inline void save_knowledge(const DomainKnowledge& dk, const std::string& path) {
  detail::write_text_file(path, to_json(dk).dump(2) + "\n");
}

inline DomainKnowledge load_knowledge(const std::string& path) {
  return knowledge_from_json(detail::read_json_file(path));
}

}  // namespace dkg

#endif  // DKG_KNOWLEDGE_HPP
