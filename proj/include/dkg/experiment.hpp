// SPDX-License-Identifier: Apache-2.0
//
// k-fold experiment comparing models trained with and without domain
// knowledge. Per fold:
//   1. train every model on the label loss alone;
//   2. attribute each model on the training split (mean |phi|);
//   3. fuse the importances into DomainKnowledge, lambda_f = validation
//      Micro-F1 of model f;
//   4. retrain every model from the same initialization with the joint loss;
//   5. score both conditions on the held-out fold: Macro/Micro-F1, test-fold
//      factor rankings and their pairwise Kendall tau.
#ifndef DKG_EXPERIMENT_HPP
#define DKG_EXPERIMENT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dkg/attribution.hpp"
#include "dkg/checkpoint.hpp"
#include "dkg/data.hpp"
#include "dkg/error.hpp"
#include "dkg/knowledge.hpp"
#include "dkg/metrics.hpp"
#include "dkg/models.hpp"
#include "dkg/training.hpp"

namespace dkg {

inline constexpr int kReportVersion = 1;

struct ModelEntry {
  std::string id;
  ClassifierSpec spec;  // input_dim / num_classes filled from the data
};

struct ExperimentOptions {
  std::vector<ModelEntry> models;
  std::size_t folds = 5;
  TrainConfig train;
  LossSpec loss = LossSpec::joint();
  AttributionOptions attribution;
  std::size_t top_k = 2;
  double valid_fraction = 0.2;
  std::uint64_t seed = 101;
  std::string dataset = "data";
  std::optional<GroupSpec> group;
  std::size_t threads = 1;
  std::string config_hash;
};

struct ConditionResult {
  std::vector<std::vector<double>> macro_f1;  // [model][fold]
  std::vector<std::vector<double>> micro_f1;  // [model][fold]
  std::vector<std::vector<std::vector<double>>> tau;  // [fold][model][model]
  std::vector<double> fold_mean_tau;                  // [fold]
  std::vector<std::vector<std::vector<std::size_t>>> rankings;  // [fold][model]

  double mean_tau() const {
    return std::accumulate(fold_mean_tau.begin(), fold_mean_tau.end(), 0.0) /
           static_cast<double>(fold_mean_tau.size());
  }
  double mean_micro() const { return grand_mean(micro_f1); }
  double mean_macro() const { return grand_mean(macro_f1); }

  // Mean over folds of model m's tau against every other model.
  double model_fold_tau(std::size_t fold, std::size_t m) const {
    const auto& row = tau[fold][m];
    double s = 0.0;
    for (std::size_t o = 0; o < row.size(); ++o) {
      if (o != m) s += row[o];
    }
    return s / static_cast<double>(row.size() - 1);
  }

  static double grand_mean(const std::vector<std::vector<double>>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : v) {
      for (double x : r) {
        s += x;
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : 0.0;
  }
  bool operator==(const ConditionResult&) const = default;
};

struct FoldKnowledge {
  std::vector<double> exp;
  std::vector<double> dist;
  std::vector<double> lambdas;
  std::vector<std::size_t> primary;
  std::vector<std::size_t> secondary;
  bool operator==(const FoldKnowledge&) const = default;
};

struct GroupResult {
  std::string name;
  std::size_t rows = 0;
  ConditionResult without_dk;
  ConditionResult with_dk;
  std::vector<FoldKnowledge> knowledge;  // [fold]
  bool operator==(const GroupResult&) const = default;
};

struct ExperimentReport {
  std::string dataset;
  std::uint64_t seed = 0;
  std::size_t folds = 0;
  std::string config_hash;
  std::vector<std::string> factor_names;
  std::vector<std::string> model_ids;
  std::vector<GroupResult> groups;
  bool operator==(const ExperimentReport&) const = default;
};

namespace detail {

struct FoldOutcome {
  // [model]
  std::vector<double> macro[2], micro[2];
  std::vector<std::vector<std::size_t>> rankings[2];
  ConsistencyMatrix tau[2];
  FoldKnowledge knowledge;
};

inline std::string stage_context(const std::string& group, std::size_t fold,
                                 const std::string& stage, const std::string& model) {
  std::string s = "group '" + group + "', fold " + std::to_string(fold + 1) + ", " + stage;
  if (!model.empty()) s += ", model " + model;
  return s;
}

inline FoldOutcome run_fold(const SurveyTable& table, const FoldPlan& plan,
                            std::size_t fold, const ExperimentOptions& opt,
                            const std::string& group) {
  const auto train_idx = plan.train_indices(fold);
  const auto test_idx = plan.test_indices(fold);
  require(!train_idx.empty() && !test_idx.empty(), ErrorKind::EmptySplit,
          stage_context(group, fold, "split", "") + ": empty split");
  const auto train_raw = table.select(train_idx);
  const auto stats = column_stats(train_raw);
  const auto train_std = apply_standardization(train_raw, stats);
  const auto test_std = apply_standardization(table.select(test_idx), stats);
  const auto background = column_means(train_std);

  // fit / validation split of the training folds
  std::vector<std::size_t> order(train_std.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto split_rng = stream_rng(opt.seed, 1000 + fold);
  std::shuffle(order.begin(), order.end(), split_rng);
  auto n_valid = static_cast<std::size_t>(
      std::llround(opt.valid_fraction * static_cast<double>(order.size())));
  n_valid = std::min(n_valid, order.size() - 1);
  std::vector<std::size_t> valid_idx(order.begin(), order.begin() + n_valid);
  std::vector<std::size_t> fit_idx(order.begin() + n_valid, order.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());
  const auto fit = train_std.select(fit_idx);
  const auto valid = train_std.select(valid_idx);

  const auto F = opt.models.size();
  TrainConfig tc = opt.train;
  tc.seed = opt.seed + 7919 * (fold + 1);

  // Same rows and permutation streams for every model of a fold, so rankings
  // differ only through the models.
  auto attribution_opts = [&](std::uint64_t salt) {
    AttributionOptions a = opt.attribution;
    a.seed = opt.attribution.seed + 0x9E3779B97F4A7C15ULL * (2 * fold + salt + 1);
    return a;
  };

  auto wrap = [&](const std::string& stage, const std::string& model, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      throw Error(e.kind(), stage_context(group, fold, stage, model) + ": " + e.what());
    }
  };

  FoldOutcome out;
  std::vector<ModelState> initial, label_only;
  std::vector<KnowledgeSource> sources;
  std::vector<double> lambdas;
  LossSpec plain = opt.loss;
  plain.mode = LossMode::LabelOnly;
  for (std::size_t m = 0; m < F; ++m) {
    const auto& entry = opt.models[m];
    auto spec = entry.spec;
    spec.input_dim = table.cols();
    spec.num_classes = static_cast<std::size_t>(table.num_levels);
    initial.push_back(wrap("build", entry.id, [&] { return build_model(spec); }));
    auto trained = wrap("label-only training", entry.id, [&] {
      return train(initial.back(), fit, valid, nullptr, plain, tc);
    });
    lambdas.push_back(micro_f1(trained.model, valid.rows() ? valid : fit));
    auto importance = wrap("training-split attribution", entry.id, [&] {
      return group_importance(trained.model, train_std, attribution_opts(0), background);
    });
    sources.push_back({entry.id, std::move(importance)});
    label_only.push_back(std::move(trained.model));
  }

  const auto dk = wrap("knowledge fusion", "", [&] {
    return build_knowledge(table.factor_names, sources, lambdas, opt.top_k,
                           opt.loss.temperature);
  });
  out.knowledge = {dk.exp, dk.dist, dk.lambdas, dk.primary, dk.secondary};

  std::vector<ModelState> guided;
  LossSpec joint = opt.loss;
  joint.mode = LossMode::Joint;
  for (std::size_t m = 0; m < F; ++m) {
    LossSpec spec = joint;
    if (!spec.weight) spec.weight = lambdas[m];
    guided.push_back(wrap("joint training", opt.models[m].id, [&] {
      return train(initial[m], fit, valid, &dk, spec, tc).model;
    }));
  }

  for (int cond = 0; cond < 2; ++cond) {
    const auto& models = cond == 0 ? label_only : guided;
    std::vector<FactorRanking> rankings;
    for (std::size_t m = 0; m < F; ++m) {
      const auto pred = predict_classes(models[m], test_std);
      const auto cm = confusion(test_std.labels, pred, models[m].spec.num_classes);
      out.macro[cond].push_back(macro_f1(cm));
      out.micro[cond].push_back(micro_f1(cm));
      auto scores = wrap("test-fold attribution", opt.models[m].id, [&] {
        return group_importance(models[m], test_std, attribution_opts(1), background);
      });
      rankings.push_back(rank_factors(scores));
      out.rankings[cond].push_back(rankings.back().order);
    }
    out.tau[cond] = pairwise_consistency(rankings);
  }
  return out;
}

inline GroupResult run_group(const SurveyTable& table, const std::string& name,
                             const ExperimentOptions& opt) {
  const auto plan = kfold_split(table, opt.folds, opt.seed);
  std::vector<FoldOutcome> outcomes(opt.folds);
  std::vector<std::exception_ptr> errors(opt.folds);
  const auto threads = std::max<std::size_t>(1, std::min(opt.threads, opt.folds));
  auto worker = [&](std::size_t first) {
    for (std::size_t f = first; f < opt.folds; f += threads) {
      try {
        outcomes[f] = run_fold(table, plan, f, opt, name);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  GroupResult g;
  g.name = name;
  g.rows = table.rows();
  const auto F = opt.models.size();
  for (int cond = 0; cond < 2; ++cond) {
    auto& c = cond == 0 ? g.without_dk : g.with_dk;
    c.macro_f1.assign(F, {});
    c.micro_f1.assign(F, {});
    for (const auto& o : outcomes) {
      for (std::size_t m = 0; m < F; ++m) {
        c.macro_f1[m].push_back(o.macro[cond][m]);
        c.micro_f1[m].push_back(o.micro[cond][m]);
      }
      c.tau.push_back(o.tau[cond].tau);
      c.fold_mean_tau.push_back(o.tau[cond].mean);
      c.rankings.push_back(o.rankings[cond]);
    }
  }
  for (const auto& o : outcomes) g.knowledge.push_back(o.knowledge);
  return g;
}

}  // namespace detail

inline void validate(const ExperimentOptions& opt) {
  require(opt.models.size() >= 2, ErrorKind::InvalidConfig,
          "an experiment needs at least two models");
  for (std::size_t a = 0; a < opt.models.size(); ++a) {
    for (std::size_t b = a + 1; b < opt.models.size(); ++b) {
      require(opt.models[a].id != opt.models[b].id, ErrorKind::InvalidConfig,
              "duplicate model id '" + opt.models[a].id + "'");
    }
  }
  require(opt.folds >= 2, ErrorKind::InvalidConfig, "folds must be >= 2");
  require(opt.valid_fraction >= 0.0 && opt.valid_fraction < 1.0,
          ErrorKind::InvalidConfig, "valid_fraction must lie in [0, 1)");
  validate(opt.train);
  validate(opt.loss);
}

inline ExperimentReport run_experiment(const SurveyTable& table,
                                       const ExperimentOptions& opt) {
  validate(opt);
  validate(table);
  ExperimentReport r;
  r.dataset = opt.dataset;
  r.seed = opt.seed;
  r.folds = opt.folds;
  r.config_hash = opt.config_hash;
  r.factor_names = table.factor_names;
  for (const auto& m : opt.models) r.model_ids.push_back(m.id);
  if (!opt.group) {
    r.groups.push_back(detail::run_group(table, "all", opt));
    return r;
  }
  auto split = split_group(table, *opt.group);
  for (auto* part : {&split.in_group, &split.out_group}) {
    const auto& name = part == &split.in_group ? opt.group->in_name : opt.group->out_name;
    // An empty side is skipped, not fatal.
    if (part->rows() == 0) continue;
    r.groups.push_back(detail::run_group(*part, name, opt));
  }
  require(!r.groups.empty(), ErrorKind::EmptyGroup, "both group sides are empty");
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const ConditionResult& c) {
  return Json{{"macro_f1", c.macro_f1},
              {"micro_f1", c.micro_f1},
              {"tau", c.tau},
              {"fold_mean_tau", c.fold_mean_tau},
              {"rankings", c.rankings},
              {"mean_macro_f1", c.mean_macro()},
              {"mean_micro_f1", c.mean_micro()},
              {"mean_tau", c.mean_tau()}};
}

inline ConditionResult condition_from_json(const Json& j) {
  ConditionResult c;
  j.at("macro_f1").get_to(c.macro_f1);
  j.at("micro_f1").get_to(c.micro_f1);
  j.at("tau").get_to(c.tau);
  j.at("fold_mean_tau").get_to(c.fold_mean_tau);
  j.at("rankings").get_to(c.rankings);
  return c;
}

inline Json to_json(const ExperimentReport& r) {
  Json groups = Json::array();
  for (const auto& g : r.groups) {
    Json knowledge = Json::array();
    for (const auto& k : g.knowledge) {
      knowledge.push_back({{"exp", k.exp},
                           {"dist", k.dist},
                           {"lambdas", k.lambdas},
                           {"s_pri", k.primary},
                           {"s_sec", k.secondary}});
    }
    groups.push_back({{"name", g.name},
                      {"rows", g.rows},
                      {"without_dk", to_json(g.without_dk)},
                      {"with_dk", to_json(g.with_dk)},
                      {"knowledge", knowledge}});
  }
  return Json{{"format", "dkg-report"},
              {"version", kReportVersion},
              {"dataset", r.dataset},
              {"seed", r.seed},
              {"folds", r.folds},
              {"config_hash", r.config_hash},
              {"factor_names", r.factor_names},
              {"models", r.model_ids},
              {"groups", groups}};
}

inline ExperimentReport report_from_json(const Json& j) {
  try {
    const int version = j.at("version").get<int>();
    require(version == kReportVersion, ErrorKind::SchemaVersionMismatch,
            "report version " + std::to_string(version));
    ExperimentReport r;
    j.at("dataset").get_to(r.dataset);
    j.at("seed").get_to(r.seed);
    j.at("folds").get_to(r.folds);
    j.at("config_hash").get_to(r.config_hash);
    j.at("factor_names").get_to(r.factor_names);
    j.at("models").get_to(r.model_ids);
    for (const auto& gj : j.at("groups")) {
      GroupResult g;
      gj.at("name").get_to(g.name);
      gj.at("rows").get_to(g.rows);
      g.without_dk = condition_from_json(gj.at("without_dk"));
      g.with_dk = condition_from_json(gj.at("with_dk"));
      for (const auto& k : gj.at("knowledge")) {
        FoldKnowledge fk;
        k.at("exp").get_to(fk.exp);
        k.at("dist").get_to(fk.dist);
        k.at("lambdas").get_to(fk.lambdas);
        k.at("s_pri").get_to(fk.primary);
        k.at("s_sec").get_to(fk.secondary);
        g.knowledge.push_back(std::move(fk));
      }
      r.groups.push_back(std::move(g));
    }
    return r;
  } catch (const Json::exception& e) {
    fail(ErrorKind::CorruptArtifact, std::string("report: ") + e.what());
  }
}

// One row per (group, model, condition, fold).
inline std::string report_fold_csv(const ExperimentReport& r,
                                   std::string_view provenance = {}) {
  std::ostringstream out;
  if (!provenance.empty()) out << "# " << provenance << '\n';
  out << "group,model,condition,fold,macro_f1,micro_f1,mean_tau\n";
  for (const auto& g : r.groups) {
    for (int cond = 0; cond < 2; ++cond) {
      const auto& c = cond == 0 ? g.without_dk : g.with_dk;
      const char* name = cond == 0 ? "without_dk" : "with_dk";
      for (std::size_t m = 0; m < r.model_ids.size(); ++m) {
        for (std::size_t f = 0; f < c.micro_f1[m].size(); ++f) {
          out << g.name << ',' << r.model_ids[m] << ',' << name << ',' << f + 1 << ','
              << detail::format_double(c.macro_f1[m][f]) << ','
              << detail::format_double(c.micro_f1[m][f]) << ','
              << detail::format_double(c.model_fold_tau(f, m)) << '\n';
        }
      }
    }
  }
  return out.str();
}

namespace detail {

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace detail

// Markdown table: rows = group x dataset x condition, columns = model x
// {Macro, Micro}. Within each (group, model, metric) the better condition is
// bold.
inline std::string report_summary_markdown(const ExperimentReport& r) {
  std::ostringstream out;
  out << "| Group | Dataset | DK |";
  for (const auto& id : r.model_ids) out << ' ' << id << " Macro_F1 | " << id << " Micro_F1 |";
  out << "\n|---|---|---|";
  for (std::size_t m = 0; m < r.model_ids.size(); ++m) out << "---|---|";
  out << '\n';
  for (const auto& g : r.groups) {
    for (int cond = 0; cond < 2; ++cond) {
      const auto& c = cond == 0 ? g.without_dk : g.with_dk;
      const auto& other = cond == 0 ? g.with_dk : g.without_dk;
      out << "| " << g.name << " | " << r.dataset << " | " << (cond == 0 ? "without" : "with")
          << " |";
      for (std::size_t m = 0; m < r.model_ids.size(); ++m) {
        for (int metric = 0; metric < 2; ++metric) {
          const auto& a = metric == 0 ? c.macro_f1 : c.micro_f1;
          const auto& b = metric == 0 ? other.macro_f1 : other.micro_f1;
          const double mine = detail::mean_of(a[m]);
          const double theirs = detail::mean_of(b[m]);
          const auto text = detail::percent(mine);
          out << ' ' << (mine >= theirs ? "**" + text + "**" : text) << " |";
        }
      }
      out << '\n';
    }
  }
  out << "\nMean pairwise Kendall tau:\n\n| Group | without DK | with DK |\n|---|---|---|\n";
  for (const auto& g : r.groups) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f |\n", g.name.c_str(),
                  g.without_dk.mean_tau(), g.with_dk.mean_tau());
    out << buf;
  }
  return out.str();
}

}  // namespace dkg

#endif  // DKG_EXPERIMENT_HPP
