// SPDX-License-Identifier: Apache-2.0
//
// Label loss, explanation loss, joint objective, Adam, and the training loop.
//
// The explanation term compares a model's attribution distribution on a fixed
// probe subset with the domain-knowledge distribution:
//
//   a_j(theta)  = mean_n |phi_nj(theta)|, phi_nj from M frozen permutations
//   m           = softmax(a / T)
//   L_exp       = KL(dk.dist || m)
//   L           = L_label + weight * L_exp
//
// Each phi_nj is an average of differences of model outputs, so the whole
// term is differentiable in theta (almost everywhere, |.| has a kink at 0).
// The reference distribution is a constant.
#ifndef DKG_TRAINING_HPP
#define DKG_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dkg/attribution.hpp"
#include "dkg/data.hpp"
#include "dkg/error.hpp"
#include "dkg/knowledge.hpp"
#include "dkg/metrics.hpp"
#include "dkg/models.hpp"

namespace dkg {

enum class LossMode { LabelOnly, Joint };

constexpr std::string_view to_string(LossMode m) {
  return m == LossMode::LabelOnly ? "label_only" : "joint";
}

struct LossSpec {
  LossMode mode = LossMode::LabelOnly;
  // Explanation weight; nullopt = the model's label-only validation Micro-F1.
  std::optional<double> weight;
  std::size_t probe_size = 32;
  std::size_t permutations = 8;
  std::size_t period = 1;  // explanation term active every `period` epochs
  double temperature = 1.0;

  static LossSpec joint() {
    LossSpec s;
    s.mode = LossMode::Joint;
    return s;
  }
};

inline void validate(const LossSpec& s) {
  if (s.weight) {
    require(std::isfinite(*s.weight) && *s.weight >= 0.0, ErrorKind::InvalidConfig,
            "loss.weight must be >= 0");
  }
  require(s.probe_size >= 1, ErrorKind::InvalidConfig, "loss.probe_size must be >= 1");
  require(s.permutations >= 1, ErrorKind::InvalidConfig,
          "loss.permutations must be >= 1");
  require(s.period >= 1, ErrorKind::InvalidConfig, "loss.period must be >= 1");
  require(s.temperature > 0.0 && std::isfinite(s.temperature),
          ErrorKind::InvalidConfig, "loss.temperature must be > 0");
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  std::uint64_t seed = 101;
};

inline void validate(const TrainConfig& c) {
  require(c.epochs >= 1, ErrorKind::InvalidConfig, "train.epochs must be >= 1");
  require(c.batch_size >= 1, ErrorKind::InvalidConfig, "train.batch_size must be >= 1");
  require(c.learning_rate > 0.0, ErrorKind::InvalidConfig,
          "train.learning_rate must be > 0");
  require(c.beta1 > 0.0 && c.beta1 < 1.0, ErrorKind::InvalidConfig,
          "train.beta1 must lie in (0, 1)");
  require(c.beta2 > 0.0 && c.beta2 < 1.0, ErrorKind::InvalidConfig,
          "train.beta2 must lie in (0, 1)");
  require(c.epsilon > 0.0, ErrorKind::InvalidConfig, "train.epsilon must be > 0");
  require(c.weight_decay >= 0.0, ErrorKind::InvalidConfig,
          "train.weight_decay must be >= 0");
}

// ---------------------------------------------------------------------------
// Losses

// Mean of -ln(max(p_true, 1e-12)). `probas` is row-major N x C.
inline double cross_entropy_loss(std::span<const double> probas, std::size_t num_classes,
                                 std::span<const int> labels) {
  require(num_classes >= 1 && probas.size() == labels.size() * num_classes,
          ErrorKind::DimensionMismatch, "probabilities are not N x C");
  require(!labels.empty(), ErrorKind::EmptyInput, "no samples");
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes,
            ErrorKind::LabelOutOfRange, "label out of range");
    loss -= std::log(std::max(probas[i * num_classes + labels[i]], kProbFloor));
  }
  return loss / static_cast<double>(labels.size());
}

// KL(reference || model) with both arguments clamped below at 1e-12.
inline double explanation_kl_loss(std::span<const double> model_dist,
                                  std::span<const double> reference_dist) {
  require(model_dist.size() == reference_dist.size(), ErrorKind::DimensionMismatch,
          "distributions differ in length");
  double kl = 0.0;
  for (std::size_t j = 0; j < model_dist.size(); ++j) {
    const double r = std::max(reference_dist[j], kProbFloor);
    const double m = std::max(model_dist[j], kProbFloor);
    kl += r * std::log(r / m);
  }
  return std::max(kl, 0.0);
}

// ---------------------------------------------------------------------------
// Differentiable probe attribution

// Rows, target classes and permutations held fixed while the explanation
// gradient is taken.
struct ProbeSet {
  std::vector<std::size_t> rows;                           // into the train table
  std::vector<std::size_t> targets;                        // class per row
  std::vector<std::vector<std::vector<std::size_t>>> perms;  // [row][m] -> order
  std::vector<double> background;
};

inline ProbeSet make_probe(const ModelState& model, const SurveyTable& table,
                           std::vector<std::size_t> rows, std::size_t permutations,
                           std::vector<double> background, std::mt19937_64& rng) {
  ProbeSet p;
  p.rows = std::move(rows);
  p.background = std::move(background);
  const auto J = table.cols();
  for (auto i : p.rows) {
    p.targets.push_back(static_cast<std::size_t>(predict_class(model, table.row(i))));
    p.perms.push_back(sample_permutations(J, permutations, rng));
  }
  return p;
}

struct ProbeAttribution {
  std::vector<std::vector<double>> phi;  // [row][j]
  std::vector<double> mean_abs;          // a_j
};

namespace detail {

// Walks every permutation chain of every probe row, calling
// visit(row, perm, step, coalition_input, value) for step = 0..J, where
// step k is the coalition of the first k factors of the permutation.
template <class Visit>
void walk_probe_chains(const ModelState& m, std::span<const double> params,
                       const SurveyTable& table, const ProbeSet& probe,
                       ForwardCache& cache, Visit&& visit) {
  const auto J = table.cols();
  std::vector<double> z(J);
  std::vector<double> p(m.spec.num_classes);
  for (std::size_t n = 0; n < probe.rows.size(); ++n) {
    const auto x = table.row(probe.rows[n]);
    const auto c = probe.targets[n];
    for (std::size_t pm = 0; pm < probe.perms[n].size(); ++pm) {
      const auto& perm = probe.perms[n][pm];
      std::copy(probe.background.begin(), probe.background.end(), z.begin());
      for (std::size_t k = 0; k <= J; ++k) {
        if (k > 0) z[perm[k - 1]] = x[perm[k - 1]];
        auto logits = forward_logits(m, params, z, cache);
        std::copy(logits.begin(), logits.end(), p.begin());
        softmax_inplace(p);
        visit(n, pm, k, p, c);
      }
    }
  }
}

}  // namespace detail

inline ProbeAttribution probe_attribution(const ModelState& m,
                                          std::span<const double> params,
                                          const SurveyTable& table,
                                          const ProbeSet& probe) {
  const auto J = table.cols();
  ProbeAttribution out;
  out.phi.assign(probe.rows.size(), std::vector<double>(J, 0.0));
  out.mean_abs.assign(J, 0.0);
  ForwardCache cache;
  double prev = 0.0;
  detail::walk_probe_chains(
      m, params, table, probe, cache,
      [&](std::size_t n, std::size_t pm, std::size_t k, std::span<const double> p,
          std::size_t c) {
        if (k > 0) {
          out.phi[n][probe.perms[n][pm][k - 1]] += p[c] - prev;
        }
        prev = p[c];
      });
  for (std::size_t n = 0; n < probe.rows.size(); ++n) {
    const auto M = static_cast<double>(probe.perms[n].size());
    for (std::size_t j = 0; j < J; ++j) {
      out.phi[n][j] /= M;
      out.mean_abs[j] += std::abs(out.phi[n][j]);
    }
  }
  for (auto& a : out.mean_abs) a /= static_cast<double>(probe.rows.size());
  return out;
}

struct ExplanationLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d params
  std::vector<double> model_dist;
};

// KL(reference || softmax(a(params)/T)) and its gradient.
inline ExplanationLoss explanation_loss_and_grad(const ModelState& m,
                                                 std::span<const double> params,
                                                 const SurveyTable& table,
                                                 const ProbeSet& probe,
                                                 std::span<const double> reference,
                                                 double temperature) {
  const auto J = table.cols();
  require(reference.size() == J, ErrorKind::FactorMismatch,
          "reference distribution length differs from factor count");
  require(!probe.rows.empty(), ErrorKind::EmptySplit, "empty probe set");
  const auto attr = probe_attribution(m, params, table, probe);
  ExplanationLoss out;
  out.model_dist = softmax(attr.mean_abs, temperature);
  // Exact log-softmax keeps the loss consistent with its gradient when the
  // model distribution underflows.
  double smax = -std::numeric_limits<double>::infinity();
  for (double a : attr.mean_abs) smax = std::max(smax, a / temperature);
  double sum = 0.0;
  for (double a : attr.mean_abs) sum += std::exp(a / temperature - smax);
  const double lse = smax + std::log(sum);
  for (std::size_t j = 0; j < J; ++j) {
    if (reference[j] > 0.0) {
      out.loss += reference[j] * (std::log(reference[j]) - (attr.mean_abs[j] / temperature - lse));
    }
  }
  out.loss = std::max(out.loss, 0.0);
  out.grad.assign(params.size(), 0.0);

  // dL/da_j
  std::vector<double> d_a(J);
  for (std::size_t j = 0; j < J; ++j) {
    d_a[j] = (out.model_dist[j] - reference[j]) / temperature;
  }
  // dL/d(delta_nmj) = d_a[j] * sign(phi_nj) / (P * M_n)
  std::vector<std::vector<double>> d_delta(probe.rows.size(), std::vector<double>(J));
  const auto P = static_cast<double>(probe.rows.size());
  for (std::size_t n = 0; n < probe.rows.size(); ++n) {
    const auto M = static_cast<double>(probe.perms[n].size());
    for (std::size_t j = 0; j < J; ++j) {
      const double phi = attr.phi[n][j];
      const double sign = phi > 0.0 ? 1.0 : (phi < 0.0 ? -1.0 : 0.0);
      d_delta[n][j] = d_a[j] * sign / (P * M);
    }
  }

  // v_k enters delta_{perm[k-1]} with +1 and delta_{perm[k]} with -1.
  ForwardCache cache;
  std::vector<double> dlogits(m.spec.num_classes);
  detail::walk_probe_chains(
      m, params, table, probe, cache,
      [&](std::size_t n, std::size_t pm, std::size_t k, std::span<const double> p,
          std::size_t c) {
        const auto& perm = probe.perms[n][pm];
        double coef = 0.0;
        if (k > 0) coef += d_delta[n][perm[k - 1]];
        if (k < J) coef -= d_delta[n][perm[k]];
        if (coef == 0.0) return;
        // d p_c / d z = p_c (e_c - p)
        for (std::size_t i = 0; i < dlogits.size(); ++i) {
          dlogits[i] = -coef * p[c] * p[i];
        }
        dlogits[c] += coef * p[c];
        backward(m, params, cache, dlogits, out.grad);
      });
  return out;
}

struct JointLoss {
  double loss = 0.0;
  double label_loss = 0.0;
  double exp_loss = 0.0;
  std::vector<double> grad;
};

// L = L_label(batch) + weight * KL(dk.dist || softmax(a/T)). With weight 0
// or no probe the explanation term is skipped entirely.
inline JointLoss joint_loss(const ModelState& m, std::span<const double> params,
                            const SurveyTable& table,
                            std::span<const std::size_t> batch,
                            const ProbeSet* probe, const DomainKnowledge& dk,
                            double weight, double temperature) {
  require(dk.dist.size() == table.cols(), ErrorKind::FactorMismatch,
          "knowledge factor count differs from model input");
  auto label = label_loss_and_grad(m, params, table, batch);
  JointLoss out{label.loss, label.loss, 0.0, std::move(label.grad)};
  if (weight == 0.0 || probe == nullptr) return out;
  auto ex = explanation_loss_and_grad(m, params, table, *probe, dk.dist, temperature);
  out.exp_loss = ex.loss;
  out.loss += weight * ex.loss;
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += weight * ex.grad[i];
  require(std::isfinite(out.loss), ErrorKind::NonFiniteLoss, "joint loss is not finite");
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam with decoupled weight decay; the decay uses the
// parameters from before this step.
inline void adam_step(std::span<double> params, std::span<const double> grad,
                      AdamState& state, const TrainConfig& c) {
  require(grad.size() == params.size(), ErrorKind::DimensionMismatch,
          "gradient and parameter sizes differ");
  for (double g : grad) {
    require(std::isfinite(g), ErrorKind::NonFiniteGradient, "gradient is not finite");
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grad[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    const double decay = c.learning_rate * c.weight_decay * params[i];
    params[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon) + decay;
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  double label_loss = 0.0;
  double exp_loss = 0.0;
  double val_micro_f1 = 0.0;
};

struct TrainResult {
  ModelState model;
  std::vector<EpochRecord> history;
  double loss_weight = 0.0;  // resolved explanation weight (0 for label-only)
};

inline double micro_f1(const ModelState& m, const SurveyTable& t) {
  const auto pred = predict_classes(m, t);
  return micro_f1(confusion(t.labels, pred, m.spec.num_classes));
}

namespace detail {

inline TrainResult train_impl(const ModelState& initial, const SurveyTable& train_table,
                              const SurveyTable& valid_table, const DomainKnowledge* dk,
                              const LossSpec& loss, const TrainConfig& config,
                              double weight) {
  const bool joint = loss.mode == LossMode::Joint;
  const auto N = train_table.rows();
  const SurveyTable& metric_table = valid_table.rows() > 0 ? valid_table : train_table;

  TrainResult out{initial, {}, joint ? weight : 0.0};
  ModelState& model = out.model;
  AdamState adam;

  auto shuffle_rng = stream_rng(config.seed, 0);
  auto probe_rng = stream_rng(config.seed, 1);
  auto perm_rng = stream_rng(config.seed, 2);

  std::vector<std::size_t> probe_rows;
  std::vector<double> background;
  if (joint) {
    probe_rows = subsample_rows(N, loss.probe_size, probe_rng());
    background = column_means(train_table);
  }
  std::optional<ProbeSet> probe;

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const bool explain = joint && epoch % loss.period == 0;
    if (explain) {
      probe = make_probe(model, train_table, probe_rows, loss.permutations, background,
                         perm_rng);
    }
    double label_sum = 0.0, exp_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const auto end = std::min(N, start + config.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      JointLoss step;
      if (explain) {
        step = joint_loss(model, model.params, train_table, batch, &*probe, *dk, weight,
                          loss.temperature);
      } else {
        auto lg = label_loss_and_grad(model, model.params, train_table, batch);
        step = {lg.loss, lg.loss, 0.0, std::move(lg.grad)};
      }
      require(std::isfinite(step.loss), ErrorKind::NonFiniteLoss,
              "loss became non-finite at epoch " + std::to_string(epoch + 1) +
                  " (label " + std::to_string(step.label_loss) + ", explanation " +
                  std::to_string(step.exp_loss) + ")");
      adam_step(model.params, step.grad, adam, config);
      label_sum += step.label_loss;
      exp_sum += step.exp_loss;
      ++steps;
    }
    EpochRecord rec{epoch + 1, label_sum / static_cast<double>(steps),
                    exp_sum / static_cast<double>(steps), micro_f1(model, metric_table)};
    out.history.push_back(rec);
  }
  const auto& last = out.history.back();
  model.log = {config.epochs, last.label_loss, last.exp_loss, last.val_micro_f1};
  return out;
}

}  // namespace detail

// Minibatch Adam from `initial`. In joint mode the explanation term uses a
// probe subset of `train_table` fixed for the whole run and permutations
// redrawn every `loss.period` epochs; in other epochs only the label loss is
// optimized. Validation Micro-F1 falls back to the training table when
// `valid_table` is empty. All randomness derives from config.seed.
inline TrainResult train(const ModelState& initial, const SurveyTable& train_table,
                         const SurveyTable& valid_table, const DomainKnowledge* dk,
                         const LossSpec& loss, const TrainConfig& config) {
  validate(config);
  validate(loss);
  require(train_table.rows() > 0, ErrorKind::EmptySplit, "training split is empty");
  require(train_table.cols() == initial.spec.input_dim, ErrorKind::DimensionMismatch,
          "training table width differs from model input_dim");
  if (valid_table.rows() > 0) {
    require(valid_table.cols() == initial.spec.input_dim, ErrorKind::DimensionMismatch,
            "validation table width differs from model input_dim");
  }
  double weight = 0.0;
  if (loss.mode == LossMode::Joint) {
    require(dk != nullptr, ErrorKind::InvalidConfig,
            "joint training requires domain knowledge");
    require(dk->factor_names.size() == train_table.cols(), ErrorKind::FactorMismatch,
            "knowledge has " + std::to_string(dk->factor_names.size()) +
                " factors, data has " + std::to_string(train_table.cols()));
    if (dk->factor_names != train_table.factor_names) {
      fail(ErrorKind::FactorMismatch, "knowledge factor names differ from data columns");
    }
    if (loss.weight) {
      weight = *loss.weight;
    } else {
      LossSpec label_only = loss;
      label_only.mode = LossMode::LabelOnly;
      auto pre = detail::train_impl(initial, train_table, valid_table, nullptr,
                                    label_only, config, 0.0);
      weight = pre.model.log.final_val_micro_f1;
    }
  }
  return detail::train_impl(initial, train_table, valid_table, dk, loss, config, weight);
}

}  // namespace dkg

#endif  // DKG_TRAINING_HPP
