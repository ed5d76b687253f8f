// SPDX-License-Identifier: Apache-2.0
//
// Four small differentiable classifiers over a flat parameter vector:
//
//   LR        linear J -> C
//   MoMLP     J -> h1 -> h2 -> C, ReLU
//   CNN1D     factors as a 1-channel length-J sequence, `conv_layers` same-padded
//             convolutions with ReLU, then dense (channels*J) -> C
//   WideDeep  linear J -> C plus an MLP tower; logits summed
//
// Every model is a list of towers whose outputs are summed. Each tower is a
// chain of dense / conv layers reading their weights from `params` through
// fixed offsets, so the optimizer and the finite-difference checker only see
// a flat vector.
#ifndef DKG_MODELS_HPP
#define DKG_MODELS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dkg/data.hpp"
#include "dkg/error.hpp"

namespace dkg {

enum class ModelKind { LR, MoMLP, CNN1D, WideDeep };

constexpr std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LR: return "LR";
    case ModelKind::MoMLP: return "MoMLP";
    case ModelKind::CNN1D: return "CNN1D";
    case ModelKind::WideDeep: return "WideDeep";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "LR") return ModelKind::LR;
  if (s == "MoMLP") return ModelKind::MoMLP;
  if (s == "CNN1D" || s == "CNN") return ModelKind::CNN1D;
  if (s == "WideDeep") return ModelKind::WideDeep;
  fail(ErrorKind::InvalidSpec, "unknown model kind '" + std::string(s) + "'");
}

struct ClassifierSpec {
  ModelKind kind = ModelKind::LR;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> hidden{64, 32};  // MoMLP layers / WideDeep deep tower
  std::size_t channels = 16;
  std::size_t kernel = 3;
  std::size_t conv_layers = 3;
  std::uint64_t seed = 101;

  bool operator==(const ClassifierSpec&) const = default;
};

inline void validate(const ClassifierSpec& s) {
  require(s.input_dim >= 1, ErrorKind::InvalidSpec, "input_dim must be >= 1");
  require(s.num_classes >= 2, ErrorKind::InvalidSpec,
          "num_classes must be >= 2");
  if (s.kind == ModelKind::MoMLP || s.kind == ModelKind::WideDeep) {
    require(!s.hidden.empty(), ErrorKind::InvalidSpec,
            "hidden sizes must be non-empty");
    for (auto h : s.hidden) {
      require(h >= 1, ErrorKind::InvalidSpec, "hidden sizes must be positive");
    }
  }
  if (s.kind == ModelKind::CNN1D) {
    require(s.channels >= 1 && s.conv_layers >= 1 && s.kernel >= 1,
            ErrorKind::InvalidSpec, "CNN1D dims must be positive");
    require(s.kernel <= s.input_dim, ErrorKind::InvalidSpec,
            "kernel width exceeds input_dim");
  }
}

struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t size() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  bool operator==(const ParamSlot&) const = default;
};

namespace detail {

struct Layer {
  enum class Type { Dense, Conv };
  Type type = Type::Dense;
  std::size_t in_ch = 1, in_len = 0;    // dense: in_ch = 1, in_len = fan in
  std::size_t out_ch = 1, out_len = 0;  // dense: out_ch = 1, out_len = fan out
  std::size_t kernel = 0;
  bool relu = false;
  std::size_t w_off = 0, b_off = 0;

  std::size_t in_size() const { return in_ch * in_len; }
  std::size_t out_size() const { return out_ch * out_len; }
};

using Tower = std::vector<Layer>;

}  // namespace detail

struct TrainingLog {
  std::size_t epochs = 0;
  double final_label_loss = 0.0;
  double final_exp_loss = 0.0;
  double final_val_micro_f1 = 0.0;
  bool operator==(const TrainingLog&) const = default;
};

struct ModelState {
  ClassifierSpec spec;
  std::vector<ParamSlot> layout;
  std::vector<double> params;
  TrainingLog log;
  std::vector<detail::Tower> towers;  // derived from spec

  std::size_t num_params() const { return params.size(); }

  const ParamSlot& slot(std::string_view name) const {
    for (const auto& s : layout) {
      if (s.name == name) return s;
    }
    fail(ErrorKind::InvalidSpec, "no parameter slot '" + std::string(name) + "'");
  }
};

namespace detail {

class ArchitectureBuilder {
 public:
  std::vector<ParamSlot> layout;
  std::size_t total = 0;

  Layer dense(const std::string& prefix, std::size_t in, std::size_t out,
              bool relu) {
    Layer l;
    l.type = Layer::Type::Dense;
    l.in_len = in;
    l.out_len = out;
    l.relu = relu;
    l.w_off = add(prefix + ".weight", {out, in});
    l.b_off = add(prefix + ".bias", {out});
    return l;
  }

  Layer conv(const std::string& prefix, std::size_t in_ch, std::size_t out_ch,
             std::size_t len, std::size_t kernel) {
    Layer l;
    l.type = Layer::Type::Conv;
    l.in_ch = in_ch;
    l.in_len = len;
    l.out_ch = out_ch;
    l.out_len = len;
    l.kernel = kernel;
    l.relu = true;
    l.w_off = add(prefix + ".weight", {out_ch, in_ch, kernel});
    l.b_off = add(prefix + ".bias", {out_ch});
    return l;
  }

  Tower mlp(const std::string& prefix, std::size_t in,
            const std::vector<std::size_t>& hidden, std::size_t out) {
    Tower t;
    std::size_t width = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      t.push_back(dense(prefix + "dense" + std::to_string(i), width, hidden[i],
                        true));
      width = hidden[i];
    }
    t.push_back(dense(prefix + "dense" + std::to_string(hidden.size()), width,
                      out, false));
    return t;
  }

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    ParamSlot s{std::move(name), total, std::move(shape)};
    total += s.size();
    layout.push_back(std::move(s));
    return layout.back().offset;
  }
};

inline std::vector<Tower> build_towers(const ClassifierSpec& s,
                                       std::vector<ParamSlot>* layout,
                                       std::size_t* total) {
  ArchitectureBuilder b;
  std::vector<Tower> towers;
  const auto J = s.input_dim, C = s.num_classes;
  switch (s.kind) {
    case ModelKind::LR:
      towers.push_back({b.dense("linear", J, C, false)});
      break;
    case ModelKind::MoMLP:
      towers.push_back(b.mlp("", J, s.hidden, C));
      break;
    case ModelKind::CNN1D: {
      Tower t;
      std::size_t in_ch = 1;
      for (std::size_t i = 0; i < s.conv_layers; ++i) {
        t.push_back(b.conv("conv" + std::to_string(i), in_ch, s.channels, J,
                           s.kernel));
        in_ch = s.channels;
      }
      t.push_back(b.dense("head", s.channels * J, C, false));
      towers.push_back(std::move(t));
      break;
    }
    case ModelKind::WideDeep:
      towers.push_back({b.dense("wide", J, C, false)});
      towers.push_back(b.mlp("deep.", J, s.hidden, C));
      break;
  }
  if (layout) *layout = std::move(b.layout);
  if (total) *total = b.total;
  return towers;
}

}  // namespace detail

// Rebuilds the derived tower structure; used after deserialization.
inline void attach_architecture(ModelState& m) {
  validate(m.spec);
  std::vector<ParamSlot> layout;
  std::size_t total = 0;
  m.towers = detail::build_towers(m.spec, &layout, &total);
  require(m.layout.empty() || m.layout == layout, ErrorKind::CorruptArtifact,
          "parameter layout does not match the model spec");
  m.layout = std::move(layout);
  require(m.params.size() == total, ErrorKind::CorruptArtifact,
          "parameter count " + std::to_string(m.params.size()) +
              " does not match layout total " + std::to_string(total));
}

// Weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases zero.
inline ModelState build_model(const ClassifierSpec& spec) {
  validate(spec);
  ModelState m;
  m.spec = spec;
  std::size_t total = 0;
  m.towers = detail::build_towers(spec, &m.layout, &total);
  m.params.assign(total, 0.0);
  std::mt19937_64 rng(spec.seed);
  for (const auto& tower : m.towers) {
    for (const auto& l : tower) {
      std::size_t fan_in = 0, fan_out = 0, count = 0;
      if (l.type == detail::Layer::Type::Dense) {
        fan_in = l.in_len;
        fan_out = l.out_len;
        count = l.in_len * l.out_len;
      } else {
        fan_in = l.in_ch * l.kernel;
        fan_out = l.out_ch * l.kernel;
        count = l.out_ch * l.in_ch * l.kernel;
      }
      const double bound =
          std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < count; ++i) m.params[l.w_off + i] = dist(rng);
    }
  }
  return m;
}

// Per-call activations kept for the backward pass. Reusing one cache across
// calls avoids reallocation.
struct ForwardCache {
  // acts[t][l] = input of layer l in tower t; acts[t].back() = tower output
  std::vector<std::vector<std::vector<double>>> acts;
  std::vector<double> logits;
};

namespace detail {

inline void layer_forward(const Layer& l, std::span<const double> p,
                          std::span<const double> in, std::vector<double>& out) {
  out.assign(l.out_size(), 0.0);
  if (l.type == Layer::Type::Dense) {
    for (std::size_t o = 0; o < l.out_len; ++o) {
      const double* w = p.data() + l.w_off + o * l.in_len;
      double acc = p[l.b_off + o];
      for (std::size_t i = 0; i < l.in_len; ++i) acc += w[i] * in[i];
      out[o] = acc;
    }
  } else {
    const auto len = l.in_len, K = l.kernel;
    const auto pad = static_cast<std::ptrdiff_t>((K - 1) / 2);
    for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
      for (std::size_t pos = 0; pos < len; ++pos) {
        double acc = p[l.b_off + oc];
        for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
          const double* w = p.data() + l.w_off + (oc * l.in_ch + ic) * K;
          const double* x = in.data() + ic * len;
          for (std::size_t k = 0; k < K; ++k) {
            const auto src = static_cast<std::ptrdiff_t>(pos + k) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            acc += w[k] * x[src];
          }
        }
        out[oc * len + pos] = acc;
      }
    }
  }
  if (l.relu) {
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
  }
}

// `dout` is dL/d(layer output) and is overwritten by the ReLU mask. Adds
// parameter gradients into `grad`; writes dL/d(input) into `din` when non-null.
inline void layer_backward(const Layer& l, std::span<const double> p,
                           std::span<const double> in,
                           std::span<const double> out, std::vector<double>& dout,
                           std::span<double> grad, std::vector<double>* din) {
  if (l.relu) {
    for (std::size_t i = 0; i < dout.size(); ++i) {
      if (!(out[i] > 0.0)) dout[i] = 0.0;
    }
  }
  if (din) din->assign(l.in_size(), 0.0);
  if (l.type == Layer::Type::Dense) {
    for (std::size_t o = 0; o < l.out_len; ++o) {
      const double g = dout[o];
      if (g == 0.0) continue;
      grad[l.b_off + o] += g;
      double* gw = grad.data() + l.w_off + o * l.in_len;
      const double* w = p.data() + l.w_off + o * l.in_len;
      for (std::size_t i = 0; i < l.in_len; ++i) gw[i] += g * in[i];
      if (din) {
        for (std::size_t i = 0; i < l.in_len; ++i) (*din)[i] += g * w[i];
      }
    }
  } else {
    const auto len = l.in_len, K = l.kernel;
    const auto pad = static_cast<std::ptrdiff_t>((K - 1) / 2);
    for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
      for (std::size_t pos = 0; pos < len; ++pos) {
        const double g = dout[oc * len + pos];
        if (g == 0.0) continue;
        grad[l.b_off + oc] += g;
        for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
          const std::size_t w_base = l.w_off + (oc * l.in_ch + ic) * K;
          for (std::size_t k = 0; k < K; ++k) {
            const auto src = static_cast<std::ptrdiff_t>(pos + k) - pad;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            grad[w_base + k] += g * in[ic * len + static_cast<std::size_t>(src)];
            if (din) {
              (*din)[ic * len + static_cast<std::size_t>(src)] += g * p[w_base + k];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

inline void check_input(const ModelState& m, std::span<const double> x) {
  require(x.size() == m.spec.input_dim, ErrorKind::DimensionMismatch,
          "input has " + std::to_string(x.size()) + " factors, model expects " +
              std::to_string(m.spec.input_dim));
}

// Logits for one input, evaluated with an explicit parameter vector so that
// finite-difference checks can perturb parameters without copying the model.
inline std::span<const double> forward_logits(const ModelState& m,
                                              std::span<const double> params,
                                              std::span<const double> x,
                                              ForwardCache& cache) {
  check_input(m, x);
  const auto C = m.spec.num_classes;
  cache.acts.resize(m.towers.size());
  cache.logits.assign(C, 0.0);
  for (std::size_t t = 0; t < m.towers.size(); ++t) {
    const auto& tower = m.towers[t];
    auto& acts = cache.acts[t];
    acts.resize(tower.size() + 1);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < tower.size(); ++l) {
      detail::layer_forward(tower[l], params, acts[l], acts[l + 1]);
    }
    for (std::size_t c = 0; c < C; ++c) cache.logits[c] += acts.back()[c];
  }
  return cache.logits;
}

inline std::vector<double> forward_logits(const ModelState& m,
                                          std::span<const double> x) {
  ForwardCache cache;
  auto z = forward_logits(m, m.params, x, cache);
  return {z.begin(), z.end()};
}

// Accumulates dL/dparams into `grad` given dL/dlogits for the input last run
// through `cache`.
inline void backward(const ModelState& m, std::span<const double> params,
                     const ForwardCache& cache, std::span<const double> dlogits,
                     std::span<double> grad) {
  std::vector<double> dout, din;
  for (std::size_t t = 0; t < m.towers.size(); ++t) {
    const auto& tower = m.towers[t];
    const auto& acts = cache.acts[t];
    dout.assign(dlogits.begin(), dlogits.end());
    for (std::size_t l = tower.size(); l-- > 0;) {
      detail::layer_backward(tower[l], params, acts[l], acts[l + 1], dout, grad,
                             l > 0 ? &din : nullptr);
      if (l > 0) std::swap(dout, din);
    }
  }
}

// Numerically stable softmax (max subtraction).
inline void softmax_inplace(std::span<double> z, double temperature = 1.0) {
  if (z.empty()) return;
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp((v - mx) / temperature);
    sum += v;
  }
  for (auto& v : z) v /= sum;
}

inline std::vector<double> softmax(std::span<const double> z,
                                   double temperature = 1.0) {
  std::vector<double> p(z.begin(), z.end());
  softmax_inplace(p, temperature);
  return p;
}

inline std::vector<double> predict_proba(const ModelState& m,
                                         std::span<const double> x) {
  auto z = forward_logits(m, x);
  softmax_inplace(z);
  return z;
}

inline int predict_class(const ModelState& m, std::span<const double> x) {
  auto z = forward_logits(m, x);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

inline std::vector<int> predict_classes(const ModelState& m,
                                        const SurveyTable& t) {
  std::vector<int> out(t.rows());
  ForwardCache cache;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto z = forward_logits(m, m.params, t.row(i), cache);
    out[i] = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

inline constexpr double kProbFloor = 1e-12;

// Mean cross-entropy of the rows `batch` of `t`, with its gradient. The
// per-sample loss is logsumexp(z) - z_true, which stays finite and matches the
// gradient p - e_true for arbitrarily confident logits.
inline LossGrad label_loss_and_grad(const ModelState& m,
                                    std::span<const double> params,
                                    const SurveyTable& t,
                                    std::span<const std::size_t> batch) {
  require(!batch.empty(), ErrorKind::EmptySplit, "empty batch");
  require(t.cols() == m.spec.input_dim, ErrorKind::DimensionMismatch,
          "table width does not match model input_dim");
  LossGrad out{0.0, std::vector<double>(params.size(), 0.0)};
  ForwardCache cache;
  std::vector<double> p(m.spec.num_classes);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    const int y = t.labels[i];
    require(y >= 0 && static_cast<std::size_t>(y) < m.spec.num_classes,
            ErrorKind::LabelOutOfRange, "label outside model classes");
    auto z = forward_logits(m, params, t.row(i), cache);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    out.loss += (zmax + std::log(sum) - z[static_cast<std::size_t>(y)]) * inv_n;
    std::copy(z.begin(), z.end(), p.begin());
    softmax_inplace(p);
    for (auto& v : p) v *= inv_n;
    p[y] -= inv_n;
    backward(m, params, cache, p, out.grad);
  }
  require(std::isfinite(out.loss), ErrorKind::NonFiniteLoss,
          "cross-entropy is not finite");
  return out;
}

inline LossGrad loss_and_grad(const ModelState& m, const SurveyTable& t,
                              std::span<const std::size_t> batch) {
  return label_loss_and_grad(m, m.params, t, batch);
}

inline LossGrad loss_and_grad(const ModelState& m, const SurveyTable& t) {
  std::vector<std::size_t> all(t.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return loss_and_grad(m, t, all);
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
  std::optional<std::size_t> first_failure;
};

// Coordinate-wise |a - n| / max(|a|, |n|, floor) against central differences.
// The floor keeps coordinates whose true gradient is ~0 from reporting huge
// relative errors out of round-off.
inline GradCheckReport grad_check(
    std::span<const double> params, std::span<const double> analytic,
    const std::function<double(std::span<const double>)>& objective, double h,
    double tol, double floor = 1e-6) {
  require(h > 0.0, ErrorKind::InvalidConfig, "finite-difference step must be > 0");
  require(analytic.size() == params.size(), ErrorKind::DimensionMismatch,
          "gradient and parameter sizes differ");
  GradCheckReport r;
  std::vector<double> theta(params.begin(), params.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + h;
    const double up = objective(theta);
    theta[i] = saved - h;
    const double down = objective(theta);
    theta[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
    if (rel > tol && !r.first_failure) r.first_failure = i;
  }
  r.passed = !r.first_failure.has_value();
  return r;
}

// Smallest |pre-activation| of any ReLU unit over the rows `batch`. Central
// differences with step h are only meaningful when this exceeds the change a
// step can cause in a pre-activation.
inline double relu_margin(const ModelState& m, std::span<const double> params,
                          const SurveyTable& t, std::span<const std::size_t> batch) {
  double margin = std::numeric_limits<double>::infinity();
  ForwardCache cache;
  std::vector<double> pre;
  for (std::size_t i : batch) {
    forward_logits(m, params, t.row(i), cache);
    for (std::size_t tw = 0; tw < m.towers.size(); ++tw) {
      for (std::size_t l = 0; l < m.towers[tw].size(); ++l) {
        auto linear = m.towers[tw][l];
        if (!linear.relu) continue;
        linear.relu = false;
        detail::layer_forward(linear, params, cache.acts[tw][l], pre);
        for (double v : pre) margin = std::min(margin, std::abs(v));
      }
    }
  }
  return margin;
}

inline GradCheckReport grad_check(const ModelState& m, const SurveyTable& t,
                                  std::span<const std::size_t> batch, double h,
                                  double tol) {
  auto lg = label_loss_and_grad(m, m.params, t, batch);
  auto objective = [&](std::span<const double> theta) {
    return label_loss_and_grad(m, theta, t, batch).loss;
  };
  return grad_check(m.params, lg.grad, objective, h, tol);
}

}  // namespace dkg

#endif  // DKG_MODELS_HPP
