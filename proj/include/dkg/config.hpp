// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document describing data synthesis, the group
// split, the model roster, optimizer, loss and attribution settings.
// Unknown keys are rejected; every validation error names its field path.
#ifndef DKG_CONFIG_HPP
#define DKG_CONFIG_HPP

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dkg/attribution.hpp"
#include "dkg/checkpoint.hpp"
#include "dkg/data.hpp"
#include "dkg/error.hpp"
#include "dkg/experiment.hpp"
#include "dkg/models.hpp"
#include "dkg/training.hpp"

namespace dkg {

inline constexpr int kConfigVersion = 1;

struct DataConfig {
  std::string label_column = "happiness";
  int levels = 5;
};

struct RunConfig {
  std::uint64_t seed = 101;
  std::string dataset = "synthetic";
  std::optional<SynthConfig> synth;
  DataConfig data;
  std::optional<GroupSpec> group;
  std::vector<ModelEntry> models;
  TrainConfig train;
  LossSpec loss = LossSpec::joint();
  AttributionOptions attribution;
  std::size_t folds = 5;
  std::size_t top_k = 2;
  double valid_fraction = 0.2;
  std::optional<std::string> data_path;
  std::optional<std::string> out_path;
  std::string hash;  // FNV-1a of the canonical JSON text

  ExperimentOptions experiment_options(std::size_t threads = 1) const {
    ExperimentOptions o;
    o.models = models;
    o.folds = folds;
    o.train = train;
    o.loss = loss;
    o.attribution = attribution;
    o.top_k = top_k;
    o.valid_fraction = valid_fraction;
    o.seed = seed;
    o.dataset = dataset;
    o.group = group;
    o.threads = threads;
    o.config_hash = hash;
    return o;
  }
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Typed, path-aware access to one JSON object.
class Fields {
 public:
  Fields(const Json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) bad("", "must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items()) {
      if (!ok.count(key)) bad(key, "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const Json& at(const char* key) const { return j_.at(key); }
  std::string path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  [[noreturn]] void bad(const std::string& key, const std::string& what) const {
    fail(ErrorKind::InvalidConfig, (key.empty() ? path_ : path(key)) + ": " + what);
  }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_number()) bad(key, "must be a number");
    return at(key).get<double>();
  }
  double positive(const char* key, double fallback) const {
    const double v = number(key, fallback);
    if (!(v > 0.0)) bad(key, "must be > 0");
    return v;
  }
  std::size_t count(const char* key, std::size_t fallback, std::size_t min = 0) const {
    if (!has(key)) return fallback;
    if (!at(key).is_number_integer() || at(key).get<long long>() < 0) {
      bad(key, "must be a non-negative integer");
    }
    const auto v = at(key).get<std::size_t>();
    if (v < min) bad(key, "must be >= " + std::to_string(min));
    return v;
  }
  std::uint64_t seed(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) {
      bad(key, "must be an unsigned integer");
    }
    return at(key).get<std::uint64_t>();
  }
  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    if (!at(key).is_string()) bad(key, "must be a string");
    return at(key).get<std::string>();
  }
  std::vector<double> numbers(const char* key) const {
    if (!at(key).is_array()) bad(key, "must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < at(key).size(); ++i) {
      const auto& v = at(key)[i];
      if (!v.is_number()) bad(std::string(key) + "[" + std::to_string(i) + "]", "must be a number");
      out.push_back(v.get<double>());
    }
    return out;
  }

 private:
  const Json& j_;
  std::string path_;
};

inline SynthConfig parse_synth(const Json& j, std::uint64_t default_seed) {
  Fields f(j, "synth", {"rows", "factors", "levels", "weights", "noise", "seed"});
  SynthConfig c;
  c.rows = f.count("rows", c.rows, 1);
  c.factors = f.count("factors", c.factors, 1);
  c.levels = static_cast<int>(f.count("levels", static_cast<std::size_t>(c.levels), 2));
  c.noise = f.number("noise", 0.0);
  if (c.noise < 0.0) f.bad("noise", "must be >= 0");
  c.seed = f.seed("seed", default_seed);
  if (f.has("weights")) {
    c.weights = f.numbers("weights");
    if (c.weights.size() != c.factors) {
      f.bad("weights", "needs " + std::to_string(c.factors) + " entries");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < c.weights.size(); ++i) {
      if (c.weights[i] < 0.0) {
        f.bad("weights[" + std::to_string(i) + "]", "must be non-negative");
      }
      sum += c.weights[i];
    }
    if (std::abs(sum - 1.0) > 1e-9) f.bad("weights", "must sum to 1");
  } else {
    c.weights.assign(c.factors, 1.0 / static_cast<double>(c.factors));
  }
  if (c.rows < static_cast<std::size_t>(c.levels)) f.bad("rows", "must be >= levels");
  return c;
}

inline GroupSpec parse_group(const Json& j) {
  Fields f(j, "group", {"factor", "threshold", "side", "levels", "in_name", "out_name"});
  GroupSpec g;
  g.factor = f.text("factor", "");
  if (g.factor.empty()) f.bad("factor", "is required");
  g.in_name = f.text("in_name", "in");
  g.out_name = f.text("out_name", "out");
  const bool threshold = f.has("threshold"), levels = f.has("levels");
  if (threshold == levels) f.bad("", "exactly one of threshold or levels is required");
  if (threshold) {
    ThresholdRule r;
    r.value = f.number("threshold", 0.0);
    const auto side = f.text("side", "le");
    if (side == "le") {
      r.side = Side::LessEqual;
    } else if (side == "gt") {
      r.side = Side::Greater;
    } else {
      f.bad("side", "must be \"le\" or \"gt\"");
    }
    g.rule = r;
  } else {
    const auto values = f.numbers("levels");
    if (values.empty()) f.bad("levels", "must be non-empty");
    g.rule = LevelSetRule{{values.begin(), values.end()}};
  }
  return g;
}

inline ModelEntry parse_model(const Json& j, std::size_t index, std::uint64_t default_seed) {
  const auto path = "models[" + std::to_string(index) + "]";
  Fields f(j, path, {"id", "kind", "hidden", "channels", "kernel", "conv_layers", "seed"});
  ModelEntry e;
  try {
    e.spec.kind = parse_model_kind(f.text("kind", ""));
  } catch (const Error&) {
    f.bad("kind", "must be one of LR, MoMLP, CNN1D, WideDeep");
  }
  e.id = f.text("id", std::string(to_string(e.spec.kind)));
  if (f.has("hidden")) {
    e.spec.hidden.clear();
    for (double h : f.numbers("hidden")) {
      if (h < 1 || h != std::floor(h)) f.bad("hidden", "widths must be positive integers");
      e.spec.hidden.push_back(static_cast<std::size_t>(h));
    }
    if (e.spec.hidden.empty()) f.bad("hidden", "must be non-empty");
  }
  e.spec.channels = f.count("channels", e.spec.channels, 1);
  e.spec.kernel = f.count("kernel", e.spec.kernel, 1);
  e.spec.conv_layers = f.count("conv_layers", e.spec.conv_layers, 1);
  e.spec.seed = f.seed("seed", default_seed);
  return e;
}

inline TrainConfig parse_train(const Json& j, std::uint64_t default_seed) {
  Fields f(j, "train", {"epochs", "batch_size", "learning_rate", "beta1", "beta2",
                        "epsilon", "weight_decay", "seed"});
  TrainConfig c;
  c.epochs = f.count("epochs", c.epochs, 1);
  c.batch_size = f.count("batch_size", c.batch_size, 1);
  c.learning_rate = f.positive("learning_rate", c.learning_rate);
  c.beta1 = f.number("beta1", c.beta1);
  if (!(c.beta1 > 0.0 && c.beta1 < 1.0)) f.bad("beta1", "must lie in (0, 1)");
  c.beta2 = f.number("beta2", c.beta2);
  if (!(c.beta2 > 0.0 && c.beta2 < 1.0)) f.bad("beta2", "must lie in (0, 1)");
  c.epsilon = f.positive("epsilon", c.epsilon);
  c.weight_decay = f.number("weight_decay", c.weight_decay);
  if (c.weight_decay < 0.0) f.bad("weight_decay", "must be >= 0");
  c.seed = f.seed("seed", default_seed);
  return c;
}

inline LossSpec parse_loss(const Json& j) {
  Fields f(j, "loss", {"weight", "probe_size", "permutations", "period", "temperature"});
  LossSpec s = LossSpec::joint();
  if (f.has("weight")) {
    s.weight = f.number("weight", 0.0);
    if (*s.weight < 0.0) f.bad("weight", "must be >= 0");
  }
  s.probe_size = f.count("probe_size", s.probe_size, 1);
  s.permutations = f.count("permutations", s.permutations, 1);
  s.period = f.count("period", s.period, 1);
  s.temperature = f.positive("temperature", s.temperature);
  return s;
}

inline AttributionOptions parse_attribution(const Json& j, std::uint64_t default_seed) {
  Fields f(j, "attribution", {"method", "permutations", "sample_cap", "seed"});
  AttributionOptions a;
  const auto method = f.text("method", "exact");
  if (method == "exact") {
    a.method = AttributionMethod::Exact;
  } else if (method == "sampled") {
    a.method = AttributionMethod::Sampled;
  } else {
    f.bad("method", "must be \"exact\" or \"sampled\"");
  }
  a.permutations = f.count("permutations", a.permutations, 1);
  a.sample_cap = f.count("sample_cap", a.sample_cap, 1);
  a.seed = f.seed("seed", default_seed);
  return a;
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
  detail::Fields f(j, "", {"version", "seed", "dataset", "synth", "data", "group", "models",
                           "train", "loss", "attribution", "experiment", "paths"});
  if (!f.has("version") || !j.at("version").is_number_integer()) {
    f.bad("version", "is required");
  }
  if (j.at("version").get<int>() != kConfigVersion) {
    fail(ErrorKind::SchemaVersionMismatch,
         "config version " + j.at("version").dump() + ", expected " +
             std::to_string(kConfigVersion));
  }
  RunConfig c;
  c.seed = f.seed("seed", c.seed);
  c.dataset = f.text("dataset", c.dataset);
  if (f.has("synth")) c.synth = detail::parse_synth(j.at("synth"), c.seed);
  if (f.has("data")) {
    detail::Fields d(j.at("data"), "data", {"label_column", "levels"});
    c.data.label_column = d.text("label_column", c.data.label_column);
    c.data.levels = static_cast<int>(d.count("levels", 5, 2));
  } else if (c.synth) {
    c.data.levels = c.synth->levels;
  }
  if (f.has("group")) c.group = detail::parse_group(j.at("group"));
  if (f.has("models")) {
    if (!j.at("models").is_array()) f.bad("models", "must be an array");
    for (std::size_t i = 0; i < j.at("models").size(); ++i) {
      c.models.push_back(detail::parse_model(j.at("models")[i], i, c.seed));
    }
    std::set<std::string> ids;
    for (const auto& m : c.models) {
      if (!ids.insert(m.id).second) f.bad("models", "duplicate model id '" + m.id + "'");
    }
  }
  if (f.has("train")) {
    c.train = detail::parse_train(j.at("train"), c.seed);
  } else {
    c.train.seed = c.seed;
  }
  if (f.has("loss")) c.loss = detail::parse_loss(j.at("loss"));
  if (f.has("attribution")) {
    c.attribution = detail::parse_attribution(j.at("attribution"), c.seed);
  } else {
    c.attribution.seed = c.seed;
  }
  if (f.has("experiment")) {
    detail::Fields e(j.at("experiment"), "experiment", {"folds", "top_k", "valid_fraction"});
    c.folds = e.count("folds", c.folds, 2);
    c.top_k = e.count("top_k", c.top_k, 1);
    c.valid_fraction = e.number("valid_fraction", c.valid_fraction);
    if (!(c.valid_fraction >= 0.0 && c.valid_fraction < 1.0)) {
      e.bad("valid_fraction", "must lie in [0, 1)");
    }
  }
  if (f.has("paths")) {
    detail::Fields p(j.at("paths"), "paths", {"data", "out"});
    if (p.has("data")) c.data_path = p.text("data", "");
    if (p.has("out")) c.out_path = p.text("out", "");
  }
  c.hash = detail::hex64(detail::fnv1a(j.dump()));
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  Json j;
  try {
    j = detail::read_json_file(path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptArtifact) fail(ErrorKind::InvalidConfig, e.what());
    throw;
  }
  return parse_run_config(j);
}

}  // namespace dkg

#endif  // DKG_CONFIG_HPP
