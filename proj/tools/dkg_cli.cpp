// SPDX-License-Identifier: Apache-2.0
//
// dkg: command-line front end.
//
//   dkg synth     --config run.json --out data.csv
//   dkg train     --config run.json --data data.csv [--knowledge dk.json] --out model.json
//   dkg explain   --checkpoint model.json --data data.csv [--exact | --sampled M] --out attr.json
//   dkg knowledge --attributions a.json b.json [--accuracies 0.8 0.7] --k 2 --out dk.json
//   dkg report    --config run.json [--data data.csv] --out report_dir
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 I/O error, 4 numerical failure.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dkg/attribution.hpp"
#include "dkg/checkpoint.hpp"
#include "dkg/config.hpp"
#include "dkg/data.hpp"
#include "dkg/experiment.hpp"
#include "dkg/knowledge.hpp"
#include "dkg/training.hpp"
#include "dkg/version.hpp"

namespace fs = std::filesystem;
using namespace dkg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile:
    case ErrorKind::IoError:
    case ErrorKind::CorruptArtifact:
      return kExitIo;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::NonFiniteGradient:
    case ErrorKind::OracleFailure:
      return kExitNumeric;
    default:
      return kExitUsage;
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dry_run = false;
  bool quiet = false;
};

struct Context {
  Common common;
  RunConfig run;
  std::string command;

  std::ostream& log() const {
    static std::ostream null(nullptr);
    return common.quiet ? null : std::cout;
  }

  Json provenance() const {
    return {{"tool", kToolName},
            {"version", kToolVersion},
            {"command", command},
            {"config_hash", run.hash},
            {"seed", run.seed}};
  }

  std::string provenance_line() const {
    return std::string(kToolName) + " " + std::string(kToolVersion) + " command=" + command +
           " config_hash=" + run.hash + " seed=" + std::to_string(run.seed);
  }
};

RunConfig load_config(const Common& c) {
  Json j = Json{{"version", kConfigVersion}};
  if (!c.config.empty()) {
    try {
      j = detail::read_json_file(c.config);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::CorruptArtifact) fail(ErrorKind::InvalidConfig, e.what());
      throw;
    }
  }
  if (c.seed) {
    if (!j.is_object()) fail(ErrorKind::InvalidConfig, "config must be a JSON object");
    j["seed"] = *c.seed;
  }
  return parse_run_config(j);
}

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  require(!ec, ErrorKind::IoError, "cannot create directory '" + parent.string() + "'");
}

std::string resolve_data(const Context& ctx, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (ctx.run.data_path) return *ctx.run.data_path;
  fail(ErrorKind::InvalidConfig, "no data file: pass --data or set paths.data");
}

SurveyTable load_data(const Context& ctx, const std::string& path) {
  auto load = load_csv(path, ctx.run.data.label_column, ctx.run.data.levels);
  if (load.dropped_rows > 0) {
    ctx.log() << "dropped " << load.dropped_rows << " rows with missing cells\n";
  }
  return std::move(load.table);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const Context& ctx) {
  require(ctx.run.synth.has_value(), ErrorKind::InvalidConfig,
          "synth: the config needs a \"synth\" section");
  const auto& sc = *ctx.run.synth;
  validate(sc);
  const auto out = !ctx.common.out.empty() ? ctx.common.out
                                           : ctx.run.data_path.value_or("synthetic.csv");
  const auto truth_path = sibling(out, ".truth.json");
  if (ctx.common.dry_run) {
    ctx.log() << "plan: synthesize " << sc.rows << " rows x " << sc.factors << " factors, "
              << sc.levels << " levels, noise " << sc.noise << ", seed " << sc.seed << "\n"
              << "would write " << out << " and " << truth_path << "\n";
    return kExitOk;
  }
  auto result = synth_generate(sc);
  ensure_parent(out);
  save_csv(out, result.table, ctx.run.data.label_column, ctx.provenance_line());
  Json truth{{"provenance", ctx.provenance()},
             {"factor_names", result.table.factor_names},
             {"weights", sc.weights},
             {"noise", sc.noise},
             {"levels", sc.levels},
             {"planted_ranking", result.planted_ranking},
             {"label_histogram", label_histogram(result.table)}};
  detail::write_text_file(truth_path, truth.dump(2) + "\n");
  ctx.log() << "wrote " << out << " (" << result.table.rows() << " rows) and " << truth_path
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainFlags {
  std::string data;
  std::string knowledge;
  std::string model;
};

ModelEntry pick_model(const RunConfig& run, const std::string& wanted) {
  if (run.models.empty()) {
    ModelEntry e;
    e.spec.kind = wanted.empty() ? ModelKind::LR : parse_model_kind(wanted);
    e.id = std::string(to_string(e.spec.kind));
    e.spec.seed = run.seed;
    return e;
  }
  if (wanted.empty()) return run.models.front();
  for (const auto& m : run.models) {
    if (m.id == wanted) return m;
  }
  for (const auto& m : run.models) {
    if (to_string(m.spec.kind) == wanted) return m;
  }
  fail(ErrorKind::InvalidConfig, "no model '" + wanted + "' in the config");
}

int cmd_train(const Context& ctx, const TrainFlags& flags) {
  const auto data_path = resolve_data(ctx, flags.data);
  auto entry = pick_model(ctx.run, flags.model);
  const bool joint = !flags.knowledge.empty();
  const auto out = !ctx.common.out.empty() ? ctx.common.out : entry.id + ".model.json";
  const auto history_path = sibling(out, ".history.csv");
  const auto& tc = ctx.run.train;

  ctx.log() << "train: model=" << entry.id << " kind=" << to_string(entry.spec.kind)
            << " mode=" << (joint ? "joint" : "label_only") << " lr=" << tc.learning_rate
            << " batch=" << tc.batch_size << " epochs=" << tc.epochs << " seed=" << tc.seed
            << "\n";

  auto raw = load_data(ctx, data_path);
  std::optional<DomainKnowledge> dk;
  if (joint) {
    dk = load_knowledge(flags.knowledge);
    require(dk->factor_names == raw.factor_names, ErrorKind::FactorMismatch,
            "knowledge factors do not match the data columns");
  }
  if (ctx.common.dry_run) {
    ctx.log() << "plan: " << raw.rows() << " rows, " << raw.cols() << " factors; would write "
              << out << " and " << history_path << "\n";
    return kExitOk;
  }

  auto std_data = standardize(raw);
  const auto& table = std_data.table;
  std::vector<std::size_t> order(table.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = stream_rng(ctx.run.seed, 1);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_valid = static_cast<std::size_t>(
      std::llround(ctx.run.valid_fraction * static_cast<double>(order.size())));
  n_valid = std::min(n_valid, order.size() - 1);
  std::vector<std::size_t> valid_idx(order.begin(), order.begin() + n_valid);
  std::vector<std::size_t> fit_idx(order.begin() + n_valid, order.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());

  entry.spec.input_dim = table.cols();
  entry.spec.num_classes = static_cast<std::size_t>(table.num_levels);
  LossSpec loss = ctx.run.loss;
  loss.mode = joint ? LossMode::Joint : LossMode::LabelOnly;
  auto result = train(build_model(entry.spec), table.select(fit_idx), table.select(valid_idx),
                      dk ? &*dk : nullptr, loss, tc);

  Checkpoint cp{result.model, table.factor_names, std_data.stats, ctx.provenance()};
  cp.provenance["model_id"] = entry.id;
  cp.provenance["data"] = data_path;
  cp.provenance["loss_weight"] = result.loss_weight;
  ensure_parent(out);
  save_checkpoint(cp, out);

  std::string history = "# " + ctx.provenance_line() + "\nepoch,l_label,l_exp,val_micro_f1\n";
  for (const auto& h : result.history) {
    history += std::to_string(h.epoch) + "," + detail::format_double(h.label_loss) + "," +
               detail::format_double(h.exp_loss) + "," +
               detail::format_double(h.val_micro_f1) + "\n";
  }
  detail::write_text_file(history_path, history);
  const auto& last = result.history.back();
  ctx.log() << "final: l_label=" << last.label_loss << " l_exp=" << last.exp_loss
            << " val_micro_f1=" << last.val_micro_f1 << "\nwrote " << out << " and "
            << history_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// explain

struct ExplainFlags {
  std::string checkpoint;
  std::string data;
  bool exact = false;
  std::optional<std::size_t> sampled;
  std::optional<std::size_t> rows;
};

int cmd_explain(const Context& ctx, const ExplainFlags& flags) {
  require(!flags.checkpoint.empty(), ErrorKind::InvalidConfig, "--checkpoint is required");
  require(!(flags.exact && flags.sampled), ErrorKind::InvalidConfig,
          "--exact and --sampled are mutually exclusive");
  AttributionOptions opt = ctx.run.attribution;
  if (flags.exact) opt.method = AttributionMethod::Exact;
  if (flags.sampled) {
    require(*flags.sampled >= 1, ErrorKind::InvalidConfig, "--sampled needs M >= 1");
    opt.method = AttributionMethod::Sampled;
    opt.permutations = *flags.sampled;
  }
  if (flags.rows) opt.sample_cap = *flags.rows;

  auto cp = load_checkpoint(flags.checkpoint);
  const auto data_path = resolve_data(ctx, flags.data);
  auto raw = load_data(ctx, data_path);
  require(cp.factor_names == raw.factor_names, ErrorKind::FactorMismatch,
          "checkpoint factors do not match the data columns");
  if (opt.method == AttributionMethod::Exact) {
    require(raw.cols() <= kMaxExactFactors, ErrorKind::TooManyFactors,
            "--exact supports at most " + std::to_string(kMaxExactFactors) + " factors, data has " +
                std::to_string(raw.cols()));
  }
  const auto out = !ctx.common.out.empty() ? ctx.common.out : "attributions.json";
  const auto ranking_path = sibling(out, ".ranking.csv");
  if (ctx.common.dry_run) {
    ctx.log() << "plan: " << to_string(opt.method) << " attribution of up to "
              << opt.sample_cap << " rows of " << data_path << "; would write " << out
              << " and " << ranking_path << "\n";
    return kExitOk;
  }
  const auto table = cp.standardization ? apply_standardization(raw, *cp.standardization) : raw;
  ValueOracle oracle(cp.model, column_means(table));
  const auto rows = attribute_rows(oracle, table, opt);
  const auto importance = mean_abs_attribution(rows);
  const auto ranking = rank_factors(importance);

  Json attributions = Json::array();
  for (const auto& r : rows) {
    const auto& a = r.attribution;
    attributions.push_back({{"row_index", r.row_index},
                            {"base", a.base},
                            {"phi", a.phi},
                            {"method", to_string(a.method)},
                            {"stderr", a.std_error}});
    if (opt.method == AttributionMethod::Exact) {
      ctx.log() << "row " << r.row_index << " efficiency residual " << a.efficiency_residual()
                << "\n";
    }
  }
  Json doc{{"format", "dkg-attributions"},
           {"version", 1},
           {"provenance", ctx.provenance()},
           {"source", cp.provenance.value("model_id", to_string(cp.model.spec.kind))},
           {"factors", table.factor_names},
           {"method", to_string(opt.method)},
           {"permutations", opt.method == AttributionMethod::Sampled ? opt.permutations : 0},
           {"micro_f1", micro_f1(cp.model, table)},
           {"importance", importance},
           {"attributions", attributions}};
  ensure_parent(out);
  detail::write_text_file(out, doc.dump(2) + "\n");
  std::string csv = "# " + ctx.provenance_line() + "\nrank,factor,index,score\n";
  for (std::size_t r = 0; r < ranking.order.size(); ++r) {
    const auto j = ranking.order[r];
    csv += std::to_string(r + 1) + "," + table.factor_names[j] + "," + std::to_string(j) + "," +
           detail::format_double(importance[j]) + "\n";
  }
  detail::write_text_file(ranking_path, csv);
  ctx.log() << "wrote " << out << " (" << rows.size() << " rows) and " << ranking_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// knowledge

struct KnowledgeFlags {
  std::vector<std::string> attributions;
  std::vector<double> accuracies;
  std::optional<std::size_t> k;
  std::optional<double> temperature;
};

int cmd_knowledge(const Context& ctx, const KnowledgeFlags& flags) {
  require(!flags.attributions.empty(), ErrorKind::EmptySourceSet,
          "--attributions needs at least one file");
  require(flags.accuracies.empty() || flags.accuracies.size() == flags.attributions.size(),
          ErrorKind::InvalidConfig, "give one accuracy per attribution file");
  std::vector<std::string> names;
  std::vector<KnowledgeSource> sources;
  std::vector<double> lambdas;
  for (std::size_t f = 0; f < flags.attributions.size(); ++f) {
    const auto& path = flags.attributions[f];
    const auto doc = detail::read_json_file(path);
    std::vector<std::string> factors;
    KnowledgeSource src;
    double accuracy = 0.0;
    try {
      factors = doc.at("factors").get<std::vector<std::string>>();
      src.exp = doc.at("importance").get<std::vector<double>>();
      src.id = doc.value("source", fs::path(path).stem().string());
      accuracy = doc.value("micro_f1", 1.0);
    } catch (const Json::exception& e) {
      fail(ErrorKind::CorruptArtifact, path + ": " + e.what());
    }
    if (f == 0) {
      names = factors;
    } else {
      require(factors == names, ErrorKind::FactorMismatch,
              path + ": factor names differ from " + flags.attributions.front());
    }
    sources.push_back(std::move(src));
    lambdas.push_back(flags.accuracies.empty() ? accuracy : flags.accuracies[f]);
  }
  const auto k = flags.k.value_or(ctx.run.top_k);
  const auto T = flags.temperature.value_or(ctx.run.loss.temperature);
  auto dk = build_knowledge(names, sources, lambdas, k, T);
  dk.provenance = ctx.provenance();
  const auto out = !ctx.common.out.empty() ? ctx.common.out : "knowledge.json";
  auto set_names = [&](const std::vector<std::size_t>& s) {
    std::string text;
    for (auto j : s) text += (text.empty() ? "" : ", ") + names[j];
    return "{" + text + "}";
  };
  ctx.log() << "sources: " << sources.size() << ", k=" << k << ", T=" << T
            << "\nprimary " << set_names(dk.primary) << "\nsecondary "
            << set_names(dk.secondary) << "\n";
  if (ctx.common.dry_run) {
    ctx.log() << "plan: would write " << out << "\n";
    return kExitOk;
  }
  ensure_parent(out);
  save_knowledge(dk, out);
  ctx.log() << "wrote " << out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportFlags {
  std::string data;
  std::optional<std::size_t> threads;
};

std::size_t default_threads() {
  const char* env = std::getenv("DKG_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const auto v = std::strtoull(env, &end, 10);
  require(end != env && *end == '\0' && v >= 1, ErrorKind::InvalidConfig,
          std::string("DKG_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

int cmd_report(const Context& ctx, const ReportFlags& flags) {
  require(!ctx.common.config.empty(), ErrorKind::InvalidConfig, "report needs --config");
  const auto threads = flags.threads.value_or(default_threads());
  require(threads >= 1, ErrorKind::InvalidConfig, "--threads must be >= 1");
  auto opt = ctx.run.experiment_options(threads);
  validate(opt);
  const auto out_dir = !ctx.common.out.empty() ? ctx.common.out
                                               : ctx.run.out_path.value_or("report");

  SurveyTable table;
  std::string source;
  if (!flags.data.empty() || ctx.run.data_path) {
    source = resolve_data(ctx, flags.data);
    table = load_data(ctx, source);
  } else {
    require(ctx.run.synth.has_value(), ErrorKind::InvalidConfig,
            "report needs --data, paths.data or a synth section");
    validate(*ctx.run.synth);
    source = "synthetic (seed " + std::to_string(ctx.run.synth->seed) + ")";
    table = synth_generate(*ctx.run.synth).table;
  }

  auto& log = ctx.log();
  log << "report: dataset=" << opt.dataset << " source=" << source << " rows=" << table.rows()
      << " factors=" << table.cols() << "\n  models:";
  for (const auto& m : opt.models) log << " " << m.id << "(" << to_string(m.spec.kind) << ")";
  log << "\n  folds=" << opt.folds << " epochs=" << opt.train.epochs
      << " lr=" << opt.train.learning_rate << " batch=" << opt.train.batch_size
      << " T=" << opt.loss.temperature << " threads=" << threads << " seed=" << opt.seed
      << "\n  group=" << (opt.group ? opt.group->factor : std::string("all")) << "\n";
  const auto json_path = (fs::path(out_dir) / "report.json").string();
  const auto csv_path = (fs::path(out_dir) / "folds.csv").string();
  const auto md_path = (fs::path(out_dir) / "summary.md").string();
  if (ctx.common.dry_run) {
    log << "plan: would write " << json_path << ", " << csv_path << ", " << md_path << "\n";
    return kExitOk;
  }

  auto report = run_experiment(table, opt);
  auto doc = to_json(report);
  doc["provenance"] = ctx.provenance();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create directory '" + out_dir + "'");
  detail::write_text_file(json_path, doc.dump(2) + "\n");
  detail::write_text_file(csv_path, report_fold_csv(report, ctx.provenance_line()));
  const auto md = report_summary_markdown(report);
  detail::write_text_file(md_path, "<!-- " + ctx.provenance_line() + " -->\n\n" + md);
  log << "\n" << md << "\nwrote " << json_path << ", " << csv_path << ", " << md_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapley-guided training and explanation consistency for tabular classifiers"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config, "JSON run configuration");
  app.add_option("--seed", common.seed, "Override the master seed");
  app.add_option("--out", common.out, "Output file or directory");
  app.add_flag("--dry-run", common.dry_run, "Validate and print the plan without writing");
  app.add_flag("--quiet", common.quiet, "Suppress progress output");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic survey table");

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train one classifier");
  train_cmd->add_option("--data", tf.data, "Input CSV");
  train_cmd->add_option("--knowledge", tf.knowledge, "Knowledge artifact; enables joint loss");
  train_cmd->add_option("--model", tf.model, "Model id or kind from the config");

  ExplainFlags ef;
  auto* explain = app.add_subcommand("explain", "Shapley attributions of a checkpoint");
  explain->add_option("--checkpoint", ef.checkpoint, "Model checkpoint")->required();
  explain->add_option("--data", ef.data, "Input CSV");
  explain->add_flag("--exact", ef.exact, "Exact enumeration");
  explain->add_option("--sampled", ef.sampled, "Permutation sampling with M permutations");
  explain->add_option("--rows", ef.rows, "Maximum rows to attribute");

  KnowledgeFlags kf;
  auto* knowledge = app.add_subcommand("knowledge", "Fuse attribution files into knowledge");
  knowledge->add_option("--attributions", kf.attributions, "Attribution files")->required();
  knowledge->add_option("--accuracies", kf.accuracies, "Per-source accuracy weights");
  knowledge->add_option("--k", kf.k, "Top/last-k size");
  knowledge->add_option("--temperature", kf.temperature, "Softmax temperature");

  ReportFlags rf;
  auto* report = app.add_subcommand("report", "Run the k-fold with/without knowledge experiment");
  report->add_option("--data", rf.data, "Input CSV");
  report->add_option("--threads", rf.threads, "Worker threads (default: DKG_THREADS or 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Context ctx;
  ctx.common = common;
  try {
    ctx.run = load_config(common);
    if (*synth) {
      ctx.command = "synth";
      return cmd_synth(ctx);
    }
    if (*train_cmd) {
      ctx.command = "train";
      return cmd_train(ctx, tf);
    }
    if (*explain) {
      ctx.command = "explain";
      return cmd_explain(ctx, ef);
    }
    if (*knowledge) {
      ctx.command = "knowledge";
      return cmd_knowledge(ctx, kf);
    }
    ctx.command = "report";
    return cmd_report(ctx, rf);
  } catch (const Error& e) {
    std::cerr << "dkg: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "dkg: " << e.what() << "\n";
    return kExitIo;
  }
}
