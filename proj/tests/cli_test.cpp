// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dkg/checkpoint.hpp"

namespace fs = std::filesystem;

namespace dkg {
namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + DKG_CLI + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

Json synth_config(std::size_t rows, std::size_t factors) {
  std::vector<double> w(factors);
  const double total = static_cast<double>(factors * (factors + 1) / 2);
  for (std::size_t j = 0; j < factors; ++j) w[j] = static_cast<double>(factors - j) / total;
  return Json{{"version", 1},
              {"synth", {{"rows", rows}, {"factors", factors}, {"levels", 5}, {"weights", w},
                         {"noise", 0.5}}},
              {"train", {{"epochs", 2}, {"learning_rate", 0.01}}}};
}

// One shared workspace: an eight-factor dataset and a model trained on it.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "dkg_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write(dir / "j8.json", synth_config(200, 8).dump(2));
    ASSERT_EQ(run("synth --quiet --config " + q(dir / "j8.json") + " --out " + q(dir / "j8.csv"))
                  .code,
              0);
    ASSERT_EQ(run("train --quiet --config " + q(dir / "j8.json") + " --data " +
                  q(dir / "j8.csv") + " --out " + q(dir / "j8.model.json"))
                  .code,
              0);
  }

  static fs::path path(const std::string& name) { return dir / name; }
};

fs::path Cli::dir;

TEST_F(Cli, SynthWritesHeaderRowsAndTruth) {
  const auto csv = lines_of(slurp(path("j8.csv")));
  ASSERT_EQ(csv.size(), 202u);
  EXPECT_EQ(csv[0].rfind("# dkg 0.1.0", 0), 0u);
  EXPECT_NE(csv[0].find("config_hash="), std::string::npos);
  EXPECT_NE(csv[0].find("seed=101"), std::string::npos);
  EXPECT_EQ(csv[1], "x1,x2,x3,x4,x5,x6,x7,x8,happiness");
  const auto truth = detail::read_json_file(path("j8.truth.json").string());
  EXPECT_EQ(truth.at("planted_ranking"), (Json{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(truth.at("provenance").at("seed"), 101);
}

TEST_F(Cli, SynthIsByteIdenticalOnRerun) {
  ASSERT_EQ(run("synth --quiet --config " + q(path("j8.json")) + " --out " + q(path("again.csv")))
                .code,
            0);
  EXPECT_EQ(slurp(path("again.csv")), slurp(path("j8.csv")));
  EXPECT_EQ(slurp(path("again.truth.json")), slurp(path("j8.truth.json")));
}

TEST_F(Cli, SeedFlagChangesOutput) {
  ASSERT_EQ(run("synth --quiet --seed 5 --config " + q(path("j8.json")) + " --out " +
                q(path("seed5.csv")))
                .code,
            0);
  const auto text = slurp(path("seed5.csv"));
  EXPECT_NE(text, slurp(path("j8.csv")));
  EXPECT_NE(text.find("seed=5"), std::string::npos);
}

TEST_F(Cli, SynthRejectsNegativeWeight) {
  auto cfg = synth_config(50, 3);
  cfg["synth"]["weights"] = {0.5, -0.3, 0.8};
  write(path("bad.json"), cfg.dump());
  auto r = run("synth --config " + q(path("bad.json")) + " --out " + q(path("bad.csv")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("synth.weights[1]"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(path("bad.csv")));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("synth --config " + q(path("absent.json"))).code, 3);
  write(path("broken.json"), "{\"version\": 1,");
  EXPECT_EQ(run("synth --config " + q(path("broken.json"))).code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train --no-such-flag").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("--version").code, 0);
  EXPECT_EQ(run("explain --checkpoint " + q(path("absent.model.json")) + " --data " +
                q(path("j8.csv")))
                .code,
            3);
}

TEST_F(Cli, TrainLabelOnlyHistoryHasZeroExplanationLoss) {
  const auto hist = lines_of(slurp(path("j8.model.history.csv")));
  ASSERT_EQ(hist.size(), 4u);
  EXPECT_EQ(hist[0].rfind("# dkg", 0), 0u);
  EXPECT_EQ(hist[1], "epoch,l_label,l_exp,val_micro_f1");
  for (std::size_t i = 2; i < hist.size(); ++i) {
    std::vector<std::string> cells;
    std::stringstream ss(hist[i]);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_EQ(std::stod(cells[2]), 0.0);
  }
  const auto cp = detail::read_json_file(path("j8.model.json").string());
  EXPECT_EQ(cp.at("provenance").at("command"), "train");
}

TEST_F(Cli, TrainBannerEchoesDefaults) {
  write(path("defaults.json"), Json{{"version", 1}, {"train", {{"epochs", 1}}}}.dump());
  auto r = run("train --config " + q(path("defaults.json")) + " --data " + q(path("j8.csv")) +
               " --out " + q(path("defaults.model.json")));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("lr=0.0001"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("batch=128"), std::string::npos);
  EXPECT_NE(r.output.find("seed=101"), std::string::npos);
  EXPECT_NE(r.output.find("mode=label_only"), std::string::npos);
}

TEST_F(Cli, QuietSuppressesProgress) {
  write(path("quiet.json"), Json{{"version", 1}, {"train", {{"epochs", 1}}}}.dump());
  auto r = run("train --quiet --config " + q(path("quiet.json")) + " --data " +
               q(path("j8.csv")) + " --out " + q(path("quiet.model.json")));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output, "");
}

TEST_F(Cli, TrainRejectsMismatchedKnowledge) {
  Json attr{{"factors", {"a", "b"}}, {"importance", {0.2, 0.8}}};
  write(path("ab.json"), attr.dump());
  ASSERT_EQ(run("knowledge --quiet --attributions " + q(path("ab.json")) + " --k 1 --out " +
                q(path("ab.dk.json")))
                .code,
            0);
  auto r = run("train --config " + q(path("j8.json")) + " --data " + q(path("j8.csv")) +
               " --knowledge " + q(path("ab.dk.json")) + " --out " + q(path("never.json")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("FactorMismatch"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(path("never.json")));
}

TEST_F(Cli, ExactExplainSatisfiesEfficiency) {
  auto r = run("explain --exact --rows 20 --checkpoint " + q(path("j8.model.json")) + " --data " +
               q(path("j8.csv")) + " --out " + q(path("exact.json")));
  ASSERT_EQ(r.code, 0) << r.output;
  std::size_t seen = 0;
  for (const auto& line : lines_of(r.output)) {
    const auto at = line.find("efficiency residual ");
    if (at == std::string::npos) continue;
    ++seen;
    EXPECT_LT(std::abs(std::stod(line.substr(at + 20))), 1e-9) << line;
  }
  EXPECT_EQ(seen, 20u);
  const auto doc = detail::read_json_file(path("exact.json").string());
  EXPECT_EQ(doc.at("method"), "exact");
  EXPECT_EQ(doc.at("attributions").size(), 20u);
  EXPECT_EQ(doc.at("importance").size(), 8u);
  const auto ranking = lines_of(slurp(path("exact.ranking.csv")));
  ASSERT_EQ(ranking.size(), 10u);
  EXPECT_EQ(ranking[1], "rank,factor,index,score");
}

TEST_F(Cli, SampledExplainTracksExact) {
  const std::string common = " --rows 5 --checkpoint " + q(path("j8.model.json")) + " --data " +
                             q(path("j8.csv"));
  ASSERT_EQ(run("explain --quiet --exact" + common + " --out " + q(path("e5.json"))).code, 0);
  ASSERT_EQ(run("explain --quiet --sampled 2000" + common + " --out " + q(path("s5.json"))).code,
            0);
  const auto e = detail::read_json_file(path("e5.json").string()).at("attributions");
  const auto s = detail::read_json_file(path("s5.json").string()).at("attributions");
  ASSERT_EQ(e.size(), s.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    ASSERT_EQ(e[i].at("row_index"), s[i].at("row_index"));
    const auto pe = e[i].at("phi").get<std::vector<double>>();
    const auto ps = s[i].at("phi").get<std::vector<double>>();
    double max_abs = 0.0, max_dev = 0.0;
    for (std::size_t j = 0; j < pe.size(); ++j) {
      max_abs = std::max(max_abs, std::abs(pe[j]));
      max_dev = std::max(max_dev, std::abs(pe[j] - ps[j]));
    }
    EXPECT_LE(max_dev, 0.02 * max_abs) << "row " << i;
  }
}

TEST_F(Cli, ExactExplainGuardsFactorCount) {
  write(path("j25.json"), synth_config(40, 25).dump());
  ASSERT_EQ(run("synth --quiet --config " + q(path("j25.json")) + " --out " + q(path("j25.csv")))
                .code,
            0);
  ASSERT_EQ(run("train --quiet --config " + q(path("j25.json")) + " --data " +
                q(path("j25.csv")) + " --out " + q(path("j25.model.json")))
                .code,
            0);
  auto r = run("explain --exact --checkpoint " + q(path("j25.model.json")) + " --data " +
               q(path("j25.csv")) + " --out " + q(path("j25.attr.json")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("TooManyFactors"), std::string::npos) << r.output;
}

TEST_F(Cli, KnowledgeFusesSources) {
  write(path("s1.json"), Json{{"factors", {"a", "b"}}, {"importance", {0.2, 0.8}}}.dump());
  write(path("s2.json"), Json{{"factors", {"a", "b"}}, {"importance", {0.4, 0.6}}}.dump());
  ASSERT_EQ(run("knowledge --quiet --attributions " + q(path("s1.json")) + " " +
                q(path("s2.json")) + " --accuracies 1 1 --k 1 --out " + q(path("fused.json")))
                .code,
            0);
  const auto dk = detail::read_json_file(path("fused.json").string());
  const auto exp = dk.at("exp").get<std::vector<double>>();
  ASSERT_EQ(exp.size(), 2u);
  EXPECT_NEAR(exp[0], 0.3, 1e-12);
  EXPECT_NEAR(exp[1], 0.7, 1e-12);
  EXPECT_EQ(dk.at("provenance").at("command"), "knowledge");
}

TEST_F(Cli, KnowledgeIdenticalRankingsKeepTopK) {
  const Json factors{"a", "b", "c", "d"};
  write(path("r1.json"), Json{{"factors", factors}, {"importance", {0.4, 0.3, 0.2, 0.1}}}.dump());
  write(path("r2.json"), Json{{"factors", factors}, {"importance", {0.8, 0.5, 0.3, 0.0}}}.dump());
  ASSERT_EQ(run("knowledge --quiet --attributions " + q(path("r1.json")) + " " +
                q(path("r2.json")) + " --k 2 --out " + q(path("same.json")))
                .code,
            0);
  const auto dk = detail::read_json_file(path("same.json").string());
  EXPECT_EQ(dk.at("s_pri"), (Json{0, 1}));
  EXPECT_EQ(dk.at("s_sec"), (Json{2, 3}));
}

TEST_F(Cli, KnowledgeRejectsMismatchedFactors) {
  write(path("m1.json"), Json{{"factors", {"a", "b"}}, {"importance", {0.2, 0.8}}}.dump());
  write(path("m2.json"), Json{{"factors", {"a", "c"}}, {"importance", {0.4, 0.6}}}.dump());
  auto r = run("knowledge --attributions " + q(path("m1.json")) + " " + q(path("m2.json")) +
               " --k 1 --out " + q(path("mm.json")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("FactorMismatch"), std::string::npos);
  r = run("knowledge --attributions " + q(path("m1.json")) + " --k 3 --out " +
          q(path("mm.json")));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("InvalidK"), std::string::npos);
}

TEST_F(Cli, ExplainThenKnowledgeThenJointTrain) {
  ASSERT_EQ(run("explain --quiet --sampled 20 --rows 30 --checkpoint " +
                q(path("j8.model.json")) + " --data " + q(path("j8.csv")) + " --out " +
                q(path("a1.json")))
                .code,
            0);
  ASSERT_EQ(run("knowledge --quiet --attributions " + q(path("a1.json")) + " --k 3 --out " +
                q(path("j8.dk.json")))
                .code,
            0);
  auto r = run("train --config " + q(path("j8.json")) + " --data " + q(path("j8.csv")) +
               " --knowledge " + q(path("j8.dk.json")) + " --out " + q(path("joint.json")));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("mode=joint"), std::string::npos);
  const auto hist = lines_of(slurp(path("joint.history.csv")));
  ASSERT_GE(hist.size(), 3u);
  EXPECT_GT(std::stod(hist[2].substr(hist[2].find(',', hist[2].find(',') + 1) + 1)), 0.0);
}

Json report_config() {
  auto cfg = synth_config(150, 4);
  cfg["models"] = {{{"kind", "LR"}}, {{"id", "mlp"}, {"kind", "MoMLP"}, {"hidden", {6}}}};
  cfg["train"] = {{"epochs", 2}, {"learning_rate", 0.01}, {"batch_size", 32}};
  cfg["loss"] = {{"probe_size", 4}, {"permutations", 2}};
  cfg["attribution"] = {{"sample_cap", 10}, {"permutations", 10}};
  return cfg;
}

TEST_F(Cli, ReportWritesJsonCsvAndSummary) {
  write(path("report.json"), report_config().dump(2));
  const auto out = path("rep");
  auto r = run("report --config " + q(path("report.json")) + " --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = lines_of(slurp(out / "folds.csv"));
  ASSERT_EQ(csv.size(), 2u + 2 * 2 * 5);
  EXPECT_EQ(csv[1], "group,model,condition,fold,macro_f1,micro_f1,mean_tau");
  std::size_t lr_without = 0;
  for (const auto& line : csv) {
    if (line.find(",LR,without_dk,") != std::string::npos) ++lr_without;
  }
  EXPECT_EQ(lr_without, 5u);
  const auto md = slurp(out / "summary.md");
  EXPECT_NE(md.find("Macro"), std::string::npos);
  EXPECT_NE(md.find("**"), std::string::npos);
  const auto doc = detail::read_json_file((out / "report.json").string());
  EXPECT_EQ(doc.at("provenance").at("command"), "report");

  auto again = run("report --quiet --config " + q(path("report.json")) + " --out " +
                   q(path("rep2")), "DKG_THREADS=2");
  ASSERT_EQ(again.code, 0) << again.output;
  EXPECT_EQ(slurp(out / "report.json"), slurp(path("rep2") / "report.json"));
  EXPECT_EQ(slurp(out / "folds.csv"), slurp(path("rep2") / "folds.csv"));
}

TEST_F(Cli, ReportDryRunTouchesNothing) {
  write(path("dry.json"), report_config().dump(2));
  auto r = run("report --dry-run --config " + q(path("dry.json")) + " --out " + q(path("dry")));
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("plan:"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("dry")));
}

TEST_F(Cli, ReportRejectsBadThreadsAndSingleModel) {
  write(path("threads.json"), report_config().dump(2));
  EXPECT_EQ(run("report --config " + q(path("threads.json")) + " --out " + q(path("t")),
                "DKG_THREADS=zero")
                .code,
            2);
  auto one = report_config();
  one["models"] = {{{"kind", "LR"}}};
  write(path("one.json"), one.dump(2));
  EXPECT_EQ(run("report --config " + q(path("one.json")) + " --out " + q(path("o"))).code, 2);
}

TEST(CliConfigs, ShippedConfigsValidate) {
  for (const auto& entry : fs::directory_iterator(DKG_CONFIGS)) {
    if (entry.path().extension() != ".json") continue;
    auto r = run("report --dry-run --config " + q(entry.path()));
    EXPECT_EQ(r.code, 0) << entry.path() << "\n" << r.output;
  }
}

}  // namespace
}  // namespace dkg
