// SPDX-License-Identifier: Apache-2.0
#include "dkg/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace dkg {
namespace {

Json minimal() {
  return Json::parse(R"({
    "version": 1,
    "seed": 7,
    "synth": {"rows": 100, "factors": 3, "levels": 3, "weights": [0.5, 0.3, 0.2], "noise": 0.1},
    "models": [{"kind": "LR"}, {"id": "mlp", "kind": "MoMLP", "hidden": [16, 8]}]
  })");
}

std::string error_text(const Json& j) {
  try {
    parse_run_config(j);
  } catch (const Error& e) {
    return std::string(to_string(e.kind())) + " " + e.what();
  }
  return "ok";
}

TEST(RunConfig, DefaultsAndSeedPropagation) {
  auto c = parse_run_config(minimal());
  EXPECT_EQ(c.seed, 7u);
  ASSERT_TRUE(c.synth.has_value());
  EXPECT_EQ(c.synth->seed, 7u);
  EXPECT_EQ(c.data.levels, 3);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.attribution.seed, 7u);
  EXPECT_EQ(c.train.learning_rate, 1e-4);
  EXPECT_EQ(c.folds, 5u);
  ASSERT_EQ(c.models.size(), 2u);
  EXPECT_EQ(c.models[0].id, "LR");
  EXPECT_EQ(c.models[1].spec.hidden, (std::vector<std::size_t>{16, 8}));
  EXPECT_EQ(c.loss.mode, LossMode::Joint);
  EXPECT_FALSE(c.loss.weight.has_value());
  EXPECT_EQ(c.hash.size(), 16u);
}

TEST(RunConfig, HashTracksContent) {
  auto a = parse_run_config(minimal());
  auto j = minimal();
  j["seed"] = 8;
  EXPECT_NE(parse_run_config(j).hash, a.hash);
  EXPECT_EQ(parse_run_config(minimal()).hash, a.hash);
}

TEST(RunConfig, FullDocument) {
  auto j = minimal();
  j["group"] = {{"factor", "x1"}, {"threshold", 0.0}, {"side", "gt"},
                {"in_name", "high"}, {"out_name", "low"}};
  j["train"] = {{"epochs", 3}, {"learning_rate", 0.01}, {"batch_size", 16}};
  j["loss"] = {{"weight", 0.5}, {"temperature", 0.02}, {"probe_size", 8}};
  j["attribution"] = {{"method", "sampled"}, {"permutations", 50}};
  j["experiment"] = {{"folds", 3}, {"top_k", 1}, {"valid_fraction", 0.25}};
  j["paths"] = {{"out", "runs/x"}};
  auto c = parse_run_config(j);
  ASSERT_TRUE(c.group.has_value());
  EXPECT_EQ(c.group->in_name, "high");
  EXPECT_EQ(std::get<ThresholdRule>(c.group->rule).side, Side::Greater);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(*c.loss.weight, 0.5);
  EXPECT_EQ(c.attribution.method, AttributionMethod::Sampled);
  EXPECT_EQ(c.folds, 3u);
  EXPECT_EQ(*c.out_path, "runs/x");
  auto opt = c.experiment_options(2);
  EXPECT_EQ(opt.threads, 2u);
  EXPECT_EQ(opt.config_hash, c.hash);
}

TEST(RunConfig, ErrorsNameTheField) {
  auto j = minimal();
  j["synth"]["weights"] = {0.5, -0.3, 0.8};
  EXPECT_NE(error_text(j).find("synth.weights[1]"), std::string::npos);

  j = minimal();
  j["train"] = {{"learning_rate", 0}};
  EXPECT_NE(error_text(j).find("train.learning_rate"), std::string::npos);

  j = minimal();
  j["models"][1]["kind"] = "BiLSTM";
  EXPECT_NE(error_text(j).find("models[1].kind"), std::string::npos);

  j = minimal();
  j["colour"] = "blue";
  EXPECT_NE(error_text(j).find("colour: unknown key"), std::string::npos);

  j = minimal();
  j["models"][1]["id"] = "LR";
  EXPECT_NE(error_text(j).find("duplicate"), std::string::npos);

  j = minimal();
  j["group"] = {{"factor", "x1"}};
  EXPECT_NE(error_text(j).find("InvalidConfig"), std::string::npos);
}

TEST(RunConfig, VersionMismatch) {
  auto j = minimal();
  j["version"] = 2;
  EXPECT_EQ(error_text(j).rfind("SchemaVersionMismatch", 0), 0u);
}

TEST(RunConfig, LoadFromFile) {
  auto dir = std::filesystem::temp_directory_path() / "dkg_config_test";
  std::filesystem::create_directories(dir);
  auto good = dir / "run.json";
  std::ofstream(good) << minimal().dump(2);
  EXPECT_EQ(load_run_config(good.string()).seed, 7u);
  auto broken = dir / "broken.json";
  std::ofstream(broken) << "{\"version\": 1,";
  try {
    load_run_config(broken.string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
  try {
    load_run_config((dir / "none.json").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IoError);
  }
}

TEST(RunConfig, ShippedConfigsParse) {
  for (const auto& entry : std::filesystem::directory_iterator(DKG_CONFIGS)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_run_config(entry.path().string())) << entry.path();
  }
}

}  // namespace
}  // namespace dkg
