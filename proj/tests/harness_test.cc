// Copyright 2026 The stfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"
#include "stfed/checkpoint.h"
#include "stfed/config.h"
#include "stfed/experiment.h"
#include "support/temp_dir.h"

namespace stfed {
namespace {

using nlohmann::json;
using testing::ReadFile;
using testing::TempDir;

json TinyConfig(std::uint64_t seed, const std::string& output_dir) {
  json j = json::parse(R"({
    "schema_version": 1,
    "data": {
      "source": "synthetic",
      "history": 4,
      "horizon": 2,
      "synthetic": {"num_active": 3, "num_passive": 4, "num_steps": 160}
    },
    "model": {"hidden": 8, "knn": 2, "adaptive_rank": 3},
    "dp": {"epsilon": "inf"},
    "train": {"epochs": 2, "batch_size": 16, "max_batches_per_epoch": 3},
    "attack": {"kind": "mean", "samples": 4}
  })");
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  return j;
}

ExperimentConfig Tiny(std::uint64_t seed = 1) {
  return ParseConfig(TinyConfig(seed, "unused"));
}

std::string ConfigErrorKey(const json& j) {
  try {
    ParseConfig(j);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

TEST(Config, DefaultsAndRoundTrip) {
  const ExperimentConfig c = Tiny(4);
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.model.hidden, 8u);
  EXPECT_EQ(c.data.synthetic.horizon, 2u);
  EXPECT_TRUE(std::isinf(c.dp.epsilon));
  const json once = ConfigToJson(c);
  EXPECT_EQ(ConfigToJson(ParseConfig(once)), once);
}

TEST(Config, FiniteEpsilonAndEnums) {
  json j = TinyConfig(1, "x");
  j["dp"]["epsilon"] = 8;
  j["attack"]["kind"] = "queryfree";
  j["attack"]["guess"] = "uniform";
  const ExperimentConfig c = ParseConfig(j);
  EXPECT_EQ(c.dp.epsilon, 8.0);
  EXPECT_EQ(c.attack.kind, AttackKind::kQueryFree);
  EXPECT_EQ(c.attack.guess, GuessDistribution::kUniform);
}

TEST(Config, UnknownKeyIsRejectedWithItsPath) {
  json j = TinyConfig(1, "x");
  j["model"]["hiden"] = 8;
  EXPECT_EQ(ConfigErrorKey(j), "model.hiden");
  json top = TinyConfig(1, "x");
  top["sed"] = 1;
  EXPECT_EQ(ConfigErrorKey(top), "sed");
}

TEST(Config, WrongTypesAndValuesNameTheKey) {
  json j = TinyConfig(1, "x");
  j["train"]["epochs"] = "many";
  EXPECT_EQ(ConfigErrorKey(j), "train.epochs");
  j = TinyConfig(1, "x");
  j["attack"]["kind"] = "oracle";
  EXPECT_EQ(ConfigErrorKey(j), "attack.kind");
  j = TinyConfig(1, "x");
  j["dp"]["epsilon"] = -1;
  EXPECT_EQ(ConfigErrorKey(j), "dp.epsilon");
  j = TinyConfig(1, "x");
  j["schema_version"] = 2;
  EXPECT_EQ(ConfigErrorKey(j), "schema_version");
}

TEST(Checkpoint, RoundTripRestoresValues) {
  TempDir dir;
  Parameter a("a", Tensor::FromRows({{1.5, -2.0}}));
  Parameter b("b", Tensor::FromRows({{0.1}, {1e-300}, {-7.0}}));
  SaveCheckpoint(dir / "m", {&a, &b}, json{{"seed", 3}});
  const Tensor a0 = a.value, b0 = b.value;
  a.value = Tensor::Zeros({1, 2});
  b.value = Tensor::Zeros({3, 1});
  EXPECT_EQ(LoadCheckpoint(dir / "m", {&a, &b}), (json{{"seed", 3}}));
  EXPECT_EQ(a.value, a0);
  EXPECT_EQ(b.value, b0);
  EXPECT_EQ(ReadCheckpointManifest(dir / "m").at("format"), "stfed-checkpoint");
}

TEST(Checkpoint, MismatchesAreRejected) {
  TempDir dir;
  Parameter a("a", Tensor::FromRows({{1.5, -2.0}}));
  SaveCheckpoint(dir / "m", {&a}, json::object());
  Parameter renamed("z", Tensor::Zeros({1, 2}));
  EXPECT_THROW(LoadCheckpoint(dir / "m", {&renamed}), CheckpointError);
  Parameter reshaped("a", Tensor::Zeros({2, 1}));
  EXPECT_THROW(LoadCheckpoint(dir / "m", {&reshaped}), CheckpointError);
  Parameter extra("b", Tensor::Zeros({1, 1}));
  EXPECT_THROW(LoadCheckpoint(dir / "m", {&a, &extra}), CheckpointError);
  EXPECT_THROW(LoadCheckpoint(dir / "missing", {&a}), CheckpointError);
}

TEST(Reports, MetricJsonAndCsvRows) {
  Metrics m;
  m.mae = 1.5;
  m.rmse = std::sqrt(2.5);
  m.count = 2;
  const json j = MetricsToJson(m);
  EXPECT_EQ(j.at("MAE"), 1.5);
  EXPECT_EQ(j.at("count"), 2);

  std::vector<SplitMetrics> splits;
  for (const char* s : kSplitNames) splits.push_back({s, m});
  std::vector<CsvRow> rows = MetricRows("local", splits);
  const auto more = MetricRows("federated", splits);
  rows.insert(rows.end(), more.begin(), more.end());
  EXPECT_EQ(rows.size(), 2u * 3u * 3u);

  TempDir dir;
  WriteCsvRows(dir / "m.csv", rows);
  std::istringstream in(ReadFile(dir / "m.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "config,split,metric,value");
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 18u);
}

TEST(Experiment, TrainingReportCarriesTheAudit) {
  ExperimentConfig c = Tiny(2);
  const auto data = PrepareData(c);
  const TrainOutcome out = RunTraining(c, *data);
  EXPECT_TRUE(out.audit.ok());
  EXPECT_GT(out.audit.forward_values, 0u);
  const json report = TrainingReport(c, out);
  EXPECT_EQ(report.at("audit").at("forward_values"), out.audit.forward_values);
  EXPECT_EQ(report.at("seed"), 2);
  for (const char* s : kSplitNames) {
    EXPECT_TRUE(report.at("metrics").contains(s)) << s;
  }
  // Evaluation does not depend on what ran before it.
  const Metrics again = EvaluateSplit(c, *out.federation, *data, "test");
  EXPECT_EQ(again.mae, out.metrics[2].metrics.mae);
}

TEST(Experiment, AttackTargetsHaveThePublishedShape) {
  ExperimentConfig c = Tiny(3);
  const auto data = PrepareData(c);
  auto fed = BuildFederation(c, *data);
  const AttackTargets t = MakeAttackTargets(c, *data, *fed);
  ASSERT_EQ(t.indices.size(), 4u);
  EXPECT_EQ(t.truth.shape(), (Shape{4, 4, 8}));
  EXPECT_EQ(t.targets.shape(), (Shape{4, 3, 8}));
  const AttackReport r = RunAttack(c, *data, *fed, AttackKind::kMean, t);
  EXPECT_EQ(r.distances.size(), 4u);
}

// ---------------------------------------------------------------------------
// Command line.

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult RunCli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(STFED_CLI_PATH) + " " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = ReadFile(out);
  r.err = ReadFile(err);
  return r;
}

TEST(Cli, GenDataIsByteReproducible) {
  TempDir dir;
  const auto cfg = dir.Write("c.json", TinyConfig(7, "unused").dump());
  ASSERT_EQ(RunCli(dir, "gen-data --config " + cfg.string() + " --out " +
                            (dir / "a").string())
                .code,
            0);
  ASSERT_EQ(RunCli(dir, "gen-data --config " + cfg.string() + " --out " +
                            (dir / "b").string())
                .code,
            0);
  for (const char* f : {"active.csv", "passive1.csv", "active_locations.csv"}) {
    const std::string a = ReadFile(dir / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, ReadFile(dir / "b" / f)) << f;
  }
}

TEST(Cli, MalformedConfigNamesTheKey) {
  TempDir dir;
  json j = TinyConfig(1, (dir / "o").string());
  j["train"]["epocs"] = 3;
  const auto cfg = dir.Write("c.json", j.dump());
  const RunResult r = RunCli(dir, "train --config " + cfg.string());
  EXPECT_EQ(r.code, 2);
  const json err = json::parse(r.err).at("error");
  EXPECT_EQ(err.at("type"), "config");
  EXPECT_EQ(err.at("key"), "train.epocs");
}

TEST(Cli, TrainEvaluateAndAuditAgree) {
  TempDir dir;
  const auto cfg =
      dir.Write("c.json", TinyConfig(5, (dir / "o").string()).dump());
  const RunResult train = RunCli(dir, "train --config " + cfg.string());
  ASSERT_EQ(train.code, 0) << train.err;
  const json report = json::parse(ReadFile(dir / "o" / "report.json"));

  const RunResult eval = RunCli(
      dir, "evaluate --checkpoint " + (dir / "o" / "model").string());
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_EQ(json::parse(eval.out).at("metrics").at("MAE"),
            report.at("metrics").at("test").at("MAE"));

  const RunResult audit = RunCli(
      dir, "audit --transcript " + (dir / "o" / "transcript.json").string());
  EXPECT_EQ(audit.code, 0) << audit.out;
  EXPECT_EQ(json::parse(audit.out).at("forward_values"),
            report.at("audit").at("forward_values"));
}

}  // namespace
}  // namespace stfed
