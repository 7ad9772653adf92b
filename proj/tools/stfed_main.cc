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

// Command-line harness: gen-data, train, evaluate, attack, audit, compare.
//
// Exit status: 0 on success, 1 on a module error, 2 on a config error, 3
// when `audit` finds violations. Errors are printed to stderr as JSON.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "stfed/attacks.h"
#include "stfed/checkpoint.h"
#include "stfed/config.h"
#include "stfed/experiment.h"
#include "stfed/protocol.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stfed;

constexpr int kModuleError = 1;
constexpr int kConfigError = 2;
constexpr int kAuditViolations = 3;

void Print(const json& j) { std::cout << j.dump(2) << std::endl; }

fs::path OutputDir(const ExperimentConfig& config, const std::string& flag) {
  fs::path dir = flag.empty() ? fs::path(config.output_dir) : fs::path(flag);
  fs::create_directories(dir);
  return dir;
}

json ReadJsonFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

int GenData(const std::string& config_path, const std::string& out) {
  const ExperimentConfig config = LoadConfig(config_path);
  const fs::path dir = OutputDir(config, out);
  const SyntheticData panels = LoadPanels(config);
  json data = {{"source", "csv"},
               {"history", config.data.history},
               {"horizon", config.data.horizon},
               {"split", config.data.split}};
  WriteCsv(panels.active, dir / "active.csv", dir / "active_locations.csv");
  data["active"] = {{"series", (dir / "active.csv").string()},
                    {"locations", (dir / "active_locations.csv").string()},
                    {"minutes_per_step", panels.active.minutes_per_step}};
  data["passive"] = json::array();
  for (std::size_t j = 0; j < panels.passive.size(); ++j) {
    const std::string stem = "passive" + std::to_string(j + 1);
    WriteCsv(panels.passive[j], dir / (stem + ".csv"),
             dir / (stem + "_locations.csv"));
    data["passive"].push_back(
        {{"series", (dir / (stem + ".csv")).string()},
         {"locations", (dir / (stem + "_locations.csv")).string()},
         {"minutes_per_step", panels.passive[j].minutes_per_step}});
  }
  WriteJson(dir / "data_section.json", data);
  Print({{"output_dir", dir.string()},
         {"active_series", panels.active.num_series},
         {"active_steps", panels.active.num_steps},
         {"passive_parties", panels.passive.size()},
         {"data_section", (dir / "data_section.json").string()}});
  return 0;
}

int TrainCommand(const std::string& config_path, const std::string& out) {
  const ExperimentConfig config = LoadConfig(config_path);
  const fs::path dir = OutputDir(config, out);
  const auto data = PrepareData(config);
  const TrainOutcome outcome = RunTraining(config, *data);
  const json report = TrainingReport(config, outcome);
  WriteJson(dir / "report.json", report);
  WriteCsvRows(dir / "metrics.csv",
               MetricRows(config.local_only ? "local" : "federated",
                          outcome.metrics));
  SaveCheckpoint(dir / "model", outcome.federation->Parameters(),
                 ConfigToJson(config));
  if (config.audit.record) {
    WriteJson(dir / "transcript.json", outcome.transcript.ToJson());
  }
  Print({{"output_dir", dir.string()},
         {"metrics", report.at("metrics")},
         {"best_epoch", outcome.result.best_epoch},
         {"audit_ok", outcome.audit.ok()}});
  return 0;
}

std::unique_ptr<Federation> Restore(const ExperimentConfig& config,
                                    const PreparedData& data,
                                    const std::string& checkpoint) {
  auto federation = BuildFederation(config, data);
  LoadCheckpoint(checkpoint, federation->Parameters());
  return federation;
}

int EvaluateCommand(const std::string& checkpoint, const std::string& split) {
  const ExperimentConfig config =
      ParseConfig(ReadCheckpointManifest(checkpoint).at("config"));
  const auto data = PrepareData(config);
  auto federation = Restore(config, *data, checkpoint);
  const Metrics m = EvaluateSplit(config, *federation, *data, split);
  Print({{"split", split}, {"metrics", MetricsToJson(m)}});
  return 0;
}

int AttackCommand(const std::string& config_path,
                  const std::string& checkpoint) {
  const ExperimentConfig config = LoadConfig(config_path);
  const fs::path dir = OutputDir(config, "");
  const auto data = PrepareData(config);
  auto federation = Restore(config, *data, checkpoint);
  const AttackTargets targets = MakeAttackTargets(config, *data, *federation);
  const AttackReport report =
      RunAttack(config, *data, *federation, config.attack.kind, targets);
  json j = report.ToJson(true);
  j["sample_indices"] = targets.indices;
  j["config"] = ConfigToJson(config);
  j["seed"] = config.seed;
  const fs::path path =
      dir / ("attack_" + AttackKindName(config.attack.kind) + ".json");
  WriteJson(path, j);
  Print({{"report", path.string()},
         {"method", report.method},
         {"infoleak", report.infoleak},
         {"scaled_mae", report.scaled_mae}});
  return 0;
}

int AuditCommand(const std::string& transcript_path) {
  const Transcript transcript =
      Transcript::FromJson(ReadJsonFile(transcript_path));
  const AuditReport report = AuditTranscript(transcript);
  Print(report.ToJson());
  return report.ok() ? 0 : kAuditViolations;
}

int CompareCommand(const std::string& config_path) {
  const ExperimentConfig config = LoadConfig(config_path);
  const fs::path dir = OutputDir(config, "");
  const CompareResult result = RunCompare(config);
  WriteJson(dir / "compare.json", result.report);
  WriteCsvRows(dir / "compare.csv", result.rows);
  Print(result.report.at("uplift"));
  return 0;
}

int Fail(const std::string& type, const std::string& message,
         const std::string& key, int code) {
  json error = {{"type", type}, {"message", message}};
  if (!key.empty()) error["key"] = key;
  std::cerr << json{{"error", error}}.dump(2) << std::endl;
  return code;
}

std::string ErrorType(const std::exception& e) {
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const ProtocolError*>(&e)) return "protocol";
  if (dynamic_cast<const AttackError*>(&e)) return "attack";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split-learning spatiotemporal federated forecasting lab"};
  app.require_subcommand(1);
  std::string config_path, out, checkpoint, split = "test", transcript;

  auto* gen = app.add_subcommand("gen-data", "Write the configured data as CSV");
  gen->add_option("--config", config_path, "Experiment config")->required();
  gen->add_option("--out", out, "Output directory");

  auto* train = app.add_subcommand("train", "Train, evaluate and audit");
  train->add_option("--config", config_path, "Experiment config")->required();
  train->add_option("--out", out, "Output directory");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint prefix")->required();
  eval->add_option("--split", split, "train, valid or test")
      ->check(CLI::IsMember({"train", "valid", "test"}));

  auto* attack = app.add_subcommand("attack", "Run a reconstruction attack");
  attack->add_option("--config", config_path, "Experiment config")->required();
  attack->add_option("--checkpoint", checkpoint, "Checkpoint prefix")
      ->required();

  auto* audit = app.add_subcommand("audit", "Audit a message transcript");
  audit->add_option("--transcript", transcript, "Transcript JSON")->required();

  auto* compare =
      app.add_subcommand("compare", "Local-only versus federated uplift");
  compare->add_option("--config", config_path, "Experiment config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return GenData(config_path, out);
    if (train->parsed()) return TrainCommand(config_path, out);
    if (eval->parsed()) return EvaluateCommand(checkpoint, split);
    if (attack->parsed()) return AttackCommand(config_path, checkpoint);
    if (audit->parsed()) return AuditCommand(transcript);
    if (compare->parsed()) return CompareCommand(config_path);
  } catch (const ConfigError& e) {
    return Fail("config", e.what(), e.key(), kConfigError);
  } catch (const std::exception& e) {
    return Fail(ErrorType(e), e.what(), "", kModuleError);
  }
  return kModuleError;
}
