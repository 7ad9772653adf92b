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

// End-to-end experiments driven by an ExperimentConfig: data preparation,
// training, evaluation, attacks, local-vs-federated comparison and report
// files.

#ifndef STFED_EXPERIMENT_H_
#define STFED_EXPERIMENT_H_

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "stfed/attacks.h"
#include "stfed/config.h"
#include "stfed/data.h"
#include "stfed/protocol.h"

namespace stfed {

inline constexpr const char* kSplitNames[] = {"train", "valid", "test"};

// Raw panels as configured: synthetic data from the config seed, or CSV
// files.
SyntheticData LoadPanels(const ExperimentConfig& config);

// Preprocessed panels and the aligned windows of each split. Windows point
// into the panels, so the object is neither copyable nor movable.
struct PreparedData {
  PreparedData() = default;
  PreparedData(const PreparedData&) = delete;
  PreparedData& operator=(const PreparedData&) = delete;

  PreprocessedPanel active;
  std::vector<PreprocessedPanel> passive;
  std::unique_ptr<AlignedWindows> train;
  std::unique_ptr<AlignedWindows> valid;
  std::unique_ptr<AlignedWindows> test;

  // "train", "valid" or "test"; anything else throws Error.
  const AlignedWindows& Split(const std::string& name) const;
};

std::unique_ptr<PreparedData> PrepareData(const ExperimentConfig& config);
std::unique_ptr<PreparedData> PrepareData(const ExperimentConfig& config,
                                          const SyntheticData& panels);

std::unique_ptr<Federation> BuildFederation(const ExperimentConfig& config,
                                            const PreparedData& data);

struct SplitMetrics {
  std::string split;
  Metrics metrics;
};

// De-normalized metrics on every split. Noise generators are reseeded from
// the config seed first so evaluation is reproducible on its own.
std::vector<SplitMetrics> EvaluateSplits(const ExperimentConfig& config,
                                         Federation& federation,
                                         const PreparedData& data);
Metrics EvaluateSplit(const ExperimentConfig& config, Federation& federation,
                      const PreparedData& data, const std::string& split);

struct TrainOutcome {
  std::unique_ptr<Federation> federation;
  TrainResult result;
  Transcript transcript;
  AuditReport audit;
  std::vector<SplitMetrics> metrics;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

TrainOutcome RunTraining(const ExperimentConfig& config,
                         const PreparedData& data);

// Representative test samples of the attacked party and the node values
// published for them.
struct AttackTargets {
  std::vector<std::size_t> indices;  // test window indices
  Tensor truth;                      // (K, N^P, T * F), scaled
  Tensor targets;                    // (K, N^A, levels * H)
};

AttackTargets MakeAttackTargets(const ExperimentConfig& config,
                                const PreparedData& data,
                                Federation& federation);

AttackReport RunAttack(const ExperimentConfig& config,
                       const PreparedData& data, Federation& federation,
                       AttackKind kind, const AttackTargets& targets);

// ---------------------------------------------------------------------------
// Reports.

struct CsvRow {
  std::string config;
  std::string split;
  std::string metric;
  double value = 0.0;
};

nlohmann::json MetricsToJson(const Metrics& m);
nlohmann::json TrainResultToJson(const TrainResult& r);

// One row per (split, metric) for MAE, RMSE and SMAPE.
std::vector<CsvRow> MetricRows(const std::string& config_name,
                               const std::vector<SplitMetrics>& metrics);

void WriteCsvRows(const std::filesystem::path& path,
                  const std::vector<CsvRow>& rows);
void WriteJson(const std::filesystem::path& path, const nlohmann::json& j);

nlohmann::json TrainingReport(const ExperimentConfig& config,
                              const TrainOutcome& outcome);

struct CompareResult {
  nlohmann::json report;
  std::vector<CsvRow> rows;
  double local_test_mae = 0.0;  // averaged over seeds
  double full_test_mae = 0.0;
};

// Trains the local-only and the federated configuration for every compare
// seed (fresh synthetic data per seed) and tabulates the uplift.
CompareResult RunCompare(const ExperimentConfig& config);

}  // namespace stfed

#endif  // STFED_EXPERIMENT_H_
