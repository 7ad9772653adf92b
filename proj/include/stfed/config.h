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

// Experiment configuration with a strict JSON schema: unknown keys and
// mistyped values are rejected with the full key path.

#ifndef STFED_CONFIG_H_
#define STFED_CONFIG_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stfed/attacks.h"
#include "stfed/data.h"
#include "stfed/parameter.h"
#include "stfed/protocol.h"
#include "stfed/vna.h"

namespace stfed {

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error("config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

inline constexpr int kSchemaVersion = 1;

struct CsvSource {
  std::string series;
  std::string locations;
  double minutes_per_step = 30.0;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "csv"
  SyntheticOptions synthetic;
  CsvSource active;
  std::vector<CsvSource> passive;
  std::size_t history = 12;
  std::size_t horizon = 3;
  std::array<std::size_t, 3> split{8, 1, 1};
};

enum class AttackKind { kWhitebox, kQueryFree, kMean, kRandomGuess };

std::string AttackKindName(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::kWhitebox;
  std::size_t party = 0;     // index of the attacked passive party
  std::size_t samples = 16;  // k-means representatives from the test split
  std::size_t levels = 1;    // published levels the attacker matches
  WhiteboxOptions whitebox;
  std::size_t surrogate_epochs = 10;
  std::size_t surrogate_batch = 32;
  GuessDistribution guess = GuessDistribution::kNormal;
};

struct AuditConfig {
  bool record = true;
  bool scan_payloads = false;
  bool retain_payloads = false;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DataConfig data;
  ModelConfig model;
  DpConfig dp;
  bool noise_in_training = true;
  bool local_only = false;
  AdamOptions adam;
  TrainConfig train;
  AttackConfig attack;
  AuditConfig audit;
  // Seeds averaged by `compare`; empty means just `seed`.
  std::vector<std::uint64_t> compare_seeds;
};

ExperimentConfig ParseConfig(const nlohmann::json& j);
ExperimentConfig LoadConfig(const std::filesystem::path& path);
// Complete config with every default spelled out; ParseConfig(ToJson(c))
// reproduces c.
nlohmann::json ConfigToJson(const ExperimentConfig& config);

}  // namespace stfed

#endif  // STFED_CONFIG_H_
