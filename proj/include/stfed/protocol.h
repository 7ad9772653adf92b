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

// Split-learning collaboration between one active party and any number of
// passive parties. Each party owns its parameters, optimizer and tape; the
// only values that cross a party boundary are per-item (N^A, H) virtual
// node matrices going forward and their gradients coming back, and every
// one of them is logged in a Transcript.

#ifndef STFED_PROTOCOL_H_
#define STFED_PROTOCOL_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stfed/data.h"
#include "stfed/local_models.h"
#include "stfed/parameter.h"
#include "stfed/tape.h"
#include "stfed/vna.h"

namespace stfed {

class ProtocolError : public Error {
 public:
  using Error::Error;
};

enum class PredictFrom { kFused, kSpatial };

struct ModelConfig {
  std::size_t hidden = 32;
  std::size_t temporal_layers = 2;
  std::size_t spatial_layers = 2;
  std::size_t knn = 5;
  std::size_t heads = 2;
  std::size_t adaptive_rank = 10;
  std::size_t head_value_width = 0;
  // Inner width of the prediction head; 0 means `hidden`.
  std::size_t head_inner = 0;
  double adjacency_threshold = 0.1;
  Activation spatial_activation = Activation::kRelu;
  PredictFrom predict_from = PredictFrom::kFused;
};

// One alignment level: passive level `passive_source` (0 = h_T, m = o_m)
// is fused into the output of active spatial layer `active_layer`
// (1-based).
struct AlignmentLevel {
  std::size_t passive_source = 0;
  std::size_t active_layer = 1;
};

// L = M_s levels: (h_T -> o_1), (o_1 -> o_2), ...
std::vector<AlignmentLevel> WireLevels(std::size_t spatial_layers);

// ---------------------------------------------------------------------------
// Transcript.

enum class Direction { kForwardVirtualNode, kBackwardGradient };

struct Message {
  Direction direction = Direction::kForwardVirtualNode;
  std::size_t step = 0;
  std::size_t level = 0;
  int party = 0;
  std::size_t item = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t value_count = 0;
  std::size_t byte_size = 0;
  // Leaf kinds the payload copies directly (through value-preserving ops).
  std::vector<std::string> provenance;
  // Payload rows whose bytes occur verbatim in a parameter array or the
  // party's raw input.
  std::size_t scan_hits = 0;
  std::vector<double> payload;  // empty unless retained
};

struct TranscriptMeta {
  std::size_t num_active = 0;
  std::size_t hidden = 0;
  std::size_t levels = 0;
  std::size_t passive_parties = 0;
};

struct Transcript {
  TranscriptMeta meta;
  bool retain_payloads = false;
  bool scan_payloads = false;
  std::vector<Message> messages;

  nlohmann::json ToJson() const;
  static Transcript FromJson(const nlohmann::json& j);
};

// Byte-level sources a payload must never reproduce.
struct ScanSources {
  std::vector<std::span<const double>> arrays;
};

// Counts payload rows (all-zero rows skipped) whose bytes appear as a
// contiguous run inside any source array.
std::size_t CountByteMatches(const Tensor& payload, const ScanSources& sources);

// Builds the forward message for item `item` of a published (B, N^A, H) or
// (N^A, H) node, including its provenance and, when `sources` is given, the
// byte scan.
Message MakeForwardMessage(Var published, std::size_t item, std::size_t step,
                           std::size_t level, int party,
                           const ScanSources* sources, bool retain);

struct AuditReport {
  std::size_t steps = 0;
  std::size_t forward_messages = 0;
  std::size_t backward_messages = 0;
  std::size_t forward_values = 0;
  std::size_t backward_values = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
  nlohmann::json ToJson() const;
};

// Shapes, per-step value counts (items * L * N^A * H per passive party),
// forward/backward bijection, provenance and byte-scan hits.
AuditReport AuditTranscript(const Transcript& transcript);

// ---------------------------------------------------------------------------
// Parties.

struct PartyShape {
  std::size_t num_series = 0;
  std::size_t features = 0;
  std::size_t history = 0;
  std::vector<Point> coordinates;
};

class PassiveModel {
 public:
  PassiveModel(const std::string& name, const PartyShape& shape,
               const std::vector<Point>& active_coordinates,
               const ModelConfig& config, std::mt19937_64& rng);

  // Virtual nodes (before protection) for the first `levels` alignment
  // levels.
  std::vector<Var> VirtualNodes(Binder& b, Var window, std::size_t levels);
  ParameterList Parameters();
  std::size_t num_levels() const { return generators.size(); }

  TemporalStack temporal;
  SpatialStack spatial;
  std::vector<VirtualNodeGenerator> generators;
};

class PassiveParty {
 public:
  // Replaces the published node of a level; lets tests model a faulty party.
  using PayloadOverride =
      std::function<Var(Binder& b, Var window, std::size_t level)>;

  PassiveParty(int party_id, const PartyShape& shape,
               const std::vector<Point>& active_coordinates,
               const ModelConfig& config, const DpConfig& dp,
               const AdamOptions& adam, std::uint64_t seed);
  PassiveParty(const PassiveParty&) = delete;
  PassiveParty& operator=(const PassiveParty&) = delete;

  // Runs the local model on a fresh tape and returns the protected node of
  // every level, each (B, N^A, H).
  std::vector<Tensor> Publish(const Tensor& window, bool add_noise);
  // Resumes the tape from the returned gradients (one per published level).
  void ApplyGradients(const std::vector<Tensor>& gradients,
                      bool apply_update);

  std::vector<Message> ForwardMessages(std::size_t step, bool scan,
                                       bool retain);

  int id() const { return id_; }
  PassiveModel& model() { return model_; }
  const DpConfig& dp() const { return dp_; }
  ParameterList Parameters() { return model_.Parameters(); }
  std::size_t levels() const { return levels_; }
  void set_payload_override(PayloadOverride f) { override_ = std::move(f); }
  std::mt19937_64& noise_rng() { return noise_rng_; }

 private:
  int id_;
  std::size_t levels_;
  PassiveModel model_;
  DpConfig dp_;
  Adam optimizer_;
  std::mt19937_64 noise_rng_;
  PayloadOverride override_;
  std::unique_ptr<Tape> tape_;
  Var window_;
  std::vector<Var> published_;
};

class ActiveModel {
 public:
  ActiveModel(const PartyShape& shape, std::size_t horizon,
              std::size_t out_features, std::size_t passive_parties,
              const ModelConfig& config, std::mt19937_64& rng,
              std::mt19937_64& gate_rng);

  // received[p][l]: virtual node of passive party p at level l. `gates`, if
  // given, receives the gate activations in the same layout.
  Var Forward(Binder& b, Var window,
              const std::vector<std::vector<Var>>& received,
              std::vector<std::vector<Var>>* gates = nullptr);
  ParameterList Parameters();

  TemporalStack temporal;
  SpatialStack spatial;
  PredictionHead head;
  std::vector<std::vector<GatedFusion>> gates;  // [party][level]
  PredictFrom predict_from = PredictFrom::kFused;
};

class ActiveParty {
 public:
  ActiveParty(const PartyShape& shape, std::size_t horizon,
              std::size_t out_features, std::size_t passive_parties,
              const ModelConfig& config, const AdamOptions& adam,
              std::uint64_t seed);
  ActiveParty(const ActiveParty&) = delete;
  ActiveParty& operator=(const ActiveParty&) = delete;

  // received[p][l] must be (B, N^A, H); otherwise ProtocolError naming the
  // level.
  Tensor Forward(const Tensor& window,
                 const std::vector<std::vector<Tensor>>& received);
  // Mean absolute error against `labels`; fills gradients with respect to
  // every received node and updates local parameters when asked.
  double Backward(const Tensor& labels,
                  std::vector<std::vector<Tensor>>& gradients,
                  bool apply_update);

  ActiveModel& model() { return model_; }
  ParameterList Parameters() { return model_.Parameters(); }
  // Mean gate activation per level over parties, from the last forward.
  std::vector<double> GateMeans() const;

 private:
  ActiveModel model_;
  Adam optimizer_;
  std::unique_ptr<Tape> tape_;
  std::vector<std::vector<Var>> received_;
  std::vector<std::vector<Var>> gates_;
  Var prediction_;
};

// ---------------------------------------------------------------------------
// Orchestration.

struct FederationSpec {
  PartyShape active;
  std::size_t horizon = 3;
  std::size_t out_features = 1;
  std::vector<PartyShape> passive;  // empty = local-only model
  ModelConfig model;
  DpConfig dp;
  bool noise_in_training = true;
  AdamOptions adam;
  std::uint64_t seed = 0;
};

// Shapes taken from the windows of a split; passive parties are dropped
// when `local_only` is set.
FederationSpec MakeSpec(const AlignedWindows& windows, const ModelConfig& model,
                        const DpConfig& dp, bool local_only,
                        std::uint64_t seed);

struct Batch {
  Tensor active;
  std::vector<Tensor> passive;
  Tensor labels;
};

Batch MakeBatch(const AlignedWindows& windows,
                std::span<const std::size_t> indices);

class Federation {
 public:
  explicit Federation(const FederationSpec& spec);

  // One forward round: passive publications, then the active prediction
  // (B, N^A, horizon * F_out). Messages go to `transcript` when given.
  Tensor Forward(const Batch& batch, bool training, Transcript* transcript);
  // One backward round after Forward; returns the MAE loss.
  double Backward(const Tensor& labels, Transcript* transcript,
                  bool apply_update = true);
  double TrainStep(const Batch& batch, Transcript* transcript);

  std::size_t levels() const { return levels_; }
  std::size_t step() const { return step_; }
  std::size_t num_passive() const { return passive_.size(); }
  ActiveParty& active() { return *active_; }
  PassiveParty& passive(std::size_t i) { return *passive_.at(i); }
  const FederationSpec& spec() const { return spec_; }
  TranscriptMeta Meta() const;
  ParameterList Parameters();

 private:
  FederationSpec spec_;
  std::size_t levels_;
  std::size_t step_ = 0;
  std::unique_ptr<ActiveParty> active_;
  std::vector<std::unique_ptr<PassiveParty>> passive_;
};

// ---------------------------------------------------------------------------
// Training and evaluation.

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double smape = 0.0;
  std::size_t count = 0;
};

// SMAPE terms with a zero denominator contribute 0.
Metrics ComputeMetrics(std::span<const double> truth,
                       std::span<const double> prediction);

struct TrainConfig {
  std::size_t epochs = 250;
  std::size_t batch_size = 32;
  std::size_t patience = 25;
  // 0 = every batch of the split.
  std::size_t max_batches_per_epoch = 0;
  bool shuffle = true;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_mae = 0.0;
  std::vector<double> gate_means;  // per level
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_valid_mae = 0.0;
  bool early_stopped = false;
};

// Mini-batch training with validation-MAE model selection; the best
// parameters are restored on return. Non-finite loss throws ProtocolError
// naming the epoch and batch.
TrainResult Train(Federation& federation, const AlignedWindows& train,
                  const AlignedWindows& valid, const TrainConfig& config,
                  Transcript* transcript = nullptr);

// Predictions for every window, (W, N^A, horizon * F_out), scaled space.
Tensor Predict(Federation& federation, const AlignedWindows& windows,
               std::size_t batch_size = 64);

// Metrics on de-normalized predictions.
Metrics Evaluate(Federation& federation, const AlignedWindows& windows,
                 const ScalerState& active_scaler,
                 std::size_t batch_size = 64);

}  // namespace stfed

#endif  // STFED_PROTOCOL_H_
