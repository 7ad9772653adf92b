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

#include "stfed/experiment.h"

#include <chrono>
#include <fstream>
#include <numeric>

#include "stfed/random.h"

namespace stfed {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<const TimeSeriesPanel*> PassivePointers(
    const std::vector<PreprocessedPanel>& panels,
    TimeSeriesPanel PreprocessedPanel::*split) {
  std::vector<const TimeSeriesPanel*> out;
  for (const auto& p : panels) out.push_back(&(p.*split));
  return out;
}

json AuditSummary(const AuditReport& audit, bool recorded) {
  json j = audit.ToJson();
  j["recorded"] = recorded;
  return j;
}

}  // namespace

SyntheticData LoadPanels(const ExperimentConfig& config) {
  const DataConfig& d = config.data;
  if (d.source == "synthetic") {
    SyntheticOptions options = d.synthetic;
    options.horizon = d.horizon;
    return GenerateSynthetic(config.seed, options);
  }
  SyntheticData panels;
  panels.active = LoadCsv(d.active.series, d.active.locations,
                          d.active.minutes_per_step, PartyRole::kActive, 0);
  for (std::size_t j = 0; j < d.passive.size(); ++j) {
    panels.passive.push_back(LoadCsv(d.passive[j].series,
                                     d.passive[j].locations,
                                     d.passive[j].minutes_per_step,
                                     PartyRole::kPassive,
                                     static_cast<int>(j + 1)));
  }
  return panels;
}

const AlignedWindows& PreparedData::Split(const std::string& name) const {
  if (name == "train") return *train;
  if (name == "valid") return *valid;
  if (name == "test") return *test;
  throw Error("unknown split '" + name + "' (expected train, valid or test)");
}

std::unique_ptr<PreparedData> PrepareData(const ExperimentConfig& config) {
  return PrepareData(config, LoadPanels(config));
}

std::unique_ptr<PreparedData> PrepareData(const ExperimentConfig& config,
                                          const SyntheticData& panels) {
  auto data = std::make_unique<PreparedData>();
  data->active = Preprocess(panels.active, config.data.split);
  for (const auto& p : panels.passive) {
    data->passive.push_back(Preprocess(p, config.data.split));
  }
  const std::size_t history = config.data.history;
  const std::size_t horizon = config.data.horizon;
  data->train = std::make_unique<AlignedWindows>(
      data->active.train, PassivePointers(data->passive, &PreprocessedPanel::train),
      history, horizon);
  data->valid = std::make_unique<AlignedWindows>(
      data->active.valid, PassivePointers(data->passive, &PreprocessedPanel::valid),
      history, horizon);
  data->test = std::make_unique<AlignedWindows>(
      data->active.test, PassivePointers(data->passive, &PreprocessedPanel::test),
      history, horizon);
  return data;
}

std::unique_ptr<Federation> BuildFederation(const ExperimentConfig& config,
                                            const PreparedData& data) {
  FederationSpec spec = MakeSpec(*data.train, config.model, config.dp,
                                 config.local_only, config.seed);
  spec.adam = config.adam;
  spec.noise_in_training = config.noise_in_training;
  return std::make_unique<Federation>(spec);
}

Metrics EvaluateSplit(const ExperimentConfig& config, Federation& federation,
                      const PreparedData& data, const std::string& split) {
  const SeedStreams streams(config.seed);
  for (std::size_t j = 0; j < federation.num_passive(); ++j) {
    federation.passive(j).noise_rng() = streams.Stream("dp-noise-eval", j + 1);
  }
  return Evaluate(federation, data.Split(split), data.active.scaler);
}

std::vector<SplitMetrics> EvaluateSplits(const ExperimentConfig& config,
                                         Federation& federation,
                                         const PreparedData& data) {
  std::vector<SplitMetrics> out;
  for (const char* split : kSplitNames) {
    out.push_back({split, EvaluateSplit(config, federation, data, split)});
  }
  return out;
}

TrainOutcome RunTraining(const ExperimentConfig& config,
                         const PreparedData& data) {
  TrainOutcome out;
  out.federation = BuildFederation(config, data);
  out.transcript.meta = out.federation->Meta();
  out.transcript.scan_payloads = config.audit.scan_payloads;
  out.transcript.retain_payloads = config.audit.retain_payloads;
  const auto start = Clock::now();
  out.result = Train(*out.federation, *data.train, *data.valid, config.train,
                     config.audit.record ? &out.transcript : nullptr);
  out.train_seconds = SecondsSince(start);
  out.audit = AuditTranscript(out.transcript);
  const auto eval_start = Clock::now();
  out.metrics = EvaluateSplits(config, *out.federation, data);
  out.eval_seconds = SecondsSince(eval_start);
  return out;
}

AttackTargets MakeAttackTargets(const ExperimentConfig& config,
                                const PreparedData& data,
                                Federation& federation) {
  const AttackConfig& a = config.attack;
  if (a.party >= federation.num_passive()) {
    throw AttackError("attack.party " + std::to_string(a.party) +
                      " does not exist (the federation has " +
                      std::to_string(federation.num_passive()) +
                      " passive parties)");
  }
  const AlignedWindows& test = *data.test;
  std::vector<std::size_t> all(test.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor samples = test.PassiveInputs(a.party, all);
  AttackTargets t;
  t.indices = SelectRepresentatives(samples, std::min(a.samples, test.size()),
                                    config.seed);
  t.truth = test.PassiveInputs(a.party, t.indices);
  PassiveParty& party = federation.passive(a.party);
  party.noise_rng() = SeedStreams(config.seed).Stream("attack-publish");
  const std::vector<Tensor> published =
      party.Publish(t.truth, party.dp().noisy());
  Tape tape;
  std::vector<Var> used;
  for (std::size_t l = 0; l < a.levels; ++l) {
    used.push_back(tape.Constant(published.at(l)));
  }
  t.targets = ConcatCols(used).value();
  return t;
}

AttackReport RunAttack(const ExperimentConfig& config,
                       const PreparedData& data, Federation& federation,
                       AttackKind kind, const AttackTargets& targets) {
  const AttackConfig& a = config.attack;
  PassiveParty& party = federation.passive(a.party);
  const std::size_t features = data.test->passive(a.party).num_features;
  WhiteboxOptions wb = a.whitebox;
  wb.seed = config.seed;
  switch (kind) {
    case AttackKind::kWhitebox:
      return WhiteboxAttack(
          targets.targets, targets.truth,
          ClippedNodeMap(party.model(), party.dp().clip, a.levels), features,
          wb);
    case AttackKind::kQueryFree: {
      if (a.levels != 1) {
        throw AttackError("the query-free attack matches level 0 only; set "
                          "attack.levels to 1");
      }
      QueryFreeOptions q;
      q.epochs = a.surrogate_epochs;
      q.batch_size = a.surrogate_batch;
      q.adam = config.adam;
      q.seed = config.seed;
      q.whitebox = wb;
      const FederationSpec& spec = federation.spec();
      return QueryFreeAttack(targets.targets, targets.truth,
                             ShadowFromWindows(*data.train, a.party),
                             federation.active().model(), a.party,
                             spec.passive[a.party], spec.active.coordinates,
                             spec.model, party.dp().clip, q);
    }
    case AttackKind::kMean:
      return MeanAttack(targets.truth);
    case AttackKind::kRandomGuess:
      return RandomGuessAttack(targets.truth, a.guess, config.seed);
  }
  throw AttackError("unknown attack kind");
}

json MetricsToJson(const Metrics& m) {
  return {{"MAE", m.mae}, {"RMSE", m.rmse}, {"SMAPE", m.smape},
          {"count", m.count}};
}

json TrainResultToJson(const TrainResult& r) {
  json history = json::array();
  for (const EpochRecord& e : r.history) {
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"valid_mae_scaled", e.valid_mae},
                       {"gate_means", e.gate_means}});
  }
  return {{"best_epoch", r.best_epoch},
          {"best_valid_mae_scaled", r.best_valid_mae},
          {"early_stopped", r.early_stopped},
          {"history", history}};
}

std::vector<CsvRow> MetricRows(const std::string& config_name,
                               const std::vector<SplitMetrics>& metrics) {
  std::vector<CsvRow> rows;
  for (const SplitMetrics& s : metrics) {
    rows.push_back({config_name, s.split, "MAE", s.metrics.mae});
    rows.push_back({config_name, s.split, "RMSE", s.metrics.rmse});
    rows.push_back({config_name, s.split, "SMAPE", s.metrics.smape});
  }
  return rows;
}

void WriteCsvRows(const std::filesystem::path& path,
                  const std::vector<CsvRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "config,split,metric,value\n";
  for (const CsvRow& r : rows) {
    out << r.config << ',' << r.split << ',' << r.metric << ',' << r.value
        << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

void WriteJson(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

json TrainingReport(const ExperimentConfig& config,
                    const TrainOutcome& outcome) {
  json metrics = json::object();
  for (const SplitMetrics& s : outcome.metrics) {
    metrics[s.split] = MetricsToJson(s.metrics);
  }
  return {{"seed", config.seed},
          {"config", ConfigToJson(config)},
          {"metrics", metrics},
          {"training", TrainResultToJson(outcome.result)},
          {"audit", AuditSummary(outcome.audit, config.audit.record)},
          {"dp", {{"epsilon_per_publication",
                   config.dp.noisy() ? json(config.dp.epsilon) : json("inf")},
                  {"delta", config.dp.delta},
                  {"clip", config.dp.clip},
                  {"noise_std", config.dp.NoiseStd()}}},
          {"timings_seconds",
           {{"train", outcome.train_seconds},
            {"evaluate", outcome.eval_seconds}}}};
}

CompareResult RunCompare(const ExperimentConfig& config) {
  std::vector<std::uint64_t> seeds = config.compare_seeds;
  if (seeds.empty()) seeds.push_back(config.seed);
  CompareResult out;
  json runs = json::array();
  double local_sum = 0.0;
  double full_sum = 0.0;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig c = config;
    c.seed = seed;
    const auto data = PrepareData(c);
    json run = {{"seed", seed}};
    for (bool local : {true, false}) {
      c.local_only = local;
      const TrainOutcome o = RunTraining(c, *data);
      const std::string name = std::string(local ? "local" : "federated") +
                               "/seed" + std::to_string(seed);
      const auto rows = MetricRows(name, o.metrics);
      out.rows.insert(out.rows.end(), rows.begin(), rows.end());
      json metrics = json::object();
      for (const SplitMetrics& s : o.metrics) {
        metrics[s.split] = MetricsToJson(s.metrics);
      }
      run[local ? "local" : "federated"] = {
          {"metrics", metrics},
          {"best_epoch", o.result.best_epoch},
          {"audit", AuditSummary(o.audit, c.audit.record)},
          {"train_seconds", o.train_seconds}};
      (local ? local_sum : full_sum) += o.metrics[2].metrics.mae;
    }
    runs.push_back(run);
  }
  const double n = static_cast<double>(seeds.size());
  out.local_test_mae = local_sum / n;
  out.full_test_mae = full_sum / n;
  out.report = {{"seed", config.seed},
                {"config", ConfigToJson(config)},
                {"runs", runs},
                {"uplift",
                 {{"local_test_mae", out.local_test_mae},
                  {"federated_test_mae", out.full_test_mae},
                  {"ratio", out.full_test_mae / out.local_test_mae},
                  {"seeds", seeds.size()}}}};
  return out;
}

}  // namespace stfed
