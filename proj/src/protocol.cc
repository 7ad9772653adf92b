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

#include "stfed/protocol.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "stfed/random.h"

namespace stfed {

std::vector<AlignmentLevel> WireLevels(std::size_t spatial_layers) {
  if (spatial_layers == 0) {
    throw Error("alignment needs at least one spatial layer");
  }
  std::vector<AlignmentLevel> plan;
  for (std::size_t l = 0; l < spatial_layers; ++l) {
    plan.push_back({l, l + 1});
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Transcript.

namespace {

const char* DirectionName(Direction d) {
  return d == Direction::kForwardVirtualNode ? "forward-vn" : "backward-grad";
}

Direction ParseDirection(const std::string& s) {
  if (s == "forward-vn") return Direction::kForwardVirtualNode;
  if (s == "backward-grad") return Direction::kBackwardGradient;
  throw Error("transcript: unknown message direction '" + s + "'");
}

}  // namespace

nlohmann::json Transcript::ToJson() const {
  nlohmann::json j;
  j["meta"] = {{"num_active", meta.num_active},
               {"hidden", meta.hidden},
               {"levels", meta.levels},
               {"passive_parties", meta.passive_parties}};
  j["retain_payloads"] = retain_payloads;
  j["scan_payloads"] = scan_payloads;
  nlohmann::json list = nlohmann::json::array();
  for (const Message& m : messages) {
    nlohmann::json e = {{"direction", DirectionName(m.direction)},
                        {"step", m.step},
                        {"level", m.level},
                        {"party", m.party},
                        {"item", m.item},
                        {"rows", m.rows},
                        {"cols", m.cols},
                        {"value_count", m.value_count},
                        {"byte_size", m.byte_size},
                        {"provenance", m.provenance},
                        {"scan_hits", m.scan_hits}};
    if (!m.payload.empty()) e["payload"] = m.payload;
    list.push_back(std::move(e));
  }
  j["messages"] = std::move(list);
  return j;
}

Transcript Transcript::FromJson(const nlohmann::json& j) {
  Transcript t;
  try {
    const auto& meta = j.at("meta");
    t.meta.num_active = meta.at("num_active").get<std::size_t>();
    t.meta.hidden = meta.at("hidden").get<std::size_t>();
    t.meta.levels = meta.at("levels").get<std::size_t>();
    t.meta.passive_parties = meta.at("passive_parties").get<std::size_t>();
    t.retain_payloads = j.value("retain_payloads", false);
    t.scan_payloads = j.value("scan_payloads", false);
    for (const auto& e : j.at("messages")) {
      Message m;
      m.direction = ParseDirection(e.at("direction").get<std::string>());
      m.step = e.at("step").get<std::size_t>();
      m.level = e.at("level").get<std::size_t>();
      m.party = e.at("party").get<int>();
      m.item = e.at("item").get<std::size_t>();
      m.rows = e.at("rows").get<std::size_t>();
      m.cols = e.at("cols").get<std::size_t>();
      m.value_count = e.at("value_count").get<std::size_t>();
      m.byte_size = e.at("byte_size").get<std::size_t>();
      m.provenance = e.at("provenance").get<std::vector<std::string>>();
      m.scan_hits = e.at("scan_hits").get<std::size_t>();
      if (e.contains("payload")) {
        m.payload = e.at("payload").get<std::vector<double>>();
      }
      t.messages.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("transcript: malformed JSON: ") + ex.what());
  }
  return t;
}

std::size_t CountByteMatches(const Tensor& payload,
                             const ScanSources& sources) {
  const std::size_t cols = payload.cols();
  const std::size_t rows = payload.size() / cols;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = payload.values().data() + r * cols;
    if (std::all_of(row, row + cols, [](double v) { return v == 0.0; })) {
      continue;
    }
    bool found = false;
    for (const auto& src : sources.arrays) {
      if (src.size() < cols) continue;
      for (std::size_t i = 0; i + cols <= src.size() && !found; ++i) {
        if (std::memcmp(&src[i], row, sizeof(double)) == 0 &&
            std::memcmp(&src[i], row, cols * sizeof(double)) == 0) {
          found = true;
        }
      }
      if (found) break;
    }
    if (found) ++hits;
  }
  return hits;
}

Message MakeForwardMessage(Var published, std::size_t item, std::size_t step,
                           std::size_t level, int party,
                           const ScanSources* sources, bool retain) {
  const Tensor& value = published.value();
  Tensor payload;
  if (value.rank() == 3) {
    payload = value.BatchSlice(item);
  } else if (item == 0) {
    payload = value;
  } else {
    throw ProtocolError("unbatched publication has no item " +
                        std::to_string(item));
  }
  Message m;
  m.direction = Direction::kForwardVirtualNode;
  m.step = step;
  m.level = level;
  m.party = party;
  m.item = item;
  m.rows = payload.rows();
  m.cols = payload.cols();
  m.value_count = payload.size();
  m.byte_size = payload.size() * sizeof(double);
  for (LeafKind k : published.tape()->DirectProvenance(published.id())) {
    m.provenance.emplace_back(LeafKindName(k));
  }
  if (sources != nullptr) m.scan_hits = CountByteMatches(payload, *sources);
  if (retain) m.payload.assign(payload.values().begin(), payload.values().end());
  return m;
}

nlohmann::json AuditReport::ToJson() const {
  return {{"ok", ok()},
          {"steps", steps},
          {"forward_messages", forward_messages},
          {"backward_messages", backward_messages},
          {"forward_values", forward_values},
          {"backward_values", backward_values},
          {"violations", violations}};
}

AuditReport AuditTranscript(const Transcript& transcript) {
  const TranscriptMeta& meta = transcript.meta;
  AuditReport report;
  constexpr std::size_t kMaxListed = 50;
  std::size_t suppressed = 0;
  auto violation = [&](std::string text) {
    if (report.violations.size() < kMaxListed) {
      report.violations.push_back(std::move(text));
    } else {
      ++suppressed;
    }
  };

  using Key = std::tuple<int, std::size_t, std::size_t>;  // party, item, level
  struct StepData {
    std::map<Key, int> forward;
    std::map<Key, int> backward;
  };
  std::map<std::size_t, StepData> steps;

  for (const Message& m : transcript.messages) {
    const bool fwd = m.direction == Direction::kForwardVirtualNode;
    const std::string where = std::string(DirectionName(m.direction)) +
                              " step " + std::to_string(m.step) + " party " +
                              std::to_string(m.party) + " level " +
                              std::to_string(m.level) + " item " +
                              std::to_string(m.item);
    if (fwd) {
      ++report.forward_messages;
      report.forward_values += m.value_count;
    } else {
      ++report.backward_messages;
      report.backward_values += m.value_count;
    }
    if (m.rows != meta.num_active || m.cols != meta.hidden) {
      violation(where + ": payload shape (" + std::to_string(m.rows) + ", " +
                std::to_string(m.cols) + ") is not (N^A, H) = (" +
                std::to_string(meta.num_active) + ", " +
                std::to_string(meta.hidden) + ")");
    }
    if (m.value_count != m.rows * m.cols ||
        m.byte_size != m.value_count * sizeof(double) ||
        (!m.payload.empty() && m.payload.size() != m.value_count)) {
      violation(where + ": value count or byte size inconsistent with shape");
    }
    if (m.level >= meta.levels) {
      violation(where + ": level outside the alignment plan");
    }
    if (m.party < 1 || static_cast<std::size_t>(m.party) > meta.passive_parties) {
      violation(where + ": unknown passive party");
    }
    for (const std::string& p : m.provenance) {
      if (p == "parameter" || p == "raw-input") {
        violation(where + ": payload copies " + p + " values");
      }
    }
    if (m.scan_hits > 0) {
      violation(where + ": " + std::to_string(m.scan_hits) +
                " payload row(s) match parameter or raw-input bytes");
    }
    auto& counts = fwd ? steps[m.step].forward : steps[m.step].backward;
    ++counts[{m.party, m.item, m.level}];
  }

  report.steps = steps.size();
  const std::size_t per_level = meta.num_active * meta.hidden;
  for (const auto& [step, data] : steps) {
    const std::string where = "step " + std::to_string(step);
    std::map<int, std::set<std::size_t>> items;
    std::map<int, std::size_t> values;
    for (const auto& [key, n] : data.forward) {
      const auto& [party, item, level] = key;
      items[party].insert(item);
      values[party] += static_cast<std::size_t>(n) * per_level;
      if (n != 1) {
        violation(where + ": " + std::to_string(n) +
                  " forward messages for party " + std::to_string(party) +
                  " item " + std::to_string(item) + " level " +
                  std::to_string(level));
      }
      auto it = data.backward.find(key);
      if (it == data.backward.end() || it->second != 1) {
        violation(where + ": forward message for party " +
                  std::to_string(party) + " item " + std::to_string(item) +
                  " level " + std::to_string(level) +
                  " lacks exactly one backward message");
      }
    }
    for (const auto& [key, n] : data.backward) {
      if (!data.forward.contains(key)) {
        violation(where + ": backward message for party " +
                  std::to_string(std::get<0>(key)) + " item " +
                  std::to_string(std::get<1>(key)) + " level " +
                  std::to_string(std::get<2>(key)) +
                  " has no forward message");
      }
    }
    if (items.size() != meta.passive_parties) {
      violation(where + ": " + std::to_string(items.size()) +
                " passive parties published, expected " +
                std::to_string(meta.passive_parties));
    }
    for (const auto& [party, set] : items) {
      const std::size_t expected = set.size() * meta.levels * per_level;
      if (values[party] != expected) {
        violation(where + ": party " + std::to_string(party) + " sent " +
                  std::to_string(values[party]) + " forward values, expected " +
                  std::to_string(expected) + " (items * L * N^A * H)");
      }
    }
  }
  if (suppressed > 0) {
    report.violations.push_back("... and " + std::to_string(suppressed) +
                                " more violations");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Passive party.

PassiveModel::PassiveModel(const std::string& name, const PartyShape& shape,
                           const std::vector<Point>& active_coordinates,
                           const ModelConfig& config, std::mt19937_64& rng)
    : temporal(name + "/temporal", shape.features, shape.history,
               config.hidden, config.temporal_layers, rng),
      spatial(name + "/spatial",
              BuildAdjacency(shape.coordinates, config.adjacency_threshold),
              config.hidden, config.spatial_layers, config.spatial_activation,
              rng) {
  if (shape.coordinates.size() != shape.num_series) {
    throw ShapeError("passive party needs one coordinate per series");
  }
  const Tensor knn = KnnMatrix(
      DistanceMatrix(active_coordinates, shape.coordinates), config.knn);
  VnaDims dims;
  dims.num_passive = shape.num_series;
  dims.num_active = active_coordinates.size();
  dims.passive_hidden = config.hidden;
  dims.active_hidden = config.hidden;
  dims.heads = config.heads;
  dims.adaptive_rank = config.adaptive_rank;
  dims.head_value_width = config.head_value_width;
  const auto plan = WireLevels(config.spatial_layers);
  for (std::size_t l = 0; l < plan.size(); ++l) {
    generators.emplace_back(name + "/vna" + std::to_string(l), dims, knn, rng);
  }
}

std::vector<Var> PassiveModel::VirtualNodes(Binder& b, Var window,
                                            std::size_t levels) {
  if (levels > generators.size()) {
    throw Error("passive model has only " + std::to_string(generators.size()) +
                " alignment levels");
  }
  std::vector<Var> out;
  Var z = temporal.Forward(b, window);
  for (std::size_t l = 0; l < levels; ++l) {
    if (l > 0) z = spatial.Layer(b, l - 1, z);
    out.push_back(generators[l].Generate(b, z));
  }
  return out;
}

ParameterList PassiveModel::Parameters() {
  ParameterList out;
  temporal.AppendParameters(out);
  spatial.AppendParameters(out);
  for (auto& g : generators) g.AppendParameters(out);
  return out;
}

PassiveParty::PassiveParty(int party_id, const PartyShape& shape,
                           const std::vector<Point>& active_coordinates,
                           const ModelConfig& config, const DpConfig& dp,
                           const AdamOptions& adam, std::uint64_t seed)
    : id_(party_id),
      levels_(config.spatial_layers),
      model_([&]() -> PassiveModel {
        auto rng = SeedStreams(seed).Stream("init", party_id);
        return PassiveModel("passive" + std::to_string(party_id), shape,
                            active_coordinates, config, rng);
      }()),
      dp_(dp),
      optimizer_(adam),
      noise_rng_(SeedStreams(seed).Stream("dp-noise", party_id)) {
  dp_.Validate();
}

std::vector<Tensor> PassiveParty::Publish(const Tensor& window,
                                          bool add_noise) {
  tape_ = std::make_unique<Tape>();
  Binder b(*tape_);
  window_ = tape_->Input(window);
  published_.clear();
  if (override_) {
    for (std::size_t l = 0; l < levels_; ++l) {
      published_.push_back(override_(b, window_, l));
    }
  } else {
    for (Var v : model_.VirtualNodes(b, window_, levels_)) {
      published_.push_back(DpProtect(v, dp_, noise_rng_, add_noise).published);
    }
  }
  std::vector<Tensor> out;
  for (Var v : published_) out.push_back(v.value());
  return out;
}

void PassiveParty::ApplyGradients(const std::vector<Tensor>& gradients,
                                  bool apply_update) {
  if (!tape_) throw ProtocolError("passive party has no forward to resume");
  if (gradients.size() != published_.size()) {
    throw ProtocolError("party " + std::to_string(id_) + " received " +
                        std::to_string(gradients.size()) +
                        " backward messages for " +
                        std::to_string(published_.size()) +
                        " published levels");
  }
  std::vector<std::pair<Var, Tensor>> seeds;
  for (std::size_t l = 0; l < published_.size(); ++l) {
    if (gradients[l].shape() != published_[l].shape()) {
      throw ProtocolError("party " + std::to_string(id_) + " level " +
                          std::to_string(l) + ": gradient shape " +
                          ShapeToString(gradients[l].shape()) +
                          " does not match publication " +
                          ShapeToString(published_[l].shape()));
    }
    seeds.emplace_back(published_[l], gradients[l]);
  }
  tape_->BackwardFrom(seeds);
  tape_->AccumulateParameterGradients();
  if (apply_update) optimizer_.Step(model_.Parameters());
}

std::vector<Message> PassiveParty::ForwardMessages(std::size_t step, bool scan,
                                                   bool retain) {
  ScanSources sources;
  ParameterList params = model_.Parameters();
  if (scan) {
    for (Parameter* p : params) sources.arrays.push_back(p->value.values());
    sources.arrays.push_back(window_.value().values());
  }
  std::vector<Message> out;
  for (std::size_t l = 0; l < published_.size(); ++l) {
    const std::size_t items = published_[l].value().batch();
    for (std::size_t i = 0; i < items; ++i) {
      out.push_back(MakeForwardMessage(published_[l], i, step, l, id_,
                                       scan ? &sources : nullptr, retain));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Active party.

ActiveModel::ActiveModel(const PartyShape& shape, std::size_t horizon,
                         std::size_t out_features, std::size_t passive_parties,
                         const ModelConfig& config, std::mt19937_64& rng,
                         std::mt19937_64& gate_rng)
    : temporal("active/temporal", shape.features, shape.history, config.hidden,
               config.temporal_layers, rng),
      spatial("active/spatial",
              BuildAdjacency(shape.coordinates, config.adjacency_threshold),
              config.hidden, config.spatial_layers, config.spatial_activation,
              rng),
      head("active/head", config.hidden,
           config.head_inner == 0 ? config.hidden : config.head_inner, horizon,
           out_features, rng),
      predict_from(config.predict_from) {
  const std::size_t levels = WireLevels(config.spatial_layers).size();
  gates.resize(passive_parties);
  for (std::size_t p = 0; p < passive_parties; ++p) {
    for (std::size_t l = 0; l < levels; ++l) {
      gates[p].emplace_back("active/gate_p" + std::to_string(p + 1) + "_l" +
                                std::to_string(l),
                            config.hidden, gate_rng);
    }
  }
}

Var ActiveModel::Forward(Binder& b, Var window,
                         const std::vector<std::vector<Var>>& received,
                         std::vector<std::vector<Var>>* gate_values) {
  if (received.size() != gates.size()) {
    throw ProtocolError("active model expects " + std::to_string(gates.size()) +
                        " passive parties, got " +
                        std::to_string(received.size()));
  }
  if (gate_values != nullptr) {
    gate_values->assign(gates.size(), std::vector<Var>{});
  }
  Var h = temporal.Forward(b, window);
  Var o;
  for (std::size_t l = 0; l < spatial.size(); ++l) {
    o = spatial.Layer(b, l, h);
    Var fused = o;
    for (std::size_t p = 0; p < gates.size(); ++p) {
      if (received[p].size() != gates[p].size()) {
        throw ProtocolError("party " + std::to_string(p + 1) + " sent " +
                            std::to_string(received[p].size()) +
                            " levels, expected " +
                            std::to_string(gates[p].size()));
      }
      Var g;
      fused = gates[p][l].Forward(b, received[p][l], fused, &g);
      if (gate_values != nullptr) (*gate_values)[p].push_back(g);
    }
    h = fused;
  }
  return head.Forward(b, predict_from == PredictFrom::kFused ? h : o);
}

ParameterList ActiveModel::Parameters() {
  ParameterList out;
  temporal.AppendParameters(out);
  spatial.AppendParameters(out);
  head.AppendParameters(out);
  for (auto& party : gates) {
    for (auto& g : party) g.AppendParameters(out);
  }
  return out;
}

namespace {

ActiveModel MakeActiveModel(const PartyShape& shape, std::size_t horizon,
                            std::size_t out_features,
                            std::size_t passive_parties,
                            const ModelConfig& config, std::uint64_t seed) {
  const SeedStreams streams(seed);
  auto rng = streams.Stream("init", 0);
  auto gate_rng = streams.Stream("gates", 0);
  return ActiveModel(shape, horizon, out_features, passive_parties, config,
                     rng, gate_rng);
}

}  // namespace

ActiveParty::ActiveParty(const PartyShape& shape, std::size_t horizon,
                         std::size_t out_features, std::size_t passive_parties,
                         const ModelConfig& config, const AdamOptions& adam,
                         std::uint64_t seed)
    : model_(MakeActiveModel(shape, horizon, out_features, passive_parties,
                             config, seed)),
      optimizer_(adam) {}

Tensor ActiveParty::Forward(const Tensor& window,
                            const std::vector<std::vector<Tensor>>& received) {
  tape_ = std::make_unique<Tape>();
  Binder b(*tape_);
  const std::size_t batch = window.batch();
  const std::size_t na = window.rows();
  const std::size_t hidden = model_.temporal.hidden();
  received_.assign(received.size(), {});
  for (std::size_t p = 0; p < received.size(); ++p) {
    for (std::size_t l = 0; l < received[p].size(); ++l) {
      const Tensor& t = received[p][l];
      const Shape expected = window.rank() == 3 ? Shape{batch, na, hidden}
                                                : Shape{na, hidden};
      if (t.shape() != expected) {
        throw ProtocolError("level " + std::to_string(l) + " from party " +
                            std::to_string(p + 1) + ": payload shape " +
                            ShapeToString(t.shape()) + ", expected " +
                            ShapeToString(expected));
      }
      received_[p].push_back(tape_->Leaf(
          t, LeafKind::kReceived, true,
          "vn p" + std::to_string(p + 1) + " l" + std::to_string(l)));
    }
  }
  prediction_ = model_.Forward(b, tape_->Input(window), received_, &gates_);
  return prediction_.value();
}

double ActiveParty::Backward(const Tensor& labels,
                             std::vector<std::vector<Tensor>>& gradients,
                             bool apply_update) {
  if (!tape_) throw ProtocolError("active party has no forward to resume");
  if (labels.shape() != prediction_.shape()) {
    throw ShapeError("labels " + ShapeToString(labels.shape()) +
                     " do not match prediction " +
                     ShapeToString(prediction_.shape()));
  }
  Var loss = Mean(Abs(Sub(prediction_, tape_->Constant(labels))));
  tape_->Backward(loss);
  tape_->AccumulateParameterGradients();
  gradients.assign(received_.size(), {});
  for (std::size_t p = 0; p < received_.size(); ++p) {
    for (Var v : received_[p]) {
      gradients[p].push_back(tape_->GradTensor(v.id()));
    }
  }
  if (apply_update) optimizer_.Step(model_.Parameters());
  return loss.value()[0];
}

std::vector<double> ActiveParty::GateMeans() const {
  std::vector<double> out;
  if (gates_.empty()) return out;
  const std::size_t levels = gates_.front().size();
  for (std::size_t l = 0; l < levels; ++l) {
    double total = 0.0;
    for (const auto& party : gates_) {
      const Tensor& g = party[l].value();
      total += g.Sum() / static_cast<double>(g.size());
    }
    out.push_back(total / static_cast<double>(gates_.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Federation.

FederationSpec MakeSpec(const AlignedWindows& windows, const ModelConfig& model,
                        const DpConfig& dp, bool local_only,
                        std::uint64_t seed) {
  FederationSpec spec;
  const TimeSeriesPanel& a = windows.active();
  spec.active = {a.num_series, a.num_features, windows.active_history(),
                 a.coordinates};
  spec.horizon = windows.horizon();
  spec.out_features = a.output_features.size();
  if (!local_only) {
    for (std::size_t j = 0; j < windows.num_passive(); ++j) {
      const TimeSeriesPanel& p = windows.passive(j);
      spec.passive.push_back({p.num_series, p.num_features,
                              windows.passive_history(j), p.coordinates});
    }
  }
  spec.model = model;
  spec.dp = dp;
  spec.seed = seed;
  return spec;
}

Batch MakeBatch(const AlignedWindows& windows,
                std::span<const std::size_t> indices) {
  Batch b;
  b.active = windows.ActiveInputs(indices);
  b.labels = windows.Labels(indices);
  for (std::size_t j = 0; j < windows.num_passive(); ++j) {
    b.passive.push_back(windows.PassiveInputs(j, indices));
  }
  return b;
}

Federation::Federation(const FederationSpec& spec)
    : spec_(spec), levels_(WireLevels(spec.model.spatial_layers).size()) {
  spec_.dp.Validate();
  active_ = std::make_unique<ActiveParty>(spec.active, spec.horizon,
                                          spec.out_features,
                                          spec.passive.size(), spec.model,
                                          spec.adam, spec.seed);
  for (std::size_t j = 0; j < spec.passive.size(); ++j) {
    passive_.push_back(std::make_unique<PassiveParty>(
        static_cast<int>(j) + 1, spec.passive[j], spec.active.coordinates,
        spec.model, spec.dp, spec.adam, spec.seed));
  }
}

Tensor Federation::Forward(const Batch& batch, bool training,
                           Transcript* transcript) {
  if (batch.passive.size() < passive_.size()) {
    throw ProtocolError("batch carries " + std::to_string(batch.passive.size()) +
                        " passive windows for " +
                        std::to_string(passive_.size()) + " passive parties");
  }
  const bool add_noise = training ? spec_.noise_in_training : true;
  std::vector<std::vector<Tensor>> received(passive_.size());
  for (std::size_t p = 0; p < passive_.size(); ++p) {
    received[p] = passive_[p]->Publish(batch.passive[p], add_noise);
    if (transcript != nullptr) {
      for (Message& m : passive_[p]->ForwardMessages(
               step_, transcript->scan_payloads, transcript->retain_payloads)) {
        transcript->messages.push_back(std::move(m));
      }
    }
  }
  return active_->Forward(batch.active, received);
}

double Federation::Backward(const Tensor& labels, Transcript* transcript,
                            bool apply_update) {
  std::vector<std::vector<Tensor>> gradients;
  const double loss = active_->Backward(labels, gradients, apply_update);
  for (std::size_t p = 0; p < passive_.size(); ++p) {
    if (transcript != nullptr) {
      for (std::size_t l = 0; l < gradients[p].size(); ++l) {
        const Tensor& g = gradients[p][l];
        for (std::size_t i = 0; i < g.batch(); ++i) {
          const Tensor item = g.rank() == 3 ? g.BatchSlice(i) : g;
          Message m;
          m.direction = Direction::kBackwardGradient;
          m.step = step_;
          m.level = l;
          m.party = passive_[p]->id();
          m.item = i;
          m.rows = item.rows();
          m.cols = item.cols();
          m.value_count = item.size();
          m.byte_size = item.size() * sizeof(double);
          if (transcript->retain_payloads) {
            m.payload.assign(item.values().begin(), item.values().end());
          }
          transcript->messages.push_back(std::move(m));
        }
      }
    }
    passive_[p]->ApplyGradients(gradients[p], apply_update);
  }
  ++step_;
  return loss;
}

double Federation::TrainStep(const Batch& batch, Transcript* transcript) {
  Forward(batch, true, transcript);
  return Backward(batch.labels, transcript, true);
}

TranscriptMeta Federation::Meta() const {
  return {spec_.active.num_series, spec_.model.hidden, levels_,
          passive_.size()};
}

ParameterList Federation::Parameters() {
  ParameterList out = active_->Parameters();
  for (auto& p : passive_) {
    for (Parameter* q : p->Parameters()) out.push_back(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training and evaluation.

Metrics ComputeMetrics(std::span<const double> truth,
                       std::span<const double> prediction) {
  if (truth.size() != prediction.size()) {
    throw ShapeError("metrics: " + std::to_string(truth.size()) +
                     " targets vs " + std::to_string(prediction.size()) +
                     " predictions");
  }
  Metrics m;
  m.count = truth.size();
  if (m.count == 0) return m;
  double abs_sum = 0.0, sq_sum = 0.0, smape_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double err = std::abs(prediction[i] - truth[i]);
    abs_sum += err;
    sq_sum += err * err;
    const double denom = (std::abs(truth[i]) + std::abs(prediction[i])) / 2.0;
    if (denom > 0.0) smape_sum += err / denom;
  }
  const double n = static_cast<double>(m.count);
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.smape = smape_sum / n;
  return m;
}

Tensor Predict(Federation& federation, const AlignedWindows& windows,
               std::size_t batch_size) {
  if (batch_size == 0) throw Error("batch size must be positive");
  const std::size_t n = windows.size();
  const std::size_t na = windows.active().num_series;
  const std::size_t cols =
      windows.horizon() * windows.active().output_features.size();
  Tensor out({std::max<std::size_t>(n, 1), na, cols});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    idx.resize(std::min(batch_size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor pred = federation.Forward(MakeBatch(windows, idx), false,
                                           nullptr);
    std::copy(pred.values().begin(), pred.values().end(),
              out.mutable_values().begin() +
                  static_cast<std::ptrdiff_t>(start * na * cols));
  }
  return out;
}

namespace {

std::vector<double> AllLabels(const AlignedWindows& windows) {
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor labels = windows.Labels(idx);
  return {labels.values().begin(), labels.values().end()};
}

double ScaledMae(Federation& federation, const AlignedWindows& windows,
                 std::size_t batch_size) {
  const Tensor pred = Predict(federation, windows, batch_size);
  const std::vector<double> truth = AllLabels(windows);
  return ComputeMetrics(truth, pred.values().first(truth.size())).mae;
}

}  // namespace

TrainResult Train(Federation& federation, const AlignedWindows& train,
                  const AlignedWindows& valid, const TrainConfig& config,
                  Transcript* transcript) {
  if (config.batch_size == 0 || config.epochs == 0) {
    throw Error("training needs positive epochs and batch size");
  }
  if (train.size() == 0 || valid.size() == 0) {
    throw Error("training and validation splits must contain windows");
  }
  auto rng = SeedStreams(federation.spec().seed).Stream("batches");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  ParameterList params = federation.Parameters();
  std::vector<Tensor> best;
  TrainResult result;
  result.best_valid_mae = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches =
        (order.size() + config.batch_size - 1) / config.batch_size;
    if (config.max_batches_per_epoch != 0) {
      batches = std::min(batches, config.max_batches_per_epoch);
    }
    double loss_sum = 0.0;
    std::vector<double> gate_sum;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t start = bi * config.batch_size;
      const std::size_t end = std::min(start + config.batch_size, order.size());
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const double loss = federation.TrainStep(MakeBatch(train, idx), transcript);
      if (!std::isfinite(loss)) {
        throw ProtocolError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + ", batch " +
                            std::to_string(bi));
      }
      loss_sum += loss;
      const auto gates = federation.active().GateMeans();
      gate_sum.resize(gates.size(), 0.0);
      for (std::size_t l = 0; l < gates.size(); ++l) gate_sum[l] += gates[l];
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    for (double g : gate_sum) {
      rec.gate_means.push_back(g / static_cast<double>(batches));
    }
    rec.valid_mae = ScaledMae(federation, valid, 64);
    if (!std::isfinite(rec.valid_mae)) {
      throw ProtocolError("training diverged: non-finite validation MAE at "
                          "epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (rec.valid_mae < result.best_valid_mae) {
      result.best_valid_mae = rec.valid_mae;
      result.best_epoch = epoch;
      since_best = 0;
      best.clear();
      for (Parameter* p : params) best.push_back(p->value);
    } else if (++since_best >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) params[i]->value = best[i];
  return result;
}

Metrics Evaluate(Federation& federation, const AlignedWindows& windows,
                 const ScalerState& active_scaler, std::size_t batch_size) {
  const Tensor pred = Predict(federation, windows, batch_size);
  std::vector<double> truth = AllLabels(windows);
  const auto& outputs = windows.active().output_features;
  std::vector<double> p(pred.values().begin(),
                        pred.values().begin() +
                            static_cast<std::ptrdiff_t>(truth.size()));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t feature = outputs[i % outputs.size()];
    truth[i] = active_scaler.Invert(feature, truth[i]);
    p[i] = active_scaler.Invert(feature, p[i]);
  }
  return ComputeMetrics(truth, p);
}

}  // namespace stfed
