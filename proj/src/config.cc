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

#include "stfed/config.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <utility>

namespace stfed {
namespace {

using nlohmann::json;

template <typename E>
struct EnumNames;

template <>
struct EnumNames<Activation> {
  static constexpr std::pair<Activation, const char*> kValues[] = {
      {Activation::kRelu, "relu"}, {Activation::kLinear, "linear"}};
};
template <>
struct EnumNames<PredictFrom> {
  static constexpr std::pair<PredictFrom, const char*> kValues[] = {
      {PredictFrom::kFused, "fused"}, {PredictFrom::kSpatial, "spatial"}};
};
template <>
struct EnumNames<AttackKind> {
  static constexpr std::pair<AttackKind, const char*> kValues[] = {
      {AttackKind::kWhitebox, "whitebox"},
      {AttackKind::kQueryFree, "queryfree"},
      {AttackKind::kMean, "mean"},
      {AttackKind::kRandomGuess, "random-guess"}};
};
template <>
struct EnumNames<GuessDistribution> {
  static constexpr std::pair<GuessDistribution, const char*> kValues[] = {
      {GuessDistribution::kNormal, "normal"},
      {GuessDistribution::kUniform, "uniform"}};
};

template <typename E>
concept NamedEnum = requires { EnumNames<E>::kValues; };

template <NamedEnum E>
std::string EnumToString(E value) {
  for (const auto& [v, name] : EnumNames<E>::kValues) {
    if (v == value) return name;
  }
  return "?";
}

// Decoding of one JSON value into a field, with the key path for errors.
template <typename T>
void Decode(const json& j, T& out, const std::string& path);

template <>
void Decode(const json& j, bool& out, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, "must be a boolean");
  out = j.get<bool>();
}
template <>
void Decode(const json& j, std::size_t& out, const std::string& path) {
  if (!j.is_number_integer() ||
      (j.is_number_integer() && !j.is_number_unsigned() &&
       j.get<std::int64_t>() < 0)) {
    throw ConfigError(path, "must be a non-negative integer");
  }
  out = j.get<std::size_t>();
}
template <>
void Decode(const json& j, int& out, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "must be an integer");
  out = j.get<int>();
}
template <>
void Decode(const json& j, double& out, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "must be a number");
  out = j.get<double>();
}
template <>
void Decode(const json& j, std::string& out, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "must be a string");
  out = j.get<std::string>();
}
template <NamedEnum E>
void Decode(const json& j, E& out, const std::string& path) {
  std::string s;
  Decode(j, s, path);
  std::string allowed;
  for (const auto& [v, name] : EnumNames<E>::kValues) {
    if (s == name) {
      out = v;
      return;
    }
    allowed += allowed.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(path, "must be one of " + allowed);
}
template <>
void Decode(const json& j, std::array<std::size_t, 3>& out,
            const std::string& path) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError(path, "must be an array of three integers");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    Decode(j[i], out[i], path + "[" + std::to_string(i) + "]");
  }
}
template <>
void Decode(const json& j, std::vector<std::uint64_t>& out,
            const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "must be an array of integers");
  out.assign(j.size(), 0);
  for (std::size_t i = 0; i < j.size(); ++i) {
    Decode(j[i], out[i], path + "[" + std::to_string(i) + "]");
  }
}

template <typename T>
json Encode(const T& value) {
  if constexpr (NamedEnum<T>) {
    return EnumToString(value);
  } else {
    return value;
  }
}

// Reads an object, remembering which keys were consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }
  }

  template <typename T>
  void Field(const char* key, T& out) {
    if (const json* v = Find(key)) Decode(*v, out, Path(key));
  }

  void Epsilon(const char* key, double& out) {
    const json* v = Find(key);
    if (v == nullptr) return;
    if (v->is_string() && v->get<std::string>() == "inf") {
      out = std::numeric_limits<double>::infinity();
    } else if (v->is_number()) {
      out = v->get<double>();
    } else {
      throw ConfigError(Path(key), "must be a number or \"inf\"");
    }
  }

  template <typename Body>
  void Object(const char* key, Body&& body) {
    if (const json* v = Find(key)) {
      Reader child(*v, Path(key));
      body(child);
      child.Finish();
    }
  }

  template <typename T, typename Body>
  void ObjectArray(const char* key, std::vector<T>& out, Body&& body) {
    const json* v = Find(key);
    if (v == nullptr) return;
    if (!v->is_array()) throw ConfigError(Path(key), "must be an array");
    out.assign(v->size(), T{});
    for (std::size_t i = 0; i < v->size(); ++i) {
      Reader child((*v)[i], Path(key) + "[" + std::to_string(i) + "]");
      body(child, out[i]);
      child.Finish();
    }
  }

  void Finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError(Path(key), "unknown key");
    }
  }

 private:
  const json* Find(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string Path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

class Writer {
 public:
  template <typename T>
  void Field(const char* key, const T& value) {
    out_[key] = Encode(value);
  }
  void Epsilon(const char* key, double value) {
    out_[key] = std::isinf(value) ? json("inf") : json(value);
  }
  template <typename Body>
  void Object(const char* key, Body&& body) {
    Writer child;
    body(child);
    out_[key] = std::move(child.out_);
  }
  template <typename T, typename Body>
  void ObjectArray(const char* key, std::vector<T>& items, Body&& body) {
    json arr = json::array();
    for (T& item : items) {
      Writer child;
      body(child, item);
      arr.push_back(std::move(child.out_));
    }
    out_[key] = std::move(arr);
  }
  json Take() { return std::move(out_); }

 private:
  json out_ = json::object();
};

// Single field list shared by parsing and serialization.
template <typename V>
void Visit(V& v, ExperimentConfig& c) {
  v.Field("schema_version", c.schema_version);
  v.Field("seed", c.seed);
  v.Field("output_dir", c.output_dir);
  v.Field("local_only", c.local_only);
  v.Field("compare_seeds", c.compare_seeds);
  v.Object("data", [&](V& d) {
    d.Field("source", c.data.source);
    d.Field("history", c.data.history);
    d.Field("horizon", c.data.horizon);
    d.Field("split", c.data.split);
    d.Object("synthetic", [&](V& s) {
      SyntheticOptions& o = c.data.synthetic;
      s.Field("num_active", o.num_active);
      s.Field("num_passive", o.num_passive);
      s.Field("num_steps", o.num_steps);
      s.Field("coupling", o.coupling);
      s.Field("num_passive_parties", o.num_passive_parties);
      s.Field("num_factors", o.num_factors);
      s.Field("factor_ar", o.factor_ar);
      s.Field("active_ar", o.active_ar);
      s.Field("length_scale", o.length_scale);
      s.Field("coordinate_jitter", o.coordinate_jitter);
      s.Field("lag", o.lag);
      s.Field("active_noise", o.active_noise);
      s.Field("passive_noise", o.passive_noise);
      s.Field("level", o.level);
      s.Field("active_minutes", o.active_minutes);
      s.Field("passive_minutes", o.passive_minutes);
      s.Field("active_features", o.active_features);
      s.Field("passive_features", o.passive_features);
      s.Field("output_features", o.output_features);
    });
    auto csv = [](V& s, CsvSource& src) {
      s.Field("series", src.series);
      s.Field("locations", src.locations);
      s.Field("minutes_per_step", src.minutes_per_step);
    };
    d.Object("active", [&](V& s) { csv(s, c.data.active); });
    d.ObjectArray("passive", c.data.passive, csv);
  });
  v.Object("model", [&](V& m) {
    ModelConfig& o = c.model;
    m.Field("hidden", o.hidden);
    m.Field("temporal_layers", o.temporal_layers);
    m.Field("spatial_layers", o.spatial_layers);
    m.Field("knn", o.knn);
    m.Field("heads", o.heads);
    m.Field("adaptive_rank", o.adaptive_rank);
    m.Field("head_value_width", o.head_value_width);
    m.Field("head_inner", o.head_inner);
    m.Field("adjacency_threshold", o.adjacency_threshold);
    m.Field("spatial_activation", o.spatial_activation);
    m.Field("predict_from", o.predict_from);
  });
  v.Object("dp", [&](V& d) {
    d.Epsilon("epsilon", c.dp.epsilon);
    d.Field("delta", c.dp.delta);
    d.Field("clip", c.dp.clip);
    d.Field("noise_in_training", c.noise_in_training);
  });
  v.Object("optimizer", [&](V& a) {
    a.Field("learning_rate", c.adam.learning_rate);
    a.Field("beta1", c.adam.beta1);
    a.Field("beta2", c.adam.beta2);
    a.Field("epsilon", c.adam.epsilon);
    a.Field("weight_decay", c.adam.weight_decay);
  });
  v.Object("train", [&](V& t) {
    t.Field("epochs", c.train.epochs);
    t.Field("batch_size", c.train.batch_size);
    t.Field("patience", c.train.patience);
    t.Field("max_batches_per_epoch", c.train.max_batches_per_epoch);
    t.Field("shuffle", c.train.shuffle);
  });
  v.Object("attack", [&](V& a) {
    AttackConfig& o = c.attack;
    a.Field("kind", o.kind);
    a.Field("party", o.party);
    a.Field("samples", o.samples);
    a.Field("levels", o.levels);
    a.Field("lambda", o.whitebox.lambda);
    a.Field("beta", o.whitebox.beta);
    a.Field("steps", o.whitebox.steps);
    a.Field("learning_rate", o.whitebox.learning_rate);
    a.Field("weight_decay", o.whitebox.weight_decay);
    a.Field("surrogate_epochs", o.surrogate_epochs);
    a.Field("surrogate_batch", o.surrogate_batch);
    a.Field("guess", o.guess);
  });
  v.Object("audit", [&](V& a) {
    a.Field("record", c.audit.record);
    a.Field("scan_payloads", c.audit.scan_payloads);
    a.Field("retain_payloads", c.audit.retain_payloads);
  });
}

void Check(bool ok, const char* key, const std::string& message) {
  if (!ok) throw ConfigError(key, message);
}

void Validate(const ExperimentConfig& c) {
  Check(c.schema_version == kSchemaVersion, "schema_version",
        "unsupported version " + std::to_string(c.schema_version));
  Check(c.data.source == "synthetic" || c.data.source == "csv", "data.source",
        "must be \"synthetic\" or \"csv\"");
  if (c.data.source == "csv") {
    Check(!c.data.active.series.empty() && !c.data.active.locations.empty(),
          "data.active", "csv source needs series and locations paths");
    for (const CsvSource& p : c.data.passive) {
      Check(!p.series.empty() && !p.locations.empty(), "data.passive",
            "csv source needs series and locations paths");
    }
  }
  Check(c.data.history > 0, "data.history", "must be positive");
  Check(c.data.horizon > 0, "data.horizon", "must be positive");
  Check(c.data.split[0] > 0 && c.data.split[1] > 0 && c.data.split[2] > 0,
        "data.split", "every split ratio must be positive");
  Check(c.model.hidden > 0, "model.hidden", "must be positive");
  Check(c.model.temporal_layers > 0, "model.temporal_layers",
        "must be positive");
  Check(c.model.spatial_layers > 0, "model.spatial_layers",
        "must be positive");
  Check(c.model.heads > 0, "model.heads", "must be positive");
  Check(c.model.knn > 0, "model.knn", "must be positive");
  Check(c.dp.epsilon > 0.0, "dp.epsilon", "must be positive or \"inf\"");
  Check(c.dp.delta > 0.0 && c.dp.delta < 1.0, "dp.delta", "must be in (0, 1)");
  Check(c.dp.clip > 0.0 && std::isfinite(c.dp.clip), "dp.clip",
        "must be positive and finite");
  Check(c.adam.learning_rate > 0, "optimizer.learning_rate",
        "must be positive");
  Check(c.train.epochs > 0, "train.epochs", "must be positive");
  Check(c.train.batch_size > 0, "train.batch_size", "must be positive");
  Check(c.attack.samples > 0, "attack.samples", "must be positive");
  Check(c.attack.levels > 0 && c.attack.levels <= c.model.spatial_layers,
        "attack.levels", "must lie in [1, model.spatial_layers]");
  Check(c.attack.whitebox.steps > 0, "attack.steps", "must be positive");
}

}  // namespace

std::string AttackKindName(AttackKind kind) { return EnumToString(kind); }

ExperimentConfig ParseConfig(const json& j) {
  ExperimentConfig c;
  Reader reader(j, "");
  Visit(reader, c);
  reader.Finish();
  c.data.synthetic.horizon = c.data.horizon;
  c.attack.whitebox.seed = c.seed;
  Validate(c);
  return c;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("<file>",
                      "malformed JSON in " + path.string() + ": " + e.what());
  }
  return ParseConfig(j);
}

json ConfigToJson(const ExperimentConfig& config) {
  ExperimentConfig copy = config;
  Writer writer;
  Visit(writer, copy);
  return writer.Take();
}

}  // namespace stfed
