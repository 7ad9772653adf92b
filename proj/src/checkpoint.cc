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

#include "stfed/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace stfed {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

std::filesystem::path WithSuffix(const std::filesystem::path& prefix,
                                 const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

void SaveCheckpoint(const std::filesystem::path& prefix,
                    const ParameterList& parameters,
                    const nlohmann::json& config) {
  const auto bin_path = WithSuffix(prefix, ".bin");
  const auto json_path = WithSuffix(prefix, ".json");
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw CheckpointError("cannot write " + bin_path.string());
  nlohmann::json entries = nlohmann::json::array();
  std::set<std::string> names;
  std::size_t offset = 0;
  for (const Parameter* p : parameters) {
    if (!names.insert(p->name).second) {
      throw CheckpointError("duplicate parameter name " + p->name);
    }
    const auto values = p->value.values();
    bin.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
    entries.push_back({{"name", p->name},
                       {"shape", p->value.shape()},
                       {"offset", offset},
                       {"count", values.size()}});
    offset += values.size() * sizeof(double);
  }
  if (!bin) throw CheckpointError("failed writing " + bin_path.string());
  nlohmann::json manifest = {{"format", "stfed-checkpoint"},
                             {"version", 1},
                             {"binary", bin_path.filename().string()},
                             {"bytes", offset},
                             {"parameters", entries},
                             {"config", config}};
  std::ofstream js(json_path);
  if (!js) throw CheckpointError("cannot write " + json_path.string());
  js << manifest.dump(2) << '\n';
  if (!js) throw CheckpointError("failed writing " + json_path.string());
}

nlohmann::json ReadCheckpointManifest(const std::filesystem::path& prefix) {
  const auto json_path = WithSuffix(prefix, ".json");
  std::ifstream js(json_path);
  if (!js) throw CheckpointError("cannot open " + json_path.string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed manifest " + json_path.string() + ": " +
                          e.what());
  }
  if (manifest.value("format", "") != "stfed-checkpoint") {
    throw CheckpointError(json_path.string() + " is not a checkpoint manifest");
  }
  return manifest;
}

nlohmann::json LoadCheckpoint(const std::filesystem::path& prefix,
                              const ParameterList& parameters) {
  const nlohmann::json manifest = ReadCheckpointManifest(prefix);
  const auto bin_path = WithSuffix(prefix, ".bin");
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw CheckpointError("cannot open " + bin_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)),
                          std::istreambuf_iterator<char>());

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : manifest.at("parameters")) {
    by_name[e.at("name").get<std::string>()] = &e;
  }
  if (by_name.size() != parameters.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(by_name.size()) +
                          " arrays, model has " +
                          std::to_string(parameters.size()));
  }
  for (Parameter* p : parameters) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint lacks parameter " + p->name);
    }
    const auto& e = *it->second;
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != p->value.shape()) {
      throw CheckpointError("parameter " + p->name + " has shape " +
                            ShapeToString(shape) + " in the checkpoint, " +
                            ShapeToString(p->value.shape()) + " in the model");
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    const std::size_t count = e.at("count").get<std::size_t>();
    if (count != p->value.size() ||
        offset + count * sizeof(double) > bytes.size()) {
      throw CheckpointError("parameter " + p->name +
                            " lies outside the binary file");
    }
    std::memcpy(p->value.mutable_values().data(), bytes.data() + offset,
                count * sizeof(double));
  }
  return manifest.at("config");
}

}  // namespace stfed
