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

// Checkpoints: `<prefix>.bin` holds the parameter arrays back to back as
// little-endian doubles; `<prefix>.json` lists name, shape, byte offset and
// count of each array plus an echo of the producing config.

#ifndef STFED_CHECKPOINT_H_
#define STFED_CHECKPOINT_H_

#include <filesystem>

#include "json.hpp"
#include "stfed/parameter.h"

namespace stfed {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

void SaveCheckpoint(const std::filesystem::path& prefix,
                    const ParameterList& parameters,
                    const nlohmann::json& config);

// Restores every parameter by name; names and shapes must match exactly.
// Returns the stored config echo.
nlohmann::json LoadCheckpoint(const std::filesystem::path& prefix,
                              const ParameterList& parameters);

nlohmann::json ReadCheckpointManifest(const std::filesystem::path& prefix);

}  // namespace stfed

#endif  // STFED_CHECKPOINT_H_
