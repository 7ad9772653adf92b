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

#ifndef STFED_RANDOM_H_
#define STFED_RANDOM_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace stfed {

// Splits one experiment seed into independent named generators ("data",
// "init", "dp-noise", "attack", ...). The same (seed, name, index) always
// yields the same stream.
class SeedStreams {
 public:
  explicit SeedStreams(std::uint64_t seed) : seed_(seed) {}

  std::mt19937_64 Stream(std::string_view name, std::uint64_t index = 0) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace stfed

#endif  // STFED_RANDOM_H_
