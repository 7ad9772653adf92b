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

#include "stfed/random.h"

namespace stfed {
namespace {

// FNV-1a, 64 bit.
std::uint64_t HashName(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint32_t Lo(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
std::uint32_t Hi(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

}  // namespace

std::mt19937_64 SeedStreams::Stream(std::string_view name,
                                    std::uint64_t index) const {
  const std::uint64_t h = HashName(name);
  std::seed_seq seq{Lo(seed_), Hi(seed_), Lo(h), Hi(h), Lo(index), Hi(index)};
  return std::mt19937_64(seq);
}

}  // namespace stfed
