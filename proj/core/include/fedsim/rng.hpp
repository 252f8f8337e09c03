/*
 * Copyright 2026 The fedsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedsim {

using Rng = std::mt19937_64;

// Purposes for independent random streams. Streams are keyed by
// (seed, purpose, ids...) so that no two consumers ever share a generator and
// results do not depend on the order in which clients are processed.
enum class Stream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kSplit = 3,
  kSearch = 4,
  kAugment = 5,
  kPretext = 6,
  kPartition = 7,
  kGenerator = 8,
  kKMeans = 9,
  kParticipation = 10,
  kRepresentative = 11,
  kStatus = 12,
};

inline Rng make_rng(std::uint64_t seed, Stream stream,
                    std::initializer_list<std::uint64_t> ids = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(4 + 2 * ids.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  push(static_cast<std::uint64_t>(stream));
  for (auto id : ids) push(id);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace fedsim
