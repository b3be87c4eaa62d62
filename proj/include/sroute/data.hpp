// Copyright 2026 The sroute Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Byte-level corpus ingestion into fixed-length next-token blocks and a
// seeded, epoch-shuffled batch stream.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sroute/errors.hpp"
#include "sroute/rng.hpp"

namespace sroute {

// One training sequence: targets[t] == inputs[t + 1] inside the block, and
// the last target is the byte that follows the block.
struct TokenBlock {
  std::size_t index = 0;  // position of the block in the corpus
  std::vector<int> inputs;
  std::vector<int> targets;
};

struct Ingested {
  std::vector<TokenBlock> blocks;
  std::size_t dropped_bytes = 0;
};

// Splits bytes into non-overlapping blocks of `block_len` inputs. A block
// needs one byte of lookahead for its final target; the trailing partial
// block is dropped.
inline Ingested make_blocks(std::span<const std::uint8_t> bytes, std::size_t block_len) {
  if (bytes.empty()) throw InputError("corpus is empty");
  if (block_len == 0) throw ConfigError("block length must be positive");
  Ingested out;
  const std::size_t count = (bytes.size() - 1) / block_len;
  if (count == 0) {
    throw InputError("corpus of " + std::to_string(bytes.size()) + " bytes is shorter than one block of " +
                     std::to_string(block_len) + " (+1)");
  }
  out.blocks.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    TokenBlock blk;
    blk.index = b;
    blk.inputs.resize(block_len);
    blk.targets.resize(block_len);
    for (std::size_t t = 0; t < block_len; ++t) {
      blk.inputs[t] = bytes[b * block_len + t];
      blk.targets[t] = bytes[b * block_len + t + 1];
    }
    out.blocks.push_back(std::move(blk));
  }
  out.dropped_bytes = bytes.size() - count * block_len;
  return out;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Ingested ingest_corpus(const std::string& path, std::size_t block_len) {
  const auto bytes = read_bytes(path);
  return make_blocks(bytes, block_len);
}

// Deterministic stream of batches: each epoch visits every block once in an
// order drawn from the seeded generator.
class BatchStream {
 public:
  BatchStream(std::vector<TokenBlock> blocks, std::size_t batch_size, std::uint64_t seed, bool shuffle = true)
      : blocks_(std::move(blocks)), batch_size_(batch_size), rng_(seed), shuffle_(shuffle) {
    if (blocks_.empty()) throw InputError("batch stream: no blocks");
    if (batch_size_ == 0) throw ConfigError("batch stream: batch size must be positive");
    order_.resize(blocks_.size());
    reshuffle();
  }

  std::vector<TokenBlock> next() {
    std::vector<TokenBlock> batch;
    batch.reserve(batch_size_);
    while (batch.size() < batch_size_) {
      if (cursor_ == order_.size()) reshuffle();
      batch.push_back(blocks_[order_[cursor_++]]);
    }
    return batch;
  }

  // Block indices of the current epoch, in visiting order.
  const std::vector<std::size_t>& epoch_order() const { return order_; }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_) std::shuffle(order_.begin(), order_.end(), rng_.engine());
    cursor_ = 0;
  }

  std::vector<TokenBlock> blocks_;
  std::size_t batch_size_;
  Rng rng_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Structured synthetic text: sentences from a small grammar interleaved with
// counting runs, so that some bytes are fully predictable from context and
// others (word choices) are not.
inline std::vector<std::uint8_t> synthetic_corpus(std::size_t bytes, std::uint64_t seed = kDefaultSeed) {
  static const std::vector<std::string> subjects = {"the cat", "a dog", "my friend", "the robot", "our teacher"};
  static const std::vector<std::string> verbs = {"sees", "likes", "paints", "follows", "builds"};
  static const std::vector<std::string> objects = {"a red ball", "the old house", "blue birds", "the river",
                                                   "small stones"};
  Rng rng(seed);
  std::string text;
  text.reserve(bytes + 64);
  while (text.size() < bytes) {
    if (rng.index(4) == 0) {
      const std::size_t start = rng.index(5);
      for (std::size_t i = start; i < start + 5; ++i) text += static_cast<char>('0' + i);
      text += ' ';
    } else {
      text += subjects[rng.index(subjects.size())] + ' ' + verbs[rng.index(verbs.size())] + ' ' +
              objects[rng.index(objects.size())] + ". ";
    }
  }
  text.resize(bytes);
  return std::vector<std::uint8_t>(text.begin(), text.end());
}

}  // namespace sroute
