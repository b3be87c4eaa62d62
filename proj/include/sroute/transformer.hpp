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

// Pre-norm decoder block (causal multi-head attention + SwiGLU FFN), the
// per-layer key/value store used for incremental decoding, and the subset
// variant that runs a block only among router-selected tokens.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sroute/errors.hpp"
#include "sroute/ops.hpp"
#include "sroute/rng.hpp"
#include "sroute/tensor.hpp"

namespace sroute {

enum class ParamGroup { kBackbone, kPredictor, kRouter };

inline const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kBackbone: return "backbone";
    case ParamGroup::kPredictor: return "predictor";
    case ParamGroup::kRouter: return "router";
  }
  return "?";
}

template <typename T>
struct NamedParam {
  std::string name;
  ParamGroup group;
  BasicTensor<T> tensor;
};

template <typename T>
BasicTensor<T> make_param(Rng& rng, Shape shape, double stddev) {
  auto t = rng.normal_tensor<T>(std::move(shape), stddev);
  t.set_requires_grad();
  return t;
}

template <typename T>
BasicTensor<T> make_filled_param(Shape shape, T value) {
  BasicTensor<T> t(std::move(shape), value);
  t.set_requires_grad();
  return t;
}

template <typename T>
struct BlockWeights {
  std::size_t heads = 1;
  BasicTensor<T> wq, wk, wv, wo;  // [d x d]
  BasicTensor<T> norm_attn, norm_ffn;  // [d]
  BasicTensor<T> w_gate, w_up;  // [d x hidden]
  BasicTensor<T> w_down;  // [hidden x d]

  std::size_t width() const { return wq.dim(0); }

  static BlockWeights init(Rng& rng, std::size_t d, std::size_t heads, std::size_t hidden, double stddev = 0.02) {
    if (heads == 0 || d % heads != 0) {
      throw ConfigError("block: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
    }
    BlockWeights w;
    w.heads = heads;
    w.wq = make_param<T>(rng, {d, d}, stddev);
    w.wk = make_param<T>(rng, {d, d}, stddev);
    w.wv = make_param<T>(rng, {d, d}, stddev);
    w.wo = make_param<T>(rng, {d, d}, stddev);
    w.norm_attn = make_filled_param<T>({d}, T{1});
    w.norm_ffn = make_filled_param<T>({d}, T{1});
    w.w_gate = make_param<T>(rng, {d, hidden}, stddev);
    w.w_up = make_param<T>(rng, {d, hidden}, stddev);
    w.w_down = make_param<T>(rng, {hidden, d}, stddev);
    return w;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    const auto g = ParamGroup::kBackbone;
    out.push_back({prefix + "wq", g, wq});
    out.push_back({prefix + "wk", g, wk});
    out.push_back({prefix + "wv", g, wv});
    out.push_back({prefix + "wo", g, wo});
    out.push_back({prefix + "norm_attn", g, norm_attn});
    out.push_back({prefix + "norm_ffn", g, norm_ffn});
    out.push_back({prefix + "w_gate", g, w_gate});
    out.push_back({prefix + "w_up", g, w_up});
    out.push_back({prefix + "w_down", g, w_down});
  }
};

// Append-only key/value store of one layer. Positions are strictly increasing.
template <typename T>
class LayerKV {
 public:
  explicit LayerKV(std::size_t width = 0) : width_(width) {}

  void append(std::size_t position, std::span<const T> key, std::span<const T> value) {
    if (key.size() != width_ || value.size() != width_) {
      throw DimensionError("kv cache: entry width " + std::to_string(key.size()) + " vs " + std::to_string(width_));
    }
    if (!positions_.empty() && position <= positions_.back()) {
      throw StateError("kv cache: position " + std::to_string(position) + " does not follow " +
                       std::to_string(positions_.back()));
    }
    positions_.push_back(position);
    keys_.insert(keys_.end(), key.begin(), key.end());
    values_.insert(values_.end(), value.begin(), value.end());
  }

  std::size_t size() const { return positions_.size(); }
  std::size_t width() const { return width_; }
  const std::vector<std::size_t>& positions() const { return positions_; }
  BasicTensor<T> keys() const { return BasicTensor<T>(Shape{size(), width_}, keys_); }
  BasicTensor<T> values() const { return BasicTensor<T>(Shape{size(), width_}, values_); }

  void clear() {
    positions_.clear();
    keys_.clear();
    values_.clear();
  }

 private:
  std::size_t width_;
  std::vector<std::size_t> positions_;
  std::vector<T> keys_, values_;
};

template <typename T>
class KVCache {
 public:
  KVCache() = default;
  KVCache(std::size_t layers, std::size_t width) : layers_(layers, LayerKV<T>(width)) {}

  LayerKV<T>& layer(std::size_t i) { return layers_.at(i); }
  const LayerKV<T>& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t layer_count() const { return layers_.size(); }

  // Total entries across layers.
  std::size_t entries() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.size();
    return n;
  }

  void clear() {
    for (auto& l : layers_) l.clear();
  }

 private:
  std::vector<LayerKV<T>> layers_;
};

namespace detail {

template <typename T>
BasicTensor<T> ffn_delta(const BasicTensor<T>& h, const BlockWeights<T>& w) {
  return swiglu_ffn(rms_norm(h, w.norm_ffn), w.w_gate, w.w_up, w.w_down);
}

}  // namespace detail

// Residual update of one block over rows that attend causally among
// themselves: block(x) - x = attn + ffn.
template <typename T>
BasicTensor<T> block_delta(const BasicTensor<T>& x, const BlockWeights<T>& w, std::uint64_t* score_pairs = nullptr) {
  if (x.rank() != 2 || x.cols() != w.width()) {
    throw DimensionError("block: input " + shape_str(x.shape()) + " vs model width " + std::to_string(w.width()));
  }
  const auto hn = rms_norm(x, w.norm_attn);
  const auto attn = matmul(causal_attention(matmul(hn, w.wq), matmul(hn, w.wk), matmul(hn, w.wv), w.heads, score_pairs), w.wo);
  const auto h = add(x, attn);
  return add(attn, detail::ffn_delta(h, w));
}

template <typename T>
BasicTensor<T> block_forward(const BasicTensor<T>& x, const BlockWeights<T>& w, std::uint64_t* score_pairs = nullptr) {
  return add(x, block_delta(x, w, score_pairs));
}

// Like block_delta, but new rows first append their keys/values at
// `positions` and then attend over everything stored in `cache`. With one row
// this is a single incremental decoding step.
template <typename T>
BasicTensor<T> block_delta_cached(const BasicTensor<T>& x, std::span<const std::size_t> positions,
                                  const BlockWeights<T>& w, LayerKV<T>& cache, std::uint64_t* score_pairs = nullptr) {
  if (x.rank() != 2 || x.cols() != w.width()) {
    throw DimensionError("block: input " + shape_str(x.shape()) + " vs model width " + std::to_string(w.width()));
  }
  if (positions.size() != x.rows()) throw DimensionError("block: one position per row required");
  const std::size_t d = x.cols();
  const auto hn = rms_norm(x, w.norm_attn);
  const auto q = matmul(hn, w.wq);
  const auto k = matmul(hn, w.wk);
  const auto v = matmul(hn, w.wv);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    cache.append(positions[r], std::span<const T>(k.ptr() + r * d, d), std::span<const T>(v.ptr() + r * d, d));
  }
  const auto attn = matmul(causal_attention(q, cache.keys(), cache.values(), w.heads, score_pairs), w.wo);
  const auto h = add(x, attn);
  return add(attn, detail::ffn_delta(h, w));
}

template <typename T>
BasicTensor<T> block_forward_cached(const BasicTensor<T>& x, std::span<const std::size_t> positions,
                                    const BlockWeights<T>& w, LayerKV<T>& cache, std::uint64_t* score_pairs = nullptr) {
  return add(x, block_delta_cached(x, positions, w, cache, score_pairs));
}

// Residual update for the rows in `selected` only, attending among those rows
// (the causal order of original positions is the order of the ascending set).
// Returns a [|selected| x d] tensor.
template <typename T>
BasicTensor<T> subset_block_delta(const BasicTensor<T>& x, std::span<const std::size_t> selected,
                                  const BlockWeights<T>& w, std::uint64_t* score_pairs = nullptr) {
  detail::check_index_set("subset_block", selected, x.rank() == 2 ? x.rows() : 0);
  return block_delta(gather_rows(x, selected), w, score_pairs);
}

// Rows in `selected` become x + block delta computed among the subset only;
// every other row is returned bit-identical.
template <typename T>
BasicTensor<T> subset_block_forward(const BasicTensor<T>& x, std::span<const std::size_t> selected,
                                    const BlockWeights<T>& w, std::uint64_t* score_pairs = nullptr) {
  detail::check_index_set("subset_block", selected, x.rank() == 2 ? x.rows() : 0);
  if (selected.empty()) return x;
  return scatter_add_rows(x, selected, subset_block_delta(x, selected, w, score_pairs));
}

// Score pairs a causal layer evaluates per head over n attending tokens.
inline std::uint64_t causal_pairs(std::uint64_t n) { return n * (n + 1) / 2; }

}  // namespace sroute
