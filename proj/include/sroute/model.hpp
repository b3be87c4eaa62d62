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

// Decoder-only language model over a configurable layer pattern, with a
// parallel forward pass (non-causal Top-K/threshold routing for training, or
// causal-router routing for evaluation) and an incremental decoder that uses
// per-layer KV caches and the causal routers only.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sroute/config.hpp"
#include "sroute/errors.hpp"
#include "sroute/layers.hpp"
#include "sroute/losses.hpp"
#include "sroute/ops.hpp"
#include "sroute/rng.hpp"
#include "sroute/routing.hpp"
#include "sroute/surprise.hpp"
#include "sroute/transformer.hpp"

namespace sroute {

enum class Routing { kNonCausal, kCausal };

inline const char* routing_name(Routing r) { return r == Routing::kCausal ? "causal" : "non_causal"; }

inline Routing parse_routing(const std::string& s) {
  if (s == "causal") return Routing::kCausal;
  if (s == "non_causal") return Routing::kNonCausal;
  throw ConfigError("unknown routing '" + s + "' (expected causal|non_causal)");
}

// Work actually performed, per layer: attention score pairs per head and
// key/value entries written.
struct CostMeter {
  std::vector<std::uint64_t> score_pairs;
  std::vector<std::uint64_t> kv_entries;

  explicit CostMeter(std::size_t layers = 0) : score_pairs(layers, 0), kv_entries(layers, 0) {}
  std::uint64_t total_pairs() const {
    std::uint64_t s = 0;
    for (auto v : score_pairs) s += v;
    return s;
  }
};

template <typename T>
struct LayerWeights {
  LayerKind kind = LayerKind::kDense;
  BlockWeights<T> block;
  std::optional<PriorNetWeights<T>> predictor;  // PriorFFN (decision) or TPN (stt)
  std::optional<RouterParams<T>> router;  // dynamic, stt
  std::optional<CausalRouterWeights<T>> causal_router;  // every routed layer
  std::optional<ModRouterWeights<T>> mod_router;  // mod
};

template <typename T>
struct LayerTrace {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::kDense;
  bool has_surprise = false;
  SurpriseBundle<T> bundle;
  RoutingDecision decision;  // the selection that was applied
  std::vector<double> router_probs;  // causal router output per token
  std::optional<double> l_pred;
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;
  std::vector<LayerTrace<T>> traces;  // routed and predictor layers only
  BasicTensor<T> l_pred = BasicTensor<T>::scalar(T{0});
  BasicTensor<T> l_causal = BasicTensor<T>::scalar(T{0});
  BasicTensor<T> l_g_reg = BasicTensor<T>::scalar(T{0});
};

struct ForwardOptions {
  Routing routing = Routing::kNonCausal;
  Betas betas;
  CostMeter* meter = nullptr;
};

template <typename T>
struct LayerDecodeState {
  std::vector<T> prev_input;  // x_{t-1} entering the layer
  std::vector<T> prev_post;   // x_{t-1} after the layer's block (input if skipped)
  double ma = 0.0;
  bool ma_started = false;
  std::vector<std::uint8_t> executed;
};

template <typename T>
struct DecodeState {
  KVCache<T> cache;
  std::vector<LayerDecodeState<T>> layers;
  std::size_t position = 0;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    pattern_ = cfg_.layer_pattern();
    Rng rng(cfg_.seed);
    const std::size_t d = cfg_.d_model;
    const double sd = cfg_.init_std;
    tok_embed_ = make_param<T>(rng, {cfg_.vocab, d}, sd);
    pos_embed_ = make_param<T>(rng, {cfg_.seq_len, d}, sd);
    for (std::size_t i = 0; i < pattern_.size(); ++i) {
      LayerWeights<T> lw;
      lw.kind = pattern_[i];
      lw.block = BlockWeights<T>::init(rng, d, cfg_.n_heads, cfg_.hidden_width(), sd);
      switch (lw.kind) {
        case LayerKind::kDense: break;
        case LayerKind::kDecision: lw.predictor = PriorNetWeights<T>::init(rng, d, cfg_.prior_factor, sd); break;
        case LayerKind::kDynamic:
          lw.router = RouterParams<T>::init(cfg_.o_ce_init, cfg_.m_cu_init, cfg_.ma_decay, cfg_.learnable_beta);
          lw.causal_router = CausalRouterWeights<T>::init(rng, d, cfg_.router_width(), sd);
          break;
        case LayerKind::kStt:
          lw.predictor = PriorNetWeights<T>::init(rng, d, cfg_.prior_factor, sd);
          lw.router = RouterParams<T>::init(cfg_.o_ce_init, cfg_.m_cu_init, cfg_.ma_decay, cfg_.learnable_beta);
          lw.causal_router = CausalRouterWeights<T>::init(rng, 2 * d, cfg_.router_width(), sd);
          break;
        case LayerKind::kMod:
          lw.mod_router = ModRouterWeights<T>::init(rng, d, sd);
          lw.causal_router = CausalRouterWeights<T>::init(rng, d, cfg_.router_width(), sd);
          break;
      }
      layers_.push_back(std::move(lw));
    }
    final_norm_ = make_filled_param<T>({d}, T{1});
    lm_head_ = make_param<T>(rng, {d, cfg_.vocab}, sd);
  }

  // Tensors are shared handles, so a copy would alias the weights.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  const LayerPattern& pattern() const { return pattern_; }
  std::size_t layer_count() const { return layers_.size(); }
  const LayerWeights<T>& layer(std::size_t i) const { return layers_.at(i); }
  LayerWeights<T>& layer(std::size_t i) { return layers_.at(i); }

  // Every tensor of the model, in a fixed order, with a stable name.
  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    out.push_back({"tok_embed", ParamGroup::kBackbone, tok_embed_});
    out.push_back({"pos_embed", ParamGroup::kBackbone, pos_embed_});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& lw = layers_[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      lw.block.collect(p + "block.", out);
      if (lw.predictor) lw.predictor->collect(p + (lw.kind == LayerKind::kStt ? "tpn." : "prior."), out);
      if (lw.router) {
        const ParamGroup g = gate_scalar_group();
        out.push_back({p + "router.o_ce", g, lw.router->o_ce});
        out.push_back({p + "router.m_cu", g, lw.router->m_cu});
        out.push_back({p + "router.beta_ce_scale", g, lw.router->beta_ce_scale});
        out.push_back({p + "router.beta_cu_scale", g, lw.router->beta_cu_scale});
      }
      if (lw.mod_router) lw.mod_router->collect(p + "mod_router.", out);
      if (lw.causal_router) lw.causal_router->collect(p + "causal_router.", out);
    }
    out.push_back({"final_norm", ParamGroup::kBackbone, final_norm_});
    out.push_back({"lm_head", ParamGroup::kBackbone, lm_head_});
    return out;
  }

  ParamGroup gate_scalar_group() const {
    if (cfg_.gate_scalar_group == "backbone") return ParamGroup::kBackbone;
    if (cfg_.gate_scalar_group == "predictor") return ParamGroup::kPredictor;
    return ParamGroup::kRouter;
  }

  // Copies every parameter of `src` whose name and shape match one of ours
  // (e.g. a dense backbone into a routed stack). Returns the number copied.
  std::size_t load_matching(const Model& src) {
    const auto theirs = src.parameters();
    std::size_t copied = 0;
    for (auto& p : parameters()) {
      for (const auto& q : theirs) {
        if (q.name != p.name || q.tensor.shape() != p.tensor.shape()) continue;
        std::copy(q.tensor.data().begin(), q.tensor.data().end(), p.tensor.data().begin());
        ++copied;
        break;
      }
    }
    return copied;
  }

  // Keeps the learnable router scalars inside their domain after an update.
  void clamp_router_params() {
    constexpr T kFloor = static_cast<T>(1e-4);
    for (auto& lw : layers_) {
      if (!lw.router) continue;
      for (auto* t : {&lw.router->o_ce, &lw.router->m_cu, &lw.router->beta_ce_scale, &lw.router->beta_cu_scale}) {
        if (t->data()[0] < kFloor) t->data()[0] = kFloor;
      }
    }
  }

  ForwardResult<T> forward(std::span<const int> tokens, const ForwardOptions& opt = {}) const {
    const std::size_t n = tokens.size();
    if (n == 0) throw InputError("forward: empty token sequence");
    if (n > cfg_.seq_len) {
      throw InputError("forward: " + std::to_string(n) + " tokens exceed context of " + std::to_string(cfg_.seq_len));
    }
    if (opt.meter) *opt.meter = CostMeter(layers_.size());
    std::vector<int> positions(n);
    for (std::size_t t = 0; t < n; ++t) positions[t] = static_cast<int>(t);
    auto x = add(embedding(tok_embed_, tokens), embedding(pos_embed_, std::span<const int>(positions)));

    ForwardResult<T> res;
    std::vector<BasicTensor<T>> pred_terms, causal_terms, greg_terms;
    std::optional<DecisionOutput<T>> pending;
    const bool non_causal = opt.routing == Routing::kNonCausal;
    const bool recording = BasicTape<T>::active() != nullptr;
    const auto policy = cfg_.capacity_mode() == CapacityMode::kFixed ? CapacityPolicy::fixed(cfg_.gamma)
                                                                    : CapacityPolicy::threshold(cfg_.g_th);

    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& lw = layers_[i];
      std::uint64_t* pairs = opt.meter ? &opt.meter->score_pairs[i] : nullptr;
      std::uint64_t kv = n;
      LayerTrace<T> trace;
      trace.layer = i;
      trace.kind = lw.kind;

      // Causal router pass on a detached input; its BCE only trains the router.
      BasicTensor<T> cr_logits;
      if (lw.causal_router) {
        cr_logits = causal_router_logits(causal_router_inputs(stop_gradient(x), lw.kind == LayerKind::kStt), *lw.causal_router);
        trace.router_probs.resize(n);
        for (std::size_t t = 0; t < n; ++t) trace.router_probs[t] = detail::sigmoid_scalar(static_cast<double>(cr_logits[t]));
      }
      auto add_causal_term = [&](const RoutingDecision& target) {
        if (recording) causal_terms.push_back(bce_with_logits(cr_logits, distillation_targets<T>(target)));
      };
      auto causal_decision = [&](std::vector<double> gates) {
        std::vector<std::uint8_t> mask(n);
        for (std::size_t t = 0; t < n; ++t) mask[t] = trace.router_probs[t] >= 0.5;
        return RoutingDecision::from_mask(std::move(mask), std::move(gates));
      };

      switch (lw.kind) {
        case LayerKind::kDense:
          x = add(x, block_delta(x, lw.block, pairs));
          break;
        case LayerKind::kDecision: {
          auto dec = decision_layer_forward(x, lw.block, *lw.predictor, pairs);
          pred_terms.push_back(dec.l_prior);
          trace.l_pred = static_cast<double>(dec.l_prior[0]);
          x = dec.x_post;
          pending = std::move(dec);
          break;
        }
        case LayerKind::kDynamic: {
          if (!pending) throw StateError("dynamic layer " + std::to_string(i) + " has no preceding decision layer");
          trace.has_surprise = true;
          trace.bundle = surprise_bundle(pending->delta, pending->delta_hat, *lw.router, opt.betas);
          auto gates = to_doubles(trace.bundle.g_cont);
          if (non_causal) {
            trace.decision = topk_select(gates, cfg_.gamma, trace.bundle.rank_keys());
            add_causal_term(trace.decision);
          } else {
            trace.decision = causal_decision(std::move(gates));
          }
          x = dynamic_layer_apply(x, trace.bundle, trace.decision, lw.block, pairs);
          kv = trace.decision.capacity_used;
          pending.reset();
          break;
        }
        case LayerKind::kStt: {
          trace.has_surprise = true;
          RoutedOutput<T> out;
          if (non_causal) {
            out = stt_layer_forward(x, lw.block, *lw.predictor, *lw.router, opt.betas, policy, pairs);
            pred_terms.push_back(out.l_pred);
            trace.l_pred = static_cast<double>(out.l_pred[0]);
            if (policy.mode == CapacityMode::kThreshold) greg_terms.push_back(g_reg_loss(out.bundle.g_cont));
            add_causal_term(out.decision);
          } else {
            out = stt_layer_apply(x, causal_decision(trace.router_probs), lw.block, *lw.predictor, *lw.router,
                                  opt.betas, pairs);
          }
          x = out.y;
          trace.bundle = std::move(out.bundle);
          trace.decision = std::move(out.decision);
          kv = trace.decision.capacity_used;
          break;
        }
        case LayerKind::kMod: {
          const auto scores = mod_baseline_gates(x, *lw.mod_router);
          auto gates = to_doubles(scores);
          if (non_causal) {
            trace.decision = topk_select(gates, cfg_.gamma);
            add_causal_term(trace.decision);
          } else {
            trace.decision = causal_decision(std::move(gates));
          }
          x = mod_layer_apply(x, lw.block, scores, trace.decision, pairs).y;
          kv = trace.decision.capacity_used;
          break;
        }
      }
      if (opt.meter) opt.meter->kv_entries[i] = kv;
      if (lw.kind != LayerKind::kDense) res.traces.push_back(std::move(trace));
    }
    res.logits = matmul(rms_norm(x, final_norm_), lm_head_);
    res.l_pred = mean_of(pred_terms);
    res.l_causal = mean_of(causal_terms);
    res.l_g_reg = mean_of(greg_terms);
    return res;
  }

  DecodeState<T> start_decoding() const {
    DecodeState<T> s;
    s.cache = KVCache<T>(layers_.size(), cfg_.d_model);
    s.layers.resize(layers_.size());
    for (auto& l : s.layers) {
      l.prev_input.assign(cfg_.d_model, T{0});
      l.prev_post.assign(cfg_.d_model, T{0});
    }
    return s;
  }

  // Appends one token and returns its next-token logits [1 x vocab]. Routed
  // layers consult only their causal routers; a token routed around a layer
  // writes no KV entry there.
  BasicTensor<T> decode_step(int token, DecodeState<T>& state, const Betas& betas = {},
                             CostMeter* meter = nullptr) const {
    if (token < 0 || static_cast<std::size_t>(token) >= cfg_.vocab) {
      throw InputError("decode: token " + std::to_string(token) + " outside vocabulary of " + std::to_string(cfg_.vocab));
    }
    if (state.position >= cfg_.seq_len) throw InputError("decode: context of " + std::to_string(cfg_.seq_len) + " is full");
    if (state.layers.size() != layers_.size()) throw StateError("decode: state was not created by this model");
    if (meter && meter->score_pairs.size() != layers_.size()) *meter = CostMeter(layers_.size());
    const std::size_t d = cfg_.d_model;
    const std::size_t pos = state.position;
    const std::array<std::size_t, 1> pos_span{pos};
    const int tok[1] = {token};
    const int posi[1] = {static_cast<int>(pos)};
    auto x = add(embedding(tok_embed_, std::span<const int>(tok)), embedding(pos_embed_, std::span<const int>(posi)));
    std::optional<std::pair<BasicTensor<T>, BasicTensor<T>>> pending;  // (delta, delta_hat)

    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& lw = layers_[i];
      auto& ls = state.layers[i];
      auto& kv = state.cache.layer(i);
      std::uint64_t* pairs = meter ? &meter->score_pairs[i] : nullptr;
      const std::size_t kv_before = kv.size();
      const BasicTensor<T> x_in = x;
      bool executed = true;

      auto router_prob = [&](bool temporal) {
        BasicTensor<T> in = x;
        if (temporal) in = concat_cols(x, BasicTensor<T>(Shape{1, d}, ls.prev_input));
        return causal_router_forward(in, *lw.causal_router)[0];
      };
      auto gate_for = [&](const BasicTensor<T>& delta, const BasicTensor<T>& delta_hat) {
        const auto d_st = static_surprise(delta);
        const auto d_ch = change_surprise(delta, delta_hat);
        const double v = static_cast<double>(d_st[0]);
        if (!ls.ma_started) {
          ls.ma = v;
          ls.ma_started = true;
        }
        ls.ma = lw.router->ma_decay * ls.ma + (1.0 - lw.router->ma_decay) * v;
        const auto ma = BasicTensor<T>::scalar(static_cast<T>(ls.ma));
        auto signals = gating_signals(d_st, d_ch, ma, *lw.router);
        const auto b_ce = scale_by(BasicTensor<T>::scalar(static_cast<T>(betas.ce)), lw.router->beta_ce_scale);
        const auto b_cu = scale_by(BasicTensor<T>::scalar(static_cast<T>(betas.cu)), lw.router->beta_cu_scale);
        return probabilistic_or_gate(signals.ce, signals.cu, b_ce, b_cu);
      };

      switch (lw.kind) {
        case LayerKind::kDense:
          x = add(x, block_delta_cached(x, pos_span, lw.block, kv, pairs));
          break;
        case LayerKind::kDecision: {
          auto delta = block_delta_cached(x, pos_span, lw.block, kv, pairs);
          pending.emplace(delta, lw.predictor->forward(x));
          x = add(x, delta);
          break;
        }
        case LayerKind::kDynamic: {
          if (!pending) throw StateError("dynamic layer " + std::to_string(i) + " has no preceding decision layer");
          const auto g = gate_for(pending->first, pending->second);
          pending.reset();
          executed = router_prob(false) >= T{0.5};
          if (executed) x = add(x, mul_rows(block_delta_cached(x, pos_span, lw.block, kv, pairs), g));
          break;
        }
        case LayerKind::kStt: {
          executed = router_prob(true) >= T{0.5};
          if (executed) {
            auto delta = block_delta_cached(x, pos_span, lw.block, kv, pairs);
            const auto g = gate_for(delta, lw.predictor->forward(BasicTensor<T>(Shape{1, d}, ls.prev_post)));
            ls.prev_post.assign(x.data().begin(), x.data().end());
            for (std::size_t c = 0; c < d; ++c) ls.prev_post[c] += delta[c];
            x = add(x, mul_rows(delta, g));
          } else {
            ls.prev_post.assign(x.data().begin(), x.data().end());
          }
          break;
        }
        case LayerKind::kMod: {
          const auto score = mod_baseline_gates(x, *lw.mod_router);
          executed = router_prob(false) >= T{0.5};
          if (executed) x = add(x, mul_rows(block_delta_cached(x, pos_span, lw.block, kv, pairs), score));
          break;
        }
      }
      ls.prev_input.assign(x_in.data().begin(), x_in.data().end());
      ls.executed.push_back(executed ? 1 : 0);
      if (meter) meter->kv_entries[i] += kv.size() - kv_before;
    }
    ++state.position;
    return matmul(rms_norm(x, final_norm_), lm_head_);
  }

 private:
  static BasicTensor<T> mean_of(const std::vector<BasicTensor<T>>& terms) {
    if (terms.empty()) return BasicTensor<T>::scalar(T{0});
    BasicTensor<T> acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, T{1} / static_cast<T>(terms.size()));
  }

  ModelConfig cfg_;
  LayerPattern pattern_;
  BasicTensor<T> tok_embed_, pos_embed_, final_norm_, lm_head_;
  std::vector<LayerWeights<T>> layers_;
};

}  // namespace sroute
