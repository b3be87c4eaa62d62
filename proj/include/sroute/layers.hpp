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

// The routed layer types: the SDT decision/dynamic pair, the unified STT
// layer, and the MoD baseline, plus the lightweight residual predictors
// (PriorFFN for SDT, transition network for STT).

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sroute/config.hpp"
#include "sroute/errors.hpp"
#include "sroute/ops.hpp"
#include "sroute/routing.hpp"
#include "sroute/surprise.hpp"
#include "sroute/transformer.hpp"

namespace sroute {

// Intermediate width ceil(f * d).
inline std::size_t prior_width(std::size_t d, double factor) {
  if (!(factor > 0.0)) throw ConfigError("prior factor must be positive");
  return static_cast<std::size_t>(std::ceil(factor * static_cast<double>(d) - 1e-9));
}

// MLP d -> ceil(f d) -> d predicting a block residual. Serves as the PriorFFN
// (input: the same token's layer input) and as the transition network
// (input: the previous token's post-block state).
template <typename T>
struct PriorNetWeights {
  BasicTensor<T> w1, b1, w2, b2;

  std::size_t hidden() const { return w1.dim(1); }

  static PriorNetWeights init(Rng& rng, std::size_t d, double factor, double stddev = 0.02) {
    const std::size_t h = prior_width(d, factor);
    PriorNetWeights w;
    w.w1 = make_param<T>(rng, {d, h}, stddev);
    w.b1 = make_filled_param<T>({h}, T{0});
    w.w2 = make_param<T>(rng, {h, d}, stddev);
    w.b2 = make_filled_param<T>({d}, T{0});
    return w;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x) const {
    return add_row(matmul(silu(add_row(matmul(x, w1), b1)), w2), b2);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    const auto g = ParamGroup::kPredictor;
    out.push_back({prefix + "w1", g, w1});
    out.push_back({prefix + "b1", g, b1});
    out.push_back({prefix + "w2", g, w2});
    out.push_back({prefix + "b2", g, b2});
  }
};

template <typename T>
using PriorFFNWeights = PriorNetWeights<T>;
template <typename T>
using TPNWeights = PriorNetWeights<T>;

// x + sum over selected t of gate_t * delta_t; non-selected rows stay
// bit-identical. `delta_rows` holds one row per selected token and `gates`
// one entry per selected token.
template <typename T>
BasicTensor<T> gated_residual(const BasicTensor<T>& x, std::span<const std::size_t> selected,
                              const BasicTensor<T>& delta_rows, const BasicTensor<T>& gates) {
  if (selected.empty()) return x;
  return scatter_add_rows(x, selected, mul_rows(delta_rows, gates));
}

// ---------------------------------------------------------------------------
// SDT

template <typename T>
struct DecisionOutput {
  BasicTensor<T> x_post;
  BasicTensor<T> delta;
  BasicTensor<T> delta_hat;
  BasicTensor<T> l_prior;
};

// Full block plus PriorFFN prediction of its residual. The predictor reads a
// detached copy of x and regresses onto a detached residual, so l_prior only
// trains the predictor.
template <typename T>
DecisionOutput<T> decision_layer_forward(const BasicTensor<T>& x, const BlockWeights<T>& block,
                                         const PriorFFNWeights<T>& prior, std::uint64_t* score_pairs = nullptr) {
  DecisionOutput<T> out;
  out.delta = block_delta(x, block, score_pairs);
  out.x_post = add(x, out.delta);
  out.delta_hat = prior.forward(stop_gradient(x));
  out.l_prior = mse(out.delta_hat, stop_gradient(out.delta));
  return out;
}

template <typename T>
struct RoutedOutput {
  BasicTensor<T> y;
  SurpriseBundle<T> bundle;
  RoutingDecision decision;
  BasicTensor<T> l_pred;  // STT only
};

// Executes the dynamic block on `decision.selected` (attending among the
// subset) and adds each selected residual scaled by its gate.
template <typename T>
BasicTensor<T> dynamic_layer_apply(const BasicTensor<T>& x, const SurpriseBundle<T>& bundle,
                                   const RoutingDecision& decision, const BlockWeights<T>& block,
                                   std::uint64_t* score_pairs = nullptr) {
  if (decision.selected.empty()) return x;
  const auto delta_rows = subset_block_delta(x, decision.selected, block, score_pairs);
  return gated_residual(x, decision.selected, delta_rows, gather_rows(bundle.g_cont, decision.selected));
}

// Surprise from the preceding decision layer's (delta, delta_hat), Top-K on
// the gate, then the gated subset update.
template <typename T>
RoutedOutput<T> dynamic_layer_forward(const BasicTensor<T>& x, const BasicTensor<T>& delta,
                                      const BasicTensor<T>& delta_hat, const BlockWeights<T>& block,
                                      const RouterParams<T>& params, const Betas& betas, double gamma,
                                      std::uint64_t* score_pairs = nullptr) {
  RoutedOutput<T> out;
  out.bundle = surprise_bundle(delta, delta_hat, params, betas);
  const auto gates = to_doubles(out.bundle.g_cont);
  const auto keys = out.bundle.rank_keys();
  out.decision = topk_select(gates, gamma, keys);
  out.y = dynamic_layer_apply(x, out.bundle, out.decision, block, score_pairs);
  return out;
}

// ---------------------------------------------------------------------------
// STT

struct CapacityPolicy {
  CapacityMode mode = CapacityMode::kFixed;
  double gamma = 0.5;
  double g_th = 0.5;

  static CapacityPolicy fixed(double gamma) { return {CapacityMode::kFixed, gamma, 0.5}; }
  static CapacityPolicy threshold(double g_th) { return {CapacityMode::kThreshold, 0.5, g_th}; }

  RoutingDecision select(std::span<const double> gates, std::span<const double> rank_keys) const {
    return mode == CapacityMode::kFixed ? topk_select(gates, gamma, rank_keys) : threshold_select(gates, g_th);
  }
};

// Training-form STT layer. The block runs on every token to expose the true
// residual; the transition network predicts token t's residual from token
// t-1's post-block state (zero vector at t = 0); only selected tokens receive
// their gate-scaled residual.
template <typename T>
RoutedOutput<T> stt_layer_forward(const BasicTensor<T>& x, const BlockWeights<T>& block, const TPNWeights<T>& tpn,
                                  const RouterParams<T>& params, const Betas& betas, const CapacityPolicy& policy,
                                  std::uint64_t* score_pairs = nullptr) {
  RoutedOutput<T> out;
  const auto delta = block_delta(x, block, score_pairs);
  const auto post = add(x, delta);
  const auto delta_hat = tpn.forward(shift_rows_down(stop_gradient(post)));
  out.l_pred = mse(delta_hat, stop_gradient(delta));
  out.bundle = surprise_bundle(delta, delta_hat, params, betas);
  const auto gates = to_doubles(out.bundle.g_cont);
  const auto keys = out.bundle.rank_keys();
  out.decision = policy.select(gates, keys);
  if (!out.decision.selected.empty()) {
    out.y = gated_residual(x, out.decision.selected, gather_rows(delta, out.decision.selected),
                           gather_rows(out.bundle.g_cont, out.decision.selected));
  } else {
    out.y = x;
  }
  return out;
}

// Inference-form STT layer for an externally chosen subset (the causal
// router's selection). The block runs only on selected tokens, attending among
// them. Surprise is defined only where the block ran: the moving average runs
// over executed tokens, and the transition network reads the previous token's
// post-block state when it was executed, its unchanged input otherwise.
template <typename T>
RoutedOutput<T> stt_layer_apply(const BasicTensor<T>& x, const RoutingDecision& decision, const BlockWeights<T>& block,
                                const TPNWeights<T>& tpn, const RouterParams<T>& params, const Betas& betas,
                                std::uint64_t* score_pairs = nullptr) {
  RoutedOutput<T> out;
  out.decision = decision;
  const auto& sel = decision.selected;
  if (sel.empty()) {
    out.y = x;
    return out;
  }
  const std::size_t d = x.cols();
  const auto delta = subset_block_delta(x, sel, block, score_pairs);
  BasicTensor<T> prev(Shape{sel.size(), d});
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const std::size_t t = sel[i];
    if (t == 0) continue;
    const bool prev_ran = i > 0 && sel[i - 1] == t - 1;
    for (std::size_t c = 0; c < d; ++c) {
      prev[i * d + c] = x.at(t - 1, c) + (prev_ran ? delta[(i - 1) * d + c] : T{0});
    }
  }
  const auto delta_hat = tpn.forward(prev);
  out.bundle = surprise_bundle(delta, delta_hat, params, betas);
  out.y = gated_residual(x, sel, delta, out.bundle.g_cont);
  return out;
}

// ---------------------------------------------------------------------------
// MoD baseline

template <typename T>
RoutedOutput<T> mod_layer_apply(const BasicTensor<T>& x, const BlockWeights<T>& block, const BasicTensor<T>& scores,
                                RoutingDecision decision, std::uint64_t* score_pairs = nullptr) {
  RoutedOutput<T> out;
  out.decision = std::move(decision);
  const auto& sel = out.decision.selected;
  if (sel.empty()) {
    out.y = x;
    return out;
  }
  out.y = gated_residual(x, sel, subset_block_delta(x, sel, block, score_pairs), gather_rows(scores, sel));
  return out;
}

// r_t * f(X_S)_t + x_t for t in S, x_t otherwise, with S the Top-K of the raw
// router scores.
template <typename T>
RoutedOutput<T> mod_layer_forward(const BasicTensor<T>& x, const BlockWeights<T>& block,
                                  const ModRouterWeights<T>& router, double gamma,
                                  std::uint64_t* score_pairs = nullptr) {
  const auto scores = mod_baseline_gates(x, router);
  return mod_layer_apply(x, block, scores, topk_select(to_doubles(scores), gamma), score_pairs);
}

}  // namespace sroute
