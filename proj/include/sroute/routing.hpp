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

// Token selection (fixed-capacity Top-K and variable-capacity threshold),
// the causal routers used at generation time, and the MoD score router.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sroute/errors.hpp"
#include "sroute/ops.hpp"
#include "sroute/rng.hpp"
#include "sroute/tensor.hpp"
#include "sroute/transformer.hpp"

namespace sroute {

struct RoutingDecision {
  std::vector<std::size_t> selected;  // ascending
  std::vector<std::uint8_t> mask;     // mask[t] == 1 iff t in selected
  std::vector<double> gates;
  std::size_t capacity_used = 0;

  std::size_t length() const { return mask.size(); }
  double capacity_fraction() const {
    return mask.empty() ? 0.0 : static_cast<double>(capacity_used) / static_cast<double>(mask.size());
  }

  static RoutingDecision from_mask(std::vector<std::uint8_t> mask, std::vector<double> gates) {
    RoutingDecision d;
    for (std::size_t t = 0; t < mask.size(); ++t)
      if (mask[t]) d.selected.push_back(t);
    d.capacity_used = d.selected.size();
    d.mask = std::move(mask);
    d.gates = std::move(gates);
    return d;
  }
};

// k = floor(gamma * T), clamped to at least one token.
inline std::size_t fixed_capacity(double gamma, std::size_t length) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("capacity gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
  // The slack absorbs representation error such as 0.29 * 100 = 28.999...
  const auto k = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(length) + 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(length, 1));
}

// Selects the k = floor(gamma T) highest-ranked tokens. Ties go to the earlier
// index. `rank_keys` orders tokens when given (it must be monotone in gates);
// otherwise the gates themselves are ranked.
inline RoutingDecision topk_select(std::span<const double> gates, double gamma, std::span<const double> rank_keys = {}) {
  const std::size_t n = gates.size();
  if (n == 0) throw DimensionError("topk_select: empty sequence");
  if (!rank_keys.empty() && rank_keys.size() != n) throw DimensionError("topk_select: rank keys do not match gates");
  const std::size_t k = fixed_capacity(gamma, n);
  const std::span<const double> keys = rank_keys.empty() ? gates : rank_keys;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1;
  return RoutingDecision::from_mask(std::move(mask), std::vector<double>(gates.begin(), gates.end()));
}

// Selects every token with gate >= threshold; may be empty or complete.
inline RoutingDecision threshold_select(std::span<const double> gates, double threshold) {
  std::vector<std::uint8_t> mask(gates.size(), 0);
  for (std::size_t t = 0; t < gates.size(); ++t) mask[t] = gates[t] >= threshold;
  return RoutingDecision::from_mask(std::move(mask), std::vector<double>(gates.begin(), gates.end()));
}

template <typename T>
std::vector<double> to_doubles(const BasicTensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

// Binary target mask for router distillation; carries no tape history.
template <typename T>
BasicTensor<T> distillation_targets(const RoutingDecision& decision) {
  BasicTensor<T> out(Shape{decision.mask.size()});
  for (std::size_t t = 0; t < decision.mask.size(); ++t) out[t] = decision.mask[t] ? T{1} : T{0};
  return out;
}

// Two-layer MLP: in -> hidden (SiLU) -> 1 logit.
template <typename T>
struct CausalRouterWeights {
  BasicTensor<T> w1, b1, w2, b2;

  std::size_t input_width() const { return w1.dim(0); }

  static CausalRouterWeights init(Rng& rng, std::size_t input, std::size_t hidden, double stddev = 0.02) {
    CausalRouterWeights w;
    w.w1 = make_param<T>(rng, {input, hidden}, stddev);
    w.b1 = make_filled_param<T>({hidden}, T{0});
    w.w2 = make_param<T>(rng, {hidden, 1}, stddev);
    w.b2 = make_filled_param<T>({1}, T{0});
    return w;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    const auto g = ParamGroup::kRouter;
    out.push_back({prefix + "w1", g, w1});
    out.push_back({prefix + "b1", g, b1});
    out.push_back({prefix + "w2", g, w2});
    out.push_back({prefix + "b2", g, b2});
  }
};

// Router input rows: x_t alone, or [x_t || x_{t-1}] (zero vector at t = 0)
// when `temporal`.
template <typename T>
BasicTensor<T> causal_router_inputs(const BasicTensor<T>& x, bool temporal) {
  return temporal ? concat_cols(x, shift_rows_down(x)) : x;
}

// Per-token selection logits, [T x 1].
template <typename T>
BasicTensor<T> causal_router_logits(const BasicTensor<T>& inputs, const CausalRouterWeights<T>& w) {
  if (inputs.rank() != 2 || inputs.cols() != w.input_width()) {
    throw DimensionError("causal router: input " + shape_str(inputs.shape()) + " vs width " +
                         std::to_string(w.input_width()));
  }
  auto hidden = silu(add_row(matmul(inputs, w.w1), w.b1));
  return add_row(matmul(hidden, w.w2), w.b2);
}

// Per-token selection probabilities, [T x 1].
template <typename T>
BasicTensor<T> causal_router_forward(const BasicTensor<T>& inputs, const CausalRouterWeights<T>& w) {
  return sigmoid(causal_router_logits(inputs, w));
}

// Inference-time routing: select t iff the router probability is >= 0.5.
template <typename T>
RoutingDecision causal_router_decision(const BasicTensor<T>& probs, std::span<const double> gates = {}) {
  std::vector<std::uint8_t> mask(probs.numel(), 0);
  for (std::size_t t = 0; t < probs.numel(); ++t) mask[t] = probs[t] >= T{0.5};
  std::vector<double> g = gates.empty() ? to_doubles(probs) : std::vector<double>(gates.begin(), gates.end());
  return RoutingDecision::from_mask(std::move(mask), std::move(g));
}

// Linear MoD router: r_t = x_t . w + b.
template <typename T>
struct ModRouterWeights {
  BasicTensor<T> w, b;

  static ModRouterWeights init(Rng& rng, std::size_t d, double stddev = 0.02) {
    ModRouterWeights r;
    r.w = make_param<T>(rng, {d, 1}, stddev);
    r.b = make_filled_param<T>({1}, T{0});
    return r;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    out.push_back({prefix + "w", ParamGroup::kRouter, w});
    out.push_back({prefix + "b", ParamGroup::kRouter, b});
  }
};

// Raw scores r_t, [T x 1].
template <typename T>
BasicTensor<T> mod_baseline_gates(const BasicTensor<T>& x, const ModRouterWeights<T>& router) {
  if (x.rank() != 2 || x.cols() != router.w.dim(0)) {
    throw DimensionError("mod router: input " + shape_str(x.shape()) + " vs width " + std::to_string(router.w.dim(0)));
  }
  return add_row(matmul(x, router.w), router.b);
}

}  // namespace sroute
