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

// Analytic attention / KV cost model and its measured counterpart.
//
// Cost unit: causal score pairs per head. A layer attending among n tokens
// costs n(n+1)/2; a routed layer executing k of T tokens costs k(k+1)/2.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sroute/config.hpp"
#include "sroute/data.hpp"
#include "sroute/errors.hpp"
#include "sroute/model.hpp"
#include "sroute/routing.hpp"
#include "sroute/train.hpp"

namespace sroute {

namespace detail {
inline void require_fraction(const char* what, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1], got " + std::to_string(v));
}
}  // namespace detail

// Attention saving relative to dense in the large-T limit. Interleaved: half
// the layers are routed, each costing gamma^2 of a dense layer.
inline double attention_savings_fixed(double gamma, bool interleaved) {
  detail::require_fraction("gamma", gamma);
  const double routed = 1.0 - gamma * gamma;
  return interleaved ? routed / 2.0 : routed;
}

inline double attention_savings_dynamic(double gamma_bar, bool interleaved = true) {
  detail::require_fraction("gamma_bar", gamma_bar);
  return attention_savings_fixed(gamma_bar, interleaved);
}

// Inverts attention_savings_dynamic.
inline double implied_gamma_bar(double saving, bool interleaved = true) {
  const double routed = interleaved ? 2.0 * saving : saving;
  if (!(routed >= 0.0 && routed <= 1.0)) throw DomainError("implied_gamma_bar: saving " + std::to_string(saving) + " out of range");
  return std::sqrt(1.0 - routed);
}

inline double kv_savings(double gamma_bar, bool interleaved) {
  detail::require_fraction("gamma_bar", gamma_bar);
  const double routed = 1.0 - gamma_bar;
  return interleaved ? routed / 2.0 : routed;
}

// Exact pairs for n tokens under causal attention.
inline std::uint64_t pairs_for(std::size_t n) { return causal_pairs(n); }

// Analytic per-layer pair counts for a sequence of length T. `executed[i]` is
// the number of tokens layer i processes (ignored for non-routed layers).
inline std::vector<std::uint64_t> analytic_score_pairs(const LayerPattern& pattern, std::size_t length,
                                                       std::span<const std::size_t> executed) {
  if (executed.size() != pattern.size()) throw DimensionError("analytic_score_pairs: one count per layer required");
  std::vector<std::uint64_t> out(pattern.size());
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    out[i] = pairs_for(is_routed(pattern[i]) ? executed[i] : length);
  }
  return out;
}

// Fixed-capacity form: every routed layer executes fixed_capacity(gamma, T).
inline std::vector<std::uint64_t> analytic_score_pairs(const LayerPattern& pattern, std::size_t length, double gamma) {
  std::vector<std::size_t> executed(pattern.size(), fixed_capacity(gamma, length));
  return analytic_score_pairs(pattern, length, executed);
}

struct LayerCost {
  std::size_t index = 0;
  LayerKind kind = LayerKind::kDense;
  double attention_cost = 1.0;  // relative to a dense layer
  std::uint64_t score_pairs = 0;
  std::uint64_t analytic_pairs = 0;
  std::uint64_t kv_entries = 0;
  double capacity = 1.0;
};

struct SavingsReport {
  std::string pattern;
  std::vector<LayerCost> layers;
  double attention_workload = 1.0;
  double attention_saving = 0.0;  // 1 - attention_workload
  double kv_saving = 0.0;
  std::uint64_t measured_pairs = 0;
  std::uint64_t analytic_pairs = 0;
  std::int64_t analytic_delta = 0;  // measured - analytic
  std::optional<double> gamma_bar;  // mean realised capacity of routed layers
  std::size_t sequences = 0;

  nlohmann::json to_json() const {
    nlohmann::json ls = nlohmann::json::array();
    for (const auto& l : layers) {
      ls.push_back({{"index", l.index},
                    {"kind", layer_kind_name(l.kind)},
                    {"attention_cost", l.attention_cost},
                    {"score_pairs", l.score_pairs},
                    {"analytic_pairs", l.analytic_pairs},
                    {"kv_entries", l.kv_entries},
                    {"capacity", l.capacity}});
    }
    return {{"pattern", pattern},
            {"layers", std::move(ls)},
            {"attention_workload", attention_workload},
            {"attention_saving", attention_saving},
            {"kv_saving", kv_saving},
            {"measured_pairs", measured_pairs},
            {"analytic_pairs", analytic_pairs},
            {"analytic_delta", analytic_delta},
            {"gamma_bar", gamma_bar ? nlohmann::json(*gamma_bar) : nlohmann::json(nullptr)},
            {"sequences", sequences}};
  }
};

// Purely analytic report (large-T limit) for a pattern at capacity gamma.
inline SavingsReport analytic_savings_report(const LayerPattern& pattern, double gamma) {
  detail::require_fraction("gamma", gamma);
  SavingsReport r;
  r.pattern = format_pattern(pattern);
  double cost = 0.0, kv = 0.0;
  std::size_t routed = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    LayerCost l;
    l.index = i;
    l.kind = pattern[i];
    if (is_routed(pattern[i])) {
      l.attention_cost = gamma * gamma;
      l.capacity = gamma;
      ++routed;
    }
    cost += l.attention_cost;
    kv += l.capacity;
    r.layers.push_back(l);
  }
  const double n = static_cast<double>(pattern.size());
  r.attention_workload = cost / n;
  r.attention_saving = 1.0 - r.attention_workload;
  r.kv_saving = 1.0 - kv / n;
  if (routed) r.gamma_bar = gamma;
  return r;
}

enum class CostPath { kParallel, kDecode };

// Runs every block through inference (parallel forward or token-by-token
// decoding) and compares the counted work with the analytic model evaluated
// at the realised per-layer capacities.
template <typename T>
SavingsReport measure_runtime_costs(const Model<T>& model, std::span<const TokenBlock> blocks, Routing routing,
                                    CostPath path = CostPath::kParallel) {
  if (blocks.empty()) throw InputError("measure_runtime_costs: no blocks");
  typename BasicTape<T>::Pause no_grad;
  const auto& pattern = model.pattern();
  const std::size_t L = pattern.size();
  const Betas betas = final_betas(model.config());

  SavingsReport r;
  r.pattern = format_pattern(pattern);
  r.layers.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    r.layers[i].index = i;
    r.layers[i].kind = pattern[i];
    r.layers[i].capacity = 0.0;
  }
  std::uint64_t dense_pairs = 0, dense_kv = 0, kv_total = 0;
  double routed_capacity = 0.0;
  std::size_t routed_terms = 0;

  for (const auto& b : blocks) {
    const std::size_t n = b.inputs.size();
    CostMeter meter(L);
    std::vector<std::size_t> executed(L, n);
    if (path == CostPath::kParallel) {
      ForwardOptions opt;
      opt.routing = routing;
      opt.betas = betas;
      opt.meter = &meter;
      auto res = model.forward(b.inputs, opt);
      for (const auto& tr : res.traces)
        if (is_routed(tr.kind)) executed[tr.layer] = tr.decision.capacity_used;
    } else {
      if (routing != Routing::kCausal) throw ConfigError("decode path requires causal routing");
      auto state = model.start_decoding();
      for (int tok : b.inputs) model.decode_step(tok, state, betas, &meter);
      for (std::size_t i = 0; i < L; ++i) {
        std::size_t k = 0;
        for (auto e : state.layers[i].executed) k += e;
        executed[i] = k;
      }
    }
    const auto analytic = analytic_score_pairs(pattern, n, executed);
    for (std::size_t i = 0; i < L; ++i) {
      auto& l = r.layers[i];
      l.score_pairs += meter.score_pairs[i];
      l.analytic_pairs += analytic[i];
      l.kv_entries += meter.kv_entries[i];
      l.capacity += static_cast<double>(executed[i]) / static_cast<double>(n);
      if (is_routed(pattern[i])) {
        routed_capacity += static_cast<double>(executed[i]) / static_cast<double>(n);
        ++routed_terms;
      }
      dense_kv += n;
      kv_total += meter.kv_entries[i];
    }
    dense_pairs += L * pairs_for(n);
    ++r.sequences;
  }
  const double seqs = static_cast<double>(r.sequences);
  const double dense_layer_pairs = static_cast<double>(dense_pairs) / static_cast<double>(L);
  for (auto& l : r.layers) {
    l.capacity /= seqs;
    l.attention_cost = static_cast<double>(l.score_pairs) / dense_layer_pairs;
    r.measured_pairs += l.score_pairs;
    r.analytic_pairs += l.analytic_pairs;
  }
  r.analytic_delta = static_cast<std::int64_t>(r.measured_pairs) - static_cast<std::int64_t>(r.analytic_pairs);
  r.attention_workload = static_cast<double>(r.measured_pairs) / static_cast<double>(dense_pairs);
  r.attention_saving = 1.0 - r.attention_workload;
  r.kv_saving = 1.0 - static_cast<double>(kv_total) / static_cast<double>(dense_kv);
  if (routed_terms) r.gamma_bar = routed_capacity / static_cast<double>(routed_terms);
  return r;
}

}  // namespace sroute
