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

// Held-out evaluation: next-byte loss under either routing mode and the
// agreement between causal routers and the non-causal selections they mimic.

#include <cmath>
#include <span>
#include <vector>

#include "sroute/data.hpp"
#include "sroute/errors.hpp"
#include "sroute/model.hpp"
#include "sroute/train.hpp"

namespace sroute {

struct EvalResult {
  double nats_per_byte = 0.0;
  double perplexity = 1.0;
  std::size_t tokens = 0;
};

// Mean next-byte cross-entropy over every position of every block, using the
// end-of-schedule inverse temperatures. Causal routing consults only the
// causal routers.
template <typename T>
EvalResult eval_perplexity(const Model<T>& model, std::span<const TokenBlock> blocks, Routing routing) {
  if (blocks.empty()) throw InputError("eval: no blocks");
  typename BasicTape<T>::Pause no_grad;
  ForwardOptions opt;
  opt.routing = routing;
  opt.betas = final_betas(model.config());
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : blocks) {
    auto res = model.forward(b.inputs, opt);
    const auto ce = cross_entropy(res.logits, std::span<const int>(b.targets));
    total += static_cast<double>(ce[0]) * static_cast<double>(b.targets.size());
    tokens += b.targets.size();
  }
  EvalResult r;
  r.tokens = tokens;
  r.nats_per_byte = total / static_cast<double>(tokens);
  r.perplexity = std::exp(r.nats_per_byte);
  return r;
}

struct AgreementStats {
  std::size_t layer = 0;
  LayerKind kind = LayerKind::kDense;
  std::size_t tokens = 0;
  std::size_t agree = 0;
  std::size_t true_pos = 0, false_pos = 0, false_neg = 0;

  double accuracy() const { return tokens ? static_cast<double>(agree) / static_cast<double>(tokens) : 0.0; }
  // Positive class: "token is executed".
  double f1() const {
    const double denom = 2.0 * static_cast<double>(true_pos) + static_cast<double>(false_pos + false_neg);
    return denom > 0 ? 2.0 * static_cast<double>(true_pos) / denom : 1.0;
  }
};

// Per routed layer: how often the causal router's decision (p >= 0.5)
// matches the non-causal selection on the same inputs.
template <typename T>
std::vector<AgreementStats> causal_router_agreement(const Model<T>& model, std::span<const TokenBlock> blocks) {
  if (blocks.empty()) throw InputError("agreement: no blocks");
  typename BasicTape<T>::Pause no_grad;
  ForwardOptions opt;
  opt.routing = Routing::kNonCausal;
  opt.betas = final_betas(model.config());
  std::vector<AgreementStats> stats;
  for (const auto& b : blocks) {
    auto res = model.forward(b.inputs, opt);
    std::size_t slot = 0;
    for (const auto& tr : res.traces) {
      if (!is_routed(tr.kind)) continue;
      if (slot == stats.size()) stats.push_back({tr.layer, tr.kind});
      auto& s = stats[slot++];
      for (std::size_t t = 0; t < tr.decision.mask.size(); ++t) {
        const bool pred = tr.router_probs[t] >= 0.5;
        const bool target = tr.decision.mask[t] != 0;
        ++s.tokens;
        s.agree += pred == target;
        s.true_pos += pred && target;
        s.false_pos += pred && !target;
        s.false_neg += !pred && target;
      }
    }
  }
  return stats;
}

// Token-weighted accuracy over all routed layers.
inline double mean_agreement(std::span<const AgreementStats> stats) {
  std::size_t agree = 0, tokens = 0;
  for (const auto& s : stats) {
    agree += s.agree;
    tokens += s.tokens;
  }
  return tokens ? static_cast<double>(agree) / static_cast<double>(tokens) : 0.0;
}

}  // namespace sroute
