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

#include "sroute/ops.hpp"
#include "sroute/tensor.hpp"

namespace sroute {

struct LossWeights {
  double pred = 0.05;
  double causal = 0.01;
  double g_reg = 0.001;
};

// L1 sparsity pressure on continuous gates: their mean.
template <typename T>
BasicTensor<T> g_reg_loss(const BasicTensor<T>& gates) {
  return mean(gates);
}

// L_LM + l_pred * L_pred + l_causal * L_causal + l_g_reg * L_g_reg
template <typename T>
BasicTensor<T> total_loss(const BasicTensor<T>& lm, const BasicTensor<T>& pred, const BasicTensor<T>& causal,
                          const BasicTensor<T>& g_reg, const LossWeights& w) {
  auto total = add(lm, scale(pred, static_cast<T>(w.pred)));
  total = add(total, scale(causal, static_cast<T>(w.causal)));
  return add(total, scale(g_reg, static_cast<T>(w.g_reg)));
}

inline double total_loss(double lm, double pred, double causal, double g_reg, const LossWeights& w) {
  return lm + w.pred * pred + w.causal * causal + w.g_reg * g_reg;
}

}  // namespace sroute
