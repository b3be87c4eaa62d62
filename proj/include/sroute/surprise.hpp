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

// Surprise signals that drive routing. Hidden states are read as means of
// isotropic Gaussians with shared variance k, under which the KL divergence
// reduces to a scaled squared distance; mean squared residuals then stand in
// for the static and change surprises.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sroute/errors.hpp"
#include "sroute/ops.hpp"
#include "sroute/tensor.hpp"

namespace sroute {

// KL(N(mu_p, kI) || N(mu_q, kI)) = ||mu_p - mu_q||^2 / (2k).
inline double kl_isotropic(std::span<const double> mu_p, std::span<const double> mu_q, double k) {
  if (!(k > 0.0)) throw DomainError("kl_isotropic: variance must be positive, got " + std::to_string(k));
  if (mu_p.size() != mu_q.size()) {
    throw DimensionError("kl_isotropic: dims " + std::to_string(mu_p.size()) + " vs " + std::to_string(mu_q.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_p.size(); ++i) {
    const double diff = mu_p[i] - mu_q[i];
    acc += diff * diff;
  }
  return acc / (2.0 * k);
}

// D_st per token: (1/d) ||delta_t||^2.
template <typename T>
BasicTensor<T> static_surprise(const BasicTensor<T>& delta) {
  return row_mean_square(delta);
}

// D_ch per token: (1/d) ||delta_t - predicted_t||^2.
template <typename T>
BasicTensor<T> change_surprise(const BasicTensor<T>& delta, const BasicTensor<T>& predicted) {
  detail::require_same_shape("change_surprise", delta, predicted);
  return row_mean_square(sub(delta, predicted));
}

// ma_t = decay * ma_{t-1} + (1 - decay) * x_t with ma_{-1} = init. The result
// is a constant: no gradient flows through the average.
template <typename T>
BasicTensor<T> causal_moving_average(const BasicTensor<T>& values, double decay, double init) {
  if (!(decay >= 0.0 && decay < 1.0)) {
    throw DomainError("causal_moving_average: decay must lie in [0, 1), got " + std::to_string(decay));
  }
  BasicTensor<T> out(Shape{values.numel()});
  double ma = init;
  for (std::size_t t = 0; t < values.numel(); ++t) {
    ma = decay * ma + (1.0 - decay) * static_cast<double>(values[t]);
    out[t] = static_cast<T>(ma);
  }
  return out;
}

// Default initialisation of the average: the first value of the sequence.
template <typename T>
BasicTensor<T> causal_moving_average(const BasicTensor<T>& values, double decay) {
  return causal_moving_average(values, decay, values.numel() ? static_cast<double>(values[0]) : 0.0);
}

template <typename T>
struct RouterParams {
  BasicTensor<T> o_ce;  // prediction offset, [1], > 0
  BasicTensor<T> m_cu;  // novelty multiplier, [1], > 0
  // Multipliers on the scheduled inverse temperatures; only trained when
  // betas are configured learnable.
  BasicTensor<T> beta_ce_scale;
  BasicTensor<T> beta_cu_scale;
  double ma_decay = 0.9;

  static RouterParams init(double o_ce, double m_cu, double ma_decay, bool learnable_beta) {
    if (!(o_ce > 0.0)) throw ConfigError("router: o_ce must be positive");
    if (!(m_cu > 0.0)) throw ConfigError("router: m_cu must be positive");
    RouterParams p;
    p.o_ce = BasicTensor<T>::scalar(static_cast<T>(o_ce)).set_requires_grad();
    p.m_cu = BasicTensor<T>::scalar(static_cast<T>(m_cu)).set_requires_grad();
    p.beta_ce_scale = BasicTensor<T>::scalar(T{1}).set_requires_grad(learnable_beta);
    p.beta_cu_scale = BasicTensor<T>::scalar(T{1}).set_requires_grad(learnable_beta);
    p.ma_decay = ma_decay;
    return p;
  }
};

// Inverse temperatures for one step.
struct Betas {
  double ce = 1.0;
  double cu = 1.0;
};

template <typename T>
struct GatingSignals {
  BasicTensor<T> ce;
  BasicTensor<T> cu;
};

// CE_t = D_st - (D_ch - log o_ce);  CU_t = D_st - m_cu * MA_t.
template <typename T>
GatingSignals<T> gating_signals(const BasicTensor<T>& d_st, const BasicTensor<T>& d_ch, const BasicTensor<T>& ma,
                                const BasicTensor<T>& o_ce, const BasicTensor<T>& m_cu) {
  detail::require_same_shape("gating_signals", d_st, d_ch);
  detail::require_same_shape("gating_signals", d_st, ma);
  if (!(o_ce.numel() == 1 && o_ce[0] > T{0})) throw DomainError("gating_signals: o_ce must be a positive scalar");
  GatingSignals<T> s;
  s.ce = shift_by(sub(d_st, d_ch), log(o_ce));
  s.cu = sub(d_st, scale_by(ma, m_cu));
  return s;
}

template <typename T>
GatingSignals<T> gating_signals(const BasicTensor<T>& d_st, const BasicTensor<T>& d_ch, const BasicTensor<T>& ma,
                                const RouterParams<T>& params) {
  return gating_signals(d_st, d_ch, ma, params.o_ce, params.m_cu);
}

// g = a + b - ab with a = sigmoid(beta_ce CE), b = sigmoid(beta_cu CU).
// Evaluated as 1 - (1 - a)(1 - b) with 1 - a = sigmoid(-beta_ce CE): every
// step is monotone, so g stays monotone in CE and CU after rounding, even
// when both terms saturate. Betas are single-value tensors so they can
// optionally be learned.
template <typename T>
BasicTensor<T> probabilistic_or_gate(const BasicTensor<T>& ce, const BasicTensor<T>& cu, const BasicTensor<T>& beta_ce,
                                     const BasicTensor<T>& beta_cu) {
  detail::require_same_shape("probabilistic_or_gate", ce, cu);
  const auto not_a = sigmoid(scale(scale_by(ce, beta_ce), T{-1}));
  const auto not_b = sigmoid(scale(scale_by(cu, beta_cu), T{-1}));
  return add_scalar(scale(mul(not_a, not_b), T{-1}), T{1});
}

template <typename T>
BasicTensor<T> probabilistic_or_gate(const BasicTensor<T>& ce, const BasicTensor<T>& cu, double beta_ce, double beta_cu) {
  return probabilistic_or_gate(ce, cu, BasicTensor<T>::scalar(static_cast<T>(beta_ce)),
                               BasicTensor<T>::scalar(static_cast<T>(beta_cu)));
}

// Per-token routing signals of one layer.
template <typename T>
struct SurpriseBundle {
  BasicTensor<T> d_st;
  BasicTensor<T> d_ch;
  BasicTensor<T> ma;
  BasicTensor<T> ce;
  BasicTensor<T> cu;
  BasicTensor<T> g_cont;
  double beta_ce = 1.0;
  double beta_cu = 1.0;

  std::size_t size() const { return g_cont.numel(); }

  // Ranking key that orders tokens exactly as g_cont does but does not
  // saturate: log(1 - g) = -softplus(b_ce CE) - softplus(b_cu CU).
  std::vector<double> rank_keys() const {
    std::vector<double> keys(size());
    for (std::size_t t = 0; t < keys.size(); ++t) {
      keys[t] = detail::softplus_scalar(beta_ce * static_cast<double>(ce[t])) +
                detail::softplus_scalar(beta_cu * static_cast<double>(cu[t]));
    }
    return keys;
  }

  // A criterion "fires" when its squashed signal exceeds one half.
  double ce_fire_rate() const { return fire_rate(ce, beta_ce); }
  double cu_fire_rate() const { return fire_rate(cu, beta_cu); }

 private:
  static double fire_rate(const BasicTensor<T>& signal, double beta) {
    if (signal.numel() == 0) return 0.0;
    std::size_t fired = 0;
    for (std::size_t t = 0; t < signal.numel(); ++t) fired += detail::sigmoid_scalar(beta * static_cast<double>(signal[t])) > 0.5;
    return static_cast<double>(fired) / static_cast<double>(signal.numel());
  }
};

// Full gating path from a true residual and its prediction.
template <typename T>
SurpriseBundle<T> surprise_bundle(const BasicTensor<T>& delta, const BasicTensor<T>& delta_hat, const RouterParams<T>& params,
                                  const Betas& betas) {
  SurpriseBundle<T> b;
  b.d_st = static_surprise(delta);
  b.d_ch = change_surprise(delta, delta_hat);
  b.ma = causal_moving_average(b.d_st, params.ma_decay);
  auto signals = gating_signals(b.d_st, b.d_ch, b.ma, params);
  b.ce = signals.ce;
  b.cu = signals.cu;
  const auto beta_ce = scale_by(BasicTensor<T>::scalar(static_cast<T>(betas.ce)), params.beta_ce_scale);
  const auto beta_cu = scale_by(BasicTensor<T>::scalar(static_cast<T>(betas.cu)), params.beta_cu_scale);
  b.beta_ce = static_cast<double>(beta_ce[0]);
  b.beta_cu = static_cast<double>(beta_cu[0]);
  b.g_cont = probabilistic_or_gate(b.ce, b.cu, beta_ce, beta_cu);
  return b;
}

}  // namespace sroute
