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

// AdamW with decoupled weight decay and per-group learning rates, plus the
// learning-rate and router inverse-temperature schedules.

#include <cmath>
#include <numbers>
#include <vector>

#include "sroute/errors.hpp"
#include "sroute/tensor.hpp"
#include "sroute/transformer.hpp"

namespace sroute {

// Linear warmup over the first warmup_frac of steps (0 at step 0, 1 at the
// end of warmup) followed by cosine decay to 0 at `total`.
inline double lr_schedule(std::size_t step, std::size_t total, double warmup_frac) {
  if (total == 0) throw ConfigError("lr_schedule: total steps must be positive");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw ConfigError("lr_schedule: warmup_frac must lie in [0, 1)");
  const auto warmup = static_cast<std::size_t>(std::round(warmup_frac * static_cast<double>(total)));
  if (step >= total) return 0.0;
  if (step < warmup) return static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Cosine ramp of the inverse temperature from lo (step 0) to hi (step >= ramp_steps).
inline double beta_schedule(std::size_t step, double lo = 0.1, double hi = 100.0, std::size_t ramp_steps = 100) {
  if (ramp_steps == 0 || step >= ramp_steps) return hi;
  const double progress = static_cast<double>(step) / static_cast<double>(ramp_steps);
  return lo + (hi - lo) * 0.5 * (1.0 - std::cos(std::numbers::pi * progress));
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct GroupRates {
  double backbone = 1e-5;
  double predictor = 1e-3;
  double router = 1e-2;

  double of(ParamGroup g) const {
    switch (g) {
      case ParamGroup::kBackbone: return backbone;
      case ParamGroup::kPredictor: return predictor;
      case ParamGroup::kRouter: return router;
    }
    return 0.0;
  }
};

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedParam<T>> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  // One update. `lr_scale` multiplies every group rate (the schedule value).
  // Weight decay applies to matrices only; gains, biases and router scalars
  // are exempt. Matrices that received no gradient still decay.
  void step(const GroupRates& rates, double lr_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].tensor;
      if (!p.requires_grad()) continue;
      const double lr = rates.of(params_[i].group) * lr_scale;
      const double decay = p.rank() >= 2 ? opts_.weight_decay : 0.0;
      auto data = p.data();
      const auto grad = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
        double w = static_cast<double>(data[j]);
        w -= lr * decay * w;
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        w -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
        data[j] = static_cast<T>(w);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<NamedParam<T>> params_;
  AdamWOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace sroute
