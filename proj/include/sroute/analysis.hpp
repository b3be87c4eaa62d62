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

// Telemetry summaries: CE/CU dominance over training, per-layer capacity
// profile, and predictor-loss curves, with CSV writers for plotting.

#include <algorithm>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sroute/errors.hpp"
#include "sroute/train.hpp"

namespace sroute {

inline std::vector<StepTelemetry> read_telemetry(std::istream& in) {
  std::vector<StepTelemetry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("telemetry line " + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("error")) continue;  // divergence diagnostics
    out.push_back(StepTelemetry::from_json(j));
  }
  return out;
}

struct DominancePoint {
  std::size_t step = 0;
  double ce_rate = 0.0;  // mean over surprise layers
  double cu_rate = 0.0;
  std::optional<double> ce_share;  // ce / (ce + cu); empty when neither fires
};

struct LayerProfile {
  std::size_t index = 0;
  LayerKind kind = LayerKind::kDense;
  double mean_capacity = 1.0;
  std::optional<double> final_l_pred;
};

struct PredPoint {
  std::size_t step = 0;
  double loss_pred = 0.0;
};

struct TelemetrySummary {
  std::vector<DominancePoint> dominance;
  std::vector<LayerProfile> layers;
  std::vector<PredPoint> pred_curve;
  std::optional<double> ce_share_first;  // first 10% of steps
  std::optional<double> ce_share_last;   // last 10% of steps
  double loss_pred_first = 0.0;
  double loss_pred_last = 0.0;
  double loss_lm_first = 0.0;
  double loss_lm_last = 0.0;
  std::size_t steps = 0;
};

namespace detail {

// Pooled CE share over a window: total CE fire rate over total fire rate.
inline std::optional<double> pooled_share(std::span<const DominancePoint> pts) {
  double ce = 0.0, cu = 0.0;
  for (const auto& p : pts) {
    ce += p.ce_rate;
    cu += p.cu_rate;
  }
  if (ce + cu <= 0.0) return std::nullopt;
  return ce / (ce + cu);
}

inline double window_mean(std::span<const StepTelemetry> steps, double StepTelemetry::*field) {
  if (steps.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : steps) s += t.*field;
  return s / static_cast<double>(steps.size());
}

}  // namespace detail

// Size of the leading / trailing window: 10% of the run, at least one step.
inline std::size_t edge_window(std::size_t steps) { return std::max<std::size_t>(1, steps / 10); }

inline TelemetrySummary analyze_telemetry(std::span<const StepTelemetry> steps) {
  if (steps.empty()) throw InputError("analyze: empty telemetry");
  TelemetrySummary s;
  s.steps = steps.size();
  for (const auto& rec : steps) {
    DominancePoint p;
    p.step = rec.step;
    std::size_t n = 0;
    for (const auto& l : rec.layer) {
      if (!l.has_surprise) continue;
      p.ce_rate += l.ce_fire_rate;
      p.cu_rate += l.cu_fire_rate;
      ++n;
    }
    if (n) {
      p.ce_rate /= static_cast<double>(n);
      p.cu_rate /= static_cast<double>(n);
    }
    if (p.ce_rate + p.cu_rate > 0.0) p.ce_share = p.ce_rate / (p.ce_rate + p.cu_rate);
    s.dominance.push_back(p);
    s.pred_curve.push_back({rec.step, rec.loss_pred});
  }
  const std::size_t w = edge_window(steps.size());
  const std::span<const DominancePoint> dom(s.dominance);
  s.ce_share_first = detail::pooled_share(dom.first(w));
  s.ce_share_last = detail::pooled_share(dom.last(w));
  s.loss_pred_first = detail::window_mean(steps.first(w), &StepTelemetry::loss_pred);
  s.loss_pred_last = detail::window_mean(steps.last(w), &StepTelemetry::loss_pred);
  s.loss_lm_first = detail::window_mean(steps.first(w), &StepTelemetry::loss_lm);
  s.loss_lm_last = detail::window_mean(steps.last(w), &StepTelemetry::loss_lm);

  // Layer profile keyed by layer index as it appears in the records.
  for (const auto& rec : steps) {
    for (const auto& l : rec.layer) {
      auto it = std::find_if(s.layers.begin(), s.layers.end(), [&](const LayerProfile& p) { return p.index == l.index; });
      if (it == s.layers.end()) {
        s.layers.push_back({l.index, l.kind, 0.0, std::nullopt});
        it = s.layers.end() - 1;
      }
      it->mean_capacity += l.capacity;
      if (l.l_pred) it->final_l_pred = l.l_pred;
    }
  }
  for (auto& p : s.layers) p.mean_capacity /= static_cast<double>(steps.size());
  std::sort(s.layers.begin(), s.layers.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return s;
}

inline void write_dominance_csv(std::ostream& os, const TelemetrySummary& s) {
  os << "step,ce_rate,cu_rate,ce_share\n";
  for (const auto& p : s.dominance) {
    os << p.step << ',' << p.ce_rate << ',' << p.cu_rate << ',';
    if (p.ce_share) os << *p.ce_share;
    os << '\n';
  }
}

inline void write_capacity_csv(std::ostream& os, const TelemetrySummary& s) {
  os << "layer,kind,mean_capacity,final_l_pred\n";
  for (const auto& l : s.layers) {
    os << l.index << ',' << layer_kind_name(l.kind) << ',' << l.mean_capacity << ',';
    if (l.final_l_pred) os << *l.final_l_pred;
    os << '\n';
  }
}

inline void write_pred_csv(std::ostream& os, const TelemetrySummary& s, const std::string& variant = "") {
  os << "variant,step,loss_pred\n";
  for (const auto& p : s.pred_curve) os << variant << ',' << p.step << ',' << p.loss_pred << '\n';
}

inline nlohmann::json summary_json(const TelemetrySummary& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers) {
    layers.push_back({{"index", l.index},
                      {"kind", layer_kind_name(l.kind)},
                      {"mean_capacity", l.mean_capacity},
                      {"final_l_pred", opt(l.final_l_pred)}});
  }
  return {{"steps", s.steps},
          {"ce_share_first", opt(s.ce_share_first)},
          {"ce_share_last", opt(s.ce_share_last)},
          {"loss_pred_first", s.loss_pred_first},
          {"loss_pred_last", s.loss_pred_last},
          {"loss_lm_first", s.loss_lm_first},
          {"loss_lm_last", s.loss_lm_last},
          {"layers", std::move(layers)}};
}

}  // namespace sroute
