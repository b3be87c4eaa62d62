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

// Loss assembly, per-group AdamW optimisation with schedules, and the
// per-step telemetry record (one JSON object per line).

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sroute/config.hpp"
#include "sroute/data.hpp"
#include "sroute/errors.hpp"
#include "sroute/losses.hpp"
#include "sroute/model.hpp"
#include "sroute/optim.hpp"

namespace sroute {

inline constexpr int kTelemetrySchemaVersion = 1;

struct LayerTelemetry {
  std::size_t index = 0;
  LayerKind kind = LayerKind::kDense;
  bool has_surprise = false;
  double d_st_mean = 0.0;
  double d_ch_mean = 0.0;
  double ce_fire_rate = 0.0;
  double cu_fire_rate = 0.0;
  double capacity = 1.0;  // fraction of tokens executed
  bool routed = false;
  double cr_agreement = 0.0;  // causal router vs applied mask
  std::optional<double> l_pred;
};

struct StepTelemetry {
  std::size_t step = 0;
  double loss_total = 0.0;
  double loss_lm = 0.0;
  double loss_pred = 0.0;
  double loss_causal = 0.0;
  double loss_greg = 0.0;
  double lr_scale = 0.0;
  double beta = 0.0;
  std::vector<LayerTelemetry> layer;

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layer) {
      nlohmann::json j = {{"index", l.index}, {"kind", layer_kind_name(l.kind)}};
      if (l.has_surprise) {
        j["d_st_mean"] = l.d_st_mean;
        j["d_ch_mean"] = l.d_ch_mean;
        j["ce_fire_rate"] = l.ce_fire_rate;
        j["cu_fire_rate"] = l.cu_fire_rate;
      } else {
        j["d_st_mean"] = nullptr;
        j["d_ch_mean"] = nullptr;
        j["ce_fire_rate"] = nullptr;
        j["cu_fire_rate"] = nullptr;
      }
      j["capacity"] = l.capacity;
      j["cr_agreement"] = l.routed ? nlohmann::json(l.cr_agreement) : nlohmann::json(nullptr);
      j["l_pred"] = l.l_pred ? nlohmann::json(*l.l_pred) : nlohmann::json(nullptr);
      layers.push_back(std::move(j));
    }
    return {{"schema_version", kTelemetrySchemaVersion},
            {"step", step},
            {"loss_total", loss_total},
            {"loss_lm", loss_lm},
            {"loss_pred", loss_pred},
            {"loss_causal", loss_causal},
            {"loss_greg", loss_greg},
            {"lr_scale", lr_scale},
            {"beta", beta},
            {"layer", std::move(layers)}};
  }

  static StepTelemetry from_json(const nlohmann::json& j) {
    if (j.value("schema_version", 0) != kTelemetrySchemaVersion) {
      throw InputError("telemetry: unsupported schema_version " + j.value("schema_version", nlohmann::json()).dump());
    }
    StepTelemetry s;
    s.step = j.at("step").get<std::size_t>();
    s.loss_total = j.value("loss_total", 0.0);
    s.loss_lm = j.at("loss_lm").get<double>();
    s.loss_pred = j.at("loss_pred").get<double>();
    s.loss_causal = j.at("loss_causal").get<double>();
    s.loss_greg = j.at("loss_greg").get<double>();
    s.lr_scale = j.value("lr_scale", 0.0);
    s.beta = j.value("beta", 0.0);
    for (const auto& lj : j.at("layer")) {
      LayerTelemetry l;
      l.index = lj.at("index").get<std::size_t>();
      l.kind = parse_layer_kind(lj.at("kind").get<std::string>());
      l.has_surprise = !lj.at("d_st_mean").is_null();
      if (l.has_surprise) {
        l.d_st_mean = lj.at("d_st_mean").get<double>();
        l.d_ch_mean = lj.at("d_ch_mean").get<double>();
        l.ce_fire_rate = lj.at("ce_fire_rate").get<double>();
        l.cu_fire_rate = lj.at("cu_fire_rate").get<double>();
      }
      l.capacity = lj.at("capacity").get<double>();
      l.routed = lj.contains("cr_agreement") && !lj.at("cr_agreement").is_null();
      if (l.routed) l.cr_agreement = lj.at("cr_agreement").get<double>();
      if (lj.contains("l_pred") && !lj.at("l_pred").is_null()) l.l_pred = lj.at("l_pred").get<double>();
      s.layer.push_back(l);
    }
    return s;
  }
};

inline LossWeights loss_weights(const ModelConfig& cfg) {
  return {cfg.lambda_pred, cfg.lambda_causal, cfg.lambda_g_reg};
}

inline GroupRates group_rates(const ModelConfig& cfg) {
  return {cfg.lr_backbone, cfg.lr_predictor, cfg.lr_router};
}

inline Betas scheduled_betas(const ModelConfig& cfg, std::size_t step) {
  const double b = beta_schedule(step, cfg.beta_min, cfg.beta_max, cfg.beta_warmup_steps);
  return {b, b};
}

// Inverse temperatures once the schedule has finished (evaluation, decoding).
inline Betas final_betas(const ModelConfig& cfg) { return {cfg.beta_max, cfg.beta_max}; }

namespace detail {

// Running per-layer sums over the sequences of one step.
struct LayerAccumulator {
  LayerTelemetry sum;
  std::size_t sequences = 0;
  std::size_t pred_terms = 0;
  double l_pred = 0.0;

  template <typename T>
  void add(const LayerTrace<T>& tr) {
    if (sequences == 0) sum.capacity = 0.0;
    sum.index = tr.layer;
    sum.kind = tr.kind;
    sum.has_surprise = tr.has_surprise && tr.bundle.size() > 0;
    ++sequences;
    if (tr.l_pred) {
      l_pred += *tr.l_pred;
      ++pred_terms;
    }
    if (sum.has_surprise) {
      double st = 0, ch = 0;
      for (std::size_t t = 0; t < tr.bundle.size(); ++t) {
        st += tr.bundle.d_st[t];
        ch += tr.bundle.d_ch[t];
      }
      sum.d_st_mean += st / static_cast<double>(tr.bundle.size());
      sum.d_ch_mean += ch / static_cast<double>(tr.bundle.size());
      sum.ce_fire_rate += tr.bundle.ce_fire_rate();
      sum.cu_fire_rate += tr.bundle.cu_fire_rate();
    }
    if (is_routed(tr.kind)) {
      sum.routed = true;
      sum.capacity += tr.decision.capacity_fraction();
      std::size_t agree = 0;
      for (std::size_t t = 0; t < tr.decision.mask.size(); ++t) {
        agree += (tr.router_probs[t] >= 0.5) == (tr.decision.mask[t] != 0);
      }
      sum.cr_agreement += static_cast<double>(agree) / static_cast<double>(tr.decision.mask.size());
    }
  }

  LayerTelemetry finish() const {
    LayerTelemetry out = sum;
    const double n = static_cast<double>(std::max<std::size_t>(sequences, 1));
    out.d_st_mean /= n;
    out.d_ch_mean /= n;
    out.ce_fire_rate /= n;
    out.cu_fire_rate /= n;
    out.capacity = sum.routed ? sum.capacity / n : 1.0;
    out.cr_agreement /= n;
    if (pred_terms) out.l_pred = l_pred / static_cast<double>(pred_terms);
    return out;
  }
};

}  // namespace detail

// Owns the optimiser and advances one model through training steps.
class Trainer {
 public:
  Trainer(Model<float>& model, const ModelConfig& cfg)
      : model_(model),
        cfg_(cfg),
        optimizer_(model.parameters(), AdamWOptions{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay}) {}

  // One optimiser update over `micro_batches` (gradient accumulation: each
  // inner vector is one micro-batch of sequences). Losses are averaged over
  // every sequence of the step.
  StepTelemetry step(const std::vector<std::vector<TokenBlock>>& micro_batches) {
    StepTelemetry rec;
    rec.step = step_;
    rec.lr_scale = lr_schedule(step_, std::max<std::size_t>(cfg_.total_steps, 1), cfg_.warmup_frac);
    const Betas betas = scheduled_betas(cfg_, step_);
    rec.beta = betas.ce;
    const auto weights = loss_weights(cfg_);

    std::size_t sequences = 0;
    for (const auto& mb : micro_batches) sequences += mb.size();
    if (sequences == 0) throw InputError("training step without sequences");
    const float inv = 1.0f / static_cast<float>(sequences);

    std::vector<detail::LayerAccumulator> acc;
    for (const auto& mb : micro_batches) {
      for (const auto& blk : mb) {
        Tape tape;
        Tape::Scope scope(tape);
        ForwardOptions opt;
        opt.routing = Routing::kNonCausal;
        opt.betas = betas;
        auto res = model_.forward(blk.inputs, opt);
        const auto lm = cross_entropy(res.logits, std::span<const int>(blk.targets));
        auto total = total_loss(lm, res.l_pred, res.l_causal, res.l_g_reg, weights);
        rec.loss_lm += lm[0];
        rec.loss_pred += res.l_pred[0];
        rec.loss_causal += res.l_causal[0];
        rec.loss_greg += res.l_g_reg[0];
        rec.loss_total += total[0];
        if (acc.empty()) acc.resize(res.traces.size());
        for (std::size_t i = 0; i < res.traces.size(); ++i) acc[i].add(res.traces[i]);
        auto scaled = scale(total, inv);
        tape.backward(scaled);
      }
    }
    const double n = static_cast<double>(sequences);
    rec.loss_lm /= n;
    rec.loss_pred /= n;
    rec.loss_causal /= n;
    rec.loss_greg /= n;
    rec.loss_total /= n;
    for (const auto& a : acc) rec.layer.push_back(a.finish());

    if (!std::isfinite(rec.loss_total)) {
      nlohmann::json diag = rec.to_json();
      diag["error"] = "non-finite loss";
      last_diagnostic_ = diag.dump();
      optimizer_.zero_grad();
      throw TrainingError("training diverged at step " + std::to_string(step_) + ": " + last_diagnostic_);
    }
    optimizer_.step(group_rates(cfg_), rec.lr_scale);
    model_.clamp_router_params();
    optimizer_.zero_grad();
    ++step_;
    return rec;
  }

  std::size_t steps_done() const { return step_; }
  const std::string& last_diagnostic() const { return last_diagnostic_; }

 private:
  Model<float>& model_;
  ModelConfig cfg_;
  AdamW<float> optimizer_;
  std::size_t step_ = 0;
  std::string last_diagnostic_;
};

struct TrainOptions {
  std::size_t steps = 0;  // 0: cfg.total_steps
  std::ostream* telemetry = nullptr;  // JSONL sink
  std::function<void(const StepTelemetry&)> on_step;
};

// Full run: seeded batch stream over `blocks`, `steps` updates, telemetry to
// the sink. A non-finite loss writes the diagnostic record and rethrows.
inline std::vector<StepTelemetry> train(Model<float>& model, const std::vector<TokenBlock>& blocks,
                                        const TrainOptions& opts = {}) {
  const ModelConfig& cfg = model.config();
  const std::size_t steps = opts.steps ? opts.steps : cfg.total_steps;
  BatchStream stream(blocks, cfg.batch_size, cfg.seed);
  Trainer trainer(model, cfg);
  std::vector<StepTelemetry> log;
  log.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<std::vector<TokenBlock>> micro;
    for (std::size_t a = 0; a < cfg.grad_accum; ++a) micro.push_back(stream.next());
    StepTelemetry rec;
    try {
      rec = trainer.step(micro);
    } catch (const TrainingError&) {
      if (opts.telemetry) *opts.telemetry << trainer.last_diagnostic() << '\n';
      throw;
    }
    if (opts.telemetry) *opts.telemetry << rec.to_json().dump() << '\n';
    if (opts.on_step) opts.on_step(rec);
    log.push_back(std::move(rec));
  }
  return log;
}

}  // namespace sroute
