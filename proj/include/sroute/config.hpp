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

// Full hyperparameter record of a model and its training run, with the
// key=value text form used by config files and checkpoints.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sroute/errors.hpp"

namespace sroute {

enum class LayerKind { kDense, kDecision, kDynamic, kStt, kMod };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kDecision: return "decision";
    case LayerKind::kDynamic: return "dynamic";
    case LayerKind::kStt: return "stt";
    case LayerKind::kMod: return "mod";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "dense") return LayerKind::kDense;
  if (s == "decision") return LayerKind::kDecision;
  if (s == "dynamic") return LayerKind::kDynamic;
  if (s == "stt") return LayerKind::kStt;
  if (s == "mod") return LayerKind::kMod;
  throw ConfigError("unknown layer kind '" + s + "'");
}

// Layers that select a token subset.
inline bool is_routed(LayerKind k) { return k == LayerKind::kDynamic || k == LayerKind::kStt || k == LayerKind::kMod; }

using LayerPattern = std::vector<LayerKind>;

inline std::string format_pattern(const LayerPattern& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += ',';
    s += layer_kind_name(p[i]);
  }
  return s;
}

inline LayerPattern parse_pattern(const std::string& text) {
  LayerPattern p;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    p.push_back(parse_layer_kind(item.substr(b, e - b + 1)));
  }
  return p;
}

inline void validate_pattern(const LayerPattern& p) {
  if (p.empty()) throw ConfigError("layer pattern is empty");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == LayerKind::kDynamic && (i == 0 || p[i - 1] != LayerKind::kDecision)) {
      throw ConfigError("layer " + std::to_string(i) + ": a dynamic layer must immediately follow a decision layer");
    }
  }
}

enum class Variant { kDense, kMod, kSdt, kSttFixed, kSttThreshold };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kDense: return "dense";
    case Variant::kMod: return "mod";
    case Variant::kSdt: return "sdt";
    case Variant::kSttFixed: return "stt_fixed";
    case Variant::kSttThreshold: return "stt_threshold";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "dense") return Variant::kDense;
  if (s == "mod") return Variant::kMod;
  if (s == "sdt") return Variant::kSdt;
  if (s == "stt_fixed") return Variant::kSttFixed;
  if (s == "stt_threshold") return Variant::kSttThreshold;
  throw ConfigError("unknown variant '" + s + "' (expected dense|mod|sdt|stt_fixed|stt_threshold)");
}

// Routed layers interleave with full-cost ones: D R D R ... For SDT the
// full-cost layer of each pair is the decision layer.
inline LayerPattern default_pattern(Variant v, std::size_t layers) {
  LayerPattern p(layers, LayerKind::kDense);
  for (std::size_t i = 0; i + 1 < layers; i += 2) {
    switch (v) {
      case Variant::kDense: break;
      case Variant::kMod: p[i + 1] = LayerKind::kMod; break;
      case Variant::kSdt:
        p[i] = LayerKind::kDecision;
        p[i + 1] = LayerKind::kDynamic;
        break;
      case Variant::kSttFixed:
      case Variant::kSttThreshold: p[i + 1] = LayerKind::kStt; break;
    }
  }
  return p;
}

enum class CapacityMode { kFixed, kThreshold };

struct ModelConfig {
  // dims
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 8;
  std::size_t seq_len = 128;
  std::size_t vocab = 256;
  std::size_t ffn_hidden = 0;  // 0: 2 * d_model
  std::size_t router_hidden = 0;  // 0: d_model / 2

  Variant variant = Variant::kDense;
  LayerPattern pattern;  // empty: default_pattern(variant, n_layers)

  double gamma = 0.5;
  double g_th = 0.5;
  double prior_factor = 0.0625;

  double lambda_pred = 0.05;
  double lambda_causal = 0.01;
  double lambda_g_reg = 0.001;

  double lr_backbone = 3e-3;
  double lr_predictor = 1e-3;
  double lr_router = 1e-2;
  // Optimiser group of the gate scalars (o_ce, m_cu, beta scales):
  // "router", "predictor" or "backbone".
  std::string gate_scalar_group = "router";
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;

  double warmup_frac = 0.01;
  double beta_min = 0.1;
  double beta_max = 100.0;
  std::size_t beta_warmup_steps = 100;
  bool learnable_beta = false;
  double ma_decay = 0.9;
  double o_ce_init = 1.0;
  double m_cu_init = 1.0;
  double init_std = 0.02;

  std::uint64_t seed = 42;
  std::size_t batch_size = 8;
  std::size_t grad_accum = 1;
  std::size_t total_steps = 2000;

  std::size_t hidden_width() const { return ffn_hidden ? ffn_hidden : 2 * d_model; }
  std::size_t router_width() const { return router_hidden ? router_hidden : std::max<std::size_t>(1, d_model / 2); }
  std::size_t prior_width() const { return static_cast<std::size_t>(std::ceil(prior_factor * static_cast<double>(d_model) - 1e-9)); }

  CapacityMode capacity_mode() const {
    return variant == Variant::kSttThreshold ? CapacityMode::kThreshold : CapacityMode::kFixed;
  }

  LayerPattern layer_pattern() const { return pattern.empty() ? default_pattern(variant, n_layers) : pattern; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
    }
    if (n_layers == 0 || seq_len == 0 || vocab == 0) throw ConfigError("n_layers, seq_len and vocab must be positive");
    const auto p = layer_pattern();
    if (p.size() != n_layers) {
      throw ConfigError("pattern has " + std::to_string(p.size()) + " layers, n_layers is " + std::to_string(n_layers));
    }
    validate_pattern(p);
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(prior_factor > 0.0)) throw ConfigError("prior_factor must be positive");
    if (lambda_pred < 0 || lambda_causal < 0 || lambda_g_reg < 0) throw ConfigError("loss weights must be non-negative");
    if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw ConfigError("warmup_frac must lie in [0, 1)");
    if (gate_scalar_group != "router" && gate_scalar_group != "predictor" && gate_scalar_group != "backbone") {
      throw ConfigError("gate_scalar_group must be router, predictor or backbone, got '" + gate_scalar_group + "'");
    }
    if (!(beta_min > 0.0 && beta_max >= beta_min)) throw ConfigError("beta range must satisfy 0 < beta_min <= beta_max");
    if (!(ma_decay >= 0.0 && ma_decay < 1.0)) throw ConfigError("ma_decay must lie in [0, 1)");
    if (!(o_ce_init > 0.0 && m_cu_init > 0.0)) throw ConfigError("o_ce_init and m_cu_init must be positive");
    if (batch_size == 0 || grad_accum == 0) throw ConfigError("batch_size and grad_accum must be positive");
  }

  // Apply one key=value setting. Keys are the field names above.
  void set(const std::string& key, const std::string& value) {
    auto as_size = [&] {
      std::size_t pos = 0;
      long long v = 0;
      try {
        v = std::stoll(value, &pos);
      } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects an integer, got '" + value + "'");
      }
      if (pos != value.size() || v < 0) throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + value + "'");
      return static_cast<std::size_t>(v);
    };
    auto as_double = [&] {
      std::size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(value, &pos);
      } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
      }
      if (pos != value.size()) throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
      return v;
    };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw ConfigError("config: '" + key + "' expects true/false, got '" + value + "'");
    };
    if (key == "d_model") d_model = as_size();
    else if (key == "n_heads") n_heads = as_size();
    else if (key == "n_layers") n_layers = as_size();
    else if (key == "seq_len") seq_len = as_size();
    else if (key == "vocab") vocab = as_size();
    else if (key == "ffn_hidden") ffn_hidden = as_size();
    else if (key == "router_hidden") router_hidden = as_size();
    else if (key == "variant") variant = parse_variant(value);
    else if (key == "pattern") pattern = parse_pattern(value);
    else if (key == "gamma") gamma = as_double();
    else if (key == "g_th") g_th = as_double();
    else if (key == "prior_factor") prior_factor = as_double();
    else if (key == "lambda_pred") lambda_pred = as_double();
    else if (key == "lambda_causal") lambda_causal = as_double();
    else if (key == "lambda_g_reg") lambda_g_reg = as_double();
    else if (key == "lr_backbone") lr_backbone = as_double();
    else if (key == "lr_predictor") lr_predictor = as_double();
    else if (key == "lr_router") lr_router = as_double();
    else if (key == "gate_scalar_group") gate_scalar_group = value;
    else if (key == "adam_beta1") adam_beta1 = as_double();
    else if (key == "adam_beta2") adam_beta2 = as_double();
    else if (key == "adam_eps") adam_eps = as_double();
    else if (key == "weight_decay") weight_decay = as_double();
    else if (key == "warmup_frac") warmup_frac = as_double();
    else if (key == "beta_min") beta_min = as_double();
    else if (key == "beta_max") beta_max = as_double();
    else if (key == "beta_warmup_steps") beta_warmup_steps = as_size();
    else if (key == "learnable_beta") learnable_beta = as_bool();
    else if (key == "ma_decay") ma_decay = as_double();
    else if (key == "o_ce_init") o_ce_init = as_double();
    else if (key == "m_cu_init") m_cu_init = as_double();
    else if (key == "init_std") init_std = as_double();
    else if (key == "seed") seed = as_size();
    else if (key == "batch_size") batch_size = as_size();
    else if (key == "grad_accum") grad_accum = as_size();
    else if (key == "total_steps") total_steps = as_size();
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  // Lines of `key = value`; '#' starts a comment.
  void apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  static ModelConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    ModelConfig c;
    c.apply_text(ss.str());
    return c;
  }

  std::map<std::string, std::string> to_map() const {
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    return {
        {"d_model", std::to_string(d_model)},
        {"n_heads", std::to_string(n_heads)},
        {"n_layers", std::to_string(n_layers)},
        {"seq_len", std::to_string(seq_len)},
        {"vocab", std::to_string(vocab)},
        {"ffn_hidden", std::to_string(ffn_hidden)},
        {"router_hidden", std::to_string(router_hidden)},
        {"variant", variant_name(variant)},
        {"pattern", format_pattern(layer_pattern())},
        {"gamma", num(gamma)},
        {"g_th", num(g_th)},
        {"prior_factor", num(prior_factor)},
        {"lambda_pred", num(lambda_pred)},
        {"lambda_causal", num(lambda_causal)},
        {"lambda_g_reg", num(lambda_g_reg)},
        {"lr_backbone", num(lr_backbone)},
        {"lr_predictor", num(lr_predictor)},
        {"lr_router", num(lr_router)},
        {"gate_scalar_group", gate_scalar_group},
        {"adam_beta1", num(adam_beta1)},
        {"adam_beta2", num(adam_beta2)},
        {"adam_eps", num(adam_eps)},
        {"weight_decay", num(weight_decay)},
        {"warmup_frac", num(warmup_frac)},
        {"beta_min", num(beta_min)},
        {"beta_max", num(beta_max)},
        {"beta_warmup_steps", std::to_string(beta_warmup_steps)},
        {"learnable_beta", learnable_beta ? "true" : "false"},
        {"ma_decay", num(ma_decay)},
        {"o_ce_init", num(o_ce_init)},
        {"m_cu_init", num(m_cu_init)},
        {"init_std", num(init_std)},
        {"seed", std::to_string(seed)},
        {"batch_size", std::to_string(batch_size)},
        {"grad_accum", std::to_string(grad_accum)},
        {"total_steps", std::to_string(total_steps)},
    };
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
    return out;
  }
};

}  // namespace sroute
