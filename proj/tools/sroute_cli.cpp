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


// sroute: train / eval / generate / analyze / savings.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sroute/sroute.hpp"

namespace {

using nlohmann::json;
using namespace sroute;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::string> variant;
  std::optional<double> gamma;
  std::optional<double> g_th;
  std::optional<double> prior_factor;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--steps", f.steps, "training steps");
  cmd->add_option("--variant", f.variant, "dense|mod|sdt|stt_fixed|stt_threshold");
  cmd->add_option("--gamma", f.gamma, "routed-layer capacity");
  cmd->add_option("--g-th", f.g_th, "gate threshold (threshold routing)");
  cmd->add_option("--prior-factor", f.prior_factor, "predictor width factor f");
  cmd->add_option("--out", f.out, "output path (default: stdout)");
}

ModelConfig resolve_config(const CommonFlags& f) {
  ModelConfig cfg = f.config.empty() ? ModelConfig{} : ModelConfig::from_file(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.steps) cfg.total_steps = *f.steps;
  if (f.variant) {
    cfg.variant = parse_variant(*f.variant);
    cfg.pattern.clear();
  }
  if (f.gamma) cfg.gamma = *f.gamma;
  if (f.g_th) cfg.g_th = *f.g_th;
  if (f.prior_factor) cfg.prior_factor = *f.prior_factor;
  cfg.validate();
  return cfg;
}

// Output sink: the --out file when given, stdout otherwise.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw InputError("cannot open '" + path + "' for writing");
    }
  }
  std::ostream& get() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

std::vector<std::uint8_t> load_corpus_bytes(const std::string& path) {
  if (path.empty()) return synthetic_corpus(64 * 1024);
  return read_bytes(path);
}

json agreement_json(const std::vector<AgreementStats>& stats) {
  json out = json::array();
  for (const auto& s : stats) {
    out.push_back({{"layer", s.layer}, {"kind", layer_kind_name(s.kind)}, {"accuracy", s.accuracy()}, {"f1", s.f1()}});
  }
  return out;
}

int run_train(const CommonFlags& f, const std::string& corpus, const std::string& checkpoint) {
  const ModelConfig cfg = resolve_config(f);
  const auto ing = make_blocks(load_corpus_bytes(corpus), cfg.seq_len);
  Model<float> model(cfg);
  Sink sink(f.out);
  TrainOptions opts;
  opts.telemetry = &sink.get();
  train(model, ing.blocks, opts);
  if (!checkpoint.empty()) save_checkpoint(model, checkpoint);
  return 0;
}

int run_eval(const CommonFlags& f, const std::string& corpus, const std::string& checkpoint, const std::string& routing) {
  const Model<float> model = load_checkpoint(checkpoint);
  const auto ing = make_blocks(load_corpus_bytes(corpus), model.config().seq_len);
  const std::span<const TokenBlock> blocks(ing.blocks);
  json out = {{"checkpoint", checkpoint}, {"blocks", ing.blocks.size()}};
  auto one = [&](Routing r) {
    const auto e = eval_perplexity(model, blocks, r);
    return json{{"nats_per_byte", e.nats_per_byte}, {"perplexity", e.perplexity}, {"tokens", e.tokens}};
  };
  if (routing == "both" || routing == "non_causal") out["non_causal"] = one(Routing::kNonCausal);
  if (routing == "both" || routing == "causal") out["causal"] = one(Routing::kCausal);
  if (std::any_of(model.pattern().begin(), model.pattern().end(), is_routed)) {
    out["causal_router_agreement"] = agreement_json(causal_router_agreement(model, blocks));
  }
  Sink sink(f.out);
  sink.get() << out.dump(2) << '\n';
  return 0;
}

int run_generate(const CommonFlags& f, const std::string& checkpoint, const std::string& prompt, std::size_t tokens,
                 double temperature) {
  const Model<float> model = load_checkpoint(checkpoint);
  const ModelConfig& cfg = model.config();
  if (prompt.empty()) throw InputError("generate: prompt must not be empty");
  Rng rng(f.seed.value_or(cfg.seed));
  auto state = model.start_decoding();
  CostMeter meter(model.layer_count());
  const Betas betas = final_betas(cfg);
  Tape::Pause no_grad;
  Tensor logits;
  for (unsigned char c : prompt) {
    if (state.position >= cfg.seq_len) break;
    logits = model.decode_step(c, state, betas, &meter);
  }
  std::string text;
  while (text.size() < tokens && state.position < cfg.seq_len) {
    int next = 0;
    if (temperature <= 0.0) {
      for (std::size_t v = 1; v < logits.numel(); ++v)
        if (logits[v] > logits[next]) next = static_cast<int>(v);
    } else {
      std::vector<double> p(logits.numel());
      double mx = logits[0];
      for (std::size_t v = 0; v < p.size(); ++v) mx = std::max(mx, static_cast<double>(logits[v]));
      double z = 0.0;
      for (std::size_t v = 0; v < p.size(); ++v) z += p[v] = std::exp((logits[v] - mx) / temperature);
      double u = rng.uniform() * z;
      for (next = 0; next + 1 < static_cast<int>(p.size()) && (u -= p[next]) > 0.0; ++next) {
      }
    }
    text.push_back(static_cast<char>(next));
    logits = model.decode_step(next, state, betas, &meter);
  }
  json layers = json::array();
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    std::size_t executed = 0;
    for (auto e : state.layers[i].executed) executed += e;
    layers.push_back({{"index", i},
                      {"kind", layer_kind_name(model.pattern()[i])},
                      {"executed", executed},
                      {"score_pairs", meter.score_pairs[i]},
                      {"kv_entries", meter.kv_entries[i]}});
  }
  Sink sink(f.out);
  sink.get() << json{{"prompt", prompt}, {"completion", text}, {"positions", state.position}, {"layers", layers}}.dump(2)
             << '\n';
  return 0;
}

int run_analyze(const CommonFlags& f, const std::vector<std::string>& files, const std::string& csv_prefix) {
  if (files.empty()) throw InputError("analyze: no telemetry files");
  json out = json::array();
  for (const auto& path : files) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open telemetry '" + path + "'");
    const auto steps = read_telemetry(in);
    const auto summary = analyze_telemetry(steps);
    json s = summary_json(summary);
    s["file"] = path;
    out.push_back(s);
    if (!csv_prefix.empty()) {
      const std::string stem = csv_prefix + std::to_string(out.size() - 1);
      std::ofstream dom(stem + "_dominance.csv"), cap(stem + "_capacity.csv"), pred(stem + "_pred.csv");
      write_dominance_csv(dom, summary);
      write_capacity_csv(cap, summary);
      write_pred_csv(pred, summary, path);
    }
  }
  Sink sink(f.out);
  sink.get() << out.dump(2) << '\n';
  return 0;
}

int run_savings(const CommonFlags& f, const std::string& corpus, const std::string& checkpoint, const std::string& routing,
                bool decode, std::size_t max_blocks) {
  json out;
  if (checkpoint.empty()) {
    const ModelConfig cfg = resolve_config(f);
    const auto pattern = cfg.layer_pattern();
    out = analytic_savings_report(pattern, cfg.gamma).to_json();
    out["interleaved_formula"] = {{"attention_saving", attention_savings_fixed(cfg.gamma, true)},
                                  {"kv_saving", kv_savings(cfg.gamma, true)}};
    out["every_layer_formula"] = {{"attention_saving", attention_savings_fixed(cfg.gamma, false)},
                                  {"kv_saving", kv_savings(cfg.gamma, false)}};
  } else {
    const Model<float> model = load_checkpoint(checkpoint);
    auto ing = make_blocks(load_corpus_bytes(corpus), model.config().seq_len);
    if (max_blocks && ing.blocks.size() > max_blocks) ing.blocks.resize(max_blocks);
    const auto report = measure_runtime_costs(model, std::span<const TokenBlock>(ing.blocks), parse_routing(routing),
                                              decode ? CostPath::kDecode : CostPath::kParallel);
    out = report.to_json();
    out["routing"] = routing;
  }
  Sink sink(f.out);
  sink.get() << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sroute: surprise-routed conditional-computation language models"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, gen_f, an_f, sav_f;
  std::string corpus, checkpoint, routing = "both", prompt, csv_prefix, sav_routing = "causal";
  std::size_t gen_tokens = 64, max_blocks = 0;
  double temperature = 0.0;
  bool decode = false;
  std::vector<std::string> files;

  auto* train_cmd = app.add_subcommand("train", "train a model; telemetry JSONL to --out");
  add_common(train_cmd, train_f);
  train_cmd->add_option("--corpus", corpus, "byte corpus (default: built-in 64 KiB synthetic)");
  train_cmd->add_option("--checkpoint", checkpoint, "write the trained model here");

  auto* eval_cmd = app.add_subcommand("eval", "nats/byte and causal-router agreement");
  add_common(eval_cmd, eval_f);
  eval_cmd->add_option("--corpus", corpus, "byte corpus (default: built-in synthetic)");
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--routing", routing, "non_causal|causal|both")->check(CLI::IsMember({"non_causal", "causal", "both"}));

  auto* gen_cmd = app.add_subcommand("generate", "autoregressive decoding with KV caches and causal routers");
  add_common(gen_cmd, gen_f);
  gen_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  gen_cmd->add_option("--prompt", prompt, "prompt text")->required();
  gen_cmd->add_option("--tokens", gen_tokens, "bytes to generate");
  gen_cmd->add_option("--temperature", temperature, "0 = greedy");

  auto* an_cmd = app.add_subcommand("analyze", "summarise telemetry files");
  add_common(an_cmd, an_f);
  an_cmd->add_option("telemetry", files, "telemetry JSONL files")->required();
  an_cmd->add_option("--csv", csv_prefix, "write <prefix><i>_{dominance,capacity,pred}.csv");

  auto* sav_cmd = app.add_subcommand("savings", "analytic or measured attention/KV savings report");
  add_common(sav_cmd, sav_f);
  sav_cmd->add_option("--checkpoint", checkpoint, "measure a trained model instead of the analytic model");
  sav_cmd->add_option("--corpus", corpus, "evaluation corpus for measurement");
  sav_cmd->add_option("--routing", sav_routing, "non_causal|causal")->check(CLI::IsMember({"non_causal", "causal"}));
  sav_cmd->add_flag("--decode", decode, "measure token-by-token decoding instead of the parallel pass");
  sav_cmd->add_option("--max-blocks", max_blocks, "limit evaluated blocks (0 = all)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return run_train(train_f, corpus, checkpoint);
    if (*eval_cmd) return run_eval(eval_f, corpus, checkpoint, routing);
    if (*gen_cmd) return run_generate(gen_f, checkpoint, prompt, gen_tokens, temperature);
    if (*an_cmd) return run_analyze(an_f, files, csv_prefix);
    if (*sav_cmd) return run_savings(sav_f, corpus, checkpoint, sav_routing, decode, max_blocks);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
