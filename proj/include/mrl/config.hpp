// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a JSON document with a fixed schema. Unknown
// keys anywhere in the tree are errors. See README.md for the schema.

#ifndef MRL_CONFIG_HPP_
#define MRL_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrl/envpolicy.hpp"
#include "mrl/exchange.hpp"
#include "mrl/grpo.hpp"
#include "mrl/regimes.hpp"
#include "mrl/textgrid.hpp"
#include "mrl/thl.hpp"

namespace mrl::harness {

enum class RegimeKind { kNone, kPrp, kXgrpo, kSgt };

std::string to_string(RegimeKind r);
RegimeKind parse_regime(const std::string& name);

struct TokenizerConfig {
  textgrid::TokenizerSpec spec;
  // Adds chained merges that rebuild every word of the environment.
  bool whole_words = false;
};

struct PolicyConfig {
  std::string id;
  std::string tokenizer;
  // Explicit logits per prompt id; -inf (JSON null) marks zero support.
  std::map<std::string, std::vector<double>> logits;
  std::string init = "uniform";  // uniform | random (ignored for generated envs)
  double init_scale = 1.0;
  std::uint64_t init_seed = 0;
};

// Two policies with opposite strong/weak prompt blocks.
struct ComplementarityGen {
  std::size_t a_only = 4, b_only = 4, both = 2, neither = 2;
  std::size_t topic_responses = 6;
  double strong_p = 0.6, weak_p = 0.03;
  double off_topic_logit = -3.0;
  double noise = 0.3;
  std::uint64_t seed = 1;
};

// Shared response texts across prompts; logits are a shared base plus a
// prompt-specific part, and each policy adds its own small perturbation.
struct MismatchGen {
  std::size_t prompts = 12, responses = 8;
  double base_scale = 1.0, prompt_scale = 1.0, policy_noise = 0.1;
  std::uint64_t seed = 1;
};

struct EnvironmentConfig {
  std::vector<env::PromptEntry> prompts;
  std::optional<ComplementarityGen> complementarity;
  std::optional<MismatchGen> mismatch;
};

struct DiagnosticsConfig {
  double band_lo = 0.8, band_hi = 1.2;
  std::vector<std::size_t> length_buckets = {8, 16, 32};
  std::vector<std::string> corpus;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::uint64_t shuffle_seed = 11;
  std::string decode_stage = "final";  // initial | final
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::size_t steps = 50;
  std::size_t group_size = 5;
  double learning_rate = 0.05;
  std::size_t updates_per_step = 1;
  std::size_t validation_every = 10;
  std::size_t workers = 1;
  std::optional<exchange::DeviceMap> device_map;
  std::size_t retention_steps = 1;
  bool dump_pool = false;
  std::string output_dir;
  RegimeKind regime = RegimeKind::kNone;
  grpo::ClipConfig clip;
  grpo::Normalization normalization = grpo::Normalization::kZNorm;
  double advantage_epsilon = 1e-8;
  bool batch_renorm = false;
  regimes::PrpConfig prp;
  regimes::XgrpoConfig xgrpo;
  regimes::SgtConfig sgt;
  thl::AlignOptions thl;
  std::vector<TokenizerConfig> tokenizers;
  EnvironmentConfig environment;
  std::vector<PolicyConfig> policies;
  DiagnosticsConfig diagnostics;
  nlohmann::json raw;  // the document as given
};

ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

// Everything a run needs, resolved from a config.
struct Setup {
  std::shared_ptr<const env::BanditEnv> env;
  std::vector<env::PrefixTreePolicy> policies;
  regimes::SpecRegistry specs;
};

Setup build_setup(const ExperimentConfig& cfg);

}  // namespace mrl::harness

#endif  // MRL_CONFIG_HPP_
