// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// The three sharing probes as pure transformations from (learner batch,
// subscribed peer records) to an update:
//   PRP   pools peer trajectories into the learner's candidate set;
//   XGRPO shares only scalar rewards through pooled baselines;
//   SGT   injects one verified peer success when the learner's group fails.

#ifndef MRL_REGIMES_HPP_
#define MRL_REGIMES_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "mrl/envpolicy.hpp"
#include "mrl/exchange.hpp"
#include "mrl/grpo.hpp"
#include "mrl/thl.hpp"

namespace mrl::regimes {

using SpecRegistry = std::map<std::string, textgrid::TokenizerSpec>;

// ---------------------------------------------------------------- PRP

enum class PrpDenominator { kLearnerSnapshot, kThlAlignedPeer };

std::string to_string(PrpDenominator d);
PrpDenominator parse_prp_denominator(const std::string& name);

struct PrpConfig {
  PrpDenominator denominator = PrpDenominator::kLearnerSnapshot;
  grpo::ClipConfig clip;
  grpo::Normalization normalization = grpo::Normalization::kZNorm;
  double advantage_epsilon = 1e-8;
  thl::AlignOptions align;
};

struct PoolCandidate {
  bool own = true;
  std::size_t prompt = 0;
  std::string record_id;
  std::string source_policy;
  std::size_t response = 0;
  std::string text;
  double reward = 0.0;
  textgrid::TokenSeq tokens;                // learner grid
  std::vector<double> snapshot_log_probs;   // learner behavior, learner grid
  std::optional<thl::AlignedTrace> aligned; // peer trace on learner grid
  double advantage = 0.0;
};

struct PrpPool {
  std::size_t prompt = 0;
  std::vector<PoolCandidate> candidates;
  std::size_t unusable_count = 0;
};

// `behavior` is the learner at sampling time. Peer texts are retokenized to
// the learner grid; peers outside the learner's support are counted and
// dropped; advantages are normalized over the usable pool.
PrpPool prp_pool(const env::PrefixTreePolicy& behavior,
                 const env::RolloutGroup& learner_group,
                 const std::vector<exchange::ExperienceRecord>& peer_records,
                 const SpecRegistry& specs, const PrpConfig& cfg);

// Inactive positions carry weight 0 and are excluded from token means.
struct TokenWeights {
  std::vector<double> weights;
  std::vector<bool> active;
};

TokenWeights prp_weights(PrpDenominator variant,
                         const env::PrefixTreePolicy& policy,
                         const PoolCandidate& candidate);

grpo::SurrogateResult prp_gradient(const env::PrefixTreePolicy& policy,
                                   const PrpPool& pool, const PrpConfig& cfg,
                                   const env::PrefixTreePolicy* reference);

// -------------------------------------------------------------- XGRPO

struct XgrpoConfig {
  double mix_factor = 0.2;
  double length_correction = 0.1;
  double advantage_clip = 3.0;
  double epsilon = 1e-8;
};

void validate(const XgrpoConfig& cfg);

struct PooledStats {
  double mu = 0.0;
  double sigma = 0.0;
};

PooledStats xgrpo_pooled_stats(const std::vector<double>& pool_rewards);

grpo::AdvantageSet xgrpo_advantages(const std::vector<double>& rewards,
                                    const std::vector<std::size_t>& lengths,
                                    const grpo::AdvantageSet& local,
                                    const PooledStats& stats,
                                    const XgrpoConfig& cfg);

// Effective advantages for one learner group given peer reward records of
// the same prompt; only rewards are read from the records.
grpo::AdvantageSet xgrpo_group_advantages(
    const env::RolloutGroup& group,
    const std::vector<exchange::ExperienceRecord>& peer_records,
    grpo::Normalization local_mode, const XgrpoConfig& cfg);

// ---------------------------------------------------------------- SGT

enum class SelectionRule { kUniform, kShorter };

std::string to_string(SelectionRule r);
SelectionRule parse_selection_rule(const std::string& name);

struct SgtConfig {
  double lambda = 0.1;
  double success_threshold = 0.8;
  double negative_threshold = 0.2;
  std::size_t per_prompt_cap = 1;
  SelectionRule selection = SelectionRule::kUniform;
};

void validate(const SgtConfig& cfg);

// Upper bound on the norm of the per-token-averaged aux gradient of a
// tabular softmax: ||e_y - pi|| <= sqrt(2).
inline constexpr double kAuxGradientBound = std::numbers::sqrt2;

std::size_t sgt_select(const std::vector<exchange::ExperienceRecord>& successes,
                       SelectionRule rule,
                       const textgrid::TokenizerSpec& learner_spec,
                       std::uint64_t seed);

env::GateEvent sgt_gate(const env::PrefixTreePolicy& learner,
                        const env::RolloutGroup& learner_group,
                        const std::vector<exchange::ExperienceRecord>& peer_records,
                        const SgtConfig& cfg, std::uint64_t seed);

struct SgtUpdate {
  env::Gradient combined;
  env::Gradient aux;      // mean over gated examples, before lambda
  double aux_loss = 0.0;  // mean per-token NLL over gated examples
  std::size_t gated_examples = 0;
  std::size_t aux_sequences = 0;
  std::size_t aux_tokens = 0;
  std::size_t skipped_unscoreable = 0;
};

// Aux loss and gradient alone (used for finite-difference checks).
SgtUpdate sgt_aux(const env::PrefixTreePolicy& policy,
                  const std::vector<env::GateEvent>& gates);

SgtUpdate sgt_update(const env::PrefixTreePolicy& policy,
                     const env::Gradient& base_gradient,
                     const std::vector<env::GateEvent>& gates,
                     const SgtConfig& cfg);

// Auxiliary sequences per step never exceed (M - 1) / (M K) of the rollouts.
double sgt_cost_bound(std::size_t num_policies, std::size_t k);

}  // namespace mrl::regimes

#endif  // MRL_REGIMES_HPP_
