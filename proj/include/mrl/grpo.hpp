// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Group-relative advantages and the clipped token-level surrogate that every
// sharing regime reuses. Losses are returned with the sign being minimized.

#ifndef MRL_GRPO_HPP_
#define MRL_GRPO_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "mrl/envpolicy.hpp"
#include "mrl/textgrid.hpp"

namespace mrl::grpo {

enum class Normalization { kMeanOnly, kZNorm };

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& name);

struct AdvantageSet {
  std::vector<double> values;
  Normalization normalization = Normalization::kZNorm;
  double epsilon = 1e-8;
};

struct ClipConfig {
  double epsilon = 0.2;
  double kl_coefficient = 1e-3;
};

AdvantageSet group_advantages(const std::vector<double>& rewards,
                              Normalization mode, double epsilon = 1e-8);

// Re-standardizes advantages jointly across a batch of groups.
void batch_renormalize(std::vector<AdvantageSet>& groups, double epsilon = 1e-8);

// One sequence in the surrogate: tokens on the learner grid, the per-token
// behavior log-probabilities in the ratio denominator, and which positions
// take part in the token mean.
struct Candidate {
  std::size_t response = 0;
  textgrid::TokenSeq tokens;
  std::vector<double> behavior_log_probs;
  std::vector<bool> active;
  double advantage = 0.0;
};

struct SurrogateResult {
  double loss = 0.0;
  std::vector<double> gradient;  // over the logits of one prompt
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;

  double clip_rate() const {
    return tokens ? static_cast<double>(clipped_tokens) / tokens : 0.0;
  }
};

// -(1/N) sum_i mean_t min(w_t A_i, clip(w_t) A_i) + beta KL(pi || ref), with
// w_t = exp(l_theta,t - behavior_t). `reference` may be null (no KL term).
SurrogateResult clipped_surrogate(const env::PrefixTreePolicy& policy,
                                  std::size_t prompt,
                                  const std::vector<Candidate>& candidates,
                                  const ClipConfig& clip,
                                  const env::PrefixTreePolicy* reference);

// Clipped GRPO update for one rollout group drawn from `behavior`. Traces must sit
// on the policy's own grid.
SurrogateResult grpo_gradient(const env::PrefixTreePolicy& policy,
                              const env::RolloutGroup& group,
                              const AdvantageSet& advantages,
                              const ClipConfig& clip,
                              const env::PrefixTreePolicy* reference);

}  // namespace mrl::grpo

#endif  // MRL_GRPO_HPP_
