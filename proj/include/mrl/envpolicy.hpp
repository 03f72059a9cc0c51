// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Verifiable contextual bandits with finite response sets, and tabular
// softmax policies whose token-level traces can be read off any tokenizer
// grid exactly.
//
// Token conditionals come from marginalizing the sequence softmax over
// string prefixes: for a response y tokenized as (t_0, ..., t_{k-1}), let
// S_j be the responses whose text starts with t_0...t_j (j < k-1) and let
// S_{k-1} = {y}. Then l_j = log m(S_j) - log m(S_{j-1}) with m(S_{-1}) = 1,
// which telescopes to log pi(y) on every grid.

#ifndef MRL_ENVPOLICY_HPP_
#define MRL_ENVPOLICY_HPP_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mrl/textgrid.hpp"
#include "mrl/thl.hpp"

namespace mrl::env {

inline constexpr double kSuccessThreshold = 0.8;
inline constexpr double kNegativeThreshold = 0.2;
inline constexpr std::size_t kMaxResponses = 64;

struct PromptEntry {
  std::string id;
  std::string text;
  std::vector<std::string> responses;
  std::vector<double> rewards;  // verifier score per response, in [0, 1]
};

class BanditEnv {
 public:
  explicit BanditEnv(std::vector<PromptEntry> prompts);

  std::size_t num_prompts() const { return prompts_.size(); }
  const PromptEntry& prompt(std::size_t p) const { return prompts_.at(p); }
  const std::vector<PromptEntry>& prompts() const { return prompts_; }
  std::size_t index_of(const std::string& prompt_id) const;  // LookupError
  std::optional<std::size_t> find_response(std::size_t p,
                                           const std::string& text) const;
  double reward(std::size_t p, std::size_t r) const {
    return prompts_[p].rewards[r];
  }
  bool is_success(std::size_t p, std::size_t r) const {
    return reward(p, r) > kSuccessThreshold;
  }

 private:
  std::vector<PromptEntry> prompts_;
};

// Gradient with respect to the logit table: [prompt][response].
using Gradient = std::vector<std::vector<double>>;

class PrefixTreePolicy {
 public:
  // Logits of -inf mark responses outside the policy's support.
  PrefixTreePolicy(std::string policy_id, textgrid::TokenizerSpec spec,
                   std::shared_ptr<const BanditEnv> env,
                   std::vector<std::vector<double>> logits);

  const std::string& id() const { return id_; }
  const textgrid::TokenizerSpec& tokenizer() const { return spec_; }
  const std::string& tokenizer_id() const { return spec_.id; }
  const BanditEnv& env() const { return *env_; }
  std::shared_ptr<const BanditEnv> env_ptr() const { return env_; }
  const std::vector<std::vector<double>>& logits() const { return logits_; }
  const std::vector<double>& logits(std::size_t p) const {
    return logits_.at(p);
  }
  void set_logits(std::size_t p, std::vector<double> values);

  std::vector<double> probs(std::size_t p) const;
  double log_prob(std::size_t p, std::size_t r) const;
  bool in_support(std::size_t p, std::size_t r) const;

  textgrid::TokenSeq tokens(std::size_t p, std::size_t r) const;
  // Trace of response r on its own grid.
  thl::Trace trace(std::size_t p, std::size_t r) const;
  // Trace of response r on an arbitrary tokenization of its text.
  thl::Trace trace_on(std::size_t p, std::size_t r,
                      const textgrid::TokenSeq& tokens) const;
  // d l_j / d logits[p] for every token j of `tokens`.
  std::vector<std::vector<double>> trace_gradients(
      std::size_t p, std::size_t r, const textgrid::TokenSeq& tokens) const;
  // d log pi(r) / d logits[p] = e_r - pi.
  std::vector<double> score_gradient(std::size_t p, std::size_t r) const;

  // Lowest index wins ties.
  std::size_t argmax(std::size_t p) const;

  // logits <- logits - lr * grad; -inf entries stay fixed.
  void apply_gradient(const Gradient& grad, double lr);

 private:
  std::string id_;
  textgrid::TokenizerSpec spec_;
  std::shared_ptr<const BanditEnv> env_;
  std::vector<std::vector<double>> logits_;
};

struct RolloutGroup {
  std::string policy_id;
  std::string tokenizer_id;
  std::size_t prompt_index = 0;
  std::string prompt_id;
  std::vector<std::size_t> responses;
  std::vector<std::string> texts;
  std::vector<double> rewards;
  std::vector<textgrid::TokenSeq> tokens;
  std::vector<thl::Trace> traces;
  std::vector<double> behavior_logits;  // frozen at sampling time

  std::size_t size() const { return responses.size(); }
  bool any_success() const;
  bool all_negative() const;
};

struct PeerSelection {
  std::string record_id;
  std::string policy_id;
  std::size_t response = 0;  // index in the learner's response set
  std::string text;
  textgrid::TokenSeq tokens;  // learner grid
  bool scoreable = true;      // inside the learner's support
};

struct GateEvent {
  std::string learner_id;
  std::string prompt_id;
  std::size_t prompt_index = 0;
  bool fired = false;
  std::vector<PeerSelection> selected;  // at most per_prompt_cap entries
};

std::vector<double> softmax(const std::vector<double>& logits);

RolloutGroup sample_group(const PrefixTreePolicy& policy,
                          const std::string& prompt_id, std::size_t k,
                          std::uint64_t seed);
RolloutGroup sample_group(const PrefixTreePolicy& policy, std::size_t prompt,
                          std::size_t k, std::uint64_t seed);

// Scores response tokens (any grid) whose text is in the support.
thl::Trace log_prob_trace(const PrefixTreePolicy& policy,
                          const std::string& prompt_id,
                          const textgrid::TokenSeq& response_tokens);

double success_prob(const PrefixTreePolicy& policy, std::size_t p);
double policy_entropy(const PrefixTreePolicy& policy, std::size_t p);
// KL(a || b) over the response set.
double policy_kl(const PrefixTreePolicy& a, const PrefixTreePolicy& b,
                 std::size_t p);
double kl(const std::vector<double>& pi, const std::vector<double>& rho);
// Gradient of KL(pi_theta || rho) with respect to the logits of pi_theta.
std::vector<double> kl_gradient(const std::vector<double>& pi,
                                const std::vector<double>& rho);

}  // namespace mrl::env

#endif  // MRL_ENVPOLICY_HPP_
