// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "mrl/errors.hpp"

namespace mrl::grpo {

std::string to_string(Normalization n) {
  return n == Normalization::kMeanOnly ? "mean-only" : "z-norm";
}

Normalization parse_normalization(const std::string& name) {
  if (name == "mean-only") return Normalization::kMeanOnly;
  if (name == "z-norm") return Normalization::kZNorm;
  throw ConfigError("unknown advantage normalization '" + name + "'");
}

AdvantageSet group_advantages(const std::vector<double>& rewards,
                              Normalization mode, double epsilon) {
  if (rewards.empty()) throw PreconditionError("need at least one reward");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  AdvantageSet a;
  a.normalization = mode;
  a.epsilon = epsilon;
  a.values.reserve(rewards.size());
  for (double r : rewards) a.values.push_back(r - mean);
  if (mode == Normalization::kZNorm) {
    double var = 0.0;
    for (double v : a.values) var += v * v;
    const double sd = std::sqrt(var / n);
    for (double& v : a.values) v /= sd + epsilon;
    // All-equal rewards give exact zeros even with epsilon = 0.
    if (sd == 0.0) std::fill(a.values.begin(), a.values.end(), 0.0);
  }
  return a;
}

void batch_renormalize(std::vector<AdvantageSet>& groups, double epsilon) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups)
    for (double v : g.values) {
      sum += v;
      ++n;
    }
  if (n == 0) return;
  const double mean = sum / n;
  for (const auto& g : groups)
    for (double v : g.values) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / n);
  for (auto& g : groups)
    for (double& v : g.values) v = sd == 0.0 ? 0.0 : (v - mean) / (sd + epsilon);
}

SurrogateResult clipped_surrogate(const env::PrefixTreePolicy& policy,
                                  std::size_t prompt,
                                  const std::vector<Candidate>& candidates,
                                  const ClipConfig& clip,
                                  const env::PrefixTreePolicy* reference) {
  if (!(clip.epsilon > 0.0)) throw ConfigError("clip epsilon must be > 0");
  const std::size_t n_resp = policy.env().prompt(prompt).responses.size();
  SurrogateResult out;
  out.gradient.assign(n_resp, 0.0);
  const double lo = 1.0 - clip.epsilon, hi = 1.0 + clip.epsilon;

  if (!candidates.empty()) {
    const double inv_n = 1.0 / static_cast<double>(candidates.size());
    for (const auto& c : candidates) {
      if (c.behavior_log_probs.size() != c.tokens.size() ||
          c.active.size() != c.tokens.size())
        throw InputShapeError("candidate denominators do not match its tokens");
      std::size_t n_active = 0;
      for (bool a : c.active) n_active += a;
      if (n_active == 0) continue;
      const thl::Trace cur = policy.trace_on(prompt, c.response, c.tokens);
      const auto grads = policy.trace_gradients(prompt, c.response, c.tokens);
      const double scale = inv_n / static_cast<double>(n_active);
      const double a = c.advantage;
      for (std::size_t t = 0; t < c.tokens.size(); ++t) {
        if (!c.active[t]) continue;
        ++out.tokens;
        const double w = std::exp(cur.log_probs[t] - c.behavior_log_probs[t]);
        const double wc = std::clamp(w, lo, hi);
        const double unclipped = w * a, clipped = wc * a;
        // min picks the clipped branch only when it is strictly smaller.
        const bool binds = clipped < unclipped;
        out.clipped_tokens += binds;
        out.loss -= scale * (binds ? clipped : unclipped);
        if (binds || a == 0.0) continue;
        const double coef = -scale * a * w;
        for (std::size_t z = 0; z < n_resp; ++z)
          out.gradient[z] += coef * grads[t][z];
      }
    }
  }

  if (reference != nullptr && clip.kl_coefficient != 0.0) {
    const auto pi = policy.probs(prompt);
    const auto rho = reference->probs(prompt);
    out.loss += clip.kl_coefficient * env::kl(pi, rho);
    const auto g = env::kl_gradient(pi, rho);
    for (std::size_t z = 0; z < n_resp; ++z)
      out.gradient[z] += clip.kl_coefficient * g[z];
  }
  return out;
}

SurrogateResult grpo_gradient(const env::PrefixTreePolicy& policy,
                              const env::RolloutGroup& group,
                              const AdvantageSet& advantages,
                              const ClipConfig& clip,
                              const env::PrefixTreePolicy* reference) {
  if (advantages.values.size() != group.size())
    throw InputShapeError("advantage count does not match group size");
  std::vector<Candidate> cands;
  cands.reserve(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& tr = group.traces[i];
    if (tr.tokenizer_id != policy.tokenizer_id() ||
        group.tokens[i].tokenizer_id != policy.tokenizer_id())
      throw AlignmentRequiredError("trace on grid '" + tr.tokenizer_id +
                                   "' must be aligned to '" +
                                   policy.tokenizer_id() + "' first");
    Candidate c;
    c.response = group.responses[i];
    c.tokens = group.tokens[i];
    c.behavior_log_probs = tr.log_probs;
    c.active = tr.response_mask;
    c.advantage = advantages.values[i];
    cands.push_back(std::move(c));
  }
  return clipped_surrogate(policy, group.prompt_index, cands, clip, reference);
}

}  // namespace mrl::grpo
