// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/regimes.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"

namespace mrl::regimes {

std::string to_string(PrpDenominator d) {
  return d == PrpDenominator::kLearnerSnapshot ? "learner-snapshot"
                                               : "thl-aligned-peer";
}

PrpDenominator parse_prp_denominator(const std::string& name) {
  if (name == "learner-snapshot") return PrpDenominator::kLearnerSnapshot;
  if (name == "thl-aligned-peer") return PrpDenominator::kThlAlignedPeer;
  throw ConfigError("unknown PRP denominator '" + name + "'");
}

std::string to_string(SelectionRule r) {
  return r == SelectionRule::kUniform ? "uniform" : "shorter";
}

SelectionRule parse_selection_rule(const std::string& name) {
  if (name == "uniform") return SelectionRule::kUniform;
  if (name == "shorter") return SelectionRule::kShorter;
  throw ConfigError("unknown SGT selection rule '" + name + "'");
}

// ---------------------------------------------------------------- PRP

PrpPool prp_pool(const env::PrefixTreePolicy& behavior,
                 const env::RolloutGroup& learner_group,
                 const std::vector<exchange::ExperienceRecord>& peer_records,
                 const SpecRegistry& specs, const PrpConfig& cfg) {
  const std::size_t p = learner_group.prompt_index;
  PrpPool pool;
  pool.prompt = p;
  for (std::size_t i = 0; i < learner_group.size(); ++i) {
    PoolCandidate c;
    c.own = true;
    c.prompt = p;
    c.record_id = learner_group.policy_id + "#" + std::to_string(i);
    c.source_policy = learner_group.policy_id;
    c.response = learner_group.responses[i];
    c.text = learner_group.texts[i];
    c.reward = learner_group.rewards[i];
    c.tokens = learner_group.tokens[i];
    c.snapshot_log_probs = learner_group.traces[i].log_probs;
    pool.candidates.push_back(std::move(c));
  }

  const auto& tgt_spec = behavior.tokenizer();
  for (const auto& rec : peer_records) {
    if (rec.prompt_id != learner_group.prompt_id) continue;
    const auto r = behavior.env().find_response(p, rec.response_text);
    if (!r || !behavior.in_support(p, *r)) {
      ++pool.unusable_count;
      continue;
    }
    PoolCandidate c;
    c.own = false;
    c.prompt = p;
    c.record_id = rec.record_id;
    c.source_policy = rec.meta.policy_id;
    c.response = *r;
    c.text = rec.response_text;
    c.reward = rec.reward;
    c.tokens = thl::retokenize_response(rec.response_text, tgt_spec);
    c.snapshot_log_probs = behavior.trace_on(p, *r, c.tokens).log_probs;
    if (rec.trace) {
      auto it = specs.find(rec.trace->tokenizer_id);
      if (it == specs.end())
        throw LookupError("unknown tokenizer '" + rec.trace->tokenizer_id + "'");
      const std::vector<bool> mask(c.tokens.size(), true);
      c.aligned = thl::word_align_log_probs(rec.response_text, *rec.trace,
                                            it->second, tgt_spec, mask,
                                            cfg.align);
    }
    pool.candidates.push_back(std::move(c));
  }

  std::vector<double> rewards;
  for (const auto& c : pool.candidates) rewards.push_back(c.reward);
  const auto adv = grpo::group_advantages(rewards, cfg.normalization,
                                          cfg.advantage_epsilon);
  for (std::size_t i = 0; i < pool.candidates.size(); ++i)
    pool.candidates[i].advantage = adv.values[i];
  return pool;
}

namespace {

// Denominator and active mask for one candidate under a PRP variant.
std::pair<std::vector<double>, std::vector<bool>> denominators(
    PrpDenominator variant, const PoolCandidate& c) {
  if (c.own || variant == PrpDenominator::kLearnerSnapshot)
    return {c.snapshot_log_probs, std::vector<bool>(c.tokens.size(), true)};
  if (!c.aligned)
    throw ConfigError("thl-aligned-peer denominator needs an aligned trace for '" +
                      c.record_id + "'");
  return {c.aligned->values, c.aligned->active_mask};
}

}  // namespace

TokenWeights prp_weights(PrpDenominator variant,
                         const env::PrefixTreePolicy& policy,
                         const PoolCandidate& candidate) {
  auto [den, active] = denominators(variant, candidate);
  if (den.size() != candidate.tokens.size())
    throw InputShapeError("denominator length differs from candidate tokens");
  const auto cur =
      policy.trace_on(candidate.prompt, candidate.response, candidate.tokens);
  TokenWeights w;
  w.active = std::move(active);
  w.weights.assign(den.size(), 0.0);
  for (std::size_t t = 0; t < den.size(); ++t)
    if (w.active[t]) w.weights[t] = std::exp(cur.log_probs[t] - den[t]);
  return w;
}

grpo::SurrogateResult prp_gradient(const env::PrefixTreePolicy& policy,
                                   const PrpPool& pool, const PrpConfig& cfg,
                                   const env::PrefixTreePolicy* reference) {
  std::vector<grpo::Candidate> cands;
  cands.reserve(pool.candidates.size());
  for (const auto& c : pool.candidates) {
    auto [den, active] = denominators(cfg.denominator, c);
    grpo::Candidate g;
    g.response = c.response;
    g.tokens = c.tokens;
    g.behavior_log_probs = std::move(den);
    g.active = std::move(active);
    g.advantage = c.advantage;
    cands.push_back(std::move(g));
  }
  return grpo::clipped_surrogate(policy, pool.prompt, cands, cfg.clip,
                                 reference);
}

// -------------------------------------------------------------- XGRPO

void validate(const XgrpoConfig& cfg) {
  if (!(cfg.mix_factor >= 0.0 && cfg.mix_factor <= 1.0))
    throw ConfigError("xgrpo mix_factor must lie in [0, 1]");
  if (!(cfg.advantage_clip > 0.0))
    throw ConfigError("xgrpo advantage_clip must be > 0");
  if (!(cfg.length_correction >= 0.0))
    throw ConfigError("xgrpo length_correction must be >= 0");
}

PooledStats xgrpo_pooled_stats(const std::vector<double>& pool_rewards) {
  if (pool_rewards.empty()) throw PreconditionError("need at least one reward");
  const double n = static_cast<double>(pool_rewards.size());
  PooledStats s;
  for (double r : pool_rewards) s.mu += r;
  s.mu /= n;
  double var = 0.0;
  for (double r : pool_rewards) var += (r - s.mu) * (r - s.mu);
  s.sigma = std::sqrt(var / n);
  return s;
}

grpo::AdvantageSet xgrpo_advantages(const std::vector<double>& rewards,
                                    const std::vector<std::size_t>& lengths,
                                    const grpo::AdvantageSet& local,
                                    const PooledStats& stats,
                                    const XgrpoConfig& cfg) {
  validate(cfg);
  const std::size_t k = rewards.size();
  if (local.values.size() != k || lengths.size() != k)
    throw InputShapeError("xgrpo inputs differ in group size");
  double mean_len = 0.0;
  for (std::size_t l : lengths) mean_len += static_cast<double>(l);
  mean_len /= static_cast<double>(std::max<std::size_t>(k, 1));

  grpo::AdvantageSet out = local;
  const double c = cfg.mix_factor;
  for (std::size_t i = 0; i < k; ++i) {
    const double pooled = (rewards[i] - stats.mu) / (stats.sigma + cfg.epsilon);
    double a = (1.0 - c) * local.values[i] + c * pooled;
    if (a > 0.0) {
      const double dev = (static_cast<double>(lengths[i]) - mean_len) /
                         std::max(mean_len, 1.0);
      a *= 1.0 - cfg.length_correction * std::clamp(dev, 0.0, 1.0);
    }
    out.values[i] = std::clamp(a, -cfg.advantage_clip, cfg.advantage_clip);
  }
  return out;
}

grpo::AdvantageSet xgrpo_group_advantages(
    const env::RolloutGroup& group,
    const std::vector<exchange::ExperienceRecord>& peer_records,
    grpo::Normalization local_mode, const XgrpoConfig& cfg) {
  const auto local = grpo::group_advantages(group.rewards, local_mode, cfg.epsilon);
  std::vector<double> pool = group.rewards;
  for (const auto& rec : peer_records)
    if (rec.prompt_id == group.prompt_id) pool.push_back(rec.reward);
  std::vector<std::size_t> lengths;
  for (const auto& t : group.tokens) lengths.push_back(t.size());
  return xgrpo_advantages(group.rewards, lengths, local,
                          xgrpo_pooled_stats(pool), cfg);
}

// ---------------------------------------------------------------- SGT

void validate(const SgtConfig& cfg) {
  if (!(cfg.negative_threshold <= cfg.success_threshold))
    throw ConfigError("sgt thresholds must satisfy negative <= success");
  if (cfg.per_prompt_cap < 1) throw ConfigError("sgt per_prompt_cap must be >= 1");
  if (!(cfg.lambda >= 0.0)) throw ConfigError("sgt lambda must be >= 0");
}

std::size_t sgt_select(const std::vector<exchange::ExperienceRecord>& successes,
                       SelectionRule rule,
                       const textgrid::TokenizerSpec& learner_spec,
                       std::uint64_t seed) {
  if (successes.empty())
    throw PreconditionError("sgt_select needs at least one peer success");
  if (rule == SelectionRule::kUniform) {
    std::mt19937_64 rng(seed);
    const auto n = static_cast<double>(successes.size());
    return std::min(successes.size() - 1,
                    static_cast<std::size_t>(uniform01(rng) * n));
  }
  std::size_t best = 0;
  std::size_t best_len = textgrid::tokenize(learner_spec, successes[0].response_text).size();
  for (std::size_t i = 1; i < successes.size(); ++i) {
    const std::size_t len =
        textgrid::tokenize(learner_spec, successes[i].response_text).size();
    if (len < best_len ||
        (len == best_len && successes[i].record_id < successes[best].record_id)) {
      best = i;
      best_len = len;
    }
  }
  return best;
}

env::GateEvent sgt_gate(const env::PrefixTreePolicy& learner,
                        const env::RolloutGroup& learner_group,
                        const std::vector<exchange::ExperienceRecord>& peer_records,
                        const SgtConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  env::GateEvent ev;
  ev.learner_id = learner.id();
  ev.prompt_id = learner_group.prompt_id;
  ev.prompt_index = learner_group.prompt_index;

  const bool all_fail = std::all_of(
      learner_group.rewards.begin(), learner_group.rewards.end(),
      [&](double r) { return r < cfg.negative_threshold; });
  std::vector<exchange::ExperienceRecord> successes;
  for (const auto& rec : peer_records)
    if (rec.prompt_id == learner_group.prompt_id &&
        rec.meta.policy_id != learner.id() && rec.reward > cfg.success_threshold)
      successes.push_back(rec);
  if (!all_fail || successes.empty()) return ev;

  ev.fired = true;
  std::uint64_t draw = seed;
  while (ev.selected.size() < cfg.per_prompt_cap && !successes.empty()) {
    const std::size_t i =
        sgt_select(successes, cfg.selection, learner.tokenizer(), draw);
    draw = splitmix64(draw);
    const auto& rec = successes[i];
    env::PeerSelection sel;
    sel.record_id = rec.record_id;
    sel.policy_id = rec.meta.policy_id;
    sel.text = rec.response_text;
    sel.tokens = thl::retokenize_response(rec.response_text, learner.tokenizer());
    const auto r = learner.env().find_response(learner_group.prompt_index,
                                               rec.response_text);
    sel.scoreable = r && learner.in_support(learner_group.prompt_index, *r);
    sel.response = r.value_or(0);
    ev.selected.push_back(std::move(sel));
    successes.erase(successes.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return ev;
}

SgtUpdate sgt_aux(const env::PrefixTreePolicy& policy,
                  const std::vector<env::GateEvent>& gates) {
  const auto& env = policy.env();
  SgtUpdate u;
  u.aux.resize(env.num_prompts());
  for (const auto& g : gates) {
    if (!g.fired) continue;
    for (const auto& sel : g.selected) {
      if (!sel.scoreable) {
        ++u.skipped_unscoreable;
        continue;
      }
      ++u.gated_examples;
      ++u.aux_sequences;
      u.aux_tokens += sel.tokens.size();
    }
  }
  if (u.gated_examples == 0) return u;
  const double inv = 1.0 / static_cast<double>(u.gated_examples);
  for (const auto& g : gates) {
    if (!g.fired) continue;
    for (const auto& sel : g.selected) {
      if (!sel.scoreable) continue;
      const std::size_t p = g.prompt_index;
      const double t = static_cast<double>(sel.tokens.size());
      // Per-token NLL: -(1/T) sum_j l_j = -(1/T) log pi(y*).
      u.aux_loss -= inv * policy.log_prob(p, sel.response) / t;
      const auto score = policy.score_gradient(p, sel.response);
      auto& row = u.aux[p];
      if (row.empty()) row.assign(score.size(), 0.0);
      for (std::size_t z = 0; z < score.size(); ++z)
        row[z] -= inv * score[z] / t;
    }
  }
  return u;
}

SgtUpdate sgt_update(const env::PrefixTreePolicy& policy,
                     const env::Gradient& base_gradient,
                     const std::vector<env::GateEvent>& gates,
                     const SgtConfig& cfg) {
  validate(cfg);
  SgtUpdate u = sgt_aux(policy, gates);
  u.combined = base_gradient;
  if (u.gated_examples == 0) return u;
  if (u.combined.size() != u.aux.size())
    throw InputShapeError("base gradient prompt count mismatch");
  for (std::size_t p = 0; p < u.aux.size(); ++p) {
    if (u.aux[p].empty()) continue;
    auto& row = u.combined[p];
    if (row.empty()) row.assign(u.aux[p].size(), 0.0);
    for (std::size_t z = 0; z < row.size(); ++z)
      row[z] += cfg.lambda * u.aux[p][z];
  }
  return u;
}

double sgt_cost_bound(std::size_t num_policies, std::size_t k) {
  if (num_policies == 0 || k == 0) return 0.0;
  return static_cast<double>(num_policies - 1) /
         static_cast<double>(num_policies * k);
}

}  // namespace mrl::regimes
