// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/envpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"

namespace mrl::env {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

BanditEnv::BanditEnv(std::vector<PromptEntry> prompts)
    : prompts_(std::move(prompts)) {
  std::set<std::string> ids;
  for (const auto& p : prompts_) {
    if (!ids.insert(p.id).second)
      throw ConfigError("duplicate prompt id '" + p.id + "'");
    if (p.responses.size() < 2)
      throw ConfigError("prompt '" + p.id + "' needs at least 2 responses");
    if (p.responses.size() > kMaxResponses)
      throw ConfigError("prompt '" + p.id + "' has more than 64 responses");
    if (p.rewards.size() != p.responses.size())
      throw ConfigError("prompt '" + p.id + "': rewards/responses mismatch");
    std::set<std::string> seen;
    for (const auto& r : p.responses) {
      if (r.empty())
        throw ConfigError("prompt '" + p.id + "' has an empty response");
      if (!seen.insert(r).second)
        throw ConfigError("prompt '" + p.id + "' repeats response '" + r + "'");
    }
    for (double r : p.rewards)
      if (!(r >= 0.0 && r <= 1.0))
        throw ConfigError("prompt '" + p.id + "': reward outside [0, 1]");
  }
}

std::size_t BanditEnv::index_of(const std::string& prompt_id) const {
  for (std::size_t i = 0; i < prompts_.size(); ++i)
    if (prompts_[i].id == prompt_id) return i;
  throw LookupError("unknown prompt '" + prompt_id + "'");
}

std::optional<std::size_t> BanditEnv::find_response(
    std::size_t p, const std::string& text) const {
  const auto& rs = prompts_.at(p).responses;
  for (std::size_t i = 0; i < rs.size(); ++i)
    if (rs[i] == text) return i;
  return std::nullopt;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = kNegInf;
  for (double v : logits) mx = std::max(mx, v);
  if (mx == kNegInf) throw ZeroSupportError("policy has empty support");
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] == kNegInf ? 0.0 : std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

PrefixTreePolicy::PrefixTreePolicy(std::string policy_id,
                                   textgrid::TokenizerSpec spec,
                                   std::shared_ptr<const BanditEnv> env,
                                   std::vector<std::vector<double>> logits)
    : id_(std::move(policy_id)),
      spec_(std::move(spec)),
      env_(std::move(env)),
      logits_(std::move(logits)) {
  textgrid::validate(spec_);
  if (!env_) throw ConfigError("policy '" + id_ + "' has no environment");
  if (logits_.size() != env_->num_prompts())
    throw InputShapeError("policy '" + id_ + "': logit table has " +
                          std::to_string(logits_.size()) + " prompts, env has " +
                          std::to_string(env_->num_prompts()));
  for (std::size_t p = 0; p < logits_.size(); ++p) set_logits(p, logits_[p]);
}

void PrefixTreePolicy::set_logits(std::size_t p, std::vector<double> values) {
  if (values.size() != env_->prompt(p).responses.size())
    throw InputShapeError("policy '" + id_ + "': logit row size mismatch");
  bool any = false;
  for (double v : values) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw NumericError("policy '" + id_ + "': invalid logit");
    any = any || v != kNegInf;
  }
  if (!any) throw ZeroSupportError("policy '" + id_ + "': empty support");
  logits_[p] = std::move(values);
}

std::vector<double> PrefixTreePolicy::probs(std::size_t p) const {
  return softmax(logits_.at(p));
}

double PrefixTreePolicy::log_prob(std::size_t p, std::size_t r) const {
  const auto& row = logits_.at(p);
  if (row.at(r) == kNegInf) return kNegInf;
  double mx = kNegInf;
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : row)
    if (v != kNegInf) z += std::exp(v - mx);
  return row[r] - mx - std::log(z);
}

bool PrefixTreePolicy::in_support(std::size_t p, std::size_t r) const {
  return logits_.at(p).at(r) != kNegInf;
}

textgrid::TokenSeq PrefixTreePolicy::tokens(std::size_t p,
                                            std::size_t r) const {
  return textgrid::tokenize(spec_, env_->prompt(p).responses.at(r));
}

thl::Trace PrefixTreePolicy::trace(std::size_t p, std::size_t r) const {
  return trace_on(p, r, tokens(p, r));
}

namespace {

// Members of each nested prefix set S_j for response r of prompt p.
std::vector<std::vector<std::size_t>> prefix_sets(
    const PromptEntry& entry, std::size_t r, const textgrid::TokenSeq& toks) {
  const std::size_t k = toks.size();
  std::vector<std::vector<std::size_t>> sets(k);
  std::string prefix;
  for (std::size_t j = 0; j < k; ++j) {
    prefix += toks.tokens[j].text;
    if (j + 1 == k) {
      sets[j] = {r};
      break;
    }
    for (std::size_t z = 0; z < entry.responses.size(); ++z)
      if (entry.responses[z].starts_with(prefix)) sets[j].push_back(z);
  }
  return sets;
}

void check_tokens_spell(const PromptEntry& entry, std::size_t r,
                        const textgrid::TokenSeq& toks) {
  if (toks.joined() != entry.responses.at(r))
    throw InputShapeError("tokens do not spell response " + std::to_string(r) +
                          " of prompt '" + entry.id + "'");
}

}  // namespace

thl::Trace PrefixTreePolicy::trace_on(std::size_t p, std::size_t r,
                                      const textgrid::TokenSeq& toks) const {
  const auto& entry = env_->prompt(p);
  check_tokens_spell(entry, r, toks);
  if (!in_support(p, r))
    throw ZeroSupportError("response " + std::to_string(r) + " of prompt '" +
                           entry.id + "' is outside the support of '" + id_ +
                           "'");
  const auto pi = probs(p);
  const auto sets = prefix_sets(entry, r, toks);
  thl::Trace t;
  t.tokenizer_id = toks.tokenizer_id;
  t.response_mask.assign(toks.size(), true);
  t.log_probs.reserve(toks.size());
  double prev = 0.0;
  for (std::size_t j = 0; j < sets.size(); ++j) {
    double m = 0.0;
    for (std::size_t z : sets[j]) m += pi[z];
    // The final token reads log pi(y) directly so the chain sums exactly.
    const double lm = j + 1 == sets.size() ? log_prob(p, r) : std::log(m);
    t.log_probs.push_back(lm - prev);
    prev = lm;
  }
  return t;
}

std::vector<std::vector<double>> PrefixTreePolicy::trace_gradients(
    std::size_t p, std::size_t r, const textgrid::TokenSeq& toks) const {
  const auto& entry = env_->prompt(p);
  check_tokens_spell(entry, r, toks);
  const auto pi = probs(p);
  const auto sets = prefix_sets(entry, r, toks);
  const std::size_t n = pi.size();
  // d log m(S) / d theta_z = pi_z (1[z in S] / m(S) - 1).
  auto grad_log_mass = [&](const std::vector<std::size_t>& s) {
    double m = 0.0;
    for (std::size_t z : s) m += pi[z];
    std::vector<double> g(n);
    for (std::size_t z = 0; z < n; ++z) g[z] = -pi[z];
    for (std::size_t z : s) g[z] += pi[z] / m;
    return g;
  };
  std::vector<std::vector<double>> out;
  std::vector<double> prev(n, 0.0);
  for (const auto& s : sets) {
    auto cur = grad_log_mass(s);
    std::vector<double> d(n);
    for (std::size_t z = 0; z < n; ++z) d[z] = cur[z] - prev[z];
    out.push_back(std::move(d));
    prev = std::move(cur);
  }
  return out;
}

std::vector<double> PrefixTreePolicy::score_gradient(std::size_t p,
                                                     std::size_t r) const {
  auto g = probs(p);
  for (double& v : g) v = -v;
  g.at(r) += 1.0;
  return g;
}

std::size_t PrefixTreePolicy::argmax(std::size_t p) const {
  const auto& row = logits_.at(p);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) -
                                  row.begin());
}

void PrefixTreePolicy::apply_gradient(const Gradient& grad, double lr) {
  if (grad.size() != logits_.size())
    throw InputShapeError("gradient prompt count mismatch");
  for (std::size_t p = 0; p < logits_.size(); ++p) {
    if (grad[p].empty()) continue;
    if (grad[p].size() != logits_[p].size())
      throw InputShapeError("gradient row size mismatch");
    for (std::size_t r = 0; r < logits_[p].size(); ++r) {
      if (logits_[p][r] == kNegInf) continue;
      const double v = logits_[p][r] - lr * grad[p][r];
      if (!std::isfinite(v))
        throw NumericError("non-finite logit after update of '" + id_ + "'");
      logits_[p][r] = v;
    }
  }
}

bool RolloutGroup::any_success() const {
  return std::any_of(rewards.begin(), rewards.end(),
                     [](double r) { return r > kSuccessThreshold; });
}

bool RolloutGroup::all_negative() const {
  return std::all_of(rewards.begin(), rewards.end(),
                     [](double r) { return r < kNegativeThreshold; });
}

RolloutGroup sample_group(const PrefixTreePolicy& policy,
                          const std::string& prompt_id, std::size_t k,
                          std::uint64_t seed) {
  return sample_group(policy, policy.env().index_of(prompt_id), k, seed);
}

RolloutGroup sample_group(const PrefixTreePolicy& policy, std::size_t p,
                          std::size_t k, std::uint64_t seed) {
  if (k == 0) throw PreconditionError("group size must be >= 1");
  if (p >= policy.env().num_prompts())
    throw LookupError("prompt index out of range");
  const auto& entry = policy.env().prompt(p);
  const auto pi = policy.probs(p);
  std::mt19937_64 rng(seed);
  RolloutGroup g;
  g.policy_id = policy.id();
  g.tokenizer_id = policy.tokenizer_id();
  g.prompt_index = p;
  g.prompt_id = entry.id;
  g.behavior_logits = policy.logits(p);
  for (std::size_t i = 0; i < k; ++i) {
    const double u = uniform01(rng);
    double c = 0.0;
    std::size_t pick = pi.size();
    for (std::size_t z = 0; z < pi.size(); ++z) {
      if (pi[z] <= 0.0) continue;
      c += pi[z];
      pick = z;
      if (u < c) break;
    }
    g.responses.push_back(pick);
    g.texts.push_back(entry.responses[pick]);
    g.rewards.push_back(entry.rewards[pick]);
    g.tokens.push_back(policy.tokens(p, pick));
    g.traces.push_back(policy.trace_on(p, pick, g.tokens.back()));
  }
  return g;
}

thl::Trace log_prob_trace(const PrefixTreePolicy& policy,
                          const std::string& prompt_id,
                          const textgrid::TokenSeq& response_tokens) {
  const std::size_t p = policy.env().index_of(prompt_id);
  const auto r = policy.env().find_response(p, response_tokens.joined());
  if (!r)
    throw ZeroSupportError("response '" + response_tokens.joined() +
                           "' is not in the support of prompt '" + prompt_id +
                           "'");
  return policy.trace_on(p, *r, response_tokens);
}

double success_prob(const PrefixTreePolicy& policy, std::size_t p) {
  const auto pi = policy.probs(p);
  double s = 0.0;
  for (std::size_t r = 0; r < pi.size(); ++r)
    if (policy.env().is_success(p, r)) s += pi[r];
  return s;
}

double policy_entropy(const PrefixTreePolicy& policy, std::size_t p) {
  const auto pi = policy.probs(p);
  double h = 0.0;
  for (double v : pi)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double kl(const std::vector<double>& pi, const std::vector<double>& rho) {
  if (pi.size() != rho.size())
    throw InputShapeError("KL over different response sets");
  double d = 0.0;
  for (std::size_t z = 0; z < pi.size(); ++z) {
    if (pi[z] <= 0.0) continue;
    if (rho[z] <= 0.0)
      throw DivergenceUndefinedError("KL undefined: support not contained");
    d += pi[z] * (std::log(pi[z]) - std::log(rho[z]));
  }
  return d;
}

double policy_kl(const PrefixTreePolicy& a, const PrefixTreePolicy& b,
                 std::size_t p) {
  return kl(a.probs(p), b.probs(p));
}

std::vector<double> kl_gradient(const std::vector<double>& pi,
                                const std::vector<double>& rho) {
  const double d = kl(pi, rho);
  std::vector<double> g(pi.size(), 0.0);
  for (std::size_t z = 0; z < pi.size(); ++z)
    if (pi[z] > 0.0) g[z] = pi[z] * (std::log(pi[z]) - std::log(rho[z]) - d);
  return g;
}

}  // namespace mrl::env
