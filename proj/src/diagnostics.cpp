// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"

namespace mrl::harness {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

// Single-cycle permutation (Sattolo), so no prompt maps to itself.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  if (n < 2) return perm;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng() % i]);
  return perm;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 2) return 0.0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double nearest_rank(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0
                   : std::accumulate(v.begin(), v.end(), 0.0) /
                         static_cast<double>(v.size());
}

Check check(std::string name, bool pass, std::string detail = {}) {
  return {std::move(name), pass, std::move(detail)};
}

// Peer text scored on the learner grid against a peer trace aligned to it.
struct AlignedPair {
  std::vector<double> learner;  // learner snapshot, learner grid
  thl::AlignedTrace peer;
};

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string Table::to_csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

bool Report::ok() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const Check& c) { return c.pass; });
}

// -------------------------------------------------------------- RunView

RunView::RunView(const RunResult& run) : run_(run), setup_(build_setup(run.config)) {
  if (run.steps.empty()) throw PreconditionError("run has no recorded steps");
  for (const auto& st : run.steps)
    if (st.policies.size() != setup_.policies.size())
      throw InputShapeError("artifact policy count differs from the config");
}

env::PrefixTreePolicy RunView::snapshot(std::size_t step, std::size_t i) const {
  const auto& base = setup_.policies.at(i);
  return {base.id(), base.tokenizer(), setup_.env, record(step, i).logits};
}

env::PrefixTreePolicy RunView::initial(std::size_t i) const {
  const auto& base = setup_.policies.at(i);
  return {base.id(), base.tokenizer(), setup_.env, run_.initial_logits.at(i)};
}

env::PrefixTreePolicy RunView::final_policy(std::size_t i) const {
  const auto& base = setup_.policies.at(i);
  return {base.id(), base.tokenizer(), setup_.env, run_.final_logits.at(i)};
}

const PolicyStep& RunView::record(std::size_t step, std::size_t i) const {
  return run_.steps.at(step).policies.at(i);
}

bool RunView::any_success(std::size_t step, std::size_t i, std::size_t p) const {
  const auto& r = record(step, i).rewards.at(p);
  const double thr = run_.config.sgt.success_threshold;
  return std::any_of(r.begin(), r.end(), [&](double v) { return v > thr; });
}

bool RunView::all_negative(std::size_t step, std::size_t i, std::size_t p) const {
  const auto& r = record(step, i).rewards.at(p);
  const double thr = run_.config.sgt.negative_threshold;
  return std::all_of(r.begin(), r.end(), [&](double v) { return v < thr; });
}

namespace {

bool peer_success(const RunView& v, std::size_t s, std::size_t i, std::size_t p) {
  for (std::size_t j = 0; j < v.num_policies(); ++j)
    if (j != i && v.any_success(s, j, p)) return true;
  return false;
}

bool gate_condition(const RunView& v, std::size_t s, std::size_t i, std::size_t p) {
  return v.all_negative(s, i, p) && peer_success(v, s, i, p);
}

// Scores `text` under learner snapshot at prompt p and aligns the peer's
// trace of the same text under prompt q. Empty when either side cannot
// score the text.
std::optional<AlignedPair> align_pair(const env::PrefixTreePolicy& learner,
                                      const env::PrefixTreePolicy& peer,
                                      std::size_t p, std::size_t q,
                                      const std::string& text,
                                      const thl::AlignOptions& opts) {
  const auto& env = learner.env();
  const auto rl = env.find_response(p, text);
  const auto rq = env.find_response(q, text);
  if (!rl || !rq || !learner.in_support(p, *rl) || !peer.in_support(q, *rq))
    return std::nullopt;
  AlignedPair out;
  const auto ltoks = learner.tokens(p, *rl);
  out.learner = learner.trace_on(p, *rl, ltoks).log_probs;
  const auto src = peer.trace(q, *rq);
  out.peer = thl::word_align_log_probs(text, src, peer.tokenizer(),
                                       learner.tokenizer(),
                                       std::vector<bool>(ltoks.size(), true), opts);
  return out;
}

}  // namespace

// ------------------------------------------------------------ activation

std::vector<ActivationRow> activation_profile(const RunView& v) {
  std::vector<ActivationRow> rows;
  const double thr = v.run().config.sgt.success_threshold;
  for (std::size_t i = 0; i < v.num_policies(); ++i) {
    ActivationRow row;
    row.learner = v.setup().policies[i].id();
    std::size_t g_succ = 0, g_all = 0, u_succ = 0, u_all = 0;
    for (std::size_t s = 0; s < v.num_steps(); ++s)
      for (std::size_t p = 0; p < v.num_prompts(); ++p) {
        ++row.prompts;
        if (v.all_negative(s, i, p)) ++row.all_fail;
        std::size_t succ = 0, all = 0;
        for (std::size_t j = 0; j < v.num_policies(); ++j)
          for (double r : v.record(s, j).rewards[p]) {
            ++all;
            if (r > thr) ++succ;
          }
        if (gate_condition(v, s, i, p)) {
          ++row.gated;
          g_succ += succ;
          g_all += all;
        } else {
          ++row.ungated;
          u_succ += succ;
          u_all += all;
        }
      }
    row.gated_pool_success = ratio(g_succ, g_all);
    row.ungated_pool_success = ratio(u_succ, u_all);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------- ratios

std::vector<RatioStats> ratio_statistics(const RunView& v, double lo, double hi) {
  const auto& cfg = v.run().config;
  const std::vector<std::string> names = {"thl-aligned", "shuffled-prompt",
                                          "broken-alignment"};
  std::vector<std::vector<double>> token_ratios(3);
  std::vector<std::size_t> responses(3, 0), above(3, 0);
  thl::AlignOptions broken = cfg.thl;
  broken.break_alignment = true;

  for (std::size_t s = 0; s < v.num_steps(); ++s) {
    const auto perm =
        derangement(v.num_prompts(), derive_seed({cfg.diagnostics.shuffle_seed, s}));
    std::vector<env::PrefixTreePolicy> snaps;
    for (std::size_t i = 0; i < v.num_policies(); ++i) snaps.push_back(v.snapshot(s, i));
    for (std::size_t i = 0; i < v.num_policies(); ++i)
      for (std::size_t j = 0; j < v.num_policies(); ++j) {
        if (i == j) continue;
        for (std::size_t p = 0; p < v.num_prompts(); ++p)
          for (std::size_t r : v.record(s, j).responses[p]) {
            const std::string& text = v.setup().env->prompt(p).responses[r];
            const std::size_t qs[3] = {p, perm[p], p};
            for (std::size_t k = 0; k < 3; ++k) {
              const auto pair = align_pair(snaps[i], snaps[j], p, qs[k], text,
                                           k == 2 ? broken : cfg.thl);
              if (!pair) continue;
              ++responses[k];
              bool big = false;
              for (std::size_t t = 0; t < pair->learner.size(); ++t) {
                if (!pair->peer.active_mask[t]) continue;
                const double w = std::exp(pair->learner[t] - pair->peer.values[t]);
                token_ratios[k].push_back(w);
                big = big || w > 10.0;
              }
              if (big) ++above[k];
            }
          }
      }
  }
  std::vector<RatioStats> out;
  for (std::size_t k = 0; k < 3; ++k) {
    RatioStats st;
    st.variant = names[k];
    st.tokens = token_ratios[k].size();
    st.responses = responses[k];
    st.p99 = nearest_rank(token_ratios[k], 0.99);
    std::size_t outside = 0;
    for (double w : token_ratios[k])
      if (w < lo || w > hi) ++outside;
    st.clip_rate = ratio(outside, st.tokens);
    st.any_above_10 = ratio(above[k], st.responses);
    out.push_back(st);
  }
  return out;
}

// -------------------------------------------------------------- channels

ChannelBreakdown channel_decomposition(const RunView& v, double lo, double hi) {
  const auto& cfg = v.run().config;
  ChannelBreakdown out;
  for (std::size_t s = 0; s < v.num_steps(); ++s) {
    std::vector<env::PrefixTreePolicy> snaps;
    for (std::size_t i = 0; i < v.num_policies(); ++i) snaps.push_back(v.snapshot(s, i));
    for (std::size_t i = 0; i < v.num_policies(); ++i)
      for (std::size_t p = 0; p < v.num_prompts(); ++p) {
        bool prp = false;
        std::vector<exchange::ExperienceRecord> peers;
        for (std::size_t j = 0; j < v.num_policies(); ++j) {
          if (j == i) continue;
          const auto& rs = v.record(s, j);
          for (std::size_t k = 0; k < rs.responses[p].size(); ++k) {
            exchange::ExperienceRecord rec;
            rec.prompt_id = v.setup().env->prompt(p).id;
            rec.reward = rs.rewards[p][k];
            rec.meta.policy_id = rs.policy_id;
            peers.push_back(rec);
            if (prp) continue;
            const auto& text = v.setup().env->prompt(p).responses[rs.responses[p][k]];
            const auto pair = align_pair(snaps[i], snaps[j], p, p, text, cfg.thl);
            if (!pair) continue;
            double log_w = 0.0;
            for (std::size_t t = 0; t < pair->learner.size(); ++t)
              if (pair->peer.active_mask[t])
                log_w += pair->learner[t] - pair->peer.values[t];
            const double w = std::exp(log_w);
            prp = w >= lo && w <= hi;
          }
        }
        const auto group = rebuild_group(snaps[i], p, v.record(s, i).responses[p]);
        const auto local = grpo::group_advantages(group.rewards, cfg.normalization,
                                                  cfg.advantage_epsilon);
        const auto eff = regimes::xgrpo_group_advantages(group, peers,
                                                         cfg.normalization, cfg.xgrpo);
        bool xg = false;
        for (std::size_t k = 0; k < local.values.size(); ++k)
          xg = xg || std::abs(eff.values[k] - local.values[k]) > 1e-12;
        const bool sgt = gate_condition(v, s, i, p);
        ++out.cells[(prp ? 4 : 0) | (xg ? 2 : 0) | (sgt ? 1 : 0)];
        ++out.total;
        out.prp += prp;
        out.xgrpo += xg;
        out.sgt += sgt;
        if (sgt && !xg) ++out.violations;
      }
  }
  return out;
}

// ------------------------------------------------------- complementarity

ComplementarityReport complementarity_report(const RunView& v,
                                             const std::string& stage) {
  if (stage != "initial" && stage != "final")
    throw PreconditionError("decode stage must be initial or final");
  ComplementarityReport rep;
  rep.stage = stage;
  const std::size_t m = v.num_policies(), n = v.num_prompts();
  rep.prompts = n;
  std::vector<std::vector<bool>> succ(m, std::vector<bool>(n));
  std::vector<double> difficulty(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto pol = stage == "initial" ? v.initial(i) : v.final_policy(i);
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n; ++p) {
      succ[i][p] = v.setup().env->is_success(p, pol.argmax(p));
      hits += succ[i][p];
      difficulty[p] += env::success_prob(pol, p) / static_cast<double>(m);
    }
    rep.single_rates.push_back(ratio(hits, n));
  }
  auto jaccard = [&](std::size_t a, std::size_t b, const std::vector<std::size_t>& ps) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t p : ps) {
      inter += succ[a][p] && succ[b][p];
      uni += succ[a][p] || succ[b][p];
    }
    return uni ? ratio(inter, uni) : 1.0;
  };
  std::vector<std::size_t> all_prompts(n);
  std::iota(all_prompts.begin(), all_prompts.end(), 0);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) {
      PairRow row;
      row.a = v.setup().policies[a].id();
      row.b = v.setup().policies[b].id();
      row.rate_a = rep.single_rates[a];
      row.rate_b = rep.single_rates[b];
      row.jaccard = jaccard(a, b, all_prompts);
      std::size_t a_fail = 0, b_res = 0, b_fail = 0, a_res = 0;
      for (std::size_t p = 0; p < n; ++p) {
        if (!succ[a][p]) {
          ++a_fail;
          b_res += succ[b][p];
        }
        if (!succ[b][p]) {
          ++b_fail;
          a_res += succ[a][p];
        }
      }
      row.rescue_b_given_a_fails = ratio(b_res, a_fail);
      row.rescue_a_given_b_fails = ratio(a_res, b_fail);
      rep.pairs.push_back(row);
    }
  std::vector<std::size_t> count(n, 0);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < m; ++i) count[p] += succ[i][p];
    rep.any += count[p] >= 1;
    rep.all += count[p] == m;
    rep.exactly_one += count[p] == 1;
    rep.at_least_two += count[p] >= 2;
  }
  std::size_t max_single = 0;
  for (std::size_t i = 0; i < m; ++i)
    max_single = std::max<std::size_t>(
        max_single, static_cast<std::size_t>(std::count(succ[i].begin(), succ[i].end(), true)));
  rep.any_ge_max_single = rep.any >= max_single;
  rep.exactly_one_identity = rep.exactly_one == rep.any - rep.at_least_two;

  // Equal-sized difficulty buckets, easiest first; the remainder goes to the
  // earlier buckets.
  std::vector<std::size_t> order = all_prompts;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return difficulty[a] > difficulty[b];
  });
  const char* names[3] = {"easy", "medium", "hard"};
  std::size_t start = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t size = n / 3 + (b < n % 3 ? 1 : 0);
    std::vector<std::size_t> ps(order.begin() + static_cast<std::ptrdiff_t>(start),
                                order.begin() + static_cast<std::ptrdiff_t>(start + size));
    start += size;
    BucketRow row;
    row.bucket = names[b];
    row.prompts = ps.size();
    std::vector<double> js;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t c = a + 1; c < m; ++c) js.push_back(jaccard(a, c, ps));
    row.mean_jaccard = mean(js);
    std::size_t one = 0;
    for (std::size_t p : ps) one += count[p] == 1;
    row.exactly_one = ratio(one, ps.size());
    rep.buckets.push_back(row);
  }
  return rep;
}

// ------------------------------------------------------------------ cost

CostRow cost_report(const RunView& v) {
  const auto& cfg = v.run().config;
  CostRow row;
  row.regime = to_string(cfg.regime);
  for (std::size_t s = 0; s < v.num_steps(); ++s) {
    std::size_t seqs = 0, extra = 0;
    for (std::size_t i = 0; i < v.num_policies(); ++i) {
      const auto& r = v.record(s, i);
      seqs += r.rollout_sequences;
      row.rollout_tokens += r.rollout_tokens;
      switch (cfg.regime) {
        case RegimeKind::kPrp:
          extra += r.rescored_sequences;
          row.extra_tokens += r.rescored_tokens;
          break;
        case RegimeKind::kSgt:
          extra += r.aux_sequences;
          row.extra_tokens += r.aux_tokens;
          break;
        default:
          break;
      }
    }
    row.rollout_sequences += seqs;
    row.extra_sequences += extra;
    row.max_step_fraction = std::max(row.max_step_fraction, ratio(extra, seqs));
  }
  row.sequence_fraction = ratio(row.extra_sequences, row.rollout_sequences);
  if (cfg.regime == RegimeKind::kSgt) {
    row.bound = regimes::sgt_cost_bound(v.num_policies(), cfg.group_size) *
                static_cast<double>(cfg.sgt.per_prompt_cap);
    row.within_bound = row.max_step_fraction <= row.bound + 1e-15;
  }
  return row;
}

// --------------------------------------------------------------- teacher

std::vector<TeacherRow> matched_teacher_check(const RunView& v) {
  const auto& env = *v.setup().env;
  std::vector<TeacherRow> rows;
  for (std::size_t i = 0; i < v.num_policies(); ++i) {
    TeacherRow row;
    row.learner = v.setup().policies[i].id();
    std::vector<double> matched, mismatched;
    for (std::size_t s = 0; s < v.num_steps(); ++s) {
      const auto learner = v.snapshot(s, i);
      auto nll = [&](std::size_t p, std::size_t r) {
        return -learner.log_prob(p, r) /
               static_cast<double>(learner.tokens(p, r).size());
      };
      for (std::size_t p = 0; p < v.num_prompts(); ++p) {
        if (!gate_condition(v, s, i, p)) continue;
        // The peer success actually used when the gate recorded one,
        // otherwise the first peer success in pool order.
        std::optional<std::pair<std::size_t, std::size_t>> pick;  // (peer, response)
        const auto& rec = v.record(s, i);
        if (!rec.gates.empty() && rec.gates[p].fired && !rec.gates[p].record_ids.empty()) {
          const auto& id = rec.gates[p].record_ids.front();
          for (std::size_t j = 0; j < v.num_policies(); ++j)
            if (j != i && id.rfind(v.setup().policies[j].id() + "/", 0) == 0)
              pick = {j, rec.gates[p].responses.front()};
        }
        for (std::size_t j = 0; j < v.num_policies() && !pick; ++j) {
          if (j == i) continue;
          const auto& pr = v.record(s, j);
          for (std::size_t k = 0; k < pr.responses[p].size() && !pick; ++k)
            if (env.is_success(p, pr.responses[p][k])) pick = {j, pr.responses[p][k]};
        }
        if (!pick || !learner.in_support(p, pick->second)) continue;
        const auto [j, y_star] = *pick;
        // A success by the same peer on another prompt whose text the
        // learner can also emit here.
        std::optional<std::size_t> other;
        const auto& pr = v.record(s, j);
        for (std::size_t q = 0; q < v.num_prompts() && !other; ++q) {
          if (q == p) continue;
          for (std::size_t r : pr.responses[q]) {
            if (!env.is_success(q, r)) continue;
            const auto& text = env.prompt(q).responses[r];
            const auto here = env.find_response(p, text);
            if (here && *here != y_star && learner.in_support(p, *here)) {
              other = *here;
              break;
            }
          }
        }
        if (!other) continue;
        matched.push_back(nll(p, y_star));
        mismatched.push_back(nll(p, *other));
      }
    }
    row.pairs = matched.size();
    row.matched_nll = mean(matched);
    row.mismatched_nll = mean(mismatched);
    rows.push_back(row);
  }
  return rows;
}

// --------------------------------------------------------------- shuffle

std::vector<ShuffleRow> shuffled_pool_control(const RunView& v, std::uint64_t seed) {
  const auto& cfg = v.run().config;
  std::vector<double> spread;
  std::vector<double> change[2];
  std::size_t flips[2] = {0, 0}, signed_count = 0;
  std::vector<double> abs_change[2];
  for (std::size_t s = 0; s < v.num_steps(); ++s) {
    const auto perm = derangement(v.num_prompts(), derive_seed({seed, s}));
    for (std::size_t i = 0; i < v.num_policies(); ++i) {
      const auto& base = v.setup().policies[i];
      for (std::size_t p = 0; p < v.num_prompts(); ++p) {
        const auto& rewards = v.record(s, i).rewards[p];
        std::vector<std::size_t> lengths;
        for (std::size_t r : v.record(s, i).responses[p])
          lengths.push_back(base.tokens(p, r).size());
        const auto local = grpo::group_advantages(rewards, cfg.normalization,
                                                  cfg.advantage_epsilon);
        std::vector<double> peers[2];
        for (std::size_t j = 0; j < v.num_policies(); ++j) {
          if (j == i) continue;
          const auto& a = v.record(s, j).rewards[p];
          const auto& b = v.record(s, j).rewards[perm[p]];
          peers[0].insert(peers[0].end(), a.begin(), a.end());
          peers[1].insert(peers[1].end(), b.begin(), b.end());
        }
        spread.push_back(std::abs(mean(peers[0]) - mean(rewards)));
        for (std::size_t k = 0; k < 2; ++k) {
          std::vector<double> pool = rewards;
          pool.insert(pool.end(), peers[k].begin(), peers[k].end());
          const auto eff = regimes::xgrpo_advantages(
              rewards, lengths, local, regimes::xgrpo_pooled_stats(pool), cfg.xgrpo);
          double sum = 0.0;
          for (std::size_t z = 0; z < rewards.size(); ++z) {
            const double d = std::abs(eff.values[z] - local.values[z]);
            sum += d;
            abs_change[k].push_back(d);
            if (std::abs(local.values[z]) > 1e-12) {
              if (k == 0) ++signed_count;
              if (eff.values[z] * local.values[z] < 0.0) ++flips[k];
            }
          }
          change[k].push_back(sum / static_cast<double>(rewards.size()));
        }
      }
    }
  }
  std::vector<ShuffleRow> rows;
  const char* names[2] = {"true", "shuffled"};
  for (std::size_t k = 0; k < 2; ++k) {
    ShuffleRow row;
    row.variant = names[k];
    row.units = spread.size();
    row.correlation = pearson(spread, change[k]);
    row.sign_flip_rate = ratio(flips[k], signed_count);
    row.mean_abs_change = mean(abs_change[k]);
    rows.push_back(row);
  }
  return rows;
}

// --------------------------------------------------------------- rescue

std::vector<RescueRow> rescue_first_success(const RunView& v, double learner_max,
                                            double peer_min) {
  std::vector<RescueRow> rows;
  std::vector<env::PrefixTreePolicy> init;
  for (std::size_t i = 0; i < v.num_policies(); ++i) init.push_back(v.initial(i));
  const double thr = v.run().config.sgt.success_threshold;
  for (std::size_t i = 0; i < v.num_policies(); ++i)
    for (std::size_t p = 0; p < v.num_prompts(); ++p) {
      if (!(env::success_prob(init[i], p) < learner_max)) continue;
      bool peer_ok = false;
      for (std::size_t j = 0; j < v.num_policies(); ++j)
        peer_ok = peer_ok || (j != i && env::success_prob(init[j], p) >= peer_min);
      if (!peer_ok) continue;
      RescueRow row;
      row.learner = init[i].id();
      row.prompt = v.setup().env->prompt(p).id;
      row.first_success = v.num_steps();
      row.censored = true;
      for (std::size_t s = 0; s < v.num_steps(); ++s) {
        const auto& r = v.record(s, i).rewards[p];
        if (std::any_of(r.begin(), r.end(), [&](double x) { return x > thr; })) {
          row.first_success = s;
          row.censored = false;
          break;
        }
      }
      rows.push_back(row);
    }
  return rows;
}

// ---------------------------------------------------------------- tables

const std::vector<std::string> kReportTables = {
    "activation", "ratios", "complementarity", "channels", "cost", "teacher",
    "shuffle"};

Report build_report(const RunView& v, const std::string& name) {
  const auto& cfg = v.run().config;
  const auto& dc = cfg.diagnostics;
  Report rep;
  rep.name = name;
  auto& t = rep.table;
  auto fmt = [](double x) { return format_number(x); };
  auto num = [](std::size_t x) { return std::to_string(x); };

  if (name == "activation") {
    t.header = {"learner", "prompts", "gated", "ungated", "gated_pool_success",
                "ungated_pool_success", "all_fail"};
    for (const auto& r : activation_profile(v)) {
      t.rows.push_back({r.learner, num(r.prompts), num(r.gated), num(r.ungated),
                        fmt(r.gated_pool_success), fmt(r.ungated_pool_success),
                        num(r.all_fail)});
      rep.checks.push_back(check("partition:" + r.learner,
                                 r.gated + r.ungated == r.prompts));
      rep.checks.push_back(check("gated_within_all_fail:" + r.learner,
                                 r.gated <= r.all_fail));
    }
    if (cfg.regime == RegimeKind::kSgt) {
      std::size_t mismatch = 0;
      for (std::size_t s = 0; s < v.num_steps(); ++s)
        for (std::size_t i = 0; i < v.num_policies(); ++i)
          for (std::size_t p = 0; p < v.num_prompts(); ++p)
            mismatch += v.record(s, i).gates.at(p).fired != gate_condition(v, s, i, p);
      rep.checks.push_back(check("gate_matches_condition", mismatch == 0,
                                 num(mismatch) + " mismatches"));
    }
  } else if (name == "ratios") {
    t.header = {"variant", "tokens", "responses", "p99", "clip_rate",
                "any_ratio_gt_10"};
    for (const auto& r : ratio_statistics(v, dc.band_lo, dc.band_hi)) {
      t.rows.push_back({r.variant, num(r.tokens), num(r.responses), fmt(r.p99),
                        fmt(r.clip_rate), fmt(r.any_above_10)});
      rep.checks.push_back(check("rates_in_unit_interval:" + r.variant,
                                 r.clip_rate >= 0 && r.clip_rate <= 1 &&
                                     r.any_above_10 >= 0 && r.any_above_10 <= 1));
    }
  } else if (name == "complementarity") {
    const auto c = complementarity_report(v, dc.decode_stage);
    t.header = {"scope", "name", "value"};
    for (std::size_t i = 0; i < c.single_rates.size(); ++i)
      t.rows.push_back({"single", v.setup().policies[i].id(), fmt(c.single_rates[i])});
    for (const auto& pr : c.pairs) {
      const std::string key = pr.a + "|" + pr.b;
      t.rows.push_back({"pair:" + key, "jaccard", fmt(pr.jaccard)});
      t.rows.push_back({"pair:" + key, "rescue_b_given_a_fails",
                        fmt(pr.rescue_b_given_a_fails)});
      t.rows.push_back({"pair:" + key, "rescue_a_given_b_fails",
                        fmt(pr.rescue_a_given_b_fails)});
    }
    const double n = static_cast<double>(c.prompts);
    t.rows.push_back({"pool", "prompts", num(c.prompts)});
    t.rows.push_back({"pool", "any", fmt(c.any / n)});
    t.rows.push_back({"pool", "all", fmt(c.all / n)});
    t.rows.push_back({"pool", "exactly_one", fmt(c.exactly_one / n)});
    t.rows.push_back({"pool", "at_least_two", fmt(c.at_least_two / n)});
    std::size_t bucket_total = 0;
    for (const auto& b : c.buckets) {
      t.rows.push_back({"bucket:" + b.bucket, "prompts", num(b.prompts)});
      t.rows.push_back({"bucket:" + b.bucket, "mean_jaccard", fmt(b.mean_jaccard)});
      t.rows.push_back({"bucket:" + b.bucket, "exactly_one", fmt(b.exactly_one)});
      bucket_total += b.prompts;
    }
    rep.checks.push_back(check("any_ge_max_single", c.any_ge_max_single));
    rep.checks.push_back(check("exactly_one_eq_any_minus_at_least_two",
                               c.exactly_one_identity));
    rep.checks.push_back(check("buckets_partition_prompts", bucket_total == c.prompts));
  } else if (name == "channels") {
    const auto ch = channel_decomposition(v, dc.band_lo, dc.band_hi);
    t.header = {"prp_usable", "xgrpo_usable", "sgt_usable", "count", "percent"};
    std::size_t sum = 0;
    for (std::size_t cell = 0; cell < 8; ++cell) {
      t.rows.push_back({num(cell >> 2 & 1), num(cell >> 1 & 1), num(cell & 1),
                        num(ch.cells[cell]), fmt(100.0 * ratio(ch.cells[cell], ch.total))});
      sum += ch.cells[cell];
    }
    rep.checks.push_back(check("sgt_implies_xgrpo", ch.violations == 0,
                               num(ch.violations) + " violations"));
    rep.checks.push_back(check("cells_partition_total", sum == ch.total));
  } else if (name == "cost") {
    const auto c = cost_report(v);
    t.header = {"regime", "rollout_sequences", "rollout_tokens", "extra_sequences",
                "extra_tokens", "sequence_fraction", "max_step_fraction", "bound"};
    t.rows.push_back({c.regime, num(c.rollout_sequences), num(c.rollout_tokens),
                      num(c.extra_sequences), num(c.extra_tokens),
                      fmt(c.sequence_fraction), fmt(c.max_step_fraction), fmt(c.bound)});
    rep.checks.push_back(check("sgt_fraction_within_bound", c.within_bound));
    if (cfg.regime == RegimeKind::kXgrpo || cfg.regime == RegimeKind::kNone)
      rep.checks.push_back(check("no_extra_tokens", c.extra_tokens == 0));
  } else if (name == "teacher") {
    t.header = {"learner", "pairs", "matched_nll", "mismatched_nll"};
    for (const auto& r : matched_teacher_check(v)) {
      if (r.pairs == 0) continue;
      t.rows.push_back({r.learner, num(r.pairs), fmt(r.matched_nll),
                        fmt(r.mismatched_nll)});
      rep.checks.push_back(check("finite:" + r.learner,
                                 std::isfinite(r.matched_nll) &&
                                     std::isfinite(r.mismatched_nll)));
    }
  } else if (name == "shuffle") {
    t.header = {"variant", "units", "correlation", "sign_flip_rate", "mean_abs_change"};
    for (const auto& r : shuffled_pool_control(v, dc.shuffle_seed)) {
      t.rows.push_back({r.variant, num(r.units), fmt(r.correlation),
                        fmt(r.sign_flip_rate), fmt(r.mean_abs_change)});
      rep.checks.push_back(check("sign_flip_in_unit_interval:" + r.variant,
                                 r.sign_flip_rate >= 0 && r.sign_flip_rate <= 1));
    }
  } else {
    throw PreconditionError("unknown report table '" + name + "'");
  }
  return rep;
}

// ------------------------------------------------------------------- THL

std::vector<double> synthetic_log_probs(const std::string& /*text*/,
                                        const textgrid::TokenSeq& tokens) {
  std::vector<double> out;
  for (const auto& tok : tokens.tokens) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : tok.text) h = (h ^ c) * 0x100000001B3ULL;
    const std::uint64_t mixed = splitmix64(h ^ splitmix64(tok.start));
    const double u = static_cast<double>(mixed >> 11) * 0x1.0p-53;
    out.push_back(-(0.1 + 2.9 * u));
  }
  return out;
}

ThlDiagnosis diagnose_thl(const ExperimentConfig& cfg) {
  ThlDiagnosis out;
  const Setup setup = build_setup(cfg);
  std::vector<std::string> corpus = cfg.diagnostics.corpus;
  if (corpus.empty()) {
    std::set<std::string> seen;
    for (const auto& p : setup.env->prompts())
      for (const auto& r : p.responses)
        if (seen.insert(r).second) corpus.push_back(r);
  }
  auto pairs = cfg.diagnostics.pairs;
  if (pairs.empty())
    for (const auto& a : cfg.tokenizers)
      for (const auto& b : cfg.tokenizers) pairs.emplace_back(a.spec.id, b.spec.id);

  out.table.header = {"pair", "bucket", "thl_rel_mae", "baseline_rel_mae",
                      "prefix_leak_max"};
  for (const auto& [src_id, tgt_id] : pairs) {
    const auto& src = setup.specs.at(src_id);
    const auto& tgt = setup.specs.at(tgt_id);
    const std::string pair = src_id + "->" + tgt_id;
    const auto rows = thl::alignment_error_stats(corpus, src, tgt, synthetic_log_probs,
                                                 cfg.diagnostics.length_buckets, cfg.thl);
    bool self_exact = true;
    for (const auto& r : rows) {
      out.table.rows.push_back({pair, r.bucket, format_number(r.thl_rel_mae),
                                format_number(r.baseline_rel_mae),
                                format_number(r.prefix_leak_max)});
      if (src_id == tgt_id) self_exact = self_exact && r.thl_rel_mae == 0.0;
    }
    std::size_t bad = 0;
    for (const auto& text : corpus) {
      const auto toks = textgrid::tokenize(src, text);
      thl::Trace tr{synthetic_log_probs(text, toks),
                    std::vector<bool>(toks.size(), true), src.id};
      const auto tgt_toks = thl::retokenize_response(text, tgt);
      const auto rr = thl::residual_report(text, tr, src, tgt,
                                           std::vector<bool>(tgt_toks.size(), true),
                                           cfg.thl.clip_bound, cfg.thl);
      const double scale = 1.0 + std::abs(rr.source_total);
      const bool identity =
          std::abs((rr.source_total - rr.aligned_total) - rr.residual) <= 1e-12 * scale;
      const bool bounded = rr.residual_magnitude <= rr.bound + 1e-12 * scale;
      bad += !(identity && bounded);
    }
    out.checks.push_back(check("residual_identity_and_bound:" + pair, bad == 0,
                               std::to_string(bad) + " of " +
                                   std::to_string(corpus.size()) + " texts fail"));
    if (src_id == tgt_id)
      out.checks.push_back(check("self_pair_exact:" + pair, self_exact));
  }
  return out;
}

}  // namespace mrl::harness
