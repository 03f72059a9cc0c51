// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <doctest.h>

#include "mrl/errors.hpp"
#include "mrl/experiment.hpp"
#include "mrl/regimes.hpp"
#include "support.hpp"

using namespace mrl;
using namespace mrl::regimes;
using doctest::Approx;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Pair {
  std::shared_ptr<const env::BanditEnv> env;
  env::PrefixTreePolicy learner;
  env::PrefixTreePolicy peer;
  SpecRegistry specs;
};

// Response 0 is correct. The learner favours wrong answers; the peer the
// correct one.
Pair make_pair(std::vector<double> learner_logits = {-4.0, 1.0, 1.0, 0.5},
               std::vector<double> peer_logits = {4.0, 0.0, 0.0, 0.0}) {
  auto e = testing::single_prompt_env({"the cat", "a dog", "the cow", "no"});
  auto lspec = testing::words_spec();
  auto pspec = testing::chars_spec();
  return {e, testing::make_policy("learner", lspec, e, std::move(learner_logits)),
          testing::make_policy("peer", pspec, e, std::move(peer_logits)),
          {{lspec.id, lspec}, {pspec.id, pspec}}};
}

exchange::ExperienceRecord success_record(const std::string& id,
                                          const std::string& text) {
  exchange::ExperienceRecord r;
  r.record_id = id;
  r.prompt_id = "p0";
  r.response_text = text;
  r.reward = 1.0;
  r.meta = {"peer", 0, "chars", true};
  return r;
}

env::RolloutGroup forced_group(const env::PrefixTreePolicy& pol,
                               std::vector<std::size_t> responses) {
  return harness::rebuild_group(pol, 0, responses);
}

}  // namespace

TEST_SUITE("regimes") {

TEST_CASE("PRP pool without peers matches plain GRPO") {
  auto s = make_pair();
  const auto g = env::sample_group(s.learner, 0, 5, 1);
  PrpConfig cfg;
  const auto pool = prp_pool(s.learner, g, {}, s.specs, cfg);
  REQUIRE(pool.candidates.size() == 5);
  const auto adv = grpo::group_advantages(g.rewards, cfg.normalization);
  const auto base = grpo::grpo_gradient(s.learner, g, adv, cfg.clip, nullptr);
  const auto prp = prp_gradient(s.learner, pool, cfg, nullptr);
  for (std::size_t j = 0; j < base.gradient.size(); ++j)
    CHECK(prp.gradient[j] == Approx(base.gradient[j]).epsilon(1e-14));
}

TEST_CASE("PRP pool of two policies is normalized over ten candidates") {
  auto s = make_pair();
  const auto lg = forced_group(s.learner, {1, 2, 1, 3, 2});
  const auto pg = forced_group(s.peer, {0, 0, 0, 0, 0});
  PrpConfig cfg;
  cfg.normalization = grpo::Normalization::kMeanOnly;
  const auto pool = prp_pool(s.learner, lg, harness::group_records(pg, 0), s.specs, cfg);
  REQUIRE(pool.candidates.size() == 10);
  double sum = 0.0;
  for (const auto& c : pool.candidates) sum += c.advantage;
  CHECK(std::abs(sum) < 1e-12);
  for (const auto& c : pool.candidates)
    if (c.own) CHECK(c.advantage < 0.0);
}

TEST_CASE("peer responses outside learner support are counted as unusable") {
  auto s = make_pair({kNegInf, 1.0, 1.0, 0.5});
  const auto lg = forced_group(s.learner, {1, 2, 1, 3, 2});
  const auto pg = forced_group(s.peer, {0, 0, 1, 0, 0});
  const auto pool = prp_pool(s.learner, lg, harness::group_records(pg, 0), s.specs, {});
  CHECK(pool.unusable_count == 4);
  CHECK(pool.candidates.size() == 6);
}

TEST_CASE("PRP weights on own data and on exactly aligned peer data") {
  auto s = make_pair({0.3, -0.2, 0.1, 0.0});
  const auto lg = forced_group(s.learner, {0, 1, 2, 3, 0});
  const auto pg = forced_group(s.peer, {0, 2, 1, 3, 1});
  const auto pool = prp_pool(s.learner, lg, harness::group_records(pg, 0), s.specs, {});
  // theta = theta_old: own weights are 1.
  for (const auto& c : pool.candidates) {
    if (!c.own) continue;
    for (double w : prp_weights(PrpDenominator::kLearnerSnapshot, s.learner, c).weights)
      CHECK(w == Approx(1.0));
  }
  // Words refine chars exactly, so the aligned peer denominator recovers the
  // density ratio pi_theta / mu; the snapshot denominator is off by
  // exp(L_mu - L_old).
  for (const auto& c : pool.candidates) {
    if (c.own) continue;
    const auto w2 = prp_weights(PrpDenominator::kThlAlignedPeer, s.learner, c);
    double log_w2 = 0.0;
    for (std::size_t t = 0; t < w2.weights.size(); ++t)
      if (w2.active[t]) log_w2 += std::log(w2.weights[t]);
    const double lp_theta = s.learner.log_prob(0, c.response);
    const double lp_mu = s.peer.log_prob(0, c.response);
    CHECK(log_w2 == Approx(lp_theta - lp_mu).epsilon(1e-12));
    const auto w1 = prp_weights(PrpDenominator::kLearnerSnapshot, s.learner, c);
    double log_w1 = 0.0;
    for (double w : w1.weights) log_w1 += std::log(w);
    CHECK(log_w2 - log_w1 == Approx(-(lp_mu - lp_theta)).epsilon(1e-12));
  }
}

TEST_CASE("missing aligned trace under the aligned denominator is an error") {
  auto s = make_pair({0.3, -0.2, 0.1, 0.0});
  const auto lg = forced_group(s.learner, {0, 1, 2, 3, 0});
  auto recs = harness::group_records(forced_group(s.peer, {1}), 0);
  recs[0].trace.reset();
  const auto pool = prp_pool(s.learner, lg, recs, s.specs, {});
  CHECK_THROWS_AS(prp_weights(PrpDenominator::kThlAlignedPeer, s.learner,
                              pool.candidates.back()),
                  ConfigError);
}

TEST_CASE("XGRPO pooled statistics and advantages") {
  const auto st = xgrpo_pooled_stats({1, 0, 0, 1});
  CHECK(st.mu == Approx(0.5));
  CHECK(st.sigma == Approx(0.5));
  CHECK(xgrpo_pooled_stats({0.4, 0.4}).sigma == 0.0);

  const std::vector<double> rewards = {1, 0, 0, 1, 0};
  const auto local = grpo::group_advantages(rewards, grpo::Normalization::kZNorm);
  XgrpoConfig cfg;
  cfg.mix_factor = 0.0;
  cfg.advantage_clip = 1.0;
  const auto no_mix = xgrpo_advantages(rewards, {2, 2, 2, 2, 2}, local,
                                       xgrpo_pooled_stats(rewards), cfg);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(no_mix.values[i] == Approx(std::clamp(local.values[i], -1.0, 1.0)));

  XgrpoConfig full;
  full.mix_factor = 1.0;
  const std::vector<double> learner = {0, 0, 0};
  const auto pooled = xgrpo_pooled_stats({0, 0, 0, 1, 1, 1});
  const auto neg = xgrpo_advantages(
      learner, {1, 1, 1}, grpo::group_advantages(learner, grpo::Normalization::kZNorm),
      pooled, full);
  for (double v : neg.values) CHECK(v < 0.0);
}

TEST_CASE("XGRPO length correction damps long positive advantages only") {
  const std::vector<double> rewards = {1, 0, 1, 0};
  const auto local = grpo::group_advantages(rewards, grpo::Normalization::kZNorm);
  const auto stats = xgrpo_pooled_stats(rewards);
  XgrpoConfig cfg;
  const auto even = xgrpo_advantages(rewards, {3, 3, 3, 3}, local, stats, cfg);
  const auto uneven = xgrpo_advantages(rewards, {9, 3, 3, 1}, local, stats, cfg);
  CHECK(uneven.values[0] < even.values[0]);
  CHECK(uneven.values[0] > 0.0);
  CHECK(uneven.values[2] == even.values[2]);
  CHECK(uneven.values[1] == even.values[1]);
  cfg.mix_factor = 1.5;
  CHECK_THROWS_AS(xgrpo_advantages(rewards, {1, 1, 1, 1}, local, stats, cfg), ConfigError);
}

TEST_CASE("SGT gate contract") {
  auto s = make_pair();
  SgtConfig cfg;
  const auto fails = forced_group(s.learner, {1, 2, 3, 1, 2});
  const auto one_success = forced_group(s.learner, {1, 0, 3, 1, 2});
  const auto peer_ok = harness::group_records(forced_group(s.peer, {1, 0, 2}), 0);
  const auto peer_bad = harness::group_records(forced_group(s.peer, {1, 2, 3}), 0);

  CHECK_FALSE(sgt_gate(s.learner, one_success, peer_ok, cfg, 1).fired);
  CHECK_FALSE(sgt_gate(s.learner, fails, peer_bad, cfg, 1).fired);
  const auto ev = sgt_gate(s.learner, fails, peer_ok, cfg, 1);
  REQUIRE(ev.fired);
  REQUIRE(ev.selected.size() == 1);
  CHECK(ev.selected[0].response == 0);
  CHECK(ev.selected[0].text == "the cat");
  CHECK(ev.selected[0].tokens.tokenizer_id == "words");
  CHECK(ev.selected[0].scoreable);
}

TEST_CASE("SGT selection rules") {
  const auto only = success_record("a", "x y z");
  CHECK(sgt_select({only}, SelectionRule::kUniform, testing::words_spec(), 9) == 0);
  const std::vector<exchange::ExperienceRecord> two = {
      success_record("a", "a b c d e f g"), success_record("b", "a b c")};
  const auto chars = testing::chars_spec();
  CHECK(sgt_select(two, SelectionRule::kShorter, chars, 0) == 1);
  const std::vector<exchange::ExperienceRecord> many = {
      success_record("a", "1"), success_record("b", "2"), success_record("c", "3"),
      success_record("d", "4")};
  CHECK(sgt_select(many, SelectionRule::kUniform, chars, 77) ==
        sgt_select(many, SelectionRule::kUniform, chars, 77));
  CHECK_THROWS_AS(sgt_select({}, SelectionRule::kUniform, chars, 1), PreconditionError);
}

TEST_CASE("SGT update: gate off is pure GRPO, gate on moves toward y*") {
  auto s = make_pair();
  SgtConfig cfg;
  cfg.lambda = 0.5;
  const env::Gradient base = {{0.1, -0.2, 0.05, 0.05}};
  env::GateEvent off;
  off.prompt_id = "p0";
  const auto u_off = sgt_update(s.learner, base, {off}, cfg);
  CHECK(u_off.combined == base);
  CHECK(u_off.aux_sequences == 0);

  const auto fails = forced_group(s.learner, {1, 2, 3, 1, 2});
  const auto peer_ok = harness::group_records(forced_group(s.peer, {0}), 0);
  const auto ev = sgt_gate(s.learner, fails, peer_ok, cfg, 3);
  const auto u = sgt_update(s.learner, base, {ev}, cfg);
  CHECK(u.aux_sequences == 1);
  CHECK(u.aux_tokens == ev.selected[0].tokens.size());
  double diff = 0.0;
  for (std::size_t j = 0; j < 4; ++j)
    diff += std::pow(u.combined[0][j] - base[0][j], 2);
  CHECK(std::sqrt(diff) <= cfg.lambda * kAuxGradientBound + 1e-15);

  auto moved = s.learner;
  moved.apply_gradient(u.aux, 1e-3);
  CHECK(moved.log_prob(0, 0) > s.learner.log_prob(0, 0));
}

TEST_CASE("unscoreable peer success is skipped and counted") {
  auto s = make_pair({kNegInf, 1.0, 1.0, 0.5});
  const auto fails = forced_group(s.learner, {1, 2, 3, 1, 2});
  const auto peer_ok = harness::group_records(forced_group(s.peer, {0}), 0);
  const auto ev = sgt_gate(s.learner, fails, peer_ok, {}, 3);
  REQUIRE(ev.fired);
  CHECK_FALSE(ev.selected[0].scoreable);
  const env::Gradient base = {{0.0, 0.1, -0.1, 0.0}};
  const auto u = sgt_update(s.learner, base, {ev}, {});
  CHECK(u.skipped_unscoreable == 1);
  CHECK(u.combined == base);
}

TEST_CASE("SGT cost bound arithmetic") {
  CHECK(sgt_cost_bound(2, 5) == Approx(0.1));
  CHECK(sgt_cost_bound(1, 5) == 0.0);
  CHECK(sgt_cost_bound(3, 4) == Approx(2.0 / 12.0));
}

}  // TEST_SUITE
