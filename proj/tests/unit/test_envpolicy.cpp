// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <doctest.h>

#include "mrl/envpolicy.hpp"
#include "mrl/errors.hpp"
#include "support.hpp"

using namespace mrl;
using namespace mrl::env;
using doctest::Approx;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

TEST_SUITE("envpolicy") {

TEST_CASE("prefix-tree trace of a two-response support") {
  auto e = testing::single_prompt_env({"aa", "ab"});
  auto pol = testing::make_policy("p", testing::chars_spec(), e,
                                  {std::log(0.75), std::log(0.25)});
  const auto t = pol.trace(0, 1);
  REQUIRE(t.size() == 2);
  CHECK(t.log_probs[0] == Approx(0.0).epsilon(1e-15));
  CHECK(t.log_probs[1] == Approx(std::log(0.25)));
  CHECK(t.masked_sum() == Approx(pol.log_prob(0, 1)).epsilon(1e-12));
}

TEST_CASE("chain rule holds on every tokenizer, including prefix responses") {
  auto e = testing::single_prompt_env({"the cat", "the", "the cats", "a dog"});
  auto spec = testing::words_spec();
  spec.merge_rules = {{"t", "h"}, {"th", "e"}};
  auto pol = testing::make_policy("p", spec, e, {0.3, -0.2, 1.1, 0.0});
  for (std::size_t r = 0; r < 4; ++r) {
    const double lp = pol.log_prob(0, r);
    CHECK(std::abs(pol.trace(0, r).masked_sum() - lp) < 1e-12);
    const auto chars = textgrid::tokenize(testing::chars_spec(),
                                          e->prompt(0).responses[r]);
    CHECK(std::abs(pol.trace_on(0, r, chars).masked_sum() - lp) < 1e-12);
    CHECK(std::abs(log_prob_trace(pol, "p0", chars).masked_sum() - lp) < 1e-12);
  }
}

TEST_CASE("single-response support has a zero-sum trace") {
  auto e = testing::single_prompt_env({"xy", "z"});
  auto pol = testing::make_policy("p", testing::chars_spec(), e, {0.0, kNegInf});
  CHECK(pol.trace(0, 0).masked_sum() == Approx(0.0));
  CHECK_FALSE(pol.in_support(0, 1));
  const auto z = textgrid::tokenize(testing::chars_spec(), "z");
  CHECK_THROWS_AS(log_prob_trace(pol, "p0", z), ZeroSupportError);
}

TEST_CASE("sampling is seeded, frozen and matches the softmax") {
  auto e = testing::single_prompt_env({"a", "b", "c", "d"});
  auto pol = testing::make_policy("p", testing::chars_spec(), e, {0, 0, 0, 0});
  const auto g1 = sample_group(pol, "p0", 5, 42);
  const auto g2 = sample_group(pol, "p0", 5, 42);
  CHECK(g1.responses == g2.responses);
  CHECK(g1.behavior_logits == pol.logits(0));
  CHECK_THROWS_AS(sample_group(pol, "missing", 5, 1), LookupError);

  const std::size_t n = 40000;
  const auto big = sample_group(pol, 0, n, 7);
  std::vector<double> freq(4, 0.0);
  for (auto r : big.responses) freq[r] += 1.0 / n;
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  for (double f : freq) CHECK(std::abs(f - 0.25) < 3 * sigma);
}

TEST_CASE("point mass policies sample one response") {
  auto e = testing::single_prompt_env({"a", "b", "c"});
  auto pol = testing::make_policy("p", testing::chars_spec(), e,
                                  {kNegInf, 0.0, kNegInf});
  const auto g = sample_group(pol, 0, 8, 3);
  for (auto r : g.responses) CHECK(r == 1);
  CHECK(policy_entropy(pol, 0) == 0.0);
  CHECK(success_prob(pol, 0) == 0.0);
}

TEST_CASE("success probability, entropy and KL") {
  auto e = testing::single_prompt_env({"a", "b", "c", "d"});
  auto pol = testing::make_policy("p", testing::chars_spec(), e, {0, 0, 0, 0});
  CHECK(success_prob(pol, 0) == Approx(0.25));
  CHECK(policy_entropy(pol, 0) == Approx(std::log(4.0)));
  CHECK(policy_kl(pol, pol, 0) == 0.0);

  auto hard = testing::make_policy("q", testing::chars_spec(), e,
                                   {0, 0, 0, kNegInf});
  CHECK_THROWS_AS(policy_kl(pol, hard, 0), DivergenceUndefinedError);
  CHECK(policy_kl(hard, pol, 0) == Approx(std::log(4.0 / 3.0)));
}

TEST_CASE("score gradient and KL gradient match finite differences") {
  auto e = testing::single_prompt_env({"a", "b", "c"});
  const std::vector<double> logits = {0.2, -0.4, 0.9};
  auto pol = testing::make_policy("p", testing::chars_spec(), e, logits);
  const auto g = pol.score_gradient(0, 2);
  const std::vector<double> rho = {0.5, 0.3, 0.2};
  const auto kg = kl_gradient(pol.probs(0), rho);
  const double h = 1e-6;
  for (std::size_t j = 0; j < 3; ++j) {
    auto up = logits, dn = logits;
    up[j] += h;
    dn[j] -= h;
    const auto pu = testing::make_policy("u", testing::chars_spec(), e, up);
    const auto pd = testing::make_policy("d", testing::chars_spec(), e, dn);
    CHECK(g[j] == Approx((pu.log_prob(0, 2) - pd.log_prob(0, 2)) / (2 * h))
                      .epsilon(1e-6));
    CHECK(kg[j] == Approx((kl(pu.probs(0), rho) - kl(pd.probs(0), rho)) / (2 * h))
                       .epsilon(1e-6));
  }
}

TEST_CASE("argmax breaks ties by lowest index; gradients skip -inf") {
  auto e = testing::single_prompt_env({"a", "b", "c"});
  auto pol = testing::make_policy("p", testing::chars_spec(), e,
                                  {1.0, 1.0, kNegInf});
  CHECK(pol.argmax(0) == 0);
  pol.apply_gradient({{0.5, -0.5, 1.0}}, 1.0);
  CHECK(pol.logits(0)[0] == Approx(0.5));
  CHECK(pol.logits(0)[1] == Approx(1.5));
  CHECK(std::isinf(pol.logits(0)[2]));
  CHECK(pol.argmax(0) == 1);
}

}  // TEST_SUITE
