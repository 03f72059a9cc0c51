// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest.h>

#include "mrl/errors.hpp"
#include "mrl/oracle.hpp"

using namespace mrl;
using namespace mrl::oracle;
using doctest::Approx;

TEST_SUITE("oracle") {

TEST_CASE("importance weighting is unbiased when pi = mu") {
  BanditInstance inst{{0.2, 0.5, 0.3}, {0.2, 0.5, 0.3}, {1, 0, 0.5}, 0.4};
  const auto g = enum_policy_gradient(
      inst, [&](std::size_t y) { return inst.rewards[y] - inst.baseline; });
  CHECK(g.max_abs_diff < 1e-15);
}

TEST_CASE("missing coverage is reported") {
  BanditInstance inst{{0.5, 0.5}, {1.0, 0.0}, {1, 0}, 0.0};
  CHECK_THROWS_AS(enum_policy_gradient(inst, [](std::size_t) { return 1.0; }),
                  CoverageError);
}

TEST_CASE("anti-aligned instance") {
  const auto a = anti_align_instance(0.04);
  CHECK(a.dot == Approx(-4.0265e-3).epsilon(1e-4));
  CHECK(std::abs(a.dot - anti_align_polynomial(0.04)) < 1e-12);
  CHECK(a.chi2 == Approx(11.597).epsilon(1e-4));
  CHECK(std::abs(a.chi2 - a.chi2_closed) < 1e-12);
  const double eta = 0.04;
  CHECK(a.g_on[0] == Approx(2.0 / 9.0));
  CHECK(a.g_on[1] == Approx(-(1.0 / 3.0) * (2.0 / 3.0 - eta)));
  CHECK(a.g_on[2] == Approx(-eta / 3.0));
  CHECK(anti_align_instance(0.005).chi2 > anti_align_instance(0.01).chi2);
  CHECK(chi2_divergence({0.3, 0.7}, {0.3, 0.7}) == 0.0);
}

TEST_CASE("gate probability closed form") {
  CHECK(gate_probability(1.0, {0.7}, 5) == 0.0);
  CHECK(gate_probability(0.0, {1.0}, 1) == 1.0);
  CHECK(gate_probability(0.5, {0.5}, 5) == 0.0302734375);
  CHECK(gate_probability_enumerated(0.5, {0.5}, 5) == 0.0302734375);
  const auto mc = gate_probability_monte_carlo(0.5, {0.5}, 5, 100000, 3);
  CHECK(std::abs(mc.estimate - 0.0302734375) <= 3 * mc.std_error);
  CHECK(gate_prob_derivative(0.3, {0.4, 0.6}, 3) <= 0.0);
}

TEST_CASE("baseline and variance identities") {
  CHECK(baseline_unbiasedness({0.25, 0.25, 0.25, 0.25}, 3.0) < 1e-15);
  CHECK(baseline_unbiasedness({0.1, 0.9}, 0.0) == 0.0);
  CHECK(variance_difference(1.0, 0.5, 0.3) == Approx(-0.21));
  CHECK(variance_difference(2.0, 0.0, 0.5) == Approx(0.5));
  CHECK(variance_difference(1.0, 0.4, 0.0) == 0.0);
  const auto v = brute_variance_difference({0.2, 0.3, 0.5}, {1, 0, 0.5}, 0.2, 0.6);
  CHECK(std::abs(v.closed_form - v.brute_force) < 1e-12);
}

TEST_CASE("rescue gradient is first order in eta") {
  const auto r = rescue_gradient_check({0.1, -0.5, 0.3}, 1, 0.5, {1e-4, 5e-5});
  CHECK_FALSE(r.degenerate);
  CHECK(std::abs(r.ratios[0] - 1.0) < 1e-3);
  const auto point = rescue_gradient_check({0.0, -1e9, -1e9}, 0, 1.0, {1e-4});
  CHECK(point.degenerate);
}

TEST_CASE("perturbation bound and clipping bias") {
  const auto off = perturbation_bound_check({0.1, 0.2}, {1.0, -1.0}, 0.1, 0.5, false, 1.5);
  CHECK(off.difference == 0.0);
  CHECK(off.holds);
  const auto on = perturbation_bound_check({0.1, 0.2}, {0.6, -0.8}, 0.1, 0.5, true, 1.0);
  CHECK(on.difference == Approx(0.05));
  CHECK(on.holds);

  BanditInstance inst{{0.6, 0.3, 0.1}, {0.2, 0.3, 0.5}, {1, 0, 0}, 0.0};
  const auto cb = clipping_bias_bound(inst, {0.6, -0.4, -0.4}, 0.2);
  CHECK(cb.exact_bias <= cb.tail_bound + 1e-15);
  CHECK(cb.is_second_moment <= cb.is_second_moment_bound + 1e-12);
}

TEST_CASE("population KL descent decreases the divergence") {
  const auto d = population_kl_descent({0.2, -0.3, 0.0}, {0.0, 1.0, 0.0}, 0.1);
  CHECK(d.kl_after < d.kl_before);
  CHECK(d.gradient_error < 1e-6);
}

TEST_CASE("suite passes") {
  for (const auto& row : run_suite(7)) {
    INFO(row.name);
    CHECK(row.pass);
  }
}

}  // TEST_SUITE
