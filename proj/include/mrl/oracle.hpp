// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed forms and brute-force cross-checks for the structural results on
// finite bandits. Everything here works on plain probability vectors over a
// tabular softmax, where the score of action y is e_y - pi, and never calls
// into the regime code it is meant to check.

#ifndef MRL_ORACLE_HPP_
#define MRL_ORACLE_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mrl::oracle {

using Vec = std::vector<double>;

struct BanditInstance {
  Vec pi;       // learner distribution
  Vec mu;       // behavior distribution
  Vec rewards;  // per action
  double baseline = 0.0;
};

Vec softmax_score(const Vec& pi, std::size_t y);
double dot(const Vec& a, const Vec& b);
double norm(const Vec& a);

struct EnumGradient {
  Vec on_policy;      // E_pi[A s]
  Vec is_expectation; // E_mu[rho A s]
  double max_abs_diff = 0.0;
};

// Throws CoverageError when pi(y) > 0 but mu(y) = 0.
EnumGradient enum_policy_gradient(
    const BanditInstance& inst,
    const std::function<double(std::size_t)>& advantage);

struct AntiAlign {
  Vec pi, mu, advantages;
  Vec g_on, g_naive;
  double dot = 0.0;
  double polynomial = 0.0;
  double chi2 = 0.0;         // from the definition
  double chi2_closed = 0.0;  // the instance's closed form
};

double anti_align_polynomial(double eta);
AntiAlign anti_align_instance(double eta);  // 0 < eta <= 1/3

double chi2_divergence(const Vec& pi, const Vec& mu);

double gate_probability(double p_n, const Vec& peer_ps, std::size_t k);
double gate_prob_derivative(double p_n, const Vec& peer_ps, std::size_t k);
// Exhaustive sum over every success/failure pattern of all M*K rollouts.
double gate_probability_enumerated(double p_n, const Vec& peer_ps,
                                   std::size_t k);

struct MonteCarlo {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t trials = 0;
};
MonteCarlo gate_probability_monte_carlo(double p_n, const Vec& peer_ps,
                                        std::size_t k, std::size_t trials,
                                        std::uint64_t seed);

// || sum_y pi(y) b (e_y - pi) ||
double baseline_unbiasedness(const Vec& pi, double b);

double variance_difference(double h, double d, double delta);

struct VarianceCheck {
  double h = 0.0, b_star = 0.0, d = 0.0, delta = 0.0;
  double closed_form = 0.0;
  double brute_force = 0.0;
};
// Var((r - b_pool) s) - Var((r - b_n) s) by enumeration, beside the closed form.
VarianceCheck brute_variance_difference(const Vec& pi, const Vec& rewards,
                                        double b_n, double b_pool);

struct RescueCheck {
  Vec etas;
  Vec ratios;               // dlog pi(y*) / (eta lambda ||grad||^2)
  Vec remainders;           // dlog pi(y*) - eta lambda ||grad||^2
  double order = 0.0;       // log2 of successive remainder ratios
  double grad_norm_sq = 0.0;
  bool degenerate = false;  // zero gradient
};
// Steps logits along lambda * grad log pi(y*) for each eta.
RescueCheck rescue_gradient_check(const Vec& logits, std::size_t y_star,
                                  double lambda, const Vec& etas);

struct PerturbationCheck {
  double difference = 0.0;
  double bound = 0.0;
  bool holds = false;
};
PerturbationCheck perturbation_bound_check(const Vec& base_grad,
                                           const Vec& aux_grad, double eta,
                                           double lambda, bool gate,
                                           double g_s);

struct ClipBias {
  double exact_bias = 0.0;
  double tail_bound = 0.0;
  double clipped_second_moment = 0.0;
  double second_moment_bound = 0.0;
  double is_second_moment = 0.0;        // E_mu ||rho h||^2
  double is_second_moment_bound = 0.0;  // A^2 G^2 (1 + chi2)
  double a_max = 0.0, g = 0.0;
};
ClipBias clipping_bias_bound(const BanditInstance& inst, const Vec& advantages,
                             double epsilon);

struct KlDescent {
  double kl_before = 0.0;
  double kl_after = 0.0;
  double gradient_error = 0.0;  // || dKL/dtheta - (pi - tau) ||, finite diff.
};
// tau is the target (peer-success conditional); step moves logits by
// -step * (pi - tau).
KlDescent population_kl_descent(const Vec& logits, const Vec& tau,
                                double step);

struct SuiteRow {
  std::string name;
  double value = 0.0;
  double expected = 0.0;
  std::string detail;
  bool pass = false;
};

std::vector<SuiteRow> run_suite(std::uint64_t seed = 7);

}  // namespace mrl::oracle

#endif  // MRL_ORACLE_HPP_
