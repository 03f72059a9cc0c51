// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mrl/envpolicy.hpp"
#include "mrl/errors.hpp"
#include "mrl/rng.hpp"
#include "mrl/thl.hpp"

namespace mrl::oracle {

Vec softmax_score(const Vec& pi, std::size_t y) {
  Vec s(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) s[i] = -pi[i];
  s.at(y) += 1.0;
  return s;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

namespace {

void check_distribution(const Vec& p, const char* name) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw PreconditionError(std::string(name) + " has a negative entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9)
    throw PreconditionError(std::string(name) + " does not sum to 1");
}

void axpy(Vec& y, double a, const Vec& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

Vec softmax_of(const Vec& logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(logits[i] - mx);
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

EnumGradient enum_policy_gradient(
    const BanditInstance& inst,
    const std::function<double(std::size_t)>& advantage) {
  check_distribution(inst.pi, "pi");
  check_distribution(inst.mu, "mu");
  const std::size_t n = inst.pi.size();
  if (inst.mu.size() != n) throw InputShapeError("pi and mu differ in size");
  EnumGradient g;
  g.on_policy.assign(n, 0.0);
  g.is_expectation.assign(n, 0.0);
  for (std::size_t y = 0; y < n; ++y) {
    if (inst.pi[y] > 0.0 && inst.mu[y] <= 0.0)
      throw CoverageError("pi puts mass where mu has none");
    const Vec h = [&] {
      Vec s = softmax_score(inst.pi, y);
      for (double& v : s) v *= advantage(y);
      return s;
    }();
    axpy(g.on_policy, inst.pi[y], h);
    if (inst.mu[y] > 0.0) axpy(g.is_expectation, inst.mu[y] * (inst.pi[y] / inst.mu[y]), h);
  }
  for (std::size_t i = 0; i < n; ++i)
    g.max_abs_diff = std::max(g.max_abs_diff,
                              std::abs(g.on_policy[i] - g.is_expectation[i]));
  return g;
}

double anti_align_polynomial(double eta) {
  return (2.0 / 3.0) * eta * eta * eta - eta * eta + (5.0 / 9.0) * eta -
         2.0 / 81.0;
}

AntiAlign anti_align_instance(double eta) {
  if (!(eta > 0.0 && eta <= 1.0 / 3.0))
    throw PreconditionError("eta must lie in (0, 1/3]");
  AntiAlign a;
  a.pi = {1.0 / 3.0, 2.0 / 3.0 - eta, eta};
  a.mu = {eta, eta, 1.0 - 2.0 * eta};
  // Population baseline E_pi[r] = 1/3 with r = (1, 0, 0).
  a.advantages = {2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0};
  a.g_on.assign(3, 0.0);
  a.g_naive.assign(3, 0.0);
  for (std::size_t y = 0; y < 3; ++y) {
    const Vec s = softmax_score(a.pi, y);
    axpy(a.g_on, a.pi[y] * a.advantages[y], s);
    axpy(a.g_naive, a.mu[y] * a.advantages[y], s);
  }
  a.dot = dot(a.g_on, a.g_naive);
  a.polynomial = anti_align_polynomial(eta);
  a.chi2 = chi2_divergence(a.pi, a.mu);
  a.chi2_closed = (1.0 / 9.0) / eta + (2.0 / 3.0 - eta) * (2.0 / 3.0 - eta) / eta +
                  eta * eta / (1.0 - 2.0 * eta) - 1.0;
  return a;
}

double chi2_divergence(const Vec& pi, const Vec& mu) {
  if (pi.size() != mu.size()) throw InputShapeError("pi and mu differ in size");
  double s = 0.0;
  for (std::size_t y = 0; y < pi.size(); ++y) {
    if (pi[y] == 0.0) continue;
    if (mu[y] <= 0.0) throw CoverageError("chi2 needs mu > 0 where pi > 0");
    const double rho = pi[y] / mu[y];
    s += mu[y] * rho * rho;
  }
  return s - 1.0;
}

double gate_probability(double p_n, const Vec& peer_ps, std::size_t k) {
  double none = 1.0;
  for (double p : peer_ps) none *= std::pow(1.0 - p, static_cast<double>(k));
  return std::pow(1.0 - p_n, static_cast<double>(k)) * (1.0 - none);
}

double gate_prob_derivative(double p_n, const Vec& peer_ps, std::size_t k) {
  if (k == 0) return 0.0;
  double none = 1.0;
  for (double p : peer_ps) none *= std::pow(1.0 - p, static_cast<double>(k));
  return -static_cast<double>(k) *
         std::pow(1.0 - p_n, static_cast<double>(k - 1)) * (1.0 - none);
}

double gate_probability_enumerated(double p_n, const Vec& peer_ps,
                                   std::size_t k) {
  const std::size_t m = peer_ps.size() + 1;
  const std::size_t bits = m * k;
  if (bits > 24) throw PreconditionError("enumeration limited to 24 rollouts");
  double total = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << bits); ++mask) {
    double prob = 1.0;
    bool learner_fail = true, peer_success = false;
    for (std::size_t j = 0; j < bits; ++j) {
      const std::size_t who = j / k;
      const double p = who == 0 ? p_n : peer_ps[who - 1];
      const bool ok = (mask >> j) & 1u;
      prob *= ok ? p : 1.0 - p;
      if (ok && who == 0) learner_fail = false;
      if (ok && who > 0) peer_success = true;
    }
    if (learner_fail && peer_success) total += prob;
  }
  return total;
}

MonteCarlo gate_probability_monte_carlo(double p_n, const Vec& peer_ps,
                                        std::size_t k, std::size_t trials,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    bool learner_fail = true, peer_success = false;
    for (std::size_t j = 0; j < k; ++j)
      if (uniform01(rng) < p_n) learner_fail = false;
    for (double p : peer_ps)
      for (std::size_t j = 0; j < k; ++j)
        if (uniform01(rng) < p) peer_success = true;
    hits += learner_fail && peer_success;
  }
  MonteCarlo mc;
  mc.trials = trials;
  mc.estimate = static_cast<double>(hits) / static_cast<double>(trials);
  mc.std_error = std::sqrt(mc.estimate * (1.0 - mc.estimate) / trials);
  return mc;
}

double baseline_unbiasedness(const Vec& pi, double b) {
  Vec acc(pi.size(), 0.0);
  for (std::size_t y = 0; y < pi.size(); ++y)
    axpy(acc, pi[y] * b, softmax_score(pi, y));
  return norm(acc);
}

double variance_difference(double h, double d, double delta) {
  return h * (delta * delta - 2.0 * d * delta);
}

VarianceCheck brute_variance_difference(const Vec& pi, const Vec& rewards,
                                        double b_n, double b_pool) {
  check_distribution(pi, "pi");
  const std::size_t n = pi.size();
  // Trace variance of (r - b) s under pi.
  auto variance = [&](double b) {
    Vec mean(n, 0.0);
    double second = 0.0;
    for (std::size_t y = 0; y < n; ++y) {
      Vec v = softmax_score(pi, y);
      for (double& x : v) x *= rewards[y] - b;
      axpy(mean, pi[y], v);
      second += pi[y] * dot(v, v);
    }
    return second - dot(mean, mean);
  };
  VarianceCheck c;
  double num = 0.0;
  for (std::size_t y = 0; y < n; ++y) {
    const Vec s = softmax_score(pi, y);
    c.h += pi[y] * dot(s, s);
    num += pi[y] * rewards[y] * dot(s, s);
  }
  c.b_star = num / c.h;
  c.d = b_n - c.b_star;
  c.delta = b_n - b_pool;
  c.closed_form = variance_difference(c.h, c.d, c.delta);
  c.brute_force = variance(b_pool) - variance(b_n);
  return c;
}

RescueCheck rescue_gradient_check(const Vec& logits, std::size_t y_star,
                                  double lambda, const Vec& etas) {
  RescueCheck r;
  r.etas = etas;
  const Vec pi = softmax_of(logits);
  const Vec g = softmax_score(pi, y_star);
  r.grad_norm_sq = dot(g, g);
  const double base = std::log(pi[y_star]);
  if (r.grad_norm_sq < 1e-300) {
    r.degenerate = true;
    return r;
  }
  for (double eta : etas) {
    Vec moved = logits;
    axpy(moved, eta * lambda, g);
    const double delta = std::log(softmax_of(moved)[y_star]) - base;
    const double first = eta * lambda * r.grad_norm_sq;
    r.ratios.push_back(delta / first);
    r.remainders.push_back(delta - first);
  }
  if (etas.size() >= 2) {
    const std::size_t a = etas.size() - 2, b = etas.size() - 1;
    r.order = std::log(std::abs(r.remainders[a] / r.remainders[b])) /
              std::log(etas[a] / etas[b]);
  }
  return r;
}

PerturbationCheck perturbation_bound_check(const Vec& base_grad,
                                           const Vec& aux_grad, double eta,
                                           double lambda, bool gate,
                                           double g_s) {
  // theta_base = theta - eta base; theta_comb = theta - eta (base + lambda I aux).
  Vec diff(base_grad.size(), 0.0);
  if (gate)
    for (std::size_t i = 0; i < diff.size(); ++i)
      diff[i] = eta * lambda * aux_grad[i];
  PerturbationCheck c;
  c.difference = norm(diff);
  c.bound = gate ? eta * lambda * g_s : 0.0;
  c.holds = c.difference <= c.bound * (1.0 + 1e-12);
  return c;
}

ClipBias clipping_bias_bound(const BanditInstance& inst, const Vec& advantages,
                             double epsilon) {
  check_distribution(inst.pi, "pi");
  check_distribution(inst.mu, "mu");
  const std::size_t n = inst.pi.size();
  ClipBias c;
  for (std::size_t y = 0; y < n; ++y) {
    if (inst.pi[y] > 0.0 && inst.mu[y] <= 0.0)
      throw CoverageError("pi puts mass where mu has none");
    if (inst.mu[y] <= 0.0) continue;
    c.a_max = std::max(c.a_max, std::abs(advantages[y]));
    c.g = std::max(c.g, norm(softmax_score(inst.pi, y)));
  }
  Vec bias(n, 0.0);
  double tail = 0.0;
  for (std::size_t y = 0; y < n; ++y) {
    if (inst.mu[y] <= 0.0) continue;
    const double rho = inst.pi[y] / inst.mu[y];
    const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
    Vec h = softmax_score(inst.pi, y);
    for (double& v : h) v *= advantages[y];
    axpy(bias, inst.mu[y] * (clipped - rho), h);
    tail += inst.mu[y] * (std::max(rho - (1.0 + epsilon), 0.0) +
                          std::max((1.0 - epsilon) - rho, 0.0));
    c.clipped_second_moment += inst.mu[y] * clipped * clipped * dot(h, h);
    c.is_second_moment += inst.mu[y] * rho * rho * dot(h, h);
  }
  const double ag = c.a_max * c.g;
  c.exact_bias = norm(bias);
  c.tail_bound = ag * tail;
  c.second_moment_bound = (1.0 + epsilon) * (1.0 + epsilon) * ag * ag;
  c.is_second_moment_bound = ag * ag * (1.0 + chi2_divergence(inst.pi, inst.mu));
  return c;
}

KlDescent population_kl_descent(const Vec& logits, const Vec& tau,
                                double step) {
  auto kl_tau = [&](const Vec& l) {
    const Vec pi = softmax_of(l);
    double s = 0.0;
    for (std::size_t i = 0; i < tau.size(); ++i)
      if (tau[i] > 0.0) s += tau[i] * (std::log(tau[i]) - std::log(pi[i]));
    return s;
  };
  KlDescent k;
  const Vec pi = softmax_of(logits);
  k.kl_before = kl_tau(logits);
  double err = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Vec up = logits, down = logits;
    up[i] += h;
    down[i] -= h;
    const double fd = (kl_tau(up) - kl_tau(down)) / (2.0 * h);
    err = std::max(err, std::abs(fd - (pi[i] - tau[i])));
  }
  k.gradient_error = err;
  Vec moved = logits;
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] -= step * (pi[i] - tau[i]);
  k.kl_after = kl_tau(moved);
  return k;
}

// ------------------------------------------------------------------ suite

namespace {

Vec random_distribution(std::mt19937_64& rng, std::size_t n) {
  Vec l(n);
  for (double& v : l) v = 1.5 * normal01(rng);
  return softmax_of(l);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

SuiteRow row(std::string name, double value, double expected, bool pass,
             std::string detail = {}) {
  return {std::move(name), value, expected, std::move(detail), pass};
}

}  // namespace

std::vector<SuiteRow> run_suite(std::uint64_t seed) {
  std::vector<SuiteRow> rows;
  std::mt19937_64 rng(seed);

  // Anti-alignment instance.
  for (double eta : {0.005, 0.01, 0.02, 0.04}) {
    const auto a = anti_align_instance(eta);
    rows.push_back(row("anti_align_dot eta=" + fmt(eta), a.dot, a.polynomial,
                       std::abs(a.dot - a.polynomial) <= 1e-12 && a.dot < 0.0,
                       "negative and equal to the cubic"));
  }
  {
    const auto a = anti_align_instance(0.04);
    rows.push_back(row("anti_align_value eta=0.04", a.dot, -4.0265e-3,
                       std::abs(a.dot + 4.0265e-3) < 5e-7));
    rows.push_back(row("anti_align_chi2 eta=0.04", a.chi2, a.chi2_closed,
                       std::abs(a.chi2 - a.chi2_closed) <= 1e-10 &&
                           std::abs(a.chi2 - 11.597) < 5e-4));
    const Vec g_expected = {2.0 / 9.0, -(1.0 / 3.0) * (2.0 / 3.0 - 0.04),
                            -0.04 / 3.0};
    double err = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      err = std::max(err, std::abs(a.g_on[i] - g_expected[i]));
    rows.push_back(row("anti_align_g_on", err, 0.0, err <= 1e-15));
    BanditInstance inst{a.pi, a.mu, {1.0, 0.0, 0.0}, 1.0 / 3.0};
    const auto eg = enum_policy_gradient(
        inst, [&](std::size_t y) { return a.advantages[y]; });
    double e2 = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      e2 = std::max(e2, std::abs(eg.on_policy[i] - g_expected[i]));
    rows.push_back(row("enum_gradient_anti_align", e2, 0.0, e2 <= 1e-15));
  }
  {
    bool monotone = true;
    double prev = -1.0;
    for (double eta : {0.3, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.001}) {
      const double c = anti_align_instance(eta).chi2;
      monotone = monotone && c > prev;
      prev = c;
    }
    rows.push_back(row("chi2_growth eta->0", prev, 0.0, monotone,
                       "strictly increasing"));
  }

  // Exact importance weighting is unbiased.
  {
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + rng() % 4;
      BanditInstance inst{random_distribution(rng, n), random_distribution(rng, n),
                          Vec(n), 0.0};
      for (double& r : inst.rewards) r = uniform01(rng) < 0.5 ? 1.0 : 0.0;
      inst.baseline = uniform01(rng);
      const auto eg = enum_policy_gradient(inst, [&](std::size_t y) {
        return inst.rewards[y] - inst.baseline;
      });
      worst = std::max(worst, eg.max_abs_diff);
    }
    rows.push_back(row("is_unbiased random", worst, 0.0, worst <= 1e-12));
  }

  // Clipping bias and second moments.
  {
    bool ok = true;
    double worst_ratio = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + rng() % 4;
      BanditInstance inst{random_distribution(rng, n), random_distribution(rng, n),
                          Vec(n), 0.0};
      Vec adv(n);
      for (double& a : adv) a = 2.0 * uniform01(rng) - 1.0;
      const auto c = clipping_bias_bound(inst, adv, 0.2);
      ok = ok && c.exact_bias <= c.tail_bound + 1e-15 &&
           c.clipped_second_moment <= c.second_moment_bound + 1e-15 &&
           c.is_second_moment <= c.is_second_moment_bound + 1e-15;
      if (c.tail_bound > 0) worst_ratio = std::max(worst_ratio, c.exact_bias / c.tail_bound);
    }
    rows.push_back(row("clip_bias_bound", worst_ratio, 1.0, ok,
                       "max bias / tail bound"));
  }

  // Gate probability.
  {
    const double g = gate_probability(0.5, {0.5}, 5);
    const double e = gate_probability_enumerated(0.5, {0.5}, 5);
    rows.push_back(row("gate_prob K=5 p=0.5", g, 0.0302734375,
                       g == 0.0302734375 && e == 0.0302734375));
    const auto mc = gate_probability_monte_carlo(0.5, {0.5}, 5, 200000, seed);
    rows.push_back(row("gate_prob monte_carlo", mc.estimate, g,
                       std::abs(mc.estimate - g) <= 3.0 * mc.std_error,
                       "within 3 sigma"));
    bool exact = true;
    const Vec grid = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t k = 1; k <= 5; ++k)
      for (std::size_t m = 1; m <= 3; ++m)
        for (double pn : grid)
          for (double pa : grid)
            for (double pb : grid) {
              Vec peers = {pa, pb};
              peers.resize(m - 1);
              if (m == 1 && (pa != 0.0 || pb != 0.0)) continue;
              if (m == 2 && pb != 0.0) continue;
              exact = exact && gate_probability(pn, peers, k) ==
                                   gate_probability_enumerated(pn, peers, k);
            }
    rows.push_back(row("gate_prob enumeration K<=5 M<=3", 0.0, 0.0, exact,
                       "bitwise equal on dyadic grid"));
    bool nonpos = true;
    double worst_fd = 0.0;
    for (std::size_t k = 1; k <= 8; ++k)
      for (int i = 0; i <= 10; ++i)
        for (int j = 0; j <= 10; ++j) {
          const double pn = i / 10.0, pm = j / 10.0;
          const double d = gate_prob_derivative(pn, {pm}, k);
          nonpos = nonpos && d <= 0.0;
          if (i > 0 && i < 10) {
            const double h = 1e-6;
            const double fd = (gate_probability(pn + h, {pm}, k) -
                               gate_probability(pn - h, {pm}, k)) /
                              (2 * h);
            worst_fd = std::max(worst_fd, std::abs(fd - d));
          }
        }
    rows.push_back(row("gate_derivative sign", worst_fd, 0.0,
                       nonpos && worst_fd < 1e-6, "<= 0 and matches finite diff"));
  }

  // Pooled baselines.
  {
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const std::size_t n = 2 + rng() % 6;
      const Vec pi = random_distribution(rng, n);
      const double b = 20.0 * uniform01(rng) - 10.0;
      worst = std::max(worst, baseline_unbiasedness(pi, b));
    }
    rows.push_back(row("baseline_unbiased", worst, 0.0, worst <= 1e-12));
    double worst_v = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + rng() % 5;
      const Vec pi = random_distribution(rng, n);
      Vec r(n);
      for (double& v : r) v = uniform01(rng);
      const auto c = brute_variance_difference(pi, r, uniform01(rng), uniform01(rng));
      worst_v = std::max(worst_v, std::abs(c.closed_form - c.brute_force));
    }
    rows.push_back(row("variance_difference brute", worst_v, 0.0, worst_v <= 1e-10));
    const double v = variance_difference(1.0, 0.5, 0.3);
    rows.push_back(row("variance_difference H=1 D=0.5 d=0.3", v, -0.21,
                       std::abs(v + 0.21) < 1e-15));
  }

  // Rescue direction.
  {
    double worst = 0.0, worst_order = 0.0;
    for (int t = 0; t < 20; ++t) {
      const std::size_t n = 3 + rng() % 4;
      Vec logits(n);
      for (double& v : logits) v = normal01(rng);
      const auto r = rescue_gradient_check(logits, rng() % n, 0.1,
                                           {4e-4, 2e-4, 1e-4});
      worst = std::max(worst, std::abs(r.ratios.back() - 1.0));
      worst_order = std::max(worst_order, std::abs(r.order - 2.0));
    }
    rows.push_back(row("rescue_ratio eta=1e-4", worst, 0.0, worst <= 1e-3,
                       "max |ratio - 1|"));
    rows.push_back(row("rescue_remainder order", worst_order, 0.0,
                       worst_order < 0.1, "max |order - 2|"));
    const auto d = rescue_gradient_check({0.0, -800.0, -800.0}, 0, 0.1, {1e-4});
    rows.push_back(row("rescue_point_mass degenerate", 0.0, 0.0, d.degenerate));
  }

  // Population KL toward the peer-success conditional.
  {
    bool ok = true;
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      const std::size_t n = 4;
      Vec logits(n);
      for (double& v : logits) v = normal01(rng);
      // tau: a peer distribution restricted to successes {0, 1}.
      Vec peer = random_distribution(rng, n);
      Vec tau = {peer[0], peer[1], 0.0, 0.0};
      const double s = tau[0] + tau[1];
      for (double& v : tau) v /= s;
      const auto k = population_kl_descent(logits, tau, 1e-3);
      ok = ok && k.kl_after < k.kl_before;
      worst = std::max(worst, k.gradient_error);
    }
    rows.push_back(row("population_kl descent", worst, 0.0, ok && worst < 1e-6));
  }

  // Perturbation bound.
  {
    bool ok = true;
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 5;
      const Vec pi = random_distribution(rng, n);
      const Vec aux = softmax_score(pi, rng() % n);
      Vec base(n);
      for (double& v : base) v = normal01(rng);
      ok = ok && perturbation_bound_check(base, aux, 0.05, 0.1, true,
                                          std::sqrt(2.0)).holds;
      const auto off = perturbation_bound_check(base, aux, 0.05, 0.1, false,
                                                std::sqrt(2.0));
      ok = ok && off.difference == 0.0;
    }
    const Vec tight = {std::sqrt(2.0), 0.0};
    const auto t = perturbation_bound_check({0, 0}, tight, 0.05, 0.1, true,
                                            std::sqrt(2.0));
    rows.push_back(row("perturbation_bound", t.difference, t.bound,
                       ok && std::abs(t.difference - t.bound) < 1e-15,
                       "holds, tight at the bound"));
  }

  // THL ratio identity on an enumerable policy with straddling targets.
  {
    using textgrid::TokenizerMode;
    const textgrid::TokenizerSpec src{"src", TokenizerMode::kWhitespaceSubword,
                                      {{"t", "h"}, {"th", "e"}}, 1};
    const textgrid::TokenizerSpec tgt{"tgt", TokenizerMode::kAdversarial, {}, 3};
    auto envp = std::make_shared<env::BanditEnv>(std::vector<env::PromptEntry>{
        {"q", "q", {"the cat sat", "the dog ran", "a bird"}, {1.0, 0.0, 0.0}}});
    env::PrefixTreePolicy mu("mu", src, envp, {{0.3, -0.2, 0.1}});
    double worst = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      const auto text = envp->prompt(0).responses[r];
      const auto trace = mu.trace(0, r);
      const std::vector<bool> mask(textgrid::tokenize(tgt, text).size(), true);
      const auto rep = thl::residual_report(text, trace, src, tgt, mask);
      const double num = -1.0;
      const auto env = thl::ratio_envelope_check(num, rep.source_total, rep.aligned_total);
      worst = std::max(worst, std::abs(std::log(env.rho_tilde / env.rho) - rep.residual));
    }
    rows.push_back(row("thl_ratio_identity", worst, 0.0, worst <= 1e-12,
                       "log(rho~/rho) = R"));
  }
  return rows;
}

}  // namespace mrl::oracle
