// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc tables over a finished run. Everything is rebuilt from the
// start-of-step snapshots and sampled responses in the run artifacts, so a
// report needs nothing that the run directory does not hold.

#ifndef MRL_DIAGNOSTICS_HPP_
#define MRL_DIAGNOSTICS_HPP_

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mrl/config.hpp"
#include "mrl/experiment.hpp"

namespace mrl::harness {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
};

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Report {
  std::string name;
  Table table;
  std::vector<Check> checks;

  bool ok() const;
};

std::string format_number(double v);

// Snapshots and groups of a run, rebuilt lazily from its records.
class RunView {
 public:
  explicit RunView(const RunResult& run);

  const RunResult& run() const { return run_; }
  const Setup& setup() const { return setup_; }
  std::size_t num_steps() const { return run_.steps.size(); }
  std::size_t num_policies() const { return setup_.policies.size(); }
  std::size_t num_prompts() const { return setup_.env->num_prompts(); }

  env::PrefixTreePolicy snapshot(std::size_t step, std::size_t policy) const;
  env::PrefixTreePolicy initial(std::size_t policy) const;
  env::PrefixTreePolicy final_policy(std::size_t policy) const;
  const PolicyStep& record(std::size_t step, std::size_t policy) const;
  bool any_success(std::size_t step, std::size_t policy, std::size_t prompt) const;
  bool all_negative(std::size_t step, std::size_t policy, std::size_t prompt) const;

 private:
  const RunResult& run_;
  Setup setup_;
};

// ------------------------------------------------------------ activation

struct ActivationRow {
  std::string learner;
  std::size_t prompts = 0;  // steps x prompts
  std::size_t gated = 0;
  std::size_t ungated = 0;
  double gated_pool_success = 0.0;    // success rate over all rollouts
  double ungated_pool_success = 0.0;
  std::size_t all_fail = 0;
};

std::vector<ActivationRow> activation_profile(const RunView& view);

// ---------------------------------------------------------------- ratios

struct RatioStats {
  std::string variant;  // thl-aligned | shuffled-prompt | broken-alignment
  std::size_t tokens = 0;
  std::size_t responses = 0;
  double p99 = 0.0;
  double clip_rate = 0.0;         // tokens outside the inclusive band
  double any_above_10 = 0.0;      // responses with some token ratio > 10
};

std::vector<RatioStats> ratio_statistics(const RunView& view, double band_lo,
                                         double band_hi);

// -------------------------------------------------------------- channels

struct ChannelBreakdown {
  // Index bit 2 = PRP usable, bit 1 = XGRPO usable, bit 0 = SGT usable.
  std::array<std::size_t, 8> cells{};
  std::size_t total = 0;
  std::size_t prp = 0, xgrpo = 0, sgt = 0;
  std::size_t violations = 0;  // SGT usable but XGRPO not
};

ChannelBreakdown channel_decomposition(const RunView& view, double band_lo,
                                       double band_hi);

// ------------------------------------------------------- complementarity

struct PairRow {
  std::string a, b;
  double rate_a = 0.0, rate_b = 0.0;
  double jaccard = 0.0;
  double rescue_b_given_a_fails = 0.0;  // P(b succeeds | a fails)
  double rescue_a_given_b_fails = 0.0;
};

struct BucketRow {
  std::string bucket;  // easy | medium | hard
  std::size_t prompts = 0;
  double mean_jaccard = 0.0;
  double exactly_one = 0.0;
};

struct ComplementarityReport {
  std::string stage;
  std::vector<double> single_rates;
  std::vector<PairRow> pairs;
  std::size_t prompts = 0;
  std::size_t any = 0, all = 0, exactly_one = 0, at_least_two = 0;
  std::vector<BucketRow> buckets;
  bool any_ge_max_single = false;
  bool exactly_one_identity = false;
};

// Greedy (argmax) decoding of the initial or final policies.
ComplementarityReport complementarity_report(const RunView& view,
                                             const std::string& stage);

// ------------------------------------------------------------------ cost

struct CostRow {
  std::string regime;
  std::size_t rollout_sequences = 0;
  std::size_t rollout_tokens = 0;
  std::size_t extra_sequences = 0;
  std::size_t extra_tokens = 0;
  double sequence_fraction = 0.0;
  double max_step_fraction = 0.0;
  double bound = 0.0;  // SGT only
  bool within_bound = true;
};

CostRow cost_report(const RunView& view);

// --------------------------------------------------------------- teacher

struct TeacherRow {
  std::string learner;
  std::size_t pairs = 0;
  double matched_nll = 0.0;     // mean per-token NLL, same prompt
  double mismatched_nll = 0.0;  // same peer, success from another prompt
};

std::vector<TeacherRow> matched_teacher_check(const RunView& view);

// --------------------------------------------------------------- shuffle

struct ShuffleRow {
  std::string variant;  // true | shuffled
  std::size_t units = 0;
  double correlation = 0.0;
  double sign_flip_rate = 0.0;
  double mean_abs_change = 0.0;
};

std::vector<ShuffleRow> shuffled_pool_control(const RunView& view,
                                              std::uint64_t seed);

// --------------------------------------------------------------- rescue

struct RescueRow {
  std::string learner;
  std::string prompt;
  std::size_t first_success = 0;  // step index; equals the step count if never
  bool censored = false;
};

// Prompts where the learner starts below `learner_max` success probability
// and some peer starts at or above `peer_min`.
std::vector<RescueRow> rescue_first_success(const RunView& view,
                                            double learner_max = 0.1,
                                            double peer_min = 0.5);

// ---------------------------------------------------------------- tables

extern const std::vector<std::string> kReportTables;

Report build_report(const RunView& view, const std::string& table);

// ------------------------------------------------------------------- THL

struct ThlDiagnosis {
  Table table;  // pair, bucket, thl_rel_mae, baseline_rel_mae, prefix_leak_max
  std::vector<Check> checks;
};

// Deterministic synthetic source scorer: per-token log-probabilities in
// [-3, -0.1] keyed on token text and offset.
std::vector<double> synthetic_log_probs(const std::string& text,
                                        const textgrid::TokenSeq& tokens);

ThlDiagnosis diagnose_thl(const ExperimentConfig& cfg);

}  // namespace mrl::harness

#endif  // MRL_DIAGNOSTICS_HPP_
