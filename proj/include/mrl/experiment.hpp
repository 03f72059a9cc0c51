// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Step loop: every policy samples a group per prompt and publishes it, the
// exchange closes, then every policy reads the frozen pool and updates.
// Both phases fan out over worker slots; results are merged in policy order
// so the output does not depend on the worker count.

#ifndef MRL_EXPERIMENT_HPP_
#define MRL_EXPERIMENT_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mrl/config.hpp"

namespace mrl::harness {

struct MetricsRow {
  long step = 0;
  std::string policy_id;
  std::string regime;
  double train_reward_mean = 0.0;
  std::optional<double> val_success_rate;  // validation steps only
  double entropy = 0.0;                    // mean over prompts, nats
  double kl_to_reference = 0.0;            // mean over prompts
  double clip_rate = 0.0;
  double gate_rate = 0.0;
  std::size_t pool_unusable_count = 0;
  std::size_t aux_sequence_count = 0;
};

nlohmann::json to_json(const MetricsRow& row);
MetricsRow metrics_from_json(const nlohmann::json& j);

struct GateRecord {
  bool fired = false;
  std::vector<std::string> record_ids;
  std::vector<std::size_t> responses;  // learner response index
  std::vector<bool> scoreable;
};

struct PerturbationRecord {
  double difference = 0.0;
  double bound = 0.0;
  bool holds = true;
};

// What one policy did at one step. Logits are the start-of-step snapshot,
// so every pool-level quantity can be rebuilt from these records.
struct PolicyStep {
  std::string policy_id;
  std::vector<std::vector<double>> logits;          // [prompt][response]
  std::vector<std::vector<std::size_t>> responses;  // [prompt][k]
  std::vector<std::vector<double>> rewards;         // [prompt][k]
  std::vector<GateRecord> gates;                    // [prompt]; SGT only
  double clip_rate = 0.0;
  std::size_t surrogate_tokens = 0;
  std::size_t clipped_tokens = 0;
  std::size_t unusable = 0;
  std::size_t rollout_sequences = 0;
  std::size_t rollout_tokens = 0;
  std::size_t rescored_sequences = 0;
  std::size_t rescored_tokens = 0;
  std::size_t aux_sequences = 0;
  std::size_t aux_tokens = 0;
  std::vector<PerturbationRecord> perturbations;  // one per gated update
};

struct StepRecord {
  long step = 0;
  std::vector<PolicyStep> policies;  // config order
};

nlohmann::json to_json(const PolicyStep& p);
PolicyStep policy_step_from_json(const nlohmann::json& j);

struct RunResult {
  ExperimentConfig config;
  std::vector<MetricsRow> metrics;
  std::vector<StepRecord> steps;
  std::vector<std::vector<std::vector<double>>> initial_logits;  // per policy
  std::vector<std::vector<std::vector<double>>> final_logits;    // per policy

  // Metrics serialized exactly as written to metrics.jsonl.
  std::string metrics_jsonl() const;
};

struct RunOptions {
  std::optional<std::string> run_dir;  // write artifacts here when set
  std::optional<std::size_t> workers;  // overrides the config
};

// Throws NumericError after writing abort_dump.json (when a run dir is set)
// if any gradient or logit becomes non-finite.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Exchange records for one group; record ids are "policy/step/prompt/i".
std::vector<exchange::ExperienceRecord> group_records(const env::RolloutGroup& g,
                                                      long step);

// The group `snapshot` would have produced had it sampled `responses`.
env::RolloutGroup rebuild_group(const env::PrefixTreePolicy& snapshot,
                                std::size_t prompt,
                                const std::vector<std::size_t>& responses);

void write_run_dir(const RunResult& result, const std::string& dir);
RunResult load_run_dir(const std::string& dir);

// Output root for run directories: $MRL_OUTPUT_ROOT, else "runs".
std::string output_root();

}  // namespace mrl::harness

#endif  // MRL_EXPERIMENT_HPP_
