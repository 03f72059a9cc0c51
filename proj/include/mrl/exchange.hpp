// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// In-process experience exchange with a two-phase step protocol, plus the
// worker/slot assignment used to schedule policies.
//
// Step protocol: publishers append concurrently between begin_step(s) and
// close_publish(s). After that barrier the pool is frozen for readers until
// the next begin_step.

#ifndef MRL_EXCHANGE_HPP_
#define MRL_EXCHANGE_HPP_

#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "mrl/thl.hpp"

namespace mrl::exchange {

enum class Regime { kPrp, kXgrpo, kSgt };

std::string to_string(Regime r);

struct RecordMeta {
  std::string policy_id;
  long step = 0;
  std::string tokenizer_id;
  bool success = false;

  friend bool operator==(const RecordMeta&, const RecordMeta&) = default;
};

struct ExperienceRecord {
  std::string record_id;
  std::string prompt_id;
  std::string prompt_text;
  std::string response_text;
  double reward = 0.0;
  std::optional<double> advantage;
  std::optional<thl::Trace> trace;
  RecordMeta meta;
};

bool same_record(const ExperienceRecord& a, const ExperienceRecord& b);

struct SubscriptionFilter {
  Regime regime = Regime::kPrp;
  std::string learner_id;
  // Restricts results to these prompts when set.
  std::optional<std::set<std::string>> prompts;
};

struct DeviceMap {
  std::map<std::string, std::size_t> assignments;
};

class ExperienceExchange {
 public:
  // retention_steps >= 1: how many most recent steps stay addressable.
  explicit ExperienceExchange(std::size_t retention_steps = 1);

  void begin_step(long step);
  void publish(long step, const std::vector<ExperienceRecord>& records);
  void close_publish(long step);
  std::vector<ExperienceRecord> subscribe(long step,
                                          const SubscriptionFilter& filter) const;
  RecordMeta provenance(const std::string& record_id) const;

  // All records of a step in stable order, one JSON object per line.
  void dump_jsonl(long step, std::ostream& out) const;
  std::size_t size(long step) const;

 private:
  enum class Phase { kIdle, kPublish, kClosed };
  struct Key {
    std::string policy_id;
    std::string record_id;
    auto operator<=>(const Key&) const = default;
  };

  std::vector<ExperienceRecord> ordered(long step) const;

  std::size_t retention_;
  mutable std::mutex mu_;
  long current_step_ = -1;
  Phase phase_ = Phase::kIdle;
  std::map<long, std::map<Key, ExperienceRecord>> pool_;
  std::map<std::string, RecordMeta> index_;
};

DeviceMap allocate(const std::vector<std::string>& policies, std::size_t slots,
                   const std::optional<DeviceMap>& explicit_map = std::nullopt);

}  // namespace mrl::exchange

#endif  // MRL_EXCHANGE_HPP_
