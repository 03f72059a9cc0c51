// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/exchange.hpp"

#include <nlohmann/json.hpp>

#include "mrl/errors.hpp"

namespace mrl::exchange {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kPrp: return "prp";
    case Regime::kXgrpo: return "xgrpo";
    case Regime::kSgt: return "sgt";
  }
  return "?";
}

bool same_record(const ExperienceRecord& a, const ExperienceRecord& b) {
  auto same_trace = [](const std::optional<thl::Trace>& x,
                       const std::optional<thl::Trace>& y) {
    if (x.has_value() != y.has_value()) return false;
    if (!x) return true;
    return x->log_probs == y->log_probs &&
           x->response_mask == y->response_mask &&
           x->tokenizer_id == y->tokenizer_id;
  };
  return a.record_id == b.record_id && a.prompt_id == b.prompt_id &&
         a.prompt_text == b.prompt_text &&
         a.response_text == b.response_text && a.reward == b.reward &&
         a.advantage == b.advantage && same_trace(a.trace, b.trace) &&
         a.meta == b.meta;
}

ExperienceExchange::ExperienceExchange(std::size_t retention_steps)
    : retention_(retention_steps) {
  if (retention_ == 0) throw ConfigError("retention_steps must be >= 1");
}

void ExperienceExchange::begin_step(long step) {
  std::lock_guard lock(mu_);
  if (step <= current_step_)
    throw PhaseViolationError("step " + std::to_string(step) +
                              " does not advance past " +
                              std::to_string(current_step_));
  current_step_ = step;
  phase_ = Phase::kPublish;
  const long oldest = step - static_cast<long>(retention_) + 1;
  for (auto it = pool_.begin(); it != pool_.end() && it->first < oldest;) {
    for (const auto& [key, rec] : it->second) index_.erase(rec.record_id);
    it = pool_.erase(it);
  }
  pool_[step];
}

void ExperienceExchange::publish(long step,
                                 const std::vector<ExperienceRecord>& records) {
  std::lock_guard lock(mu_);
  if (step != current_step_ || phase_ != Phase::kPublish)
    throw PhaseViolationError("publish outside the publish phase of step " +
                              std::to_string(step));
  auto& bucket = pool_[step];
  // Validate the whole batch before touching the pool.
  std::map<std::string, const ExperienceRecord*> batch;
  for (const auto& r : records) {
    if (r.meta.step != step)
      throw PreconditionError("record '" + r.record_id + "' stamped for step " +
                              std::to_string(r.meta.step));
    if (r.trace && r.trace->tokenizer_id != r.meta.tokenizer_id)
      throw PreconditionError("record '" + r.record_id +
                              "' trace grid differs from its producer grid");
    auto [it, fresh] = batch.emplace(r.record_id, &r);
    if (!fresh && !same_record(*it->second, r))
      throw DuplicateRecordError("record id '" + r.record_id +
                                 "' repeated in one publish");
    for (const auto& [key, existing] : bucket) {
      if (key.record_id == r.record_id && !same_record(existing, r))
        throw DuplicateRecordError("record id '" + r.record_id +
                                   "' already published at step " +
                                   std::to_string(step));
    }
  }
  for (const auto& [id, rec] : batch) {
    bucket.emplace(Key{rec->meta.policy_id, id}, *rec);
    index_[id] = rec->meta;
  }
}

void ExperienceExchange::close_publish(long step) {
  std::lock_guard lock(mu_);
  if (step != current_step_ || phase_ != Phase::kPublish)
    throw PhaseViolationError("close_publish outside the publish phase");
  phase_ = Phase::kClosed;
}

std::vector<ExperienceRecord> ExperienceExchange::ordered(long step) const {
  std::vector<ExperienceRecord> out;
  auto it = pool_.find(step);
  if (it == pool_.end()) return out;
  out.reserve(it->second.size());
  for (const auto& [key, rec] : it->second) out.push_back(rec);
  return out;
}

std::vector<ExperienceRecord> ExperienceExchange::subscribe(
    long step, const SubscriptionFilter& filter) const {
  std::lock_guard lock(mu_);
  const bool current_closed = step == current_step_ && phase_ == Phase::kClosed;
  const bool retained_past = step < current_step_ && pool_.count(step) > 0;
  if (!current_closed && !retained_past)
    throw PhaseViolationError("subscribe before the publish phase of step " +
                              std::to_string(step) + " closed");
  std::vector<ExperienceRecord> out;
  for (auto& rec : ordered(step)) {
    if (rec.meta.policy_id == filter.learner_id) continue;
    if (filter.prompts && !filter.prompts->count(rec.prompt_id)) continue;
    switch (filter.regime) {
      case Regime::kPrp:
        rec.advantage.reset();
        break;
      case Regime::kXgrpo:
        rec.prompt_text.clear();
        rec.response_text.clear();
        rec.trace.reset();
        rec.advantage.reset();
        break;
      case Regime::kSgt:
        if (!rec.meta.success) continue;
        rec.trace.reset();
        rec.advantage.reset();
        break;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

RecordMeta ExperienceExchange::provenance(const std::string& record_id) const {
  std::lock_guard lock(mu_);
  auto it = index_.find(record_id);
  if (it == index_.end())
    throw NotFoundError("no record '" + record_id + "' in the exchange");
  return it->second;
}

std::size_t ExperienceExchange::size(long step) const {
  std::lock_guard lock(mu_);
  auto it = pool_.find(step);
  return it == pool_.end() ? 0 : it->second.size();
}

void ExperienceExchange::dump_jsonl(long step, std::ostream& out) const {
  std::lock_guard lock(mu_);
  for (const auto& rec : ordered(step)) {
    nlohmann::json j;
    j["record_id"] = rec.record_id;
    j["prompt_id"] = rec.prompt_id;
    j["prompt_text"] = rec.prompt_text;
    j["response_text"] = rec.response_text;
    j["reward"] = rec.reward;
    j["advantage"] = rec.advantage ? nlohmann::json(*rec.advantage)
                                   : nlohmann::json(nullptr);
    if (rec.trace) {
      j["trace"] = {{"log_probs", rec.trace->log_probs},
                    {"response_mask", rec.trace->response_mask},
                    {"tokenizer_id", rec.trace->tokenizer_id}};
    } else {
      j["trace"] = nullptr;
    }
    j["meta"] = {{"policy_id", rec.meta.policy_id},
                 {"step", rec.meta.step},
                 {"tokenizer_id", rec.meta.tokenizer_id},
                 {"success", rec.meta.success}};
    out << j.dump() << '\n';
  }
}

DeviceMap allocate(const std::vector<std::string>& policies, std::size_t slots,
                   const std::optional<DeviceMap>& explicit_map) {
  if (slots == 0) throw PreconditionError("need at least one slot");
  if (explicit_map) {
    for (const auto& p : policies) {
      auto it = explicit_map->assignments.find(p);
      if (it == explicit_map->assignments.end())
        throw InvalidMapError("device map misses policy '" + p + "'");
      if (it->second >= slots)
        throw InvalidMapError("device map puts '" + p + "' on slot " +
                              std::to_string(it->second) + " of " +
                              std::to_string(slots));
    }
    return *explicit_map;
  }
  DeviceMap m;
  for (std::size_t i = 0; i < policies.size(); ++i)
    m.assignments[policies[i]] = i % slots;
  return m;
}

}  // namespace mrl::exchange
