// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"

namespace mrl::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSampleStream = 0x5A;
constexpr std::uint64_t kGateStream = 0x6A;

using Table = std::vector<std::vector<double>>;

// JSON cannot hold -inf; zero-support logits travel as null.
json logits_json(const Table& t) {
  json out = json::array();
  for (const auto& row : t) {
    json r = json::array();
    for (double v : row) {
      if (std::isinf(v) && v < 0)
        r.push_back(nullptr);
      else
        r.push_back(v);
    }
    out.push_back(std::move(r));
  }
  return out;
}

Table logits_from_json(const json& j) {
  Table t;
  for (const auto& row : j) {
    std::vector<double> r;
    for (const auto& v : row)
      r.push_back(v.is_null() ? -std::numeric_limits<double>::infinity()
                              : v.get<double>());
    t.push_back(std::move(r));
  }
  return t;
}

bool finite(const env::Gradient& g) {
  for (const auto& row : g)
    for (double v : row)
      if (!std::isfinite(v)) return false;
  return true;
}

double flat_norm(const env::Gradient& g) {
  double s = 0.0;
  for (const auto& row : g)
    for (double v : row) s += v * v;
  return std::sqrt(s);
}

void add_scaled(env::Gradient& into, std::size_t p, const std::vector<double>& g,
                double scale) {
  auto& row = into[p];
  if (row.empty()) row.assign(g.size(), 0.0);
  for (std::size_t z = 0; z < g.size(); ++z) row[z] += scale * g[z];
}

exchange::Regime exchange_regime(RegimeKind r) {
  switch (r) {
    case RegimeKind::kPrp: return exchange::Regime::kPrp;
    case RegimeKind::kXgrpo: return exchange::Regime::kXgrpo;
    default: return exchange::Regime::kSgt;
  }
}

// Runs fn(i) for every policy index, grouped by slot, one thread per slot.
template <typename Fn>
void fan_out(const std::vector<std::size_t>& slot_of, std::size_t slots, Fn fn) {
  std::vector<std::exception_ptr> errors(slot_of.size());
  auto work = [&](std::size_t slot) {
    for (std::size_t i = 0; i < slot_of.size(); ++i) {
      if (slot_of[i] != slot) continue;
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (slots <= 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t s = 0; s < slots; ++s) threads.emplace_back(work, s);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct UpdateOutcome {
  PolicyStep step;
  std::string error;  // non-empty when the update went non-finite
};

}  // namespace

json to_json(const MetricsRow& r) {
  // Key order is fixed by insertion so lines are stable byte for byte.
  json j = json::object();
  j["step"] = r.step;
  j["policy_id"] = r.policy_id;
  j["regime"] = r.regime;
  j["train_reward_mean"] = r.train_reward_mean;
  if (r.val_success_rate) j["val_success_rate"] = *r.val_success_rate;
  j["entropy"] = r.entropy;
  j["kl_to_reference"] = r.kl_to_reference;
  j["clip_rate"] = r.clip_rate;
  j["gate_rate"] = r.gate_rate;
  j["pool_unusable_count"] = r.pool_unusable_count;
  j["aux_sequence_count"] = r.aux_sequence_count;
  return j;
}

MetricsRow metrics_from_json(const json& j) {
  MetricsRow r;
  r.step = j.at("step").get<long>();
  r.policy_id = j.at("policy_id").get<std::string>();
  r.regime = j.at("regime").get<std::string>();
  r.train_reward_mean = j.at("train_reward_mean").get<double>();
  if (j.contains("val_success_rate"))
    r.val_success_rate = j.at("val_success_rate").get<double>();
  r.entropy = j.at("entropy").get<double>();
  r.kl_to_reference = j.at("kl_to_reference").get<double>();
  r.clip_rate = j.at("clip_rate").get<double>();
  r.gate_rate = j.at("gate_rate").get<double>();
  r.pool_unusable_count = j.at("pool_unusable_count").get<std::size_t>();
  r.aux_sequence_count = j.at("aux_sequence_count").get<std::size_t>();
  return r;
}

json to_json(const PolicyStep& p) {
  json j = json::object();
  j["policy_id"] = p.policy_id;
  j["logits"] = logits_json(p.logits);
  j["responses"] = p.responses;
  j["rewards"] = p.rewards;
  json gates = json::array();
  for (const auto& g : p.gates)
    gates.push_back({{"fired", g.fired},
                     {"record_ids", g.record_ids},
                     {"responses", g.responses},
                     {"scoreable", g.scoreable}});
  j["gates"] = gates;
  j["clip_rate"] = p.clip_rate;
  j["surrogate_tokens"] = p.surrogate_tokens;
  j["clipped_tokens"] = p.clipped_tokens;
  j["unusable"] = p.unusable;
  j["rollout_sequences"] = p.rollout_sequences;
  j["rollout_tokens"] = p.rollout_tokens;
  j["rescored_sequences"] = p.rescored_sequences;
  j["rescored_tokens"] = p.rescored_tokens;
  j["aux_sequences"] = p.aux_sequences;
  j["aux_tokens"] = p.aux_tokens;
  json pert = json::array();
  for (const auto& q : p.perturbations)
    pert.push_back({{"difference", q.difference},
                    {"bound", q.bound},
                    {"holds", q.holds}});
  j["perturbations"] = pert;
  return j;
}

PolicyStep policy_step_from_json(const json& j) {
  PolicyStep p;
  p.policy_id = j.at("policy_id").get<std::string>();
  p.logits = logits_from_json(j.at("logits"));
  p.responses = j.at("responses").get<std::vector<std::vector<std::size_t>>>();
  p.rewards = j.at("rewards").get<Table>();
  for (const auto& g : j.at("gates")) {
    GateRecord r;
    r.fired = g.at("fired").get<bool>();
    r.record_ids = g.at("record_ids").get<std::vector<std::string>>();
    r.responses = g.at("responses").get<std::vector<std::size_t>>();
    r.scoreable = g.at("scoreable").get<std::vector<bool>>();
    p.gates.push_back(std::move(r));
  }
  p.clip_rate = j.at("clip_rate").get<double>();
  p.surrogate_tokens = j.at("surrogate_tokens").get<std::size_t>();
  p.clipped_tokens = j.at("clipped_tokens").get<std::size_t>();
  p.unusable = j.at("unusable").get<std::size_t>();
  p.rollout_sequences = j.at("rollout_sequences").get<std::size_t>();
  p.rollout_tokens = j.at("rollout_tokens").get<std::size_t>();
  p.rescored_sequences = j.at("rescored_sequences").get<std::size_t>();
  p.rescored_tokens = j.at("rescored_tokens").get<std::size_t>();
  p.aux_sequences = j.at("aux_sequences").get<std::size_t>();
  p.aux_tokens = j.at("aux_tokens").get<std::size_t>();
  for (const auto& q : j.at("perturbations"))
    p.perturbations.push_back({q.at("difference").get<double>(),
                               q.at("bound").get<double>(),
                               q.at("holds").get<bool>()});
  return p;
}

std::string RunResult::metrics_jsonl() const {
  std::string out;
  for (const auto& row : metrics) {
    out += to_json(row).dump();
    out += '\n';
  }
  return out;
}

std::vector<exchange::ExperienceRecord> group_records(const env::RolloutGroup& g,
                                                      long step) {
  std::vector<exchange::ExperienceRecord> out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    exchange::ExperienceRecord rec;
    rec.record_id = g.policy_id + "/" + std::to_string(step) + "/" + g.prompt_id +
                    "/" + std::to_string(i);
    rec.prompt_id = g.prompt_id;
    rec.response_text = g.texts[i];
    rec.reward = g.rewards[i];
    rec.trace = g.traces[i];
    rec.meta.policy_id = g.policy_id;
    rec.meta.step = step;
    rec.meta.tokenizer_id = g.tokenizer_id;
    rec.meta.success = g.rewards[i] > env::kSuccessThreshold;
    out.push_back(std::move(rec));
  }
  return out;
}

env::RolloutGroup rebuild_group(const env::PrefixTreePolicy& snapshot,
                                std::size_t prompt,
                                const std::vector<std::size_t>& responses) {
  const auto& entry = snapshot.env().prompt(prompt);
  env::RolloutGroup g;
  g.policy_id = snapshot.id();
  g.tokenizer_id = snapshot.tokenizer_id();
  g.prompt_index = prompt;
  g.prompt_id = entry.id;
  g.behavior_logits = snapshot.logits(prompt);
  for (std::size_t r : responses) {
    if (r >= entry.responses.size())
      throw InputShapeError("response index out of range in artifacts");
    g.responses.push_back(r);
    g.texts.push_back(entry.responses[r]);
    g.rewards.push_back(entry.rewards[r]);
    g.tokens.push_back(snapshot.tokens(prompt, r));
    g.traces.push_back(snapshot.trace_on(prompt, r, g.tokens.back()));
  }
  return g;
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  Setup setup = build_setup(cfg);
  const std::size_t n_pol = setup.policies.size();
  const std::size_t n_prompts = setup.env->num_prompts();
  const std::size_t workers = opts.workers.value_or(cfg.workers);
  if (workers < 1) throw ConfigError("workers must be >= 1");

  std::vector<std::string> ids;
  for (const auto& p : setup.policies) ids.push_back(p.id());
  const auto device_map = exchange::allocate(ids, workers, cfg.device_map);
  std::vector<std::size_t> slot_of;
  for (const auto& id : ids) slot_of.push_back(device_map.assignments.at(id));

  const std::vector<env::PrefixTreePolicy> reference = setup.policies;
  std::vector<env::PrefixTreePolicy>& policies = setup.policies;

  RunResult result;
  result.config = cfg;
  for (const auto& p : policies) result.initial_logits.push_back(p.logits());

  exchange::ExperienceExchange ex(cfg.retention_steps);
  const double inv_prompts = 1.0 / static_cast<double>(n_prompts);

  if (opts.run_dir) fs::create_directories(*opts.run_dir);
  auto abort_run = [&](long step, const std::string& why) {
    if (opts.run_dir) {
      json dump;
      dump["step"] = step;
      dump["reason"] = why;
      json pol = json::object();
      for (const auto& p : policies) pol[p.id()] = logits_json(p.logits());
      dump["policies"] = pol;
      std::ofstream(fs::path(*opts.run_dir) / "abort_dump.json") << dump.dump(2)
                                                                  << "\n";
    }
    throw NumericError("run aborted at step " + std::to_string(step) + ": " + why);
  };

  for (std::size_t s_idx = 0; s_idx < cfg.steps; ++s_idx) {
    const long s = static_cast<long>(s_idx);
    ex.begin_step(s);
    const std::vector<env::PrefixTreePolicy> snapshots = policies;

    // Generate and publish.
    std::vector<std::vector<env::RolloutGroup>> groups(n_pol);
    fan_out(slot_of, workers, [&](std::size_t i) {
      auto& mine = groups[i];
      for (std::size_t p = 0; p < n_prompts; ++p) {
        mine.push_back(env::sample_group(
            snapshots[i], p, cfg.group_size,
            derive_seed({cfg.seed, kSampleStream, i, s_idx, p})));
        ex.publish(s, group_records(mine.back(), s));
      }
    });
    ex.close_publish(s);
    if (cfg.dump_pool && opts.run_dir) {
      fs::create_directories(fs::path(*opts.run_dir) / "pool");
      char name[32];
      std::snprintf(name, sizeof name, "step_%04ld.jsonl", s);
      std::ofstream out(fs::path(*opts.run_dir) / "pool" / name);
      ex.dump_jsonl(s, out);
    }

    // Subscribe, transform, update.
    std::vector<UpdateOutcome> outcomes(n_pol);
    fan_out(slot_of, workers, [&](std::size_t i) {
      auto& policy = policies[i];
      const auto& snap = snapshots[i];
      const auto& mine = groups[i];
      UpdateOutcome& out = outcomes[i];
      PolicyStep& rec = out.step;
      rec.policy_id = policy.id();
      rec.logits = snap.logits();
      rec.gates.resize(cfg.regime == RegimeKind::kSgt ? n_prompts : 0);
      for (const auto& g : mine) {
        rec.responses.push_back(g.responses);
        rec.rewards.push_back(g.rewards);
        rec.rollout_sequences += g.size();
        for (const auto& t : g.tokens) rec.rollout_tokens += t.size();
      }

      std::vector<exchange::ExperienceRecord> peers;
      if (cfg.regime != RegimeKind::kNone)
        peers = ex.subscribe(s, {exchange_regime(cfg.regime), policy.id(), {}});

      // Advantages and pools are fixed for the whole step.
      std::vector<grpo::AdvantageSet> adv;
      std::vector<regimes::PrpPool> pools;
      std::vector<env::GateEvent> gates;
      for (std::size_t p = 0; p < n_prompts; ++p) {
        switch (cfg.regime) {
          case RegimeKind::kPrp:
            pools.push_back(regimes::prp_pool(snap, mine[p], peers, setup.specs,
                                              cfg.prp));
            rec.unusable += pools.back().unusable_count;
            for (const auto& c : pools.back().candidates)
              if (!c.own) {
                ++rec.rescored_sequences;
                rec.rescored_tokens += c.tokens.size();
              }
            break;
          case RegimeKind::kXgrpo:
            adv.push_back(regimes::xgrpo_group_advantages(
                mine[p], peers, cfg.normalization, cfg.xgrpo));
            break;
          case RegimeKind::kSgt:
            gates.push_back(regimes::sgt_gate(
                snap, mine[p], peers, cfg.sgt,
                derive_seed({cfg.seed, kGateStream, i, s_idx, p})));
            [[fallthrough]];
          case RegimeKind::kNone:
            adv.push_back(grpo::group_advantages(mine[p].rewards, cfg.normalization,
                                                 cfg.advantage_epsilon));
            break;
        }
      }
      if (cfg.batch_renorm && !adv.empty())
        grpo::batch_renormalize(adv, cfg.advantage_epsilon);
      for (std::size_t p = 0; p < gates.size(); ++p) {
        auto& gr = rec.gates[p];
        gr.fired = gates[p].fired;
        for (const auto& sel : gates[p].selected) {
          gr.record_ids.push_back(sel.record_id);
          gr.responses.push_back(sel.response);
          gr.scoreable.push_back(sel.scoreable);
        }
      }

      for (std::size_t u = 0; u < cfg.updates_per_step; ++u) {
        env::Gradient grad(n_prompts);
        for (std::size_t p = 0; p < n_prompts; ++p) {
          const auto res =
              cfg.regime == RegimeKind::kPrp
                  ? regimes::prp_gradient(policy, pools[p], cfg.prp, &reference[i])
                  : grpo::grpo_gradient(policy, mine[p], adv[p], cfg.clip,
                                        &reference[i]);
          add_scaled(grad, p, res.gradient, inv_prompts);
          rec.surrogate_tokens += res.tokens;
          rec.clipped_tokens += res.clipped_tokens;
        }
        if (cfg.regime == RegimeKind::kSgt) {
          const auto upd = regimes::sgt_update(policy, grad, gates, cfg.sgt);
          if (u == 0) {
            rec.aux_sequences = upd.aux_sequences;
            rec.aux_tokens = upd.aux_tokens;
          }
          if (upd.gated_examples > 0) {
            env::Gradient diff(n_prompts);
            for (std::size_t p = 0; p < n_prompts; ++p) {
              diff[p].assign(policy.logits(p).size(), 0.0);
              const auto& c = upd.combined[p];
              const auto& b = grad[p];
              for (std::size_t z = 0; z < diff[p].size(); ++z) {
                const double cv = c.empty() ? 0.0 : c[z];
                const double bv = b.empty() ? 0.0 : b[z];
                diff[p][z] = cfg.learning_rate * (cv - bv);
              }
            }
            PerturbationRecord pr;
            pr.difference = flat_norm(diff);
            pr.bound = cfg.learning_rate * cfg.sgt.lambda * regimes::kAuxGradientBound;
            pr.holds = pr.difference <= pr.bound * (1.0 + 1e-12);
            rec.perturbations.push_back(pr);
          }
          grad = upd.combined;
        }
        if (!finite(grad)) {
          out.error = "non-finite gradient for policy '" + policy.id() + "'";
          return;
        }
        try {
          policy.apply_gradient(grad, cfg.learning_rate);
        } catch (const NumericError& e) {
          out.error = e.what();
          return;
        }
      }
      rec.clip_rate = rec.surrogate_tokens
                          ? static_cast<double>(rec.clipped_tokens) /
                                static_cast<double>(rec.surrogate_tokens)
                          : 0.0;
    });

    StepRecord step_rec;
    step_rec.step = s;
    for (std::size_t i = 0; i < n_pol; ++i) {
      if (!outcomes[i].error.empty()) abort_run(s, outcomes[i].error);
      const auto& snap = snapshots[i];
      const auto& ps = outcomes[i].step;
      MetricsRow row;
      row.step = s;
      row.policy_id = snap.id();
      row.regime = to_string(cfg.regime);
      double reward_sum = 0.0, ent = 0.0, kl_sum = 0.0;
      std::size_t n_roll = 0, fired = 0, val_ok = 0;
      for (std::size_t p = 0; p < n_prompts; ++p) {
        for (double r : ps.rewards[p]) reward_sum += r;
        n_roll += ps.rewards[p].size();
        ent += env::policy_entropy(snap, p);
        kl_sum += env::policy_kl(snap, reference[i], p);
        if (setup.env->is_success(p, snap.argmax(p))) ++val_ok;
        if (!ps.gates.empty() && ps.gates[p].fired) ++fired;
      }
      row.train_reward_mean = reward_sum / static_cast<double>(n_roll);
      const bool validate = s_idx == 0 || (cfg.validation_every > 0 &&
                                           s_idx % cfg.validation_every == 0);
      if (validate) row.val_success_rate = static_cast<double>(val_ok) * inv_prompts;
      row.entropy = ent * inv_prompts;
      row.kl_to_reference = kl_sum * inv_prompts;
      row.clip_rate = ps.clip_rate;
      row.gate_rate = static_cast<double>(fired) * inv_prompts;
      row.pool_unusable_count = ps.unusable;
      row.aux_sequence_count = ps.aux_sequences;
      if (!std::isfinite(row.entropy) || !std::isfinite(row.kl_to_reference))
        abort_run(s, "non-finite metrics for policy '" + snap.id() + "'");
      result.metrics.push_back(std::move(row));
      step_rec.policies.push_back(std::move(outcomes[i].step));
    }
    result.steps.push_back(std::move(step_rec));
  }
  for (const auto& p : policies) result.final_logits.push_back(p.logits());
  if (opts.run_dir) write_run_dir(result, *opts.run_dir);
  return result;
}

void write_run_dir(const RunResult& result, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  std::ofstream(root / "config.json") << result.config.raw.dump(2) << "\n";
  std::ofstream(root / "metrics.jsonl", std::ios::binary) << result.metrics_jsonl();
  {
    std::ofstream out(root / "artifacts.jsonl", std::ios::binary);
    for (const auto& st : result.steps)
      for (const auto& p : st.policies) {
        json j = to_json(p);
        j["step"] = st.step;
        out << j.dump() << "\n";
      }
  }
  json pol = json::object();
  for (std::size_t i = 0; i < result.final_logits.size(); ++i) {
    const auto& id = result.config.policies[i].id;
    pol[id] = {{"initial", logits_json(result.initial_logits[i])},
               {"final", logits_json(result.final_logits[i])}};
  }
  std::ofstream(root / "final_policies.json") << pol.dump(2) << "\n";
}

RunResult load_run_dir(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw NotFoundError("no run directory '" + dir + "'");
  RunResult r;
  r.config = load_config((root / "config.json").string());
  {
    std::ifstream in(root / "metrics.jsonl");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) r.metrics.push_back(metrics_from_json(json::parse(line)));
  }
  {
    std::ifstream in(root / "artifacts.jsonl");
    if (!in) throw NotFoundError("run directory lacks artifacts.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const long step = j.at("step").get<long>();
      if (r.steps.empty() || r.steps.back().step != step)
        r.steps.push_back({step, {}});
      r.steps.back().policies.push_back(policy_step_from_json(j));
    }
  }
  std::ifstream in(root / "final_policies.json");
  if (!in) throw NotFoundError("run directory lacks final_policies.json");
  const json pol = json::parse(in);
  for (const auto& pc : r.config.policies) {
    r.initial_logits.push_back(logits_from_json(pol.at(pc.id).at("initial")));
    r.final_logits.push_back(logits_from_json(pol.at(pc.id).at("final")));
  }
  return r;
}

std::string output_root() {
  const char* v = std::getenv("MRL_OUTPUT_ROOT");
  return v && *v ? std::string(v) : std::string("runs");
}

}  // namespace mrl::harness
