// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"

namespace mrl::harness {

using nlohmann::json;

std::string to_string(RegimeKind r) {
  switch (r) {
    case RegimeKind::kNone: return "none";
    case RegimeKind::kPrp: return "prp";
    case RegimeKind::kXgrpo: return "xgrpo";
    case RegimeKind::kSgt: return "sgt";
  }
  return "?";
}

RegimeKind parse_regime(const std::string& name) {
  if (name == "none") return RegimeKind::kNone;
  if (name == "prp") return RegimeKind::kPrp;
  if (name == "xgrpo") return RegimeKind::kXgrpo;
  if (name == "sgt") return RegimeKind::kSgt;
  throw ConfigError("unknown regime '" + name + "'");
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::vector<double> read_logits(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ConfigError(where + " must be an array");
  std::vector<double> out;
  for (const auto& v : arr) {
    if (v.is_null())
      out.push_back(kNegInf);
    else if (v.is_number())
      out.push_back(v.get<double>());
    else
      throw ConfigError(where + " holds a non-numeric logit");
  }
  return out;
}

TokenizerConfig parse_tokenizer(const json& j, const std::string& where) {
  check_keys(j, {"id", "mode", "merges", "chunk_size", "whole_words"}, where);
  TokenizerConfig t;
  read(j, "id", t.spec.id, where);
  std::string mode = "whitespace-subword";
  read(j, "mode", mode, where);
  t.spec.mode = textgrid::parse_tokenizer_mode(mode);
  if (j.contains("merges")) {
    for (const auto& m : j.at("merges")) {
      if (!m.is_array() || m.size() != 2)
        throw ConfigError(where + ".merges entries must be string pairs");
      t.spec.merge_rules.emplace_back(m[0].get<std::string>(),
                                      m[1].get<std::string>());
    }
  }
  read(j, "chunk_size", t.spec.chunk_size, where);
  read(j, "whole_words", t.whole_words, where);
  textgrid::validate(t.spec);
  return t;
}

EnvironmentConfig parse_environment(const json& j) {
  const std::string where = "environment";
  check_keys(j, {"prompts", "generator"}, where);
  EnvironmentConfig e;
  if (j.contains("prompts")) {
    for (const auto& p : j.at("prompts")) {
      check_keys(p, {"id", "text", "responses", "rewards", "correct"},
                 "environment.prompts[]");
      env::PromptEntry entry;
      read(p, "id", entry.id, where);
      entry.text = entry.id;
      read(p, "text", entry.text, where);
      read(p, "responses", entry.responses, where);
      if (p.contains("rewards") && p.contains("correct"))
        throw ConfigError("prompt '" + entry.id + "' sets both rewards and correct");
      if (p.contains("rewards")) {
        read(p, "rewards", entry.rewards, where);
      } else {
        entry.rewards.assign(entry.responses.size(), 0.0);
        std::vector<std::size_t> correct;
        read(p, "correct", correct, where);
        for (std::size_t c : correct) {
          if (c >= entry.responses.size())
            throw ConfigError("prompt '" + entry.id + "': correct index out of range");
          entry.rewards[c] = 1.0;
        }
      }
      e.prompts.push_back(std::move(entry));
    }
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    if (!g.is_object() || !g.contains("kind"))
      throw ConfigError("environment.generator needs a kind");
    const std::string kind = g.at("kind").get<std::string>();
    const std::string gw = "environment.generator";
    if (kind == "complementarity") {
      check_keys(g, {"kind", "a_only", "b_only", "both", "neither",
                     "topic_responses", "strong_p", "weak_p", "off_topic_logit",
                     "noise", "seed"},
                 gw);
      ComplementarityGen c;
      read(g, "a_only", c.a_only, gw);
      read(g, "b_only", c.b_only, gw);
      read(g, "both", c.both, gw);
      read(g, "neither", c.neither, gw);
      read(g, "topic_responses", c.topic_responses, gw);
      read(g, "strong_p", c.strong_p, gw);
      read(g, "weak_p", c.weak_p, gw);
      read(g, "off_topic_logit", c.off_topic_logit, gw);
      read(g, "noise", c.noise, gw);
      read(g, "seed", c.seed, gw);
      if (c.topic_responses < 2) throw ConfigError(gw + ".topic_responses must be >= 2");
      e.complementarity = c;
    } else if (kind == "mismatch") {
      check_keys(g, {"kind", "prompts", "responses", "base_scale", "prompt_scale",
                     "policy_noise", "seed"},
                 gw);
      MismatchGen m;
      read(g, "prompts", m.prompts, gw);
      read(g, "responses", m.responses, gw);
      read(g, "base_scale", m.base_scale, gw);
      read(g, "prompt_scale", m.prompt_scale, gw);
      read(g, "policy_noise", m.policy_noise, gw);
      read(g, "seed", m.seed, gw);
      e.mismatch = m;
    } else {
      throw ConfigError("unknown environment generator '" + kind + "'");
    }
    if (!e.prompts.empty())
      throw ConfigError("environment sets both prompts and a generator");
  }
  if (e.prompts.empty() && !e.complementarity && !e.mismatch)
    throw ConfigError("environment has no prompts");
  return e;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  check_keys(doc,
             {"name", "seed", "steps", "group_size", "learning_rate",
              "updates_per_step", "validation_every", "workers", "device_map",
              "retention_steps", "dump_pool", "output_dir", "regime", "clip",
              "advantage", "prp", "xgrpo", "sgt", "thl", "tokenizers",
              "environment", "policies", "diagnostics"},
             "config");
  ExperimentConfig c;
  c.raw = doc;
  const std::string w = "config";
  read(doc, "name", c.name, w);
  read(doc, "seed", c.seed, w);
  read(doc, "steps", c.steps, w);
  read(doc, "group_size", c.group_size, w);
  read(doc, "learning_rate", c.learning_rate, w);
  read(doc, "updates_per_step", c.updates_per_step, w);
  read(doc, "validation_every", c.validation_every, w);
  read(doc, "workers", c.workers, w);
  read(doc, "retention_steps", c.retention_steps, w);
  read(doc, "dump_pool", c.dump_pool, w);
  read(doc, "output_dir", c.output_dir, w);
  if (c.output_dir.empty()) c.output_dir = c.name;
  std::string regime = "none";
  read(doc, "regime", regime, w);
  c.regime = parse_regime(regime);
  if (c.group_size < 2) throw ConfigError("group_size must be >= 2");
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.updates_per_step < 1) throw ConfigError("updates_per_step must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");

  if (doc.contains("device_map")) {
    exchange::DeviceMap m;
    for (const auto& [k, v] : doc.at("device_map").items())
      m.assignments[k] = v.get<std::size_t>();
    c.device_map = m;
  }
  if (doc.contains("clip")) {
    const auto& j = doc.at("clip");
    check_keys(j, {"epsilon", "kl_coefficient"}, "clip");
    read(j, "epsilon", c.clip.epsilon, "clip");
    read(j, "kl_coefficient", c.clip.kl_coefficient, "clip");
    if (!(c.clip.epsilon > 0.0)) throw ConfigError("clip.epsilon must be > 0");
  }
  if (doc.contains("advantage")) {
    const auto& j = doc.at("advantage");
    check_keys(j, {"normalization", "epsilon", "batch_renorm"}, "advantage");
    std::string n = "z-norm";
    read(j, "normalization", n, "advantage");
    c.normalization = grpo::parse_normalization(n);
    read(j, "epsilon", c.advantage_epsilon, "advantage");
    read(j, "batch_renorm", c.batch_renorm, "advantage");
  }
  if (doc.contains("thl")) {
    const auto& j = doc.at("thl");
    check_keys(j, {"clip_bound", "ignore_value", "script", "straddle"}, "thl");
    read(j, "clip_bound", c.thl.clip_bound, "thl");
    read(j, "ignore_value", c.thl.ignore_value, "thl");
    std::string script = "auto", straddle = "truncate";
    read(j, "script", script, "thl");
    read(j, "straddle", straddle, "thl");
    c.thl.script = textgrid::parse_script_mode(script);
    if (straddle == "truncate")
      c.thl.straddle = thl::StraddleMode::kTruncate;
    else if (straddle == "apportion")
      c.thl.straddle = thl::StraddleMode::kApportion;
    else
      throw ConfigError("unknown thl.straddle '" + straddle + "'");
    if (!(c.thl.ignore_value < -c.thl.clip_bound - 1.0))
      throw ConfigError("thl.ignore_value must lie below -clip_bound - 1");
  }
  c.prp.clip = c.clip;
  c.prp.normalization = c.normalization;
  c.prp.advantage_epsilon = c.advantage_epsilon;
  c.prp.align = c.thl;
  if (doc.contains("prp")) {
    const auto& j = doc.at("prp");
    check_keys(j, {"denominator"}, "prp");
    std::string d = "learner-snapshot";
    read(j, "denominator", d, "prp");
    c.prp.denominator = regimes::parse_prp_denominator(d);
  }
  if (doc.contains("xgrpo")) {
    const auto& j = doc.at("xgrpo");
    check_keys(j, {"mix_factor", "length_correction", "advantage_clip"}, "xgrpo");
    read(j, "mix_factor", c.xgrpo.mix_factor, "xgrpo");
    read(j, "length_correction", c.xgrpo.length_correction, "xgrpo");
    read(j, "advantage_clip", c.xgrpo.advantage_clip, "xgrpo");
  }
  c.xgrpo.epsilon = c.advantage_epsilon;
  regimes::validate(c.xgrpo);
  if (doc.contains("sgt")) {
    const auto& j = doc.at("sgt");
    check_keys(j, {"lambda", "success_threshold", "negative_threshold",
                   "per_prompt_cap", "selection"},
               "sgt");
    read(j, "lambda", c.sgt.lambda, "sgt");
    read(j, "success_threshold", c.sgt.success_threshold, "sgt");
    read(j, "negative_threshold", c.sgt.negative_threshold, "sgt");
    read(j, "per_prompt_cap", c.sgt.per_prompt_cap, "sgt");
    std::string sel = "uniform";
    read(j, "selection", sel, "sgt");
    c.sgt.selection = regimes::parse_selection_rule(sel);
  }
  regimes::validate(c.sgt);

  if (!doc.contains("tokenizers")) throw ConfigError("config needs tokenizers");
  for (const auto& t : doc.at("tokenizers"))
    c.tokenizers.push_back(parse_tokenizer(t, "tokenizers[]"));
  if (!doc.contains("environment")) throw ConfigError("config needs an environment");
  c.environment = parse_environment(doc.at("environment"));

  if (!doc.contains("policies")) throw ConfigError("config needs policies");
  std::set<std::string> tok_ids, pol_ids;
  for (const auto& t : c.tokenizers)
    if (!tok_ids.insert(t.spec.id).second)
      throw ConfigError("duplicate tokenizer id '" + t.spec.id + "'");
  for (const auto& p : doc.at("policies")) {
    check_keys(p, {"id", "tokenizer", "logits", "init", "init_scale", "init_seed"},
               "policies[]");
    PolicyConfig pc;
    read(p, "id", pc.id, "policies[]");
    read(p, "tokenizer", pc.tokenizer, "policies[]");
    read(p, "init", pc.init, "policies[]");
    read(p, "init_scale", pc.init_scale, "policies[]");
    read(p, "init_seed", pc.init_seed, "policies[]");
    if (pc.init != "uniform" && pc.init != "random")
      throw ConfigError("policy '" + pc.id + "': init must be uniform or random");
    if (p.contains("logits"))
      for (const auto& [pid, row] : p.at("logits").items())
        pc.logits[pid] = read_logits(row, "policies[" + pc.id + "].logits");
    if (pc.id.empty()) throw ConfigError("policy without id");
    if (!pol_ids.insert(pc.id).second)
      throw ConfigError("duplicate policy id '" + pc.id + "'");
    if (!tok_ids.count(pc.tokenizer))
      throw ConfigError("policy '" + pc.id + "' references unknown tokenizer '" +
                        pc.tokenizer + "'");
    c.policies.push_back(std::move(pc));
  }
  if (c.policies.empty()) throw ConfigError("config needs at least one policy");
  if (c.environment.complementarity && c.policies.size() != 2)
    throw ConfigError("complementarity generator needs exactly two policies");

  if (doc.contains("diagnostics")) {
    const auto& j = doc.at("diagnostics");
    const std::string dw = "diagnostics";
    check_keys(j, {"ratio_band", "length_buckets", "corpus", "pairs",
                   "shuffle_seed", "decode_stage"},
               dw);
    if (j.contains("ratio_band")) {
      const auto band = j.at("ratio_band").get<std::vector<double>>();
      if (band.size() != 2 || !(band[0] < band[1]))
        throw ConfigError("diagnostics.ratio_band must be [lo, hi] with lo < hi");
      c.diagnostics.band_lo = band[0];
      c.diagnostics.band_hi = band[1];
    }
    read(j, "length_buckets", c.diagnostics.length_buckets, dw);
    read(j, "corpus", c.diagnostics.corpus, dw);
    if (j.contains("pairs"))
      for (const auto& pr : j.at("pairs")) {
        if (!pr.is_array() || pr.size() != 2)
          throw ConfigError("diagnostics.pairs entries must be [src, tgt]");
        const auto a = pr[0].get<std::string>(), b = pr[1].get<std::string>();
        if (!tok_ids.count(a) || !tok_ids.count(b))
          throw ConfigError("diagnostics.pairs references an unknown tokenizer");
        c.diagnostics.pairs.emplace_back(a, b);
      }
    read(j, "shuffle_seed", c.diagnostics.shuffle_seed, dw);
    read(j, "decode_stage", c.diagnostics.decode_stage, dw);
    if (c.diagnostics.decode_stage != "initial" &&
        c.diagnostics.decode_stage != "final")
      throw ConfigError("diagnostics.decode_stage must be initial or final");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

// ------------------------------------------------------------ generation

namespace {

const std::vector<std::string>& topic_words() {
  static const std::vector<std::string> w = {
      "river", "stone", "garden", "engine", "planet", "violin", "harbor",
      "forest", "mirror", "lantern", "castle", "desert", "meadow", "signal",
      "thunder", "copper", "orbit", "canyon", "glacier", "market", "island",
      "falcon", "ember", "summit"};
  return w;
}

const std::vector<std::string>& value_words() {
  static const std::vector<std::string> w = {
      "seven", "twelve", "north", "bright", "silent", "rapid", "golden",
      "narrow", "hollow", "ancient", "gentle", "bitter", "crimson", "steady",
      "distant", "frozen"};
  return w;
}

std::vector<std::vector<double>> zeros_like(const env::BanditEnv& e) {
  std::vector<std::vector<double>> t;
  for (const auto& p : e.prompts()) t.emplace_back(p.responses.size(), 0.0);
  return t;
}

struct Generated {
  std::vector<env::PromptEntry> prompts;
  std::vector<std::vector<std::vector<double>>> logits;  // per policy
};

Generated generate_complementarity(const ComplementarityGen& g) {
  const std::size_t n_prompts = g.a_only + g.b_only + g.both + g.neither;
  if (n_prompts < 3) throw ConfigError("complementarity needs >= 3 prompts");
  if (n_prompts > topic_words().size())
    throw ConfigError("complementarity supports at most 24 prompts");
  if (g.topic_responses > value_words().size())
    throw ConfigError("complementarity supports at most 16 topic responses");
  std::mt19937_64 rng(derive_seed({g.seed, 0xC0}));
  Generated out;
  std::vector<std::size_t> correct(n_prompts);
  std::vector<std::vector<std::string>> topic(n_prompts);
  for (std::size_t p = 0; p < n_prompts; ++p) {
    std::vector<std::string> values = value_words();
    std::shuffle(values.begin(), values.end(), rng);
    for (std::size_t i = 0; i < g.topic_responses; ++i)
      topic[p].push_back("the " + topic_words()[p] + " is " + values[i]);
    correct[p] = rng() % g.topic_responses;
  }
  // Each prompt also offers the correct answers of its two neighbors.
  for (std::size_t p = 0; p < n_prompts; ++p) {
    env::PromptEntry e;
    e.id = "q" + std::to_string(p);
    e.text = "what is the " + topic_words()[p] + "?";
    e.responses = topic[p];
    e.rewards.assign(topic[p].size(), 0.0);
    e.rewards[correct[p]] = 1.0;
    for (std::size_t q : {(p + n_prompts - 1) % n_prompts, (p + 1) % n_prompts}) {
      e.responses.push_back(topic[q][correct[q]]);
      e.rewards.push_back(0.0);
    }
    out.prompts.push_back(std::move(e));
  }
  // Block layout: A strong only, B strong only, both strong, neither.
  auto strong = [&](std::size_t who, std::size_t p) {
    if (p < g.a_only) return who == 0;
    if (p < g.a_only + g.b_only) return who == 1;
    return p < g.a_only + g.b_only + g.both;
  };
  for (std::size_t who = 0; who < 2; ++who) {
    std::mt19937_64 prng(derive_seed({g.seed, 0xA1, who}));
    std::vector<std::vector<double>> table;
    for (std::size_t p = 0; p < n_prompts; ++p) {
      const double target = strong(who, p) ? g.strong_p : g.weak_p;
      const double wrong = std::log((1.0 - target) / (g.topic_responses - 1));
      std::vector<double> row;
      for (std::size_t i = 0; i < g.topic_responses; ++i)
        row.push_back(i == correct[p] ? std::log(target)
                                      : wrong + g.noise * normal01(prng));
      row.push_back(wrong + g.off_topic_logit);
      row.push_back(wrong + g.off_topic_logit);
      table.push_back(std::move(row));
    }
    out.logits.push_back(std::move(table));
  }
  return out;
}

Generated generate_mismatch(const MismatchGen& g, std::size_t n_policies) {
  if (g.responses < 2 || g.prompts < 2)
    throw ConfigError("mismatch generator needs >= 2 prompts and responses");
  std::mt19937_64 rng(derive_seed({g.seed, 0xB0}));
  const auto& tw = topic_words();
  const auto& vw = value_words();
  // Distinct compound first words, so each response's sequence mass sits
  // on its first word in every prefix tree.
  std::vector<std::string> heads;
  for (const auto& a : tw)
    for (const auto& b : vw) heads.push_back(a + b);
  std::shuffle(heads.begin(), heads.end(), rng);
  std::vector<std::string> texts;
  for (std::size_t r = 0; r < g.responses; ++r) {
    const std::size_t words = 2 + rng() % 3;
    std::string t = heads[r];
    for (std::size_t i = 1; i < words; ++i) t += " " + vw[rng() % vw.size()];
    texts.push_back(t);
  }
  Generated out;
  std::vector<double> base(g.responses);
  for (double& b : base) b = g.base_scale * normal01(rng);
  std::vector<std::vector<double>> shared;
  for (std::size_t p = 0; p < g.prompts; ++p) {
    env::PromptEntry e;
    e.id = "m" + std::to_string(p);
    e.text = "prompt " + std::to_string(p);
    e.responses = texts;
    e.rewards.assign(g.responses, 0.0);
    e.rewards[rng() % g.responses] = 1.0;
    out.prompts.push_back(std::move(e));
    std::vector<double> row(g.responses);
    for (std::size_t r = 0; r < g.responses; ++r)
      row[r] = base[r] + g.prompt_scale * normal01(rng);
    shared.push_back(std::move(row));
  }
  for (std::size_t who = 0; who < n_policies; ++who) {
    std::mt19937_64 prng(derive_seed({g.seed, 0xB1, who}));
    auto table = shared;
    for (auto& row : table)
      for (double& v : row) v += g.policy_noise * normal01(prng);
    out.logits.push_back(std::move(table));
  }
  return out;
}

// Chained merges that rebuild each word character by character.
std::vector<std::pair<std::string, std::string>> whole_word_merges(
    const env::BanditEnv& e) {
  std::set<std::string> words;
  for (const auto& p : e.prompts())
    for (const auto& r : p.responses) {
      for (const auto& span : textgrid::word_spans(r, textgrid::ScriptMode::kWord)) {
        const textgrid::Utf8Text d(r);
        words.insert(d.substr(span.start, span.end));
      }
    }
  std::vector<std::pair<std::string, std::string>> rules;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& w : words) {
    const textgrid::Utf8Text d(w);
    std::string acc = d.substr(0, 1);
    for (std::size_t i = 1; i < d.size(); ++i) {
      const std::string next = d.substr(i, i + 1);
      if (seen.insert({acc, next}).second) rules.emplace_back(acc, next);
      acc += next;
    }
  }
  return rules;
}

}  // namespace

Setup build_setup(const ExperimentConfig& cfg) {
  Setup s;
  Generated gen;
  if (cfg.environment.complementarity)
    gen = generate_complementarity(*cfg.environment.complementarity);
  else if (cfg.environment.mismatch)
    gen = generate_mismatch(*cfg.environment.mismatch, cfg.policies.size());
  else
    gen.prompts = cfg.environment.prompts;
  const bool generated = !gen.logits.empty();
  s.env = std::make_shared<const env::BanditEnv>(gen.prompts);

  for (const auto& t : cfg.tokenizers) {
    textgrid::TokenizerSpec spec = t.spec;
    if (t.whole_words) {
      auto extra = whole_word_merges(*s.env);
      spec.merge_rules.insert(spec.merge_rules.end(), extra.begin(), extra.end());
    }
    s.specs[spec.id] = spec;
  }

  for (std::size_t i = 0; i < cfg.policies.size(); ++i) {
    const auto& pc = cfg.policies[i];
    std::vector<std::vector<double>> table =
        generated ? gen.logits[i] : zeros_like(*s.env);
    if (!generated && pc.init == "random") {
      std::mt19937_64 rng(derive_seed({pc.init_seed, 0xD0, i}));
      for (auto& row : table)
        for (double& v : row) v = pc.init_scale * normal01(rng);
    }
    for (const auto& [pid, row] : pc.logits) {
      const std::size_t p = s.env->index_of(pid);
      if (row.size() != table[p].size())
        throw ConfigError("policy '" + pc.id + "': logits for '" + pid +
                          "' have the wrong length");
      table[p] = row;
    }
    s.policies.emplace_back(pc.id, s.specs.at(pc.tokenizer), s.env,
                            std::move(table));
  }
  return s;
}

}  // namespace mrl::harness
