// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "mrl/diagnostics.hpp"
#include "mrl/errors.hpp"
#include "mrl/experiment.hpp"

using namespace mrl;
using namespace mrl::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json two_policy_doc(const std::string& regime) {
  json doc = json::parse(R"({
    "name": "unit",
    "seed": 4,
    "steps": 6,
    "group_size": 4,
    "learning_rate": 0.5,
    "validation_every": 3,
    "tokenizers": [
      {"id": "w", "mode": "whitespace-subword", "whole_words": true},
      {"id": "c", "mode": "character"}
    ],
    "environment": {
      "prompts": [
        {"id": "p0", "text": "q0", "responses": ["red fox", "blue owl", "green eel"], "correct": [0]},
        {"id": "p1", "text": "q1", "responses": ["one", "two", "three", "four"],
         "rewards": [0, 0, 1, 0.5]}
      ]
    },
    "policies": [
      {"id": "a", "tokenizer": "w", "logits": {"p0": [-3, 1, 1], "p1": [0, 0, 2, 0]}},
      {"id": "b", "tokenizer": "c", "logits": {"p0": [2, 0, 0], "p1": [1, 0, -2, null]}}
    ]
  })");
  doc["regime"] = regime;
  return doc;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mrl_unit_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config parsing is strict") {
  CHECK_NOTHROW(parse_config(two_policy_doc("none")));
  auto doc = two_policy_doc("none");
  doc["stepz"] = 3;
  CHECK_THROWS_AS(parse_config(doc), ConfigError);
  doc = two_policy_doc("none");
  doc["sgt"] = {{"lambda", 0.1}, {"gate", true}};
  CHECK_THROWS_AS(parse_config(doc), ConfigError);
  doc = two_policy_doc("none");
  doc["policies"][0]["tokenizer"] = "missing";
  CHECK_THROWS(build_setup(parse_config(doc)));
  doc = two_policy_doc("bogus");
  CHECK_THROWS_AS(parse_config(doc), ConfigError);
  doc = two_policy_doc("none");
  doc["group_size"] = 1;
  CHECK_THROWS_AS(parse_config(doc), ConfigError);
}

TEST_CASE("explicit logits and null support") {
  const auto setup = build_setup(parse_config(two_policy_doc("none")));
  REQUIRE(setup.policies.size() == 2);
  CHECK_FALSE(setup.policies[1].in_support(1, 3));
  CHECK(setup.env->reward(1, 3) == 0.5);
  CHECK(setup.env->reward(0, 0) == 1.0);
}

TEST_CASE("metrics rows: one per step and policy, validation only on cadence") {
  for (const std::string regime : {"none", "prp", "xgrpo", "sgt"}) {
    INFO(regime);
    const auto cfg = parse_config(two_policy_doc(regime));
    const auto res = run_experiment(cfg);
    REQUIRE(res.metrics.size() == cfg.steps * 2);
    for (const auto& m : res.metrics) {
      CHECK(m.regime == regime);
      CHECK(m.val_success_rate.has_value() == (m.step % 3 == 0));
      CHECK(std::isfinite(m.entropy));
      CHECK(m.kl_to_reference >= 0.0);
    }
    CHECK(res.metrics[0].kl_to_reference == 0.0);
    std::istringstream lines(res.metrics_jsonl());
    std::string line;
    std::getline(lines, line);
    const auto first = json::parse(line);
    const std::vector<std::string> keys = {
        "step", "policy_id", "regime", "train_reward_mean", "val_success_rate",
        "entropy", "kl_to_reference", "clip_rate", "gate_rate",
        "pool_unusable_count", "aux_sequence_count"};
    CHECK(first.size() == keys.size());
    for (const auto& k : keys) CHECK(first.contains(k));
  }
}

TEST_CASE("runs are identical across worker counts") {
  const auto cfg = parse_config(two_policy_doc("sgt"));
  RunOptions one, two;
  one.workers = 1;
  two.workers = 2;
  CHECK(run_experiment(cfg, one).metrics_jsonl() ==
        run_experiment(cfg, two).metrics_jsonl());
}

TEST_CASE("run directory round trip and reports") {
  const auto dir = scratch_dir("roundtrip");
  auto doc = two_policy_doc("prp");
  doc["dump_pool"] = true;
  const auto cfg = parse_config(doc);
  RunOptions opts;
  opts.run_dir = dir.string();
  const auto res = run_experiment(cfg, opts);
  CHECK(fs::exists(dir / "metrics.jsonl"));
  CHECK(fs::exists(dir / "pool" / "step_0000.jsonl"));
  const auto loaded = load_run_dir(dir.string());
  CHECK(loaded.metrics_jsonl() == res.metrics_jsonl());
  REQUIRE(loaded.steps.size() == res.steps.size());

  const RunView a(res), b(loaded);
  for (const auto& table : kReportTables) {
    INFO(table);
    const auto ra = build_report(a, table);
    CHECK(ra.table.to_csv() == build_report(b, table).table.to_csv());
    CHECK(ra.ok());
  }
  CHECK_THROWS(build_report(a, "nope"));
  fs::remove_all(dir);
}

TEST_CASE("channel and complementarity invariants") {
  const auto res = run_experiment(parse_config(two_policy_doc("sgt")));
  const RunView view(res);
  const auto ch = channel_decomposition(view, 0.8, 1.2);
  std::size_t sum = 0;
  for (auto c : ch.cells) sum += c;
  CHECK(sum == ch.total);
  CHECK(ch.violations == 0);
  const auto comp = complementarity_report(view, "final");
  CHECK(comp.any_ge_max_single);
  CHECK(comp.exactly_one_identity);
  CHECK(comp.any + (comp.prompts - comp.any) == comp.prompts);
  const auto act = activation_profile(view);
  for (const auto& row : act) CHECK(row.gated + row.ungated == row.prompts);
}

TEST_CASE("identical policies give unit ratios and full overlap") {
  auto doc = two_policy_doc("prp");
  doc["policies"][1] = {{"id", "b"}, {"tokenizer", "w"},
                        {"logits", doc["policies"][0]["logits"]}};
  const auto res = run_experiment(parse_config(doc));
  const RunView view(res);
  const auto ratios = ratio_statistics(view, 0.8, 1.2);
  REQUIRE(!ratios.empty());
  CHECK(ratios[0].variant == "thl-aligned");
  CHECK(ratios[0].p99 == doctest::Approx(1.0));
  CHECK(ratios[0].clip_rate == 0.0);
  const auto comp = complementarity_report(view, "initial");
  REQUIRE(comp.pairs.size() == 1);
  CHECK(comp.pairs[0].jaccard == 1.0);
  CHECK(comp.exactly_one == 0);
}

TEST_CASE("cost accounting by regime") {
  const auto xg = run_experiment(parse_config(two_policy_doc("xgrpo")));
  const auto cx = cost_report(RunView(xg));
  CHECK(cx.extra_sequences == 0);
  CHECK(cx.extra_tokens == 0);
  const auto sg = run_experiment(parse_config(two_policy_doc("sgt")));
  const auto cs = cost_report(RunView(sg));
  CHECK(cs.bound == doctest::Approx(0.125));
  CHECK(cs.within_bound);
  CHECK(cs.max_step_fraction <= cs.bound);
}

TEST_CASE("THL diagnosis table") {
  auto doc = two_policy_doc("none");
  doc["diagnostics"] = {{"corpus", {"the cat sat", "a b", "\xE4\xBD\xA0\xE5\xA5\xBD"}},
                        {"length_buckets", {4, 8}}};
  const auto diag = diagnose_thl(parse_config(doc));
  REQUIRE(diag.table.header.size() == 5);
  CHECK(diag.table.header[0] == "pair");
  CHECK(diag.table.header[4] == "prefix_leak_max");
  CHECK_FALSE(diag.table.rows.empty());
  for (const auto& c : diag.checks) {
    INFO(c.name);
    CHECK(c.pass);
  }
}

TEST_CASE("output root honours the environment") {
  ::setenv("MRL_OUTPUT_ROOT", "/tmp/mrl-root", 1);
  CHECK(output_root() == "/tmp/mrl-root");
  ::unsetenv("MRL_OUTPUT_ROOT");
  CHECK(output_root() == "runs");
}

}  // TEST_SUITE
