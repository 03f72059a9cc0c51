// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>
#include <sstream>
#include <thread>

#include <doctest.h>

#include "mrl/errors.hpp"
#include "mrl/exchange.hpp"

using namespace mrl;
using namespace mrl::exchange;

namespace {

ExperienceRecord rec(const std::string& policy, long step, int i,
                     double reward, const std::string& prompt = "p0") {
  ExperienceRecord r;
  r.record_id = policy + "/" + std::to_string(step) + "/" + prompt + "/" +
                std::to_string(i);
  r.prompt_id = prompt;
  r.prompt_text = "question";
  r.response_text = "answer " + std::to_string(i);
  r.reward = reward;
  r.advantage = 0.5;
  thl::Trace t;
  t.log_probs = {-0.5, -0.25};
  t.response_mask = {true, true};
  t.tokenizer_id = policy + "-tok";
  r.trace = t;
  r.meta = {policy, step, policy + "-tok", reward > 0.8};
  return r;
}

std::vector<ExperienceRecord> batch(const std::string& policy, long step,
                                    int k) {
  std::vector<ExperienceRecord> out;
  for (int i = 0; i < k; ++i) out.push_back(rec(policy, step, i, i == 0 ? 1.0 : 0.0));
  return out;
}

}  // namespace

TEST_SUITE("exchange") {

TEST_CASE("two-phase protocol") {
  ExperienceExchange ex;
  ex.begin_step(0);
  CHECK_THROWS_AS(ex.subscribe(0, {Regime::kPrp, "a", {}}), PhaseViolationError);
  ex.publish(0, {});
  CHECK(ex.size(0) == 0);
  ex.publish(0, batch("a", 0, 5));
  ex.close_publish(0);
  CHECK_THROWS_AS(ex.publish(0, batch("b", 0, 5)), PhaseViolationError);
  CHECK(ex.subscribe(0, {Regime::kPrp, "b", {}}).size() == 5);
  CHECK_THROWS_AS(ex.begin_step(0), PhaseViolationError);
}

TEST_CASE("duplicate ids are rejected, identical republish is a no-op") {
  ExperienceExchange ex;
  ex.begin_step(3);
  ex.publish(3, batch("a", 3, 2));
  ex.publish(3, batch("a", 3, 2));
  CHECK(ex.size(3) == 2);
  auto clash = batch("a", 3, 1);
  clash[0].reward = 0.25;
  CHECK_THROWS_AS(ex.publish(3, clash), DuplicateRecordError);
}

TEST_CASE("concurrent publishers yield a deterministic order") {
  auto run = [](unsigned shuffle_seed) {
    ExperienceExchange ex;
    ex.begin_step(1);
    std::vector<std::string> ids = {"c", "a", "d", "b"};
    std::shuffle(ids.begin(), ids.end(), std::mt19937(shuffle_seed));
    std::vector<std::thread> threads;
    for (const auto& id : ids)
      threads.emplace_back([&ex, id] { ex.publish(1, batch(id, 1, 5)); });
    for (auto& t : threads) t.join();
    ex.close_publish(1);
    std::ostringstream os;
    ex.dump_jsonl(1, os);
    return os.str();
  };
  const auto first = run(1);
  for (unsigned s = 2; s < 10; ++s) CHECK(run(s) == first);
  CHECK(first.find("\"policy_id\":\"a\"") < first.find("\"policy_id\":\"b\""));
}

TEST_CASE("subscription projections") {
  ExperienceExchange ex;
  ex.begin_step(0);
  ex.publish(0, batch("a", 0, 5));
  ex.publish(0, batch("b", 0, 5));
  ex.close_publish(0);

  const auto prp = ex.subscribe(0, {Regime::kPrp, "b", {}});
  REQUIRE(prp.size() == 5);
  for (const auto& r : prp) {
    CHECK(r.meta.policy_id == "a");
    CHECK(r.trace.has_value());
    CHECK_FALSE(r.response_text.empty());
  }

  const auto xg = ex.subscribe(0, {Regime::kXgrpo, "b", {}});
  REQUIRE(xg.size() == 5);
  for (const auto& r : xg) {
    CHECK_FALSE(r.trace.has_value());
    CHECK(r.response_text.empty());
    CHECK(r.prompt_text.empty());
    CHECK(r.prompt_id == "p0");
  }

  const auto sgt = ex.subscribe(0, {Regime::kSgt, "b", {}});
  REQUIRE(sgt.size() == 1);
  CHECK(sgt[0].meta.success);
  CHECK_FALSE(sgt[0].response_text.empty());

  const auto filtered = ex.subscribe(0, {Regime::kPrp, "b", std::set<std::string>{"px"}});
  CHECK(filtered.empty());
}

TEST_CASE("SGT subscription with no peer success is empty") {
  ExperienceExchange ex;
  ex.begin_step(0);
  ex.publish(0, {rec("a", 0, 0, 0.1), rec("a", 0, 1, 0.0)});
  ex.close_publish(0);
  CHECK(ex.subscribe(0, {Regime::kSgt, "b", {}}).empty());
}

TEST_CASE("provenance and retention") {
  ExperienceExchange ex;
  ex.begin_step(0);
  ex.publish(0, batch("a", 0, 1));
  ex.close_publish(0);
  const auto meta = ex.provenance("a/0/p0/0");
  CHECK(meta.policy_id == "a");
  CHECK(meta.step == 0);
  CHECK(meta.tokenizer_id == "a-tok");
  CHECK_THROWS_AS(ex.provenance("nope"), NotFoundError);

  ex.begin_step(1);
  CHECK_THROWS_AS(ex.provenance("a/0/p0/0"), NotFoundError);

  ExperienceExchange keep(2);
  keep.begin_step(0);
  keep.publish(0, batch("a", 0, 1));
  keep.close_publish(0);
  keep.begin_step(1);
  CHECK(keep.provenance("a/0/p0/0").step == 0);
  CHECK(keep.subscribe(0, {Regime::kPrp, "b", {}}).size() == 1);
}

TEST_CASE("worker allocation") {
  const auto four = allocate({"a", "b", "c", "d"}, 4);
  std::set<std::size_t> used;
  for (const auto& [id, slot] : four.assignments) used.insert(slot);
  CHECK(used.size() == 4);

  const auto three = allocate({"a", "b", "c"}, 2);
  std::vector<std::size_t> load(2, 0);
  for (const auto& [id, slot] : three.assignments) ++load[slot];
  CHECK(load == std::vector<std::size_t>{2, 1});

  DeviceMap pinned;
  pinned.assignments = {{"a", 1}, {"b", 1}};
  CHECK(allocate({"a", "b"}, 2, pinned).assignments == pinned.assignments);
  DeviceMap partial;
  partial.assignments = {{"a", 0}};
  CHECK_THROWS_AS(allocate({"a", "b"}, 2, partial), InvalidMapError);
  CHECK_THROWS_AS(allocate({"a"}, 0), PreconditionError);
}

}  // TEST_SUITE
