// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small fixtures shared by the unit tests.

#ifndef MRL_TESTS_SUPPORT_HPP_
#define MRL_TESTS_SUPPORT_HPP_

#include <memory>
#include <string>
#include <vector>

#include "mrl/envpolicy.hpp"
#include "mrl/textgrid.hpp"

namespace mrl::testing {

inline textgrid::TokenizerSpec words_spec(std::string id = "words") {
  textgrid::TokenizerSpec s;
  s.id = std::move(id);
  s.mode = textgrid::TokenizerMode::kWhitespaceSubword;
  return s;
}

inline textgrid::TokenizerSpec chars_spec(std::string id = "chars") {
  textgrid::TokenizerSpec s;
  s.id = std::move(id);
  s.mode = textgrid::TokenizerMode::kCharacter;
  return s;
}

inline textgrid::TokenizerSpec chunk_spec(std::size_t width,
                                          std::string id = "chunk") {
  textgrid::TokenizerSpec s;
  s.id = std::move(id);
  s.mode = textgrid::TokenizerMode::kAdversarial;
  s.chunk_size = width;
  return s;
}

// One prompt "p0" whose first response is the only correct one.
inline std::shared_ptr<const env::BanditEnv> single_prompt_env(
    std::vector<std::string> responses) {
  env::PromptEntry e;
  e.id = "p0";
  e.text = "q";
  e.rewards.assign(responses.size(), 0.0);
  e.rewards[0] = 1.0;
  e.responses = std::move(responses);
  return std::make_shared<const env::BanditEnv>(std::vector<env::PromptEntry>{e});
}

inline env::PrefixTreePolicy make_policy(
    const std::string& id, const textgrid::TokenizerSpec& spec,
    std::shared_ptr<const env::BanditEnv> e, std::vector<double> logits) {
  return env::PrefixTreePolicy(id, spec, std::move(e), {std::move(logits)});
}

}  // namespace mrl::testing

#endif  // MRL_TESTS_SUPPORT_HPP_
