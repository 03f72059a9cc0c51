// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "mrl/errors.hpp"
#include "mrl/textgrid.hpp"
#include "support.hpp"

using namespace mrl;
using namespace mrl::textgrid;

namespace {

std::vector<std::string> texts(const TokenSeq& seq) {
  std::vector<std::string> out;
  for (const auto& t : seq.tokens) out.push_back(t.text);
  return out;
}

}  // namespace

TEST_SUITE("textgrid") {

TEST_CASE("word spans follow maximal non-whitespace runs") {
  CHECK(word_spans("").empty());
  CHECK(word_spans("Thinking small") ==
        std::vector<WordSpan>{{0, 8}, {9, 14}});
  CHECK(word_spans("  ab cd") == std::vector<WordSpan>{{2, 4}, {5, 7}});
  CHECK(word_spans("a\t\nb  ") == std::vector<WordSpan>{{0, 1}, {3, 4}});
}

TEST_CASE("CJK text switches auto mode to per-code-point spans") {
  const std::string text = "\xE4\xBD\xA0\xE5\xA5\xBD ok";  // two CJK chars, "ok"
  CHECK(contains_cjk(text));
  CHECK(word_spans(text) ==
        std::vector<WordSpan>{{0, 1}, {1, 2}, {3, 4}, {4, 5}});
  CHECK(word_spans("ok ok").size() == 2);
  CHECK(word_spans(text, ScriptMode::kWord).size() == 2);
}

TEST_CASE("character mode emits one token per code point") {
  const auto seq = tokenize(testing::chars_spec(), "ab");
  CHECK(texts(seq) == std::vector<std::string>{"a", "b"});
  CHECK(seq.tokenizer_id == "chars");
  CHECK(seq.tokens[1].start == 1);
  CHECK(seq.tokens[1].end == 2);
}

TEST_CASE("greedy merges apply inside words") {
  auto spec = testing::words_spec();
  spec.merge_rules = {{"h", "e"}};
  CHECK(texts(tokenize(spec, "hello")) ==
        std::vector<std::string>{"he", "l", "l", "o"});
  spec.merge_rules = {{"h", "e"}, {"l", "l"}, {"he", "ll"}};
  CHECK(texts(tokenize(spec, "hello hell")) ==
        std::vector<std::string>{"hell", "o", " ", "hell"});
}

TEST_CASE("tokenization round-trips the text") {
  const std::string text = "  the cat\tsat  on\xE4\xBD\xA0 mat ";
  for (const auto& spec : {testing::words_spec(), testing::chars_spec(),
                           testing::chunk_spec(3)}) {
    CHECK(tokenize(spec, text).joined() == text);
  }
}

TEST_CASE("adversarial chunks ignore word boundaries") {
  const auto seq = tokenize(testing::chunk_spec(3), "ab cd");
  CHECK(texts(seq) == std::vector<std::string>{"ab ", "cd"});
}

TEST_CASE("word map of a single word under character tokens") {
  const auto res = per_token_word_map("ab", testing::chars_spec());
  REQUIRE(res.word_map.size() == 2);
  CHECK(res.word_map[0] == std::optional<std::size_t>(0));
  CHECK(res.word_map[1] == std::optional<std::size_t>(0));
  CHECK_FALSE(res.truncated);
}

TEST_CASE("leading delimiters map to no word") {
  const auto res = per_token_word_map("  hi", testing::words_spec());
  REQUIRE(res.word_map.size() == 3);  // "  ", "h", "i"
  CHECK_FALSE(res.word_map[0].has_value());
  CHECK(res.word_map[1] == std::optional<std::size_t>(0));
  CHECK(res.word_map[2] == std::optional<std::size_t>(0));
  const auto empty = per_token_word_map("", testing::words_spec());
  CHECK(empty.tokens.empty());
  CHECK(empty.word_map.empty());
}

TEST_CASE("inner whitespace attaches to the following word") {
  const auto res = per_token_word_map("ab cd", testing::chars_spec());
  REQUIRE(res.word_map.size() == 5);
  CHECK(res.word_map[2] == std::optional<std::size_t>(1));
}

TEST_CASE("overlap map picks the word with most overlap") {
  const std::string text = "abc de";
  const auto seq = tokenize(testing::chunk_spec(4), text);  // "abc ", "de"
  const auto map = overlap_word_map(seq, word_spans(text));
  REQUIRE(map.size() == 2);
  CHECK(map[0] == std::optional<std::size_t>(0));
  CHECK(map[1] == std::optional<std::size_t>(1));
}

TEST_CASE("invalid specs are rejected") {
  auto spec = testing::chunk_spec(0);
  CHECK_THROWS_AS(validate(spec), ConfigError);
  CHECK_THROWS(parse_tokenizer_mode("nonsense"));
  CHECK(parse_tokenizer_mode(to_string(TokenizerMode::kCharacter)) ==
        TokenizerMode::kCharacter);
}

}  // TEST_SUITE
