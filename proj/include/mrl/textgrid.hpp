// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mock tokenizers that segment the same text in genuinely different ways,
// and the word-span coordinate system that cross-tokenizer alignment is
// anchored on. All offsets are code-point indices into the UTF-8 text.

#ifndef MRL_TEXTGRID_HPP_
#define MRL_TEXTGRID_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mrl::textgrid {

struct WordSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  friend bool operator==(const WordSpan&, const WordSpan&) = default;
};

enum class ScriptMode { kAuto, kWord, kChar };

enum class TokenizerMode {
  kWhitespaceSubword,  // greedy merges inside words, whitespace runs as tokens
  kCharacter,          // one token per code point
  kAdversarial,        // fixed-width chunks that ignore word boundaries
};

struct TokenizerSpec {
  std::string id;
  TokenizerMode mode = TokenizerMode::kWhitespaceSubword;
  std::vector<std::pair<std::string, std::string>> merge_rules;
  std::size_t chunk_size = 1;
};

struct Token {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

struct TokenSeq {
  std::vector<Token> tokens;
  std::string tokenizer_id;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  // Concatenation of token strings.
  std::string joined() const;
};

// Per-token word index; nullopt for delimiter tokens outside every word.
using WordMap = std::vector<std::optional<std::size_t>>;

struct WordMapResult {
  TokenSeq tokens;
  WordMap word_map;
  bool truncated = false;
};

// Decoded view of a UTF-8 string.
class Utf8Text {
 public:
  explicit Utf8Text(std::string_view text);

  std::size_t size() const { return code_points_.size(); }
  char32_t at(std::size_t i) const { return code_points_[i]; }
  // Substring in code-point coordinates [begin, end).
  std::string substr(std::size_t begin, std::size_t end) const;
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
  std::vector<char32_t> code_points_;
  std::vector<std::size_t> byte_offsets_;  // size() + 1 entries
};

bool is_whitespace(char32_t cp);
bool is_cjk(char32_t cp);
bool contains_cjk(std::string_view text);

void validate(const TokenizerSpec& spec);

std::vector<WordSpan> word_spans(std::string_view text,
                                 ScriptMode mode = ScriptMode::kAuto);

TokenSeq tokenize(const TokenizerSpec& spec, std::string_view text);

// Segment-by-segment reconstruction of the tokenization: each segment runs
// from the previous word end through the current word end. Leading and
// trailing delimiter tokens map to nullopt.
WordMapResult per_token_word_map(std::string_view text,
                                 const TokenizerSpec& spec,
                                 ScriptMode mode = ScriptMode::kAuto);

// Offset-based word map used when straddling tokens are apportioned:
// each token is attributed to the word it overlaps most (first on ties);
// whitespace-only tokens attach to the following word.
WordMap overlap_word_map(const TokenSeq& tokens,
                         const std::vector<WordSpan>& spans);

std::string to_string(TokenizerMode mode);
TokenizerMode parse_tokenizer_mode(std::string_view name);
std::string to_string(ScriptMode mode);
ScriptMode parse_script_mode(std::string_view name);

}  // namespace mrl::textgrid

#endif  // MRL_TEXTGRID_HPP_
