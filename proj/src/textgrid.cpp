// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/textgrid.hpp"

#include <algorithm>

#include "mrl/errors.hpp"

namespace mrl::textgrid {

namespace {

// Decodes one code point starting at bytes[i]; malformed input consumes a
// single byte and yields U+FFFD.
std::pair<char32_t, std::size_t> decode_one(std::string_view bytes,
                                            std::size_t i) {
  const auto b0 = static_cast<unsigned char>(bytes[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= bytes.size()) return -1;
    const auto b = static_cast<unsigned char>(bytes[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0)
      return {static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2), 3};
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0)
      return {static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) |
                                    (c2 << 6) | c3),
              4};
  }
  return {U'\uFFFD', 1};
}

// Applies each merge rule in priority order, left to right, merging every
// non-overlapping adjacent occurrence.
void apply_merges(std::vector<Token>& pieces,
                  const std::vector<std::pair<std::string, std::string>>& rules) {
  for (const auto& [left, right] : rules) {
    if (pieces.size() < 2) return;
    std::vector<Token> merged;
    merged.reserve(pieces.size());
    std::size_t i = 0;
    while (i < pieces.size()) {
      if (i + 1 < pieces.size() && pieces[i].text == left &&
          pieces[i + 1].text == right) {
        merged.push_back(
            {pieces[i].text + pieces[i + 1].text, pieces[i].start,
             pieces[i + 1].end});
        i += 2;
      } else {
        merged.push_back(std::move(pieces[i]));
        ++i;
      }
    }
    pieces = std::move(merged);
  }
}

}  // namespace

Utf8Text::Utf8Text(std::string_view text) : bytes_(text) {
  std::size_t i = 0;
  while (i < text.size()) {
    auto [cp, len] = decode_one(text, i);
    code_points_.push_back(cp);
    byte_offsets_.push_back(i);
    i += len;
  }
  byte_offsets_.push_back(text.size());
}

std::string Utf8Text::substr(std::size_t begin, std::size_t end) const {
  begin = std::min(begin, size());
  end = std::clamp(end, begin, size());
  return bytes_.substr(byte_offsets_[begin],
                       byte_offsets_[end] - byte_offsets_[begin]);
}

std::string TokenSeq::joined() const {
  std::string out;
  for (const auto& t : tokens) out += t.text;
  return out;
}

bool is_whitespace(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) ||  // CJK Unified Ideographs
         (cp >= 0x3040 && cp <= 0x309F) ||  // Hiragana
         (cp >= 0x30A0 && cp <= 0x30FF) ||  // Katakana
         (cp >= 0xAC00 && cp <= 0xD7AF);    // Hangul Syllables
}

bool contains_cjk(std::string_view text) {
  const Utf8Text decoded(text);
  for (std::size_t i = 0; i < decoded.size(); ++i)
    if (is_cjk(decoded.at(i))) return true;
  return false;
}

void validate(const TokenizerSpec& spec) {
  if (spec.id.empty()) throw ConfigError("tokenizer spec needs an id");
  if (spec.mode == TokenizerMode::kAdversarial && spec.chunk_size == 0)
    throw ConfigError("tokenizer '" + spec.id + "': chunk_size must be >= 1");
  for (const auto& [l, r] : spec.merge_rules)
    if (l.empty() || r.empty())
      throw ConfigError("tokenizer '" + spec.id + "': empty merge operand");
}

std::vector<WordSpan> word_spans(std::string_view text, ScriptMode mode) {
  const Utf8Text decoded(text);
  if (mode == ScriptMode::kAuto) {
    mode = ScriptMode::kWord;
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      if (is_cjk(decoded.at(i))) {
        mode = ScriptMode::kChar;
        break;
      }
    }
  }
  std::vector<WordSpan> spans;
  const std::size_t n = decoded.size();
  if (mode == ScriptMode::kChar) {
    for (std::size_t i = 0; i < n; ++i)
      if (!is_whitespace(decoded.at(i))) spans.push_back({i, i + 1});
    return spans;
  }
  std::size_t i = 0;
  while (i < n) {
    if (is_whitespace(decoded.at(i))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < n && !is_whitespace(decoded.at(i))) ++i;
    spans.push_back({start, i});
  }
  return spans;
}

TokenSeq tokenize(const TokenizerSpec& spec, std::string_view text) {
  const Utf8Text decoded(text);
  const std::size_t n = decoded.size();
  TokenSeq out;
  out.tokenizer_id = spec.id;
  switch (spec.mode) {
    case TokenizerMode::kCharacter:
      for (std::size_t i = 0; i < n; ++i)
        out.tokens.push_back({decoded.substr(i, i + 1), i, i + 1});
      break;
    case TokenizerMode::kAdversarial: {
      const std::size_t width = std::max<std::size_t>(spec.chunk_size, 1);
      for (std::size_t i = 0; i < n; i += width) {
        const std::size_t e = std::min(n, i + width);
        out.tokens.push_back({decoded.substr(i, e), i, e});
      }
      break;
    }
    case TokenizerMode::kWhitespaceSubword: {
      std::size_t i = 0;
      while (i < n) {
        const bool ws = is_whitespace(decoded.at(i));
        const std::size_t start = i;
        while (i < n && is_whitespace(decoded.at(i)) == ws) ++i;
        if (ws) {
          out.tokens.push_back({decoded.substr(start, i), start, i});
          continue;
        }
        std::vector<Token> pieces;
        for (std::size_t k = start; k < i; ++k)
          pieces.push_back({decoded.substr(k, k + 1), k, k + 1});
        apply_merges(pieces, spec.merge_rules);
        for (auto& p : pieces) out.tokens.push_back(std::move(p));
      }
      break;
    }
  }
  return out;
}

WordMapResult per_token_word_map(std::string_view text,
                                 const TokenizerSpec& spec, ScriptMode mode) {
  const Utf8Text decoded(text);
  WordMapResult result;
  result.tokens = tokenize(spec, text);
  const auto spans = word_spans(text, mode);

  std::vector<Token> built;
  WordMap& word_map = result.word_map;
  auto tokenize_segment = [&](std::size_t begin, std::size_t end) {
    TokenSeq seg = tokenize(spec, decoded.substr(begin, end));
    for (auto& t : seg.tokens) {
      t.start += begin;
      t.end += begin;
    }
    return seg.tokens;
  };

  std::size_t prev_end = 0;
  for (std::size_t w = 0; w < spans.size(); ++w) {
    const auto [start, end] = spans[w];
    auto seg = tokenize_segment(prev_end, end);
    if (prev_end == 0 && start > 0) {
      const std::size_t n_lead =
          std::min(tokenize(spec, decoded.substr(0, start)).size(), seg.size());
      word_map.insert(word_map.end(), n_lead, std::nullopt);
      word_map.insert(word_map.end(), seg.size() - n_lead, w);
    } else {
      word_map.insert(word_map.end(), seg.size(), w);
    }
    built.insert(built.end(), seg.begin(), seg.end());
    prev_end = end;
  }
  if (prev_end < decoded.size()) {
    auto tail = tokenize_segment(prev_end, decoded.size());
    word_map.insert(word_map.end(), tail.size(), std::nullopt);
    built.insert(built.end(), tail.begin(), tail.end());
  }

  auto& full = result.tokens.tokens;
  std::size_t common = 0;
  while (common < full.size() && common < built.size() &&
         full[common] == built[common])
    ++common;
  if (common != full.size() || common != built.size()) {
    result.truncated = true;
    full.resize(common);
    word_map.resize(common);
  }
  return result;
}

WordMap overlap_word_map(const TokenSeq& tokens,
                         const std::vector<WordSpan>& spans) {
  WordMap map;
  map.reserve(tokens.size());
  for (const auto& tok : tokens.tokens) {
    std::optional<std::size_t> best;
    std::size_t best_overlap = 0;
    for (std::size_t w = 0; w < spans.size(); ++w) {
      const std::size_t lo = std::max(tok.start, spans[w].start);
      const std::size_t hi = std::min(tok.end, spans[w].end);
      if (hi > lo && hi - lo > best_overlap) {
        best_overlap = hi - lo;
        best = w;
      }
    }
    if (!best) {
      // Delimiter-only token: attach to the following word unless at the
      // text head or tail.
      const bool at_head =
          spans.empty() || tok.end <= spans.front().start;
      if (!at_head) {
        for (std::size_t w = 0; w < spans.size(); ++w) {
          if (spans[w].start >= tok.end) {
            best = w;
            break;
          }
        }
      }
    }
    map.push_back(best);
  }
  return map;
}

std::string to_string(TokenizerMode mode) {
  switch (mode) {
    case TokenizerMode::kWhitespaceSubword: return "whitespace-subword";
    case TokenizerMode::kCharacter: return "character";
    case TokenizerMode::kAdversarial: return "adversarial";
  }
  return "?";
}

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "whitespace-subword") return TokenizerMode::kWhitespaceSubword;
  if (name == "character") return TokenizerMode::kCharacter;
  if (name == "adversarial") return TokenizerMode::kAdversarial;
  throw ConfigError("unknown tokenizer mode '" + std::string(name) + "'");
}

std::string to_string(ScriptMode mode) {
  switch (mode) {
    case ScriptMode::kAuto: return "auto";
    case ScriptMode::kWord: return "word";
    case ScriptMode::kChar: return "char";
  }
  return "?";
}

ScriptMode parse_script_mode(std::string_view name) {
  if (name == "auto") return ScriptMode::kAuto;
  if (name == "word") return ScriptMode::kWord;
  if (name == "char") return ScriptMode::kChar;
  throw ConfigError("unknown script mode '" + std::string(name) + "'");
}

}  // namespace mrl::textgrid
