// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "mrl/thl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "mrl/errors.hpp"

namespace mrl::thl {

using textgrid::ScriptMode;
using textgrid::TokenizerSpec;
using textgrid::TokenSeq;
using textgrid::WordMap;
using textgrid::WordSpan;

double Trace::masked_sum() const {
  double s = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i)
    if (i < response_mask.size() && response_mask[i]) s += log_probs[i];
  return s;
}

double AlignedTrace::active_sum() const {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (active_mask[i]) s += values[i];
  return s;
}

namespace {

// Word map padded to the full tokenization; positions cut by truncation
// carry no word.
WordMap padded_word_map(const std::string& text, const TokenizerSpec& spec,
                        ScriptMode mode, std::size_t full_len) {
  auto r = textgrid::per_token_word_map(text, spec, mode);
  WordMap map = std::move(r.word_map);
  map.resize(full_len, std::nullopt);
  return map;
}

// Non-whitespace code points of `tok` that fall inside each span.
std::vector<std::pair<std::size_t, std::size_t>> word_overlaps(
    const textgrid::Token& tok, const std::vector<WordSpan>& spans) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t w = 0; w < spans.size(); ++w) {
    const std::size_t lo = std::max(tok.start, spans[w].start);
    const std::size_t hi = std::min(tok.end, spans[w].end);
    if (hi > lo) out.emplace_back(w, hi - lo);
  }
  return out;
}

void check_shapes(const Trace& source, std::size_t src_len,
                  const std::vector<bool>& tgt_mask, std::size_t tgt_len) {
  if (source.log_probs.size() != source.response_mask.size())
    throw InputShapeError("trace log_probs and response_mask differ in length");
  if (source.log_probs.size() != src_len)
    throw InputShapeError("trace length " +
                          std::to_string(source.log_probs.size()) +
                          " does not match source tokenization length " +
                          std::to_string(src_len));
  if (tgt_mask.size() != tgt_len)
    throw InputShapeError("target mask length " +
                          std::to_string(tgt_mask.size()) +
                          " does not match target tokenization length " +
                          std::to_string(tgt_len));
}

}  // namespace

AlignmentDetail align_detailed(const std::string& text, const Trace& source,
                               const TokenizerSpec& src_spec,
                               const TokenizerSpec& tgt_spec,
                               const std::vector<bool>& tgt_response_mask,
                               const AlignOptions& options) {
  const TokenSeq src_tokens = textgrid::tokenize(src_spec, text);
  const TokenSeq tgt_tokens = textgrid::tokenize(tgt_spec, text);
  check_shapes(source, src_tokens.size(), tgt_response_mask, tgt_tokens.size());

  const auto spans = textgrid::word_spans(text, options.script);
  const std::size_t n_words = spans.size();
  const double bound = options.clip_bound;
  auto clip = [bound](double v) { return std::clamp(v, -bound, bound); };

  AlignmentDetail d;
  d.word_mass.assign(n_words, 0.0);
  d.source_counts.assign(n_words, 0);
  d.target_counts.assign(n_words, 0);
  d.aligned.source_tokenizer_id = src_spec.id;
  d.aligned.target_tokenizer_id = tgt_spec.id;
  d.aligned.values.assign(tgt_tokens.size(), options.ignore_value);
  d.aligned.active_mask.assign(tgt_tokens.size(), false);

  const bool apportion = options.straddle == StraddleMode::kApportion;
  WordMap src_map, tgt_map;
  if (apportion) {
    src_map = textgrid::overlap_word_map(src_tokens, spans);
    tgt_map = textgrid::overlap_word_map(tgt_tokens, spans);
  } else {
    src_map = padded_word_map(text, src_spec, options.script, src_tokens.size());
    tgt_map = padded_word_map(text, tgt_spec, options.script, tgt_tokens.size());
  }
  if (options.break_alignment && n_words > 1) {
    for (auto& w : tgt_map)
      if (w) w = (*w + 1) % n_words;
  }

  // Source side: per-word mass Z_w, counts |S_w|, boundary set B_src.
  for (std::size_t i = 0; i < src_tokens.size(); ++i) {
    if (!source.response_mask[i]) continue;
    const double v = clip(source.log_probs[i]);
    d.source_total += v;
    if (apportion) {
      const auto parts = word_overlaps(src_tokens.tokens[i], spans);
      std::size_t total = 0;
      for (const auto& p : parts) total += p.second;
      if (total > 0) {
        for (const auto& [w, n] : parts) {
          d.word_mass[w] += v * static_cast<double>(n) / total;
          ++d.source_counts[w];
        }
        continue;
      }
    }
    if (src_map[i]) {
      d.word_mass[*src_map[i]] += v;
      ++d.source_counts[*src_map[i]];
    } else {
      d.boundary_mass += v;
      ++d.boundary_count;
    }
  }

  for (std::size_t t = 0; t < tgt_tokens.size(); ++t)
    if (tgt_response_mask[t] && tgt_map[t]) ++d.target_counts[*tgt_map[t]];

  // Same tokenizer on both sides: copy per-token values instead of smearing.
  d.identity_path = !apportion && !options.break_alignment &&
                    src_spec.id == tgt_spec.id &&
                    source.response_mask == tgt_response_mask;
  for (std::size_t t = 0; t < tgt_tokens.size(); ++t) {
    if (!tgt_response_mask[t] || !tgt_map[t]) continue;
    const std::size_t w = *tgt_map[t];
    if (d.target_counts[w] == 0) continue;
    d.aligned.values[t] =
        d.identity_path ? clip(source.log_probs[t])
                        : d.word_mass[w] / static_cast<double>(d.target_counts[w]);
    d.aligned.active_mask[t] = true;
  }
  return d;
}

AlignedTrace word_align_log_probs(const std::string& text, const Trace& source,
                                  const TokenizerSpec& src_spec,
                                  const TokenizerSpec& tgt_spec,
                                  const std::vector<bool>& tgt_response_mask,
                                  const AlignOptions& options) {
  return align_detailed(text, source, src_spec, tgt_spec, tgt_response_mask,
                        options)
      .aligned;
}

TokenSeq retokenize_response(const std::string& text,
                             const TokenizerSpec& tgt_spec) {
  return textgrid::tokenize(tgt_spec, text);
}

ResidualReport residual_report(const std::string& text, const Trace& source,
                               const TokenizerSpec& src_spec,
                               const TokenizerSpec& tgt_spec,
                               const std::vector<bool>& tgt_response_mask,
                               double clip_bound, const AlignOptions& options) {
  AlignOptions opts = options;
  opts.clip_bound = clip_bound;
  const AlignmentDetail d =
      align_detailed(text, source, src_spec, tgt_spec, tgt_response_mask, opts);

  ResidualReport r;
  r.boundary_token_mass = d.boundary_mass;
  r.mismatch_count = d.boundary_count;
  for (std::size_t w = 0; w < d.word_mass.size(); ++w) {
    if (d.target_counts[w] > 0) continue;
    r.uncovered_word_mass += d.word_mass[w];
    r.mismatch_count += d.source_counts[w];
  }
  r.residual = r.boundary_token_mass + r.uncovered_word_mass;
  r.residual_magnitude = std::abs(r.residual);
  r.bound = clip_bound * static_cast<double>(r.mismatch_count);
  r.source_total = d.source_total;
  r.aligned_total = d.aligned.active_sum();
  return r;
}

RatioEnvelope ratio_envelope_check(double numerator_logsum,
                                   double ideal_denominator_logsum,
                                   double aligned_denominator_logsum) {
  if (!std::isfinite(numerator_logsum) ||
      !std::isfinite(ideal_denominator_logsum) ||
      !std::isfinite(aligned_denominator_logsum))
    throw NumericError("ratio envelope needs finite log sums");
  RatioEnvelope e;
  const double log_rho = numerator_logsum - ideal_denominator_logsum;
  const double log_rho_tilde = numerator_logsum - aligned_denominator_logsum;
  e.rho = std::exp(log_rho);
  e.rho_tilde = std::exp(log_rho_tilde);
  e.delta = std::abs(ideal_denominator_logsum - aligned_denominator_logsum);
  const double slack = 1e-12 * std::max(1.0, std::abs(log_rho));
  e.within_envelope = std::abs(log_rho_tilde - log_rho) <= e.delta + slack;
  return e;
}

namespace {

// Unit index per token: the unit holding the token's first non-whitespace
// code point; whitespace-only tokens go to the next unit (none at the tail).
std::vector<std::optional<std::size_t>> unit_of_tokens(
    const TokenSeq& tokens, const std::vector<WordSpan>& units,
    const textgrid::Utf8Text& decoded) {
  std::vector<std::optional<std::size_t>> out;
  out.reserve(tokens.size());
  std::size_t u = 0;
  for (const auto& tok : tokens.tokens) {
    std::optional<std::size_t> pos;
    for (std::size_t c = tok.start; c < tok.end; ++c) {
      if (!textgrid::is_whitespace(decoded.at(c))) {
        pos = c;
        break;
      }
    }
    const std::size_t probe = pos ? *pos : tok.end;
    while (u < units.size() && units[u].end <= probe) ++u;
    if (u < units.size() && (!pos || units[u].start <= *pos))
      out.emplace_back(u);
    else
      out.emplace_back(std::nullopt);
  }
  return out;
}

}  // namespace

AlignmentError alignment_error(const std::string& text, const Trace& source,
                               const TokenizerSpec& src_spec,
                               const TokenizerSpec& tgt_spec,
                               const AlignOptions& options) {
  const TokenSeq src_tokens = textgrid::tokenize(src_spec, text);
  const TokenSeq tgt_tokens = textgrid::tokenize(tgt_spec, text);
  const std::vector<bool> tgt_mask(tgt_tokens.size(), true);
  const AlignedTrace aligned = word_align_log_probs(
      text, source, src_spec, tgt_spec, tgt_mask, options);

  const textgrid::Utf8Text decoded(text);
  const auto units = textgrid::word_spans(text, ScriptMode::kAuto);
  const auto src_units = unit_of_tokens(src_tokens, units, decoded);
  const auto tgt_units = unit_of_tokens(tgt_tokens, units, decoded);

  const std::size_t n = units.size();
  std::vector<double> s(n, 0.0), a(n, 0.0), b(n, 0.0);
  auto clip = [&](double v) {
    return std::clamp(v, -options.clip_bound, options.clip_bound);
  };
  for (std::size_t i = 0; i < src_tokens.size(); ++i)
    if (source.response_mask[i] && src_units[i])
      s[*src_units[i]] += clip(source.log_probs[i]);
  for (std::size_t t = 0; t < tgt_tokens.size(); ++t) {
    if (!tgt_units[t]) continue;
    if (aligned.active_mask[t]) a[*tgt_units[t]] += aligned.values[t];
    // Position-copy baseline: truncate or pad with zero.
    if (t < src_tokens.size() && source.response_mask[t])
      b[*tgt_units[t]] += clip(source.log_probs[t]);
  }

  AlignmentError e;
  e.target_tokens = tgt_tokens.size();
  double prefix = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    e.thl_abs_error += std::abs(s[u] - a[u]);
    e.baseline_abs_error += std::abs(s[u] - b[u]);
    e.source_abs_mass += std::abs(s[u]);
    prefix += s[u] - a[u];
    e.prefix_leak_max = std::max(e.prefix_leak_max, std::abs(prefix));
  }
  return e;
}

std::vector<AlignmentErrorRow> alignment_error_stats(
    const std::vector<std::string>& corpus, const TokenizerSpec& src_spec,
    const TokenizerSpec& tgt_spec, const TraceScorer& scorer,
    const std::vector<std::size_t>& length_buckets,
    const AlignOptions& options) {
  std::vector<std::size_t> edges = length_buckets;
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  struct Acc {
    std::size_t count = 0;
    double thl = 0.0, base = 0.0, mass = 0.0, leak = 0.0;
  };
  std::vector<Acc> acc(edges.size() + 1);

  for (const auto& text : corpus) {
    const TokenSeq src_tokens = textgrid::tokenize(src_spec, text);
    Trace trace;
    trace.tokenizer_id = src_spec.id;
    trace.log_probs = scorer(text, src_tokens);
    trace.response_mask.assign(trace.log_probs.size(), true);
    const AlignmentError e =
        alignment_error(text, trace, src_spec, tgt_spec, options);
    const std::size_t k = static_cast<std::size_t>(
        std::lower_bound(edges.begin(), edges.end(), e.target_tokens) -
        edges.begin());
    Acc& a = acc[k];
    ++a.count;
    a.thl += e.thl_abs_error;
    a.base += e.baseline_abs_error;
    a.mass += e.source_abs_mass;
    a.leak = std::max(a.leak, e.prefix_leak_max);
  }

  std::vector<AlignmentErrorRow> rows;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    if (acc[k].count == 0) continue;
    AlignmentErrorRow row;
    row.bucket = k < edges.size() ? "<=" + std::to_string(edges[k])
                                  : (edges.empty() ? std::string("all")
                                                   : ">" + std::to_string(edges.back()));
    row.count = acc[k].count;
    const double denom = acc[k].mass > 0.0 ? acc[k].mass : 1.0;
    row.thl_rel_mae = acc[k].thl / denom;
    row.baseline_rel_mae = acc[k].base / denom;
    row.prefix_leak_max = acc[k].leak;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mrl::thl
