// Copyright 2026 The mrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tokenizer heterogeneity layer: retokenization of peer text and word-level
// projection of log-probability traces from one tokenizer grid onto another.
//
// The projection sums source log-probabilities per word (Z_w) and spreads
// each word total evenly over the target tokens of the same word, so every
// word that has at least one target slot keeps its mass exactly. Whatever is
// lost (source tokens with no word, and words with no target slot) is
// reported as an explicit residual.

#ifndef MRL_THL_HPP_
#define MRL_THL_HPP_

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mrl/textgrid.hpp"

namespace mrl::thl {

inline constexpr double kDefaultClipBound = 50.0;
inline constexpr double kDefaultIgnoreValue = -1.0e4;

struct Trace {
  std::vector<double> log_probs;
  std::vector<bool> response_mask;
  std::string tokenizer_id;

  std::size_t size() const { return log_probs.size(); }
  // Sum over response positions.
  double masked_sum() const;
};

struct AlignedTrace {
  std::vector<double> values;
  std::vector<bool> active_mask;
  std::string source_tokenizer_id;
  std::string target_tokenizer_id;

  double active_sum() const;
};

enum class StraddleMode {
  kTruncate,   // segment-reconstruction word map, mismatches truncate
  kApportion,  // split straddling source tokens by character overlap
};

struct AlignOptions {
  double ignore_value = kDefaultIgnoreValue;
  double clip_bound = kDefaultClipBound;
  textgrid::ScriptMode script = textgrid::ScriptMode::kAuto;
  StraddleMode straddle = StraddleMode::kTruncate;
  // Control used by ratio diagnostics: rotates the target word map by one
  // word before redistribution.
  bool break_alignment = false;
};

struct ResidualReport {
  double residual = 0.0;             // L_mu - L~_mu
  double residual_magnitude = 0.0;   // |residual|
  std::size_t mismatch_count = 0;    // C_mis
  double bound = 0.0;                // B * C_mis
  double boundary_token_mass = 0.0;  // source tokens outside every word
  double uncovered_word_mass = 0.0;  // words with no target slot
  double source_total = 0.0;         // L_mu
  double aligned_total = 0.0;        // L~_mu
};

// Everything one alignment pass computes; word vectors are indexed by word.
struct AlignmentDetail {
  AlignedTrace aligned;
  std::vector<double> word_mass;            // Z_w
  std::vector<std::size_t> source_counts;   // |S_w|
  std::vector<std::size_t> target_counts;   // C_w
  std::size_t boundary_count = 0;           // |B_src|
  double boundary_mass = 0.0;
  double source_total = 0.0;
  bool identity_path = false;
};

AlignmentDetail align_detailed(const std::string& text,
                               const Trace& source,
                               const textgrid::TokenizerSpec& src_spec,
                               const textgrid::TokenizerSpec& tgt_spec,
                               const std::vector<bool>& tgt_response_mask,
                               const AlignOptions& options = {});

AlignedTrace word_align_log_probs(const std::string& text, const Trace& source,
                                  const textgrid::TokenizerSpec& src_spec,
                                  const textgrid::TokenizerSpec& tgt_spec,
                                  const std::vector<bool>& tgt_response_mask,
                                  const AlignOptions& options = {});

// Target-grid tokenization of a generated response (prompts are shared and
// never retokenized).
textgrid::TokenSeq retokenize_response(const std::string& text,
                                       const textgrid::TokenizerSpec& tgt_spec);

ResidualReport residual_report(const std::string& text, const Trace& source,
                               const textgrid::TokenizerSpec& src_spec,
                               const textgrid::TokenizerSpec& tgt_spec,
                               const std::vector<bool>& tgt_response_mask,
                               double clip_bound = kDefaultClipBound,
                               const AlignOptions& options = {});

struct RatioEnvelope {
  double rho = 0.0;
  double rho_tilde = 0.0;
  double delta = 0.0;
  bool within_envelope = false;
};

RatioEnvelope ratio_envelope_check(double numerator_logsum,
                                   double ideal_denominator_logsum,
                                   double aligned_denominator_logsum);

// Per-text alignment error against the source mass, measured on auto spans
// (words for Western text, characters for CJK).
struct AlignmentError {
  double thl_abs_error = 0.0;
  double baseline_abs_error = 0.0;
  double source_abs_mass = 0.0;
  double prefix_leak_max = 0.0;
  std::size_t target_tokens = 0;
};

AlignmentError alignment_error(const std::string& text, const Trace& source,
                               const textgrid::TokenizerSpec& src_spec,
                               const textgrid::TokenizerSpec& tgt_spec,
                               const AlignOptions& options = {});

struct AlignmentErrorRow {
  std::string bucket;
  std::size_t count = 0;
  double thl_rel_mae = 0.0;
  double baseline_rel_mae = 0.0;
  double prefix_leak_max = 0.0;
};

// Source log-probabilities for `text` on the grid given by `tokens`.
using TraceScorer = std::function<std::vector<double>(
    const std::string& text, const textgrid::TokenSeq& tokens)>;

// Buckets are inclusive upper bounds on the target token count; longer texts
// land in a trailing ">last" bucket. Empty buckets are omitted.
std::vector<AlignmentErrorRow> alignment_error_stats(
    const std::vector<std::string>& corpus,
    const textgrid::TokenizerSpec& src_spec,
    const textgrid::TokenizerSpec& tgt_spec, const TraceScorer& scorer,
    const std::vector<std::size_t>& length_buckets,
    const AlignOptions& options = {});

}  // namespace mrl::thl

#endif  // MRL_THL_HPP_
