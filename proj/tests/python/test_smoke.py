# Copyright 2026 The mrl Authors
# SPDX-License-Identifier: Apache-2.0

import json
import math
import os
import pathlib

import pytest

import mrl

CONFIGS = pathlib.Path(
    os.environ.get("MRL_CONFIGS", pathlib.Path(__file__).resolve().parents[2] / "configs")
)


def test_word_spans_and_tokenize():
    assert mrl.word_spans("Thinking small") == [(0, 8), (9, 14)]
    spec = mrl.TokenizerSpec("w", "whitespace-subword", [("h", "e")])
    assert mrl.tokenize(spec, "hello") == ["he", "l", "l", "o"]


def test_alignment_conserves_word_mass():
    src = mrl.TokenizerSpec("src", "whitespace-subword", [("h", "e"), ("l", "l"), ("ll", "o")])
    tgt = mrl.TokenizerSpec("tgt", "whitespace-subword", [("h", "e"), ("he", "l")])
    values = mrl.word_align_log_probs("hello", [-1.0, -0.5], src, tgt)
    assert values == pytest.approx([-0.5, -0.5, -0.5])
    rep = mrl.residual_report("hello", [-1.0, -0.5], src, tgt)
    assert abs(rep["residual"]) < 1e-12


def test_closed_forms():
    assert mrl.group_advantages([1, 0, 0, 1, 0], "mean-only") == pytest.approx(
        [0.6, -0.4, -0.4, 0.6, -0.4]
    )
    assert mrl.gate_probability(0.5, [0.5], 5) == 0.0302734375
    assert mrl.gate_probability_enumerated(0.5, [0.5], 5) == 0.0302734375
    a = mrl.anti_align(0.04)
    assert a["dot"] < 0 and abs(a["dot"] - a["polynomial"]) < 1e-12
    assert a["chi2"] == pytest.approx(11.597, abs=1e-3)
    assert mrl.sgt_cost_bound(2, 5) == pytest.approx(0.1)
    assert all(row["pass"] for row in mrl.oracle_suite())


def test_run_is_deterministic_across_workers(tmp_path):
    cfg = json.loads((CONFIGS / "complementarity_sgt.json").read_text())
    cfg["steps"] = 8
    one = mrl.run_experiment(cfg, workers=1)
    two = mrl.run_experiment(cfg, run_dir=str(tmp_path / "run"), workers=2)
    assert one["metrics_jsonl"] == two["metrics_jsonl"]
    assert len(one["metrics"]) == 8 * 2
    assert all(math.isfinite(r["entropy"]) for r in one["metrics"])
    rep = mrl.report(str(tmp_path / "run"), "channels")
    assert rep["ok"] and rep["csv"]
    assert set(mrl.REPORT_TABLES) >= {"activation", "ratios", "shuffle"}


def test_unknown_config_key_is_rejected():
    cfg = json.loads((CONFIGS / "basic.json").read_text())
    cfg["unexpected"] = 1
    with pytest.raises(ValueError):
        mrl.run_experiment(cfg)
