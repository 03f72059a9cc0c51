# Copyright 2026 The mrl Authors
# SPDX-License-Identifier: Apache-2.0
"""Tabular multi-policy RL toolkit: tokenizer alignment, GRPO and
experience-sharing regimes, closed-form oracles and an experiment harness."""

import json as _json

from ._mrl import (  # noqa: F401
    REPORT_TABLES,
    ConfigError,
    MrlError,
    TokenizerSpec,
    anti_align,
    diagnose_thl,
    gate_probability,
    gate_probability_enumerated,
    group_advantages,
    oracle_suite,
    report,
    residual_report,
    sgt_cost_bound,
    tokenize,
    word_align_log_probs,
    word_spans,
)
from ._mrl import run_experiment as _run_experiment


def run_experiment(config, run_dir=None, workers=None):
    """Run an experiment. `config` is a dict or a path to a JSON file."""
    if isinstance(config, dict):
        text = _json.dumps(config)
    else:
        with open(config, encoding="utf-8") as f:
            text = f.read()
    return _run_experiment(text, run_dir, workers)


__all__ = [name for name in dir() if not name.startswith("_")]
