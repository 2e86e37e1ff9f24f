"""Train-then-evaluate runs used by ``sweep`` and the ordering studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .data import Dataset, split_dataset
from .decoding import DecodeConfig, generate_corpus
from .metrics import MetricReport, evaluate
from .training import TrainingConfig, train_loop

# Small model used for desk-scale comparisons between variants.
TOY_MODEL = dict(hidden_dim=64, num_heads=4, egdcm_layers=2, generator_layers=3)


@dataclass
class RunResult:
    cfg: TrainingConfig
    report: MetricReport
    final_loss: float
    hypotheses: list[dict]


def train_and_evaluate(train: Dataset, test: Dataset, cfg: TrainingConfig, model_overrides: dict | None = None,
                       decode: DecodeConfig | None = None) -> RunResult:
    """Train on ``train``; greedy-decode ``test`` with the variant's inference guidance and score it."""
    res = train_loop(train, cfg, model_overrides=model_overrides)
    guidance = cfg.variant.inference_guidance(cfg.guidance_mode)
    decode = replace(decode or DecodeConfig(), guidance=guidance)
    rows, failures = generate_corpus(test.records, res.params, res.model_cfg, res.vocab, decode)
    if failures:
        raise ValueError(f"{len(failures)} held-out records failed to decode, first: {failures[0]}")
    report = evaluate([r["hypothesis"] for r in rows], [r["reference"] for r in rows])
    tail = [h[1] for h in res.history[-50:]]
    return RunResult(cfg, report, sum(tail) / len(tail) if tail else math.nan, rows)


def holdout_run(ds: Dataset, cfg: TrainingConfig, holdout: float = 0.25, model_overrides: dict | None = None,
                decode: DecodeConfig | None = None) -> RunResult:
    train, test = split_dataset(ds, holdout)
    return train_and_evaluate(train, test, cfg, model_overrides, decode)
