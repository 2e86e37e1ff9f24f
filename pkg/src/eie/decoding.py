"""Autoregressive summary generation.

Each step feeds ``[CLS] [BOS] w_1 .. w_k [MASK]`` and reads the prediction at
the ``[MASK]`` position, the same way masked words are predicted in training.
Image/guidance keys and values are computed once per record.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import Guidance, ModelConfig, encode_pair, image_memory, stack_records, text_logits
from .tensor import Tensor
from .vocab import SPECIAL, Vocabulary

log = logging.getLogger(__name__)

BANNED_IDS = (SPECIAL.PAD, SPECIAL.CLS, SPECIAL.BOS, SPECIAL.MASK, SPECIAL.XRAY1, SPECIAL.XRAY2)


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "greedy"
    beam_width: int = 1
    max_len: int | None = None
    guidance: Guidance = Guidance("soft")

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam"):
            raise ValueError(f"unknown decoding strategy {self.strategy!r}")
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")

    def length_cap(self, cfg: ModelConfig) -> int:
        """Upper bound on generated words (``[EOS]`` excluded)."""
        cap = cfg.max_text_len if self.max_len is None else self.max_len
        return min(cap, cfg.max_text_len)


@dataclass
class Generation:
    ids: list[int]
    text: str
    score: float
    finished: bool


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _step_scores(prefixes: list[list[int]], memory, params, cfg: ModelConfig) -> np.ndarray:
    ids = np.array([[SPECIAL.CLS, SPECIAL.BOS, *p, SPECIAL.MASK] for p in prefixes], dtype=np.int64)
    logits = text_logits(ids, memory, params, cfg).data[:, -1, :].astype(np.float64)
    logits[:, list(BANNED_IDS)] = -np.inf
    return _log_softmax(logits)


def record_memory(record, params: dict[str, Tensor], cfg: ModelConfig, guidance: Guidance):
    if record.features_b.shape != (cfg.image_tokens_per_xray, cfg.feature_dim):
        raise ValueError(f"record {record.id!r}: features {record.features_b.shape} do not match the checkpoint "
                         f"({cfg.image_tokens_per_xray}, {cfg.feature_dim})")
    if record.p_b.shape != (cfg.guidance_dim,):
        raise ValueError(f"record {record.id!r}: guidance width {record.p_b.size} != {cfg.guidance_dim}")
    fb, ff, pb, pf = stack_records([record])
    return image_memory(encode_pair(fb, ff, pb, pf, guidance, params, cfg), params, cfg)


def greedy_decode(memory, params, cfg: ModelConfig, max_words: int) -> tuple[list[int], float, bool]:
    words: list[int] = []
    score = 0.0
    while True:
        lp = _step_scores([words], memory, params, cfg)[0]
        tok = int(np.argmax(lp))
        score += float(lp[tok])
        if tok == SPECIAL.EOS:
            return words, score, True
        if len(words) == max_words:
            return words, score, False
        words.append(tok)


def beam_decode(memory, params, cfg: ModelConfig, max_words: int, width: int) -> tuple[list[int], float, bool]:
    alive: list[tuple[list[int], float]] = [([], 0.0)]
    done: list[tuple[list[int], float]] = []
    while alive:
        lp = _step_scores([w for w, _ in alive], memory, params, cfg)
        total = np.array([s for _, s in alive])[:, None] + lp
        flat = total.reshape(-1)
        # stable sort: ties keep the lower (beam, token) index
        order = np.argsort(-flat, kind="stable")
        nxt = []
        for j in order:
            if len(nxt) + len(done) >= width or not np.isfinite(flat[j]):
                break
            b, tok = divmod(int(j), lp.shape[1])
            words, score = alive[b][0], float(flat[j])
            if tok == SPECIAL.EOS:
                done.append((words, score))
            elif len(words) == max_words:
                continue
            else:
                nxt.append((words + [tok], score))
        if len(done) >= width:
            break
        alive = nxt
    if done:
        best = max(done, key=lambda ws: ws[1])
        return best[0], best[1], True
    best = max(alive, key=lambda ws: ws[1])
    return best[0], best[1], False


def generate(record, params: dict[str, Tensor], cfg: ModelConfig, vocab: Vocabulary,
             decode_cfg: DecodeConfig = DecodeConfig()) -> Generation:
    memory = record_memory(record, params, cfg, decode_cfg.guidance)
    cap = decode_cfg.length_cap(cfg)
    if decode_cfg.strategy == "greedy":
        words, score, finished = greedy_decode(memory, params, cfg, cap)
    else:
        words, score, finished = beam_decode(memory, params, cfg, cap, decode_cfg.beam_width)
    return Generation(words, vocab.decode(words), score, finished)


def generate_corpus(records: Iterable, params: dict[str, Tensor], cfg: ModelConfig, vocab: Vocabulary,
                    decode_cfg: DecodeConfig = DecodeConfig()) -> tuple[list[dict], list[tuple[str, str]]]:
    """Decode records in order. Returns ``(rows, failures)``; failing records are logged and skipped."""
    rows, failures = [], []
    for rec in records:
        try:
            gen = generate(rec, params, cfg, vocab, decode_cfg)
        except (ValueError, FloatingPointError) as err:
            log.error("record %s: %s", rec.id, err)
            failures.append((rec.id, str(err)))
            continue
        rows.append({"id": rec.id, "hypothesis": gen.text, "reference": rec.summary})
    return rows, failures


def write_jsonl(rows: Iterable[dict], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({"id": row["id"], "hypothesis": row["hypothesis"], "reference": row["reference"]},
                                ensure_ascii=False) + "\n")
    return path


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as err:
                    raise ValueError(f"{path} line {lineno}: malformed JSON ({err.msg})") from err
    return rows
