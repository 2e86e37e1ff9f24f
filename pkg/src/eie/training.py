"""Masking, loss-branch alternation, guidance dropout and the training loop."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import ENTITY_TERMS, Dataset, DatasetRecord
from .model import Guidance, ModelConfig, Variant, forward_full, init_params
from .optim import AdamState, adam_step
from .rng import Rng
from .tensor import Tensor
from .vocab import FIRST_WORD_ID, SPECIAL, Vocabulary, build_vocab, tokenize

log = logging.getLogger(__name__)

CSV_HEADER = ("iteration", "loss", "branch", "guidance_enabled")

# corruption codes recorded per position
KEEP_ORIGINAL, REPLACED_MASK, REPLACED_RANDOM, SELECTED_UNCHANGED = 0, 1, 2, 3


class Branch(str, Enum):
    MLM = "MLM"
    MEM = "MEM"


@dataclass
class MaskingOutcome:
    input_ids: np.ndarray
    loss_mask: np.ndarray
    targets: np.ndarray
    corruption: np.ndarray
    fallback: bool = False


@dataclass(frozen=True)
class EntityLexicon:
    """Entity words; multi-word entities are stored as their constituent words."""

    words: frozenset
    ids: frozenset

    @classmethod
    def from_vocab(cls, vocab: Vocabulary, terms: Sequence[str] = ENTITY_TERMS) -> "EntityLexicon":
        words = {w for term in terms for w in tokenize(term) if w in vocab}
        if not words:
            raise ValueError("entity lexicon is empty for this vocabulary")
        return cls(frozenset(words), frozenset(vocab.id(w) for w in words))


def maskable(ids: np.ndarray) -> np.ndarray:
    """Ordinary word positions plus ``[EOS]``; ``[CLS]``, ``[BOS]`` and ``[PAD]`` never qualify."""
    ids = np.asarray(ids)
    return (ids >= FIRST_WORD_ID) | (ids == SPECIAL.UNK) | (ids == SPECIAL.EOS)


def bert_mask(tokens, rng: Rng, mask_rate: float, vocab_size: int) -> MaskingOutcome:
    """Select each maskable position with probability ``mask_rate`` (one uniform pick if none),
    then corrupt selected positions 80% ``[MASK]`` / 10% random word / 10% unchanged."""
    ids = np.asarray(tokens, dtype=np.int64)
    cand = np.flatnonzero(maskable(ids))
    if not np.any(ids[cand] != SPECIAL.EOS):
        raise ValueError("sequence has no ordinary word positions to mask")
    chosen = rng.random(cand.size) < mask_rate
    if not chosen.any():
        chosen[rng.integers(0, cand.size)] = True
    pos = cand[chosen]
    u = rng.random(pos.size)
    to_mask, to_rand = pos[u < 0.8], pos[(u >= 0.8) & (u < 0.9)]
    inp = ids.copy()
    inp[to_mask] = SPECIAL.MASK
    inp[to_rand] = rng.integers(FIRST_WORD_ID, vocab_size, size=to_rand.size)
    corruption = np.zeros(ids.shape, dtype=np.int8)
    corruption[pos] = SELECTED_UNCHANGED
    corruption[to_mask] = REPLACED_MASK
    corruption[to_rand] = REPLACED_RANDOM
    loss_mask = np.zeros(ids.shape, dtype=bool)
    loss_mask[pos] = True
    return MaskingOutcome(inp, loss_mask, ids, corruption)


def entity_mask(tokens, lexicon: EntityLexicon, rng: Rng, mask_rate: float, vocab_size: int) -> MaskingOutcome:
    """Replace every entity word with ``[MASK]``; without entities, fall back to :func:`bert_mask`."""
    ids = np.asarray(tokens, dtype=np.int64)
    hit = np.isin(ids, list(lexicon.ids))
    if not hit.any():
        out = bert_mask(ids, rng, mask_rate, vocab_size)
        out.fallback = True
        return out
    inp = ids.copy()
    inp[hit] = SPECIAL.MASK
    corruption = np.where(hit, REPLACED_MASK, KEEP_ORIGINAL).astype(np.int8)
    return MaskingOutcome(inp, hit, ids, corruption)


def select_loss_branch(rng: Rng, alpha: float) -> Branch:
    """Draw r ~ U(0, 1); MEM when r > alpha, MLM otherwise."""
    return Branch.MEM if rng.uniform() > alpha else Branch.MLM


def guidance_enabled(rng: Rng, beta: float) -> bool:
    """One draw per iteration: guidance is zeroed when r < beta."""
    return not rng.uniform() < beta


def guidance_dropout(g_b, g_f, rng: Rng, beta: float):
    """Both guidance tokens become exact zeros when r < beta, otherwise pass through."""
    if guidance_enabled(rng, beta):
        return g_b, g_f
    zero = lambda g: T.zeros(g.shape) if isinstance(g, Tensor) else np.zeros_like(g)
    return zero(g_b), zero(g_f)


@dataclass
class TrainingConfig:
    variant: Variant = Variant.ALL
    alpha: float = 0.8
    beta: float = 0.6
    guidance: str = "soft"
    lr: float = 3e-5
    total_iterations: int = 5000
    batch_size: int = 4
    seed: int = 0
    mask_rate: float = 0.15
    checkpoint_every: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.variant = Variant(self.variant)
        Guidance.parse(self.guidance)
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.batch_size < 1 or self.total_iterations < 0:
            raise ValueError("batch_size must be >= 1 and total_iterations >= 0")

    @property
    def guidance_mode(self) -> Guidance:
        return Guidance.parse(self.guidance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class TrainStreams:
    batch: Rng
    branch: Rng
    mask: Rng
    dropout: Rng

    @classmethod
    def from_seed(cls, seed: int) -> "TrainStreams":
        root = Rng(seed)
        return cls(root.child("batch"), root.child("branch"), root.child("mask"), root.child("dropout"))

    def states(self) -> dict:
        return {k: getattr(self, k).get_state() for k in ("batch", "branch", "mask", "dropout")}

    def restore(self, states: dict) -> None:
        for k, st in states.items():
            getattr(self, k).set_state(st)


@dataclass
class StepResult:
    loss: float
    branch: Branch
    guidance_enabled: bool
    fallbacks: int = 0


def pad_batch(outcomes: Sequence[MaskingOutcome]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = max(o.input_ids.size for o in outcomes)
    inp = np.full((len(outcomes), t), SPECIAL.PAD, dtype=np.int64)
    tgt = np.full_like(inp, SPECIAL.PAD)
    lm = np.zeros(inp.shape, dtype=bool)
    for i, o in enumerate(outcomes):
        n = o.input_ids.size
        inp[i, :n], tgt[i, :n], lm[i, :n] = o.input_ids, o.targets, o.loss_mask
    return inp, tgt, lm


def encode_summary(rec: DatasetRecord, vocab: Vocabulary, model_cfg: ModelConfig) -> np.ndarray:
    ids = vocab.encode(rec.summary)
    if len(ids) - 3 > model_cfg.max_text_len:
        raise ValueError(f"record {rec.id!r}: {len(ids) - 3} words exceed max_text_len={model_cfg.max_text_len}")
    return np.asarray(ids, dtype=np.int64)


def train_step(records: Sequence[DatasetRecord], params: dict[str, Tensor], opt_state: AdamState,
               cfg: TrainingConfig, model_cfg: ModelConfig, vocab: Vocabulary, lexicon: EntityLexicon,
               streams: TrainStreams) -> StepResult:
    if not records:
        raise ValueError("empty batch")
    variant = cfg.variant
    branch = select_loss_branch(streams.branch, cfg.alpha) if variant.uses_mem else Branch.MLM
    guidance = cfg.guidance_mode if variant.uses_guidance else Guidance("off")
    enabled = variant.uses_guidance
    if variant.drops_guidance:
        enabled = guidance_enabled(streams.dropout, cfg.beta)
        if not enabled:
            guidance = Guidance("off")

    outcomes = []
    for rec in records:
        ids = encode_summary(rec, vocab, model_cfg)
        if branch is Branch.MEM:
            outcomes.append(entity_mask(ids, lexicon, streams.mask, cfg.mask_rate, len(vocab)))
        else:
            outcomes.append(bert_mask(ids, streams.mask, cfg.mask_rate, len(vocab)))
    inp, tgt, lm = pad_batch(outcomes)

    for p in params.values():
        p.grad = None
    with T.Tape() as tape:
        logits = forward_full(list(records), inp, guidance, params, model_cfg)
        loss = T.cross_entropy_from_logits(logits, tgt, lm)
    value = float(loss.data)
    if not np.isfinite(value):
        raise T.NumericError(f"non-finite loss {value} at optimizer step {opt_state.step + 1} (branch {branch.value})")
    tape.backward(loss)
    adam_step(params, {k: p.grad for k, p in params.items()}, opt_state, cfg.lr,
              cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    return StepResult(value, branch, enabled, sum(o.fallback for o in outcomes))


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    model_cfg: ModelConfig
    vocab: Vocabulary
    opt_state: AdamState
    history: list[tuple[int, float, str, bool]] = field(default_factory=list)
    fallbacks: int = 0


def default_model_config(ds: Dataset, vocab: Vocabulary, **overrides) -> ModelConfig:
    n, f = ds.feature_shape
    kw = dict(vocab_size=len(vocab), feature_dim=f, image_tokens_per_xray=n, guidance_dim=ds.guidance_dim)
    kw.update(overrides)
    return ModelConfig(**kw)


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for it, loss, branch, enabled in rows:
            w.writerow([it, repr(loss), branch, int(enabled)])


def read_loss_csv(path: str | os.PathLike) -> list[tuple[int, float, str, bool]]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        return [(int(x["iteration"]), float(x["loss"]), x["branch"], bool(int(x["guidance_enabled"]))) for x in r]


def train_loop(ds: Dataset, cfg: TrainingConfig, out_dir: str | os.PathLike | None = None,
               model_overrides: dict | None = None, resume: str | os.PathLike | None = None,
               vocab: Vocabulary | None = None, stop_at: int | None = None,
               progress: Callable[[int, StepResult], None] | None = None) -> TrainResult:
    """Train for ``cfg.total_iterations`` steps (or until ``stop_at``), checkpointing into ``out_dir``.

    Resuming from a checkpoint restores parameters, Adam moments and every RNG
    stream, so the continued run is bit-identical to an uninterrupted one.
    """
    if len(ds) < cfg.batch_size:
        raise ValueError(f"dataset has {len(ds)} records, fewer than batch_size={cfg.batch_size}")
    streams = TrainStreams.from_seed(cfg.seed)
    history: list[tuple[int, float, str, bool]] = []
    if resume is not None:
        ck = load_checkpoint(resume)
        params, model_cfg, vocab, start = ck.params, ck.model_cfg, ck.vocab, ck.step
        opt_state = ck.opt_state or AdamState()
        streams.restore(ck.rng_states)
        csv_path = Path(out_dir) / "loss.csv" if out_dir is not None else None
        if csv_path is not None and csv_path.exists():
            history = [row for row in read_loss_csv(csv_path) if row[0] <= start]
    else:
        vocab = vocab or build_vocab(r.summary for r in ds)
        model_cfg = default_model_config(ds, vocab, **(model_overrides or {}))
        params = init_params(model_cfg, Rng(cfg.seed).child("init"))
        opt_state = AdamState()
        start = 0
    lexicon = EntityLexicon.from_vocab(vocab)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def snapshot(path: Path, step: int) -> None:
        save_checkpoint(path, params, model_cfg, vocab, step, opt_state, streams.states(), cfg.to_dict())

    end = cfg.total_iterations if stop_at is None else min(stop_at, cfg.total_iterations)
    fallbacks = 0
    for it in range(start + 1, end + 1):
        idx = streams.batch.choice(len(ds), size=cfg.batch_size, replace=False)
        res = train_step([ds[int(i)] for i in idx], params, opt_state, cfg, model_cfg, vocab, lexicon, streams)
        fallbacks += res.fallbacks
        history.append((it, res.loss, res.branch.value, res.guidance_enabled))
        if progress is not None:
            progress(it, res)
        if out is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            snapshot(out / "checkpoints" / f"iter_{it:06d}", it)
            _write_csv(out / "loss.csv", history)
    if out is not None:
        snapshot(out / "checkpoint", end)
        _write_csv(out / "loss.csv", history)
    if fallbacks:
        log.info("MEM fell back to random masking for %d sequences without entity words", fallbacks)
    return TrainResult(params, model_cfg, vocab, opt_state, history, fallbacks)
