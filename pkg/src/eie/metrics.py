"""Corpus text metrics (BLEU, ROUGE-L, CIDEr-D, METEOR-simplified) and Acc5/Acc14.

All text metrics share :func:`eie.vocab.tokenize` and assume exactly one
reference per hypothesis.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .data import GUIDANCE5, OBSERVATIONS
from .labeler import label_corpus
from .vocab import tokenize

BLEU_EPSILON = 1e-9
CIDER_SIGMA = 6.0
ACC5_INDEX = tuple(OBSERVATIONS.index(o) for o in GUIDANCE5)


def _check(hyps: Sequence, refs: Sequence) -> None:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not len(hyps):
        raise ValueError("empty corpus")


def _toks(xs: Sequence) -> list[list[str]]:
    return [tokenize(x) if isinstance(x, str) else list(x) for x in xs]


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------- BLEU

@dataclass
class BleuStats:
    matches: list[int]
    totals: list[int]
    hyp_len: int
    ref_len: int


def bleu_stats(hyps: Sequence, refs: Sequence, n: int = 4) -> BleuStats:
    _check(hyps, refs)
    matches, totals = [0] * n, [0] * n
    hl = rl = 0
    for h, r in zip(_toks(hyps), _toks(refs)):
        hl += len(h)
        rl += len(r)
        for k in range(1, n + 1):
            hc, rc = ngrams(h, k), ngrams(r, k)
            matches[k - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[k - 1] += max(len(h) - k + 1, 0)
    return BleuStats(matches, totals, hl, rl)


def bleu_from_stats(st: BleuStats, n: int, epsilon: float = BLEU_EPSILON) -> float:
    if st.hyp_len == 0:
        return 0.0
    logp = 0.0
    for k in range(n):
        p = st.matches[k] / st.totals[k] if st.totals[k] else 0.0
        logp += math.log(p if p > 0 else epsilon)  # zero precisions smoothed to epsilon
    bp = 1.0 if st.hyp_len > st.ref_len else math.exp(1.0 - st.ref_len / st.hyp_len)
    return bp * math.exp(logp / n)


def bleu(hyps: Sequence, refs: Sequence, n: int = 4, epsilon: float = BLEU_EPSILON) -> float:
    """Corpus BLEU-n with uniform weights and the usual brevity penalty."""
    return bleu_from_stats(bleu_stats(hyps, refs, n), n, epsilon)


# ---------------------------------------------------------------- ROUGE-L

def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hyp: Sequence[str], ref: Sequence[str], beta: float = 1.0) -> float:
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(hyps: Sequence, refs: Sequence, beta: float = 1.0) -> float:
    """Mean per-pair LCS F-measure."""
    _check(hyps, refs)
    return float(np.mean([rouge_l_pair(h, r, beta) for h, r in zip(_toks(hyps), _toks(refs))]))


# ---------------------------------------------------------------- CIDEr-D

def _cider_vec(counts: Counter, df: Counter, log_n: float, n: int):
    vec = [dict() for _ in range(n)]
    norm = [0.0] * n
    length = 0
    for g, tf in counts.items():
        k = len(g) - 1
        v = float(tf) * (log_n - math.log(max(1.0, df[g])))
        vec[k][g] = v
        norm[k] += v * v
        if k == 1:
            length += tf  # length counted in bigrams, as in the reference implementation
    return vec, [math.sqrt(x) for x in norm], length


def _all_ngrams(tokens: Sequence[str], n: int) -> Counter:
    c = Counter()
    for k in range(1, n + 1):
        c.update(ngrams(tokens, k))
    return c


def cider_pairs(hyps: Sequence, refs: Sequence, n: int = 4, sigma: float = CIDER_SIGMA) -> np.ndarray:
    """Per-pair CIDEr-D scores (already ×10)."""
    _check(hyps, refs)
    hc = [_all_ngrams(t, n) for t in _toks(hyps)]
    rc = [_all_ngrams(t, n) for t in _toks(refs)]
    if len(rc) < 2:
        warnings.warn("CIDEr with a single reference document: IDF is degenerate", RuntimeWarning, stacklevel=2)
    df = Counter()
    for c in rc:
        df.update(c.keys())
    log_n = math.log(float(len(rc)))
    scores = np.zeros(len(hc))
    for i, (h, r) in enumerate(zip(hc, rc)):
        vh, nh, lh = _cider_vec(h, df, log_n, n)
        vr, nr, lr = _cider_vec(r, df, log_n, n)
        delta = float(lh - lr)
        val = np.zeros(n)
        for k in range(n):
            for g, v in vh[k].items():
                # clipped to the reference weight (the "-D" variant)
                val[k] += min(v, vr[k].get(g, 0.0)) * vr[k].get(g, 0.0)
            if nh[k] != 0 and nr[k] != 0:
                val[k] /= nh[k] * nr[k]
            val[k] *= math.exp(-(delta ** 2) / (2 * sigma ** 2))
        scores[i] = float(np.mean(val)) * 10.0
    return scores


def cider(hyps: Sequence, refs: Sequence, n: int = 4, sigma: float = CIDER_SIGMA) -> float:
    return float(np.mean(cider_pairs(hyps, refs, n, sigma)))


# ---------------------------------------------------------------- METEOR-simplified

def min_chunk_alignment(hyp: Sequence[str], ref: Sequence[str]) -> tuple[int, int]:
    """(matches, chunks) for an exact-unigram alignment with maximal matches and, among those, fewest chunks.

    Any one-to-one alignment of equal words is allowed (crossings too). A chunk is a
    maximal run of aligned pairs that are consecutive in both strings.
    """
    hc, rc = Counter(hyp), Counter(ref)
    need = {w: min(hc[w], rc[w]) for w in hc if w in rc}
    total = sum(need.values())
    if total == 0:
        return 0, 0
    positions = {w: [j for j, x in enumerate(ref) if x == w] for w in need}
    hyp_left = [Counter(hyp[i:]) for i in range(len(hyp) + 1)]
    slot = {w: k for k, w in enumerate(need)}

    @lru_cache(maxsize=None)
    def best(i: int, prev: int, used: int, done: tuple) -> int:
        # fewest chunks for hyp[i:], given the previous hyp token aligned to ref[prev] (-1: unaligned)
        if i == len(hyp):
            return 0
        w = hyp[i]
        k = slot.get(w, -1)
        options = []
        if k < 0 or done[k] + hyp_left[i + 1][w] >= need[w]:
            options.append(best(i + 1, -1, used, done))
        if k >= 0 and done[k] < need[w]:
            nd = done[:k] + (done[k] + 1,) + done[k + 1:]
            for j in positions[w]:
                if not used >> j & 1:
                    cost = 0 if prev >= 0 and j == prev + 1 else 1
                    options.append(cost + best(i + 1, j, used | 1 << j, nd))
        return min(options)

    chunks = best(0, -1, 0, tuple(0 for _ in need))
    return total, chunks


def meteor_pair(hyp: Sequence[str], ref: Sequence[str], alpha: float = 0.9, beta: float = 3.0,
                gamma: float = 0.5) -> float:
    m, chunks = min_chunk_alignment(hyp, ref)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)  # = 10PR / (R + 9P) at alpha = 0.9
    penalty = gamma * (chunks / m) ** beta
    return fmean * (1 - penalty)


def meteor_simplified(hyps: Sequence, refs: Sequence) -> float:
    """Exact-match METEOR without stemming or synonym stages; mean over pairs."""
    _check(hyps, refs)
    return float(np.mean([meteor_pair(h, r) for h, r in zip(_toks(hyps), _toks(refs))]))


# ---------------------------------------------------------------- clinical efficacy

def _labels_check(hyp_labels, ref_labels) -> tuple[np.ndarray, np.ndarray]:
    h, r = np.asarray(hyp_labels, dtype=bool), np.asarray(ref_labels, dtype=bool)
    if h.shape != r.shape:
        raise ValueError(f"label shapes differ: {h.shape} vs {r.shape}")
    if h.ndim != 2 or h.shape[1] != len(OBSERVATIONS):
        raise ValueError(f"labels must be [N, {len(OBSERVATIONS)}], got {h.shape}")
    if h.shape[0] == 0:
        raise ValueError("empty corpus")
    return h, r


def acc5(hyp_labels, ref_labels) -> float:
    """Micro-averaged accuracy over the five most common observations."""
    h, r = _labels_check(hyp_labels, ref_labels)
    idx = list(ACC5_INDEX)
    return float((h[:, idx] == r[:, idx]).sum() / (h.shape[0] * len(idx)))


def acc14(hyp_labels, ref_labels) -> float:
    """Example-based accuracy: per-example fraction of the 14 observations correct, averaged."""
    h, r = _labels_check(hyp_labels, ref_labels)
    # mean of per-example fractions over a fixed 14 slots, as one exact division
    per_example = (h == r).sum(axis=1)
    return int(per_example.sum()) / (h.shape[0] * h.shape[1])


# ---------------------------------------------------------------- report

@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float
    acc5: float
    acc14: float
    counts: dict = field(default_factory=dict)

    KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider", "acc5", "acc14")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        width = max(len(k) for k in self.KEYS)
        lines = [f"{k:<{width}}  {getattr(self, k):.4f}" for k in self.KEYS]
        lines.append(f"{'pairs':<{width}}  {self.counts.get('corpus_size', 0)}")
        return "\n".join(lines)


def evaluate(hyps: Sequence[str], refs: Sequence[str]) -> MetricReport:
    _check(hyps, refs)
    st = bleu_stats(hyps, refs, 4)
    hl, rl = label_corpus(list(hyps)), label_corpus(list(refs))
    counts = {
        "corpus_size": len(hyps),
        "ngram_matches": st.matches,
        "ngram_totals": st.totals,
        "hyp_tokens": st.hyp_len,
        "ref_tokens": st.ref_len,
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore" if len(refs) > 1 else "default")
        c = cider(hyps, refs)
    return MetricReport(
        *(bleu_from_stats(st, n) for n in range(1, 5)),
        meteor=meteor_simplified(hyps, refs), rouge_l=rouge_l(hyps, refs), cider=c,
        acc5=acc5(hl, rl), acc14=acc14(hl, rl), counts=counts,
    )
