"""Deliberately naive reference implementations used to cross-check the metrics."""

import itertools
import math
from fractions import Fraction
from functools import lru_cache


def grams(toks, n):
    return [tuple(toks[i:i + n]) for i in range(len(toks) - n + 1)]


def bleu_oracle(hyps, refs, n, eps=1e-9):
    log_sum = 0.0
    c = sum(len(h) for h in hyps)
    r = sum(len(x) for x in refs)
    for k in range(1, n + 1):
        num = den = 0
        for h, ref in zip(hyps, refs):
            hg, rg = grams(h, k), grams(ref, k)
            den += len(hg)
            for g in set(hg):
                num += min(hg.count(g), rg.count(g))
        p = num / den if den else 0.0
        log_sum += math.log(p) if p > 0 else math.log(eps)
    if c == 0:
        return 0.0
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / n)


def lcs_oracle(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))
    return go(0, 0)


def rouge_oracle(hyps, refs):
    tot = 0.0
    for h, r in zip(hyps, refs):
        l = lcs_oracle(tuple(h), tuple(r))
        if l:
            p, rc = l / len(h), l / len(r)
            tot += 2 * p * rc / (p + rc)
    return tot / len(hyps)


def cider_oracle(hyps, refs, sigma=6.0):
    n_docs = len(refs)
    def df(g):
        return sum(1 for r in refs if g in grams(r, len(g)))
    scores = []
    for h, r in zip(hyps, refs):
        per_n = []
        for k in range(1, 5):
            def vec(toks):
                return {g: grams(toks, k).count(g) * (math.log(n_docs) - math.log(max(1.0, df(g))))
                        for g in set(grams(toks, k))}
            vh, vr = vec(h), vec(r)
            dot = sum(min(vh[g], vr.get(g, 0.0)) * vr.get(g, 0.0) for g in vh)
            nh = math.sqrt(sum(v * v for v in vh.values()))
            nr = math.sqrt(sum(v * v for v in vr.values()))
            if nh and nr:
                dot /= nh * nr
            # lengths measured in bigrams, matching the community implementation
            delta = max(len(h) - 1, 0) - max(len(r) - 1, 0)
            per_n.append(dot * math.exp(-delta * delta / (2 * sigma ** 2)))
        scores.append(10 * sum(per_n) / 4)
    return sum(scores) / len(scores)


def meteor_oracle_pair(h, r):
    """Enumerate every one-to-one exact alignment of maximal size; keep the fewest chunks."""
    pairs = [(i, j) for i in range(len(h)) for j in range(len(r)) if h[i] == r[j]]
    best = None
    m_max = 0
    for size in range(min(len(h), len(r)), 0, -1):
        for combo in itertools.combinations(pairs, size):
            if len({i for i, _ in combo}) < size or len({j for _, j in combo}) < size:
                continue
            srt = sorted(combo)
            chunks = 1 + sum(1 for a, b in zip(srt, srt[1:]) if not (b[0] == a[0] + 1 and b[1] == a[1] + 1))
            best = chunks if best is None else min(best, chunks)
        if best is not None:
            m_max = size
            break
    if not m_max:
        return 0.0
    p, rc = m_max / len(h), m_max / len(r)
    fmean = 10 * p * rc / (rc + 9 * p)
    return fmean * (1 - 0.5 * (best / m_max) ** 3)


def meteor_oracle(hyps, refs):
    return sum(meteor_oracle_pair(h, r) for h, r in zip(hyps, refs)) / len(hyps)


def acc5_oracle(hl, rl, idx):
    hits = total = 0
    for h, r in zip(hl, rl):
        for k in idx:
            total += 1
            hits += int(bool(h[k]) == bool(r[k]))
    return hits / total


def acc14_oracle(hl, rl):
    per = [Fraction(sum(int(bool(a) == bool(b)) for a, b in zip(h, r)), len(h)) for h, r in zip(hl, rl)]
    return float(sum(per) / len(per))
