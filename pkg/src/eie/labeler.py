"""Rule-based observation labeler used for the clinical-efficacy scores.

A phrase table (``resources/labeler_rules.json``) maps surface phrases to the 14
observations. Phrases are matched longest-first over tokens. A mention is
affirmative unless a negation or uncertainty cue occurs within ``window`` tokens
before it, with the window cut at the nearest scope terminator ("and", ","...); negative, uncertain and unmentioned observations all count as negative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .data import OBSERVATIONS
from .vocab import tokenize


@dataclass(frozen=True)
class LabelerRules:
    version: int
    window: int
    negation: tuple[tuple[str, ...], ...]
    uncertainty: tuple[tuple[str, ...], ...]
    terminators: frozenset[str]
    phrases: tuple[tuple[tuple[str, ...], int], ...]  # (tokens, observation index), longest first

    @classmethod
    def from_dict(cls, d: dict) -> "LabelerRules":
        obs = d["observations"]
        unknown = set(obs) - set(OBSERVATIONS)
        if unknown:
            raise ValueError(f"labeler rules name unknown observations: {sorted(unknown)}")
        phrases = [(tuple(tokenize(p)), OBSERVATIONS.index(o)) for o, ps in obs.items() for p in ps]
        phrases.sort(key=lambda x: (-len(x[0]), x[0]))
        cues = lambda xs: tuple(tuple(tokenize(x)) for x in xs)
        return cls(int(d["version"]), int(d["window"]), cues(d["negation"]), cues(d["uncertainty"]),
                   frozenset(d.get("terminators", ())), tuple(phrases))


@lru_cache(maxsize=1)
def default_rules() -> LabelerRules:
    text = resources.files("eie").joinpath("resources/labeler_rules.json").read_text(encoding="utf-8")
    return LabelerRules.from_dict(json.loads(text))


def _has_cue(window: Sequence[str], cues) -> bool:
    for cue in cues:
        n = len(cue)
        if any(tuple(window[k:k + n]) == cue for k in range(len(window) - n + 1)):
            return True
    return False


def mentions(tokens: Sequence[str], rules: LabelerRules) -> list[tuple[int, int, int]]:
    """Non-overlapping ``(start, end, observation)`` matches, scanning left to right."""
    out, i = [], 0
    while i < len(tokens):
        for ph, o in rules.phrases:
            if tuple(tokens[i:i + len(ph)]) == ph:
                out.append((i, i + len(ph), o))
                i += len(ph)
                break
        else:
            i += 1
    return out


def label_extract(text: str, rules: LabelerRules | None = None) -> np.ndarray:
    """Boolean vector over the 14 observations; True only for affirmative mentions."""
    rules = rules or default_rules()
    toks = tokenize(text)
    labels = np.zeros(len(OBSERVATIONS), dtype=bool)
    for start, _, o in mentions(toks, rules):
        # "no finding" carries its own "no"; cues are only looked for before the phrase
        lo = max(0, start - rules.window)
        cut = [k for k in range(lo, start) if toks[k] in rules.terminators]
        window = toks[(cut[-1] + 1 if cut else lo):start]
        if not (_has_cue(window, rules.negation) or _has_cue(window, rules.uncertainty)):
            labels[o] = True
    return labels


def label_corpus(texts: Sequence[str], rules: LabelerRules | None = None) -> np.ndarray:
    if not len(texts):
        return np.zeros((0, len(OBSERVATIONS)), dtype=bool)
    return np.stack([label_extract(t, rules) for t in texts])
