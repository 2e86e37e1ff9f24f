"""Special tokens, the shared tokenizer, and the word vocabulary.

Training, decoding and every text metric go through :func:`tokenize`, so a
word means the same thing everywhere in the pipeline.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation into its own tokens, split on whitespace."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class SpecialTokens:
    PAD: int = 0
    CLS: int = 1
    BOS: int = 2
    EOS: int = 3
    MASK: int = 4
    XRAY1: int = 5
    XRAY2: int = 6
    UNK: int = 7

    @property
    def names(self) -> list[str]:
        return ["[PAD]", "[CLS]", "[BOS]", "[EOS]", "[MASK]", "[Xray1]", "[Xray2]", "[UNK]"]

    @property
    def count(self) -> int:
        return len(self.names)


SPECIAL = SpecialTokens()
FIRST_WORD_ID = SPECIAL.count


class Vocabulary:
    """Bidirectional word <-> id map; special tokens hold ids ``0 .. FIRST_WORD_ID-1``."""

    def __init__(self, words: Sequence[str]):
        self.itos: list[str] = list(SPECIAL.names) + list(words)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary contains duplicate entries")

    @property
    def words(self) -> list[str]:
        return self.itos[FIRST_WORD_ID:]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi and self.stoi[word] >= FIRST_WORD_ID

    def id(self, word: str) -> int:
        return self.stoi.get(word, SPECIAL.UNK)

    def encode_words(self, text: str) -> list[int]:
        return [self.id(w) for w in tokenize(text)]

    def encode(self, text: str) -> list[int]:
        """``[CLS] [BOS] w1 .. wn [EOS]`` ids for a summary."""
        return [SPECIAL.CLS, SPECIAL.BOS, *self.encode_words(text), SPECIAL.EOS]

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == SPECIAL.EOS:
                break
            if i >= FIRST_WORD_ID or i == SPECIAL.UNK:
                out.append(self.itos[i])
        return detokenize(out)

    def word_ids(self) -> range:
        return range(FIRST_WORD_ID, len(self.itos))

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos


def build_vocab(corpus: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Words ordered by (frequency desc, word asc) after the special tokens."""
    counts: Counter[str] = Counter()
    n_docs = 0
    for text in corpus:
        n_docs += 1
        counts.update(tokenize(text))
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    words = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    return Vocabulary(words)
