"""Vocabularies and padded sentence batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BOS = "<s>"
EOS = "</s>"


class Vocab:
    """Dense token ids. Sentence-boundary tokens are optional but distinct when present."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        if not tokens:
            raise ValueError("vocabulary must be non-empty")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        self.bos = self.index.get(BOS)
        self.eos = self.index.get(EOS)

    @classmethod
    def synthetic(cls, V: int, boundary: bool = False) -> "Vocab":
        """``V`` ids total; with ``boundary`` ids 0 and 1 are ``<s>`` and ``</s>``."""
        if boundary:
            if V < 3:
                raise ValueError("a vocabulary with boundary tokens needs V >= 3")
            return cls([BOS, EOS] + [f"w{i}" for i in range(V - 2)])
        return cls([f"w{i}" for i in range(V)])

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, words: Iterable[str]) -> np.ndarray:
        return np.array([self.index[w] for w in words], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[int(i)] for i in ids]


@dataclass
class Batch:
    """Right-padded id matrix plus mask, lengths and bag-of-words counts."""

    ids: np.ndarray  # (B, T) int
    mask: np.ndarray  # (B, T) float
    lengths: np.ndarray  # (B,) int
    counts: np.ndarray  # (B, V) float
    V: int

    @classmethod
    def from_sentences(cls, sentences: Sequence[Sequence[int]], V: int) -> "Batch":
        if len(sentences) == 0:
            raise ValueError("empty batch")
        lengths = np.array([len(s) for s in sentences], dtype=np.int64)
        if lengths.min() < 1:
            raise ValueError("sentences must contain at least one token")
        B, Tm = len(sentences), int(lengths.max())
        ids = np.zeros((B, Tm), dtype=np.int64)
        mask = np.zeros((B, Tm))
        for i, s in enumerate(sentences):
            ids[i, : len(s)] = s
            mask[i, : len(s)] = 1.0
        if ids.min() < 0 or ids.max() >= V:
            bad = int(np.argwhere((ids < 0) | (ids >= V))[0, 0])
            raise ValueError(f"sentence {bad} has a token id outside the vocabulary of size {V}")
        counts = np.zeros((B, V))
        rows = np.repeat(np.arange(B), lengths)
        np.add.at(counts, (rows, np.concatenate([np.asarray(s, dtype=np.int64) for s in sentences])), 1.0)
        return cls(ids, mask, lengths, counts, V)

    @classmethod
    def of(cls, x, V: int) -> "Batch":
        return x if isinstance(x, Batch) else cls.from_sentences([np.asarray(x, dtype=np.int64)], V)

    def __len__(self) -> int:
        return self.ids.shape[0]

    def repeat(self, n: int) -> "Batch":
        """Each row repeated ``n`` times consecutively (row i -> rows i*n .. i*n+n-1)."""
        return Batch(np.repeat(self.ids, n, 0), np.repeat(self.mask, n, 0),
                     np.repeat(self.lengths, n, 0), np.repeat(self.counts, n, 0), self.V)

    def tile(self, n: int) -> "Batch":
        """The whole batch stacked ``n`` times (row s*B + i is row i)."""
        return Batch(np.tile(self.ids, (n, 1)), np.tile(self.mask, (n, 1)),
                     np.tile(self.lengths, n), np.tile(self.counts, (n, 1)), self.V)

    def sentences(self) -> list[np.ndarray]:
        return [self.ids[i, : self.lengths[i]] for i in range(len(self))]


def minibatches(n: int, batch_size: int, rng=None) -> list[np.ndarray]:
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i: i + batch_size] for i in range(0, n, batch_size)]
