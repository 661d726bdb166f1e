"""Corpus, vocabulary and latent files.

Every file starts with a versioned header line. Corpus files hold one
sentence per line as whitespace-separated tokens; vocabulary files hold one
token per line, and the token on the i-th line after the header has id i.
"""

from __future__ import annotations

import os
import warnings
from typing import Sequence

import numpy as np

from ..data import Vocab

CORPUS_HEADER = "# dlvm-corpus 1"
VOCAB_HEADER = "# dlvm-vocab 1"
LATENT_HEADER = "# dlvm-latents 1"


class CorpusError(ValueError):
    pass


class EmptyLineWarning(UserWarning):
    pass


def _write(path, header: str, lines: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")


def _read(path, header: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != header:
        raise CorpusError(f"{path}: missing header {header!r}")
    return lines[1:]


def write_vocab(path, vocab: Vocab) -> None:
    for t in vocab.tokens:
        if not t or any(c.isspace() for c in t):
            raise CorpusError(f"token {t!r} is empty or contains whitespace")
    _write(path, VOCAB_HEADER, vocab.tokens)


def load_vocab(path) -> Vocab:
    return Vocab(_read(path, VOCAB_HEADER))


def write_corpus(path, sentences: Sequence, vocab: Vocab) -> None:
    _write(path, CORPUS_HEADER, [" ".join(vocab.decode(s)) for s in sentences])


def load_corpus(path, vocab: Vocab) -> list[np.ndarray]:
    """Sentences as id arrays. Empty lines are skipped with a warning."""
    out = []
    for lineno, line in enumerate(_read(path, CORPUS_HEADER), start=2):
        words = line.split()
        if not words:
            warnings.warn(f"{path}: line {lineno} is empty and was skipped", EmptyLineWarning, stacklevel=2)
            continue
        ids = []
        for w in words:
            i = vocab.index.get(w)
            if i is None:
                raise CorpusError(f"{path}: line {lineno}: unknown token {w!r}")
            ids.append(i)
        out.append(np.array(ids, dtype=np.int64))
    return out


def _fmt_latent(z) -> str:
    z = np.atleast_1d(np.asarray(z))
    if np.issubdtype(z.dtype, np.integer):
        return " ".join(str(int(v)) for v in z)
    return " ".join(format(float(v), ".17g") for v in z)


def write_latents(path, zs) -> None:
    _write(path, LATENT_HEADER, [_fmt_latent(z) for z in zs])


def load_latents(path) -> list[np.ndarray]:
    out = []
    for line in _read(path, LATENT_HEADER):
        parts = line.split()
        if all(p.lstrip("-").isdigit() for p in parts):
            out.append(np.array([int(p) for p in parts], dtype=np.int64))
        else:
            out.append(np.array([float(p) for p in parts]))
    return out


def corpus_paths(directory) -> dict[str, str]:
    return {k: os.path.join(directory, f) for k, f in
            (("corpus", "corpus.txt"), ("vocab", "vocab.txt"), ("truth", "truth.ckpt"), ("latents", "latents.txt"))}
