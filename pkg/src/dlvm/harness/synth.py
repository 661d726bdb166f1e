"""Synthetic corpora drawn from a randomly parameterized ground-truth model."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..checkpoint import save_checkpoint
from ..data import Vocab
from ..models import RECURRENT, build_model
from ..models.base import LatentModel
from ..rng import Rng
from .config import Config
from .corpus import corpus_paths, write_corpus, write_latents, write_vocab

SIMPLEX_PARAMS = ("mu", "pi", "trans", "emit")
TRUNCATION_WARN = 0.10


class TruncationWarning(UserWarning):
    pass


def make_vocab(cfg: Config) -> Vocab:
    return Vocab.synthetic(cfg.V, boundary=cfg.family in RECURRENT)


def make_model(cfg: Config, rng: Rng, vocab: Vocab | None = None) -> LatentModel:
    vocab = vocab or make_vocab(cfg)
    return build_model(cfg.family, len(vocab), rng, K=cfg.K, dim=cfg.dim, hidden=cfg.hidden, emb=cfg.emb,
                       bos=vocab.bos or 0, eos=vocab.eos)


def make_truth(cfg: Config, rng: Rng, vocab: Vocab | None = None) -> LatentModel:
    """A model with Dirichlet(truth_concentration) simplex rows and weights scaled by truth_scale."""
    model = make_model(cfg, rng, vocab)
    for name, p in model.params.items():
        if name in SIMPLEX_PARAMS and cfg.family in ("naive-bayes", "hmm", "categorical-bow", "mixture-rnn"):
            alpha = np.full(p.shape[-1], cfg.truth_concentration)
            draw = rng.dirichlet(alpha, size=p.shape[:-1] or None)
            p.data = np.log(np.maximum(draw, T.LOG_CLAMP)).reshape(p.shape)
        elif name != "prior_mean":
            p.data = p.data * cfg.truth_scale
    return model


@dataclass
class SynthResult:
    sentences: list[np.ndarray]
    latents: list
    vocab: Vocab
    truth: LatentModel
    truncated_frac: float


def synth_corpus(cfg: Config, out_dir: str | None = None) -> SynthResult:
    """Draw ``n_sentences`` (z, x) pairs; identical seeds give byte-identical files."""
    root = Rng(cfg.seed)
    vocab = make_vocab(cfg)
    truth = make_truth(cfg, root.child(0), vocab)
    s = truth.sample(root.child(1), cfg.n_sentences, length=cfg.length if cfg.family not in RECURRENT else None,
                     cap=cfg.max_length)
    frac = float(np.mean(s.truncated)) if len(s.truncated) else 0.0
    if frac > TRUNCATION_WARN:
        warnings.warn(f"{frac:.1%} of sampled sentences hit the length cap {cfg.max_length}",
                      TruncationWarning, stacklevel=2)
    latents = list(s.z)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths = corpus_paths(out_dir)
        write_vocab(paths["vocab"], vocab)
        write_corpus(paths["corpus"], s.sentences, vocab)
        write_latents(paths["latents"], latents)
        save_checkpoint(paths["truth"], truth.params)
        cfg.write(out_dir)
    return SynthResult(s.sentences, latents, vocab, truth, frac)
