"""Exact posteriors and marginals by enumeration or dynamic programming."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import Batch, minibatches
from .models.base import LatentModel, UnsupportedModelError
from .models.hmm import Hmm, HmmRows
from .optim import make_optimizer
from .rng import Rng
from .tensor import Tensor

MAX_CONFIGS = 10**6


class EnumerationLimitError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class PosteriorTable:
    """Normalized posterior over an explicit support (ints, or paths as rows)."""

    support: np.ndarray
    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def _hmm_paths(model: Hmm, T_len: int, max_configs: int) -> np.ndarray:
    n = model.K**T_len
    if n > max_configs:
        raise EnumerationLimitError(
            f"enumeration would visit {n} configurations (K={model.K}, T={T_len}), limit is {max_configs}")
    return np.array(list(itertools.product(range(model.K), repeat=T_len)), dtype=np.int64)


def _require_enumerable(model: LatentModel) -> None:
    if model.latent not in ("discrete", "structured"):
        raise UnsupportedModelError(f"unsupported model: {model.family} has a {model.latent} latent "
                                    "and cannot be enumerated")


def log_marginal_enumeration(model: LatentModel, x, max_configs: int = MAX_CONFIGS) -> Tensor:
    """log sum_z p(x, z) by explicit summation over every latent configuration."""
    _require_enumerable(model)
    if model.latent == "discrete":
        if model.K > max_configs:
            raise EnumerationLimitError(f"enumeration would visit {model.K} configurations, limit is {max_configs}")
        return T.logsumexp(model.log_joint_all(x))
    x = np.asarray(x, dtype=np.int64)
    return T.logsumexp(model.log_joint(x, _hmm_paths(model, len(x), max_configs)))


def enumerate_posterior(model: LatentModel, x, max_configs: int = MAX_CONFIGS) -> PosteriorTable:
    _require_enumerable(model)
    with T.no_grad():
        if model.latent == "discrete":
            lj = model.log_joint_all(x).data
            support = np.arange(model.K)
        else:
            x = np.asarray(x, dtype=np.int64)
            support = _hmm_paths(model, len(x), max_configs)
            lj = model.log_joint(x, support).data
    m = lj.max()
    lz = m + np.log(np.exp(lj - m).sum())
    return PosteriorTable(support, lj - lz)


def posterior_rows(model: LatentModel, batch: Batch) -> np.ndarray:
    """(B, K) exact posteriors for a flat discrete model."""
    if model.latent != "discrete":
        raise UnsupportedModelError(f"unsupported model: {model.family} has no flat discrete latent")
    with T.no_grad():
        lj = model.log_joint_rows(batch).data
    lj = lj - lj.max(axis=1, keepdims=True)
    p = np.exp(lj)
    return p / p.sum(axis=1, keepdims=True)


def hmm_forward_rows(rows: HmmRows, batch: Batch) -> Tensor:
    """Forward algorithm in log space for a padded batch; returns (B,) log p(x)."""
    emit_t = T.transpose(rows.emit)  # (V, K)
    ids, mask = batch.ids, batch.mask
    alpha = rows.start + T.embedding(emit_t, ids[:, 0])
    for t in range(1, ids.shape[1]):
        step = T.logsumexp(T.reshape(alpha, alpha.shape + (1,)) + rows.trans, axis=1)
        new = step + T.embedding(emit_t, ids[:, t])
        m = mask[:, t: t + 1]
        alpha = new * m + alpha * (1.0 - m)
    return T.logsumexp(alpha, axis=-1)


def hmm_forward(model: Hmm | HmmRows, x) -> Tensor:
    rows = model.realize() if isinstance(model, Hmm) else model
    V = rows.emit.shape[1]
    return hmm_forward_rows(rows, Batch.of(x, V))[0]


def log_marginal(model: LatentModel, batch: Batch) -> Tensor:
    """(B,) exact log p(x_b) for any enumerable family."""
    if model.latent == "discrete":
        return T.logsumexp(model.log_joint_rows(batch), axis=-1)
    if model.latent == "structured":
        return hmm_forward_rows(model.realize(), batch)
    raise UnsupportedModelError(f"unsupported model: {model.family} has no exact marginal")


def corpus_log_marginal(model: LatentModel, sentences: Sequence, batch_size: int = 512) -> float:
    total = 0.0
    with T.no_grad():
        for i in range(0, len(sentences), batch_size):
            total += float(log_marginal(model, Batch.from_sentences(sentences[i: i + batch_size], model.V)).data.sum())
    return total


def train_direct_marginal(model: LatentModel, sentences: Sequence, rng: Rng, epochs: int = 10,
                          batch_size: int = 64, lr: float = 0.05, optimizer: str = "adam",
                          callback: Callable[[dict], None] | None = None) -> list[dict]:
    """Maximize sum_n log p(x_n) with minibatch gradient ascent.

    Returns one record per epoch (epoch 0 is the initial model) with the
    full-corpus log-likelihood.
    """
    opt = make_optimizer(model.params, optimizer, lr)
    history = [{"epoch": 0, "loglik": corpus_log_marginal(model, sentences)}]
    if callback:
        callback(history[-1])
    for epoch in range(1, epochs + 1):
        for b, idx in enumerate(minibatches(len(sentences), batch_size, rng)):
            batch = Batch.from_sentences([sentences[i] for i in idx], model.V)
            opt.zero_grad()
            obj = log_marginal(model, batch).sum()
            if not np.isfinite(obj.item()):
                raise TrainingDivergedError(f"non-finite log-likelihood at epoch {epoch}, batch {b}")
            obj.backward()
            for name, p in model.params.items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise TrainingDivergedError(f"non-finite gradient for {name} at epoch {epoch}, batch {b}")
            opt.step()
        history.append({"epoch": epoch, "loglik": corpus_log_marginal(model, sentences)})
        if callback:
            callback(history[-1])
    return history
