"""Wake-sleep training: the model learns from encoder samples, the encoder from model dreams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import Batch, minibatches
from .distributions import Categorical
from .exact import corpus_log_marginal, posterior_rows
from .models.base import LatentModel
from .optim import Optimizer, make_optimizer
from .rng import Rng
from .variational import Encoder


def _sample_q(q, rng: Rng) -> np.ndarray:
    if isinstance(q, Categorical):
        return q.sample(rng)
    return q.mean.data + np.exp(0.5 * q.log_var.data) * rng.normal(q.mean.shape)


def _log_joint_rows(model: LatentModel, batch: Batch, z) -> T.Tensor:
    if model.latent == "discrete":
        return model.log_joint_rows(batch)[np.arange(len(batch)), z]
    z = T.as_tensor(z)
    return model.log_lik_rows(batch, z) + model.log_prior(z)


def wake_step(model: LatentModel, encoder: Encoder, batch: Batch, optimizer: Optimizer, rng: Rng) -> float:
    """Ascend mean log p(x, z~) over model parameters, z~ drawn from q(z | x)."""
    with T.no_grad():
        z = _sample_q(encoder(batch), rng)
    optimizer.zero_grad()
    obj = _log_joint_rows(model, batch, z).mean()
    obj.backward()
    optimizer.step()
    return obj.item()


def sleep_step(model: LatentModel, encoder: Encoder, n: int, optimizer: Optimizer, rng: Rng,
               length=10, cap: int = 20) -> float:
    """Ascend mean log q(z^ | x^) over encoder parameters on model samples (z^, x^).

    Pairs cut at the length cap, or longer than it when the length is fixed
    from outside, are dropped.
    """
    s = model.sample(rng, n, length=length, cap=cap)
    too_long = np.array([len(x) > cap for x in s.sentences], dtype=bool)
    keep = np.flatnonzero(~(s.truncated | too_long))
    if keep.size == 0:
        return float("nan")
    batch = Batch.from_sentences([s.sentences[i] for i in keep], model.V)
    z = s.z[keep]
    optimizer.zero_grad()
    q = encoder(batch)
    lq = q.log_prob(z) if isinstance(q, Categorical) else q.log_prob(np.stack(z))
    obj = lq.mean()
    obj.backward()
    optimizer.step()
    return obj.item()


@dataclass
class WakeSleepResult:
    history: list[dict]


def mean_posterior_tv(model: LatentModel, encoder: Encoder, sentences: Sequence) -> float:
    """Average total-variation distance between q(z | x) and the exact posterior."""
    batch = Batch.from_sentences(list(sentences), model.V)
    with T.no_grad():
        q = encoder(batch).probs().data
    return float(0.5 * np.abs(q - posterior_rows(model, batch)).sum(axis=1).mean())


def wake_sleep_train(model: LatentModel, encoder: Encoder, sentences: Sequence, rng: Rng, epochs: int = 20,
                     batch_size: int = 64, lr: float = 0.01, optimizer: str = "adam", sleep_ratio: int = 1,
                     length=None, cap: int = 20,
                     callback: Callable[[dict], None] | None = None) -> WakeSleepResult:
    """Alternate wake and sleep updates (``sleep_ratio`` sleep steps per wake step).

    Each epoch record has ``loglik`` (exact corpus log-likelihood) and, for
    flat discrete models, ``tv`` against the exact posterior.
    """
    opt_m = make_optimizer(model.params, optimizer, lr)
    opt_q = make_optimizer(encoder.params, optimizer, lr)
    lengths = np.array([len(s) for s in sentences])
    draw = rng.child(1)
    history = []

    def record(epoch: int) -> None:
        rec = {"epoch": epoch}
        if model.latent in ("discrete", "structured"):
            rec["loglik"] = corpus_log_marginal(model, sentences)
        if model.latent == "discrete":
            rec["tv"] = mean_posterior_tv(model, encoder, sentences)
        history.append(rec)
        if callback:
            callback(rec)

    record(0)
    for epoch in range(1, epochs + 1):
        for idx in minibatches(len(sentences), batch_size, draw):
            batch = Batch.from_sentences([sentences[i] for i in idx], model.V)
            wake_step(model, encoder, batch, opt_m, draw)
            for _ in range(sleep_ratio):
                L = lengths[draw.integers(0, len(lengths), size=len(idx))] if length is None else length
                sleep_step(model, encoder, len(idx), opt_q, draw, L, cap)
        record(epoch)
    return WakeSleepResult(history)
