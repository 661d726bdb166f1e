"""Bag-of-words mixtures with a flat categorical latent."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..data import Batch
from ..rng import Rng
from ..tensor import Tensor
from .base import LatentModel, Samples, simplex_logits, uniform_param


def _sample_bow(rng: Rng, z: np.ndarray, emit: np.ndarray, length) -> list[np.ndarray]:
    lengths = np.broadcast_to(np.asarray(length), z.shape)
    return [rng.categorical(emit[k], int(n)) for k, n in zip(z, lengths)]


class NaiveBayes(LatentModel):
    """z ~ Cat(mu); every token x_t ~ Cat(pi_z) independently.

    Both simplex parameters are stored as log-probability logits so the same
    object serves closed-form EM (via ``set_probs``) and gradient training.
    """

    latent = "discrete"
    family = "naive-bayes"

    def __init__(self, K: int, V: int, rng: Rng | None = None):
        super().__init__()
        self.K, self.V = K, V
        rng = rng or Rng(0)
        self.params["mu"] = simplex_logits(rng, (K,))
        self.params["pi"] = simplex_logits(rng, (K, V))

    @classmethod
    def from_probs(cls, mu, pi) -> "NaiveBayes":
        pi = np.asarray(pi, dtype=np.float64)
        m = cls(pi.shape[0], pi.shape[1])
        m.set_probs(mu, pi)
        return m

    def set_probs(self, mu, pi) -> None:
        mu, pi = np.asarray(mu, float), np.asarray(pi, float)
        for name, p in (("mu", mu), ("pi", pi)):
            if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
                raise ValueError(f"{name} rows must lie on the probability simplex")
        self.params["mu"].data = np.log(np.maximum(mu, T.LOG_CLAMP))
        self.params["pi"].data = np.log(np.maximum(pi, T.LOG_CLAMP))

    def probs(self) -> tuple[np.ndarray, np.ndarray]:
        with T.no_grad():
            return T.softmax(self.params["mu"]).data, T.softmax(self.params["pi"]).data

    def log_prior_all(self) -> Tensor:
        return T.log_softmax(self.params["mu"])

    def log_emission(self) -> Tensor:
        return T.log_softmax(self.params["pi"])

    def log_lik_rows(self, batch: Batch, z=None) -> Tensor:
        return T.as_tensor(batch.counts) @ self.log_emission().T

    def sample(self, rng: Rng, n: int, length=10, cap: int = 20) -> Samples:
        mu, pi = self.probs()
        z = rng.categorical(mu, n)
        return Samples(z, _sample_bow(rng, z, pi, length))


class CategoricalBow(LatentModel):
    """Mixture whose token distribution is softmax(z W) for one-hot z.

    On one-hot z this is naive Bayes with pi_k = softmax(W_k); the same
    formula is defined for any point s of the simplex, which is what the
    Concrete relaxation needs.
    """

    latent = "discrete"
    family = "categorical-bow"
    relaxable = True

    def __init__(self, K: int, V: int, rng: Rng | None = None, scale: float = 0.1):
        super().__init__()
        self.K, self.V = K, V
        rng = rng or Rng(0)
        self.params["mu"] = simplex_logits(rng, (K,))
        self.params["W"] = uniform_param(rng, (K, V), scale)

    def log_prior_all(self) -> Tensor:
        return T.log_softmax(self.params["mu"])

    def log_lik_rows(self, batch: Batch, z=None) -> Tensor:
        return T.as_tensor(batch.counts) @ T.log_softmax(self.params["W"]).T

    def log_lik_relaxed(self, batch: Batch, s) -> Tensor:
        """log p(x_b | s_b) with s_b on the simplex, shape (B,)."""
        lp = T.log_softmax(T.as_tensor(s) @ self.params["W"])
        return (lp * batch.counts).sum(axis=-1)

    def sample(self, rng: Rng, n: int, length=10, cap: int = 20) -> Samples:
        with T.no_grad():
            mu = T.softmax(self.params["mu"]).data
            emit = T.softmax(self.params["W"]).data
        z = rng.categorical(mu, n)
        return Samples(z, _sample_bow(rng, z, emit, length))
