"""Models with a continuous latent z ~ N(mu, I)."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..data import Batch
from ..distributions import standard_normal_log_prob
from ..rng import Rng
from ..tensor import Tensor
from .base import LatentModel, Samples, uniform_param, zeros_param
from .naive_bayes import _sample_bow
from .rnnlm import RnnLm


class _GaussianPrior(LatentModel):
    latent = "continuous"

    def _init_prior(self, dim: int) -> None:
        self.dim = dim
        self.params["prior_mean"] = zeros_param((dim,))

    @property
    def prior_mean(self) -> Tensor:
        return self.params["prior_mean"]

    def log_prior(self, z) -> Tensor:
        return standard_normal_log_prob(z, self.prior_mean)

    def sample_z(self, rng: Rng, n: int) -> np.ndarray:
        return self.prior_mean.data + rng.normal((n, self.dim))


class GaussianBow(_GaussianPrior):
    """z ~ N(mu, I); tokens x_t ~ softmax(z W) independently."""

    family = "gaussian-bow"

    def __init__(self, dim: int, V: int, rng: Rng | None = None):
        super().__init__()
        rng = rng or Rng(0)
        self.V = V
        self._init_prior(dim)
        self.params["W"] = uniform_param(rng, (dim, V))

    def log_lik_rows(self, batch: Batch, z=None) -> Tensor:
        lp = T.log_softmax(T.as_tensor(z) @ self.params["W"])
        return (lp * batch.counts).sum(axis=-1)

    def sample(self, rng: Rng, n: int, length=10, cap: int = 20) -> Samples:
        z = self.sample_z(rng, n)
        logits = z @ self.params["W"].data
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        return Samples(z, _sample_bow(rng, np.arange(n), p, length))


class GaussianCrnn(_GaussianPrior):
    """z ~ N(mu, I); x | z ~ RNN language model whose every input is [x_{t-1}; z]."""

    family = "gaussian-crnn"

    def __init__(self, dim: int, V: int, hidden: int = 16, emb: int = 16, rng: Rng | None = None,
                 bos: int = 0, eos: int | None = None):
        super().__init__()
        rng = rng or Rng(0)
        self.V, self.eos = V, eos
        self._init_prior(dim)
        self.decoder = RnnLm(V, hidden, emb, cond_dim=dim, rng=rng, bos=bos, eos=eos,
                             params=self.params, prefix="dec")

    def log_lik_rows(self, batch: Batch, z=None) -> Tensor:
        return self.decoder.log_lik_rows(batch, T.as_tensor(z))

    def sample(self, rng: Rng, n: int, length=None, cap: int = 20) -> Samples:
        z = self.sample_z(rng, n)
        s = self.decoder.sample(rng, n, length, cap, cond=z)
        return Samples(z, s.sentences, s.truncated)
