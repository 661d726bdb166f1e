"""Recurrent language models: plain, latent-conditioned and mixtures."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..data import Batch
from ..rng import Rng
from ..tensor import Tensor
from .base import LatentModel, Samples, simplex_logits, uniform_param
from .nn import RnnCore


class RnnLm(LatentModel):
    """p(x_t | x_<t) = softmax(h_t W) with an Elman recurrence over x_{t-1}.

    The first step consumes the ``bos`` id. With ``cond_dim > 0`` every input
    is the concatenation [x_{t-1}; z] (the CRNNLM).
    """

    family = "rnnlm"

    def __init__(self, V: int, hidden: int = 16, emb: int = 16, cond_dim: int = 0,
                 rng: Rng | None = None, bos: int = 0, eos: int | None = None,
                 params: dict | None = None, prefix: str = "rnn"):
        super().__init__()
        if params is not None:
            self.params = params
        rng = rng or Rng(0)
        self.V, self.bos, self.eos = V, bos, eos
        self.core = RnnCore(self.params, prefix, V, emb, hidden, rng, cond_dim)
        self.W = self.params[f"{prefix}.W"] = uniform_param(rng, (hidden, V))

    @property
    def cond_dim(self) -> int:
        return self.core.cond_dim

    def _inputs(self, batch: Batch) -> np.ndarray:
        prev = np.empty_like(batch.ids)
        prev[:, 0] = self.bos
        prev[:, 1:] = batch.ids[:, :-1]
        return prev

    def token_log_probs(self, batch: Batch, cond=None) -> Tensor:
        """(B, T) log p(x_t | x_<t[, z]) with padded positions left unmasked."""
        H = self.core.states(self._inputs(batch), cond)
        lp = T.log_softmax(H @ self.W)
        B, Tn = batch.ids.shape
        return lp[np.arange(B)[:, None], np.arange(Tn)[None, :], batch.ids]

    def log_lik_rows(self, batch: Batch, z=None) -> Tensor:
        return (self.token_log_probs(batch, z) * batch.mask).sum(axis=1)

    def log_likelihood_plain(self, x) -> Tensor:
        return self.log_lik_rows(self.batch(x))[0]

    def sample(self, rng: Rng, n: int, length=None, cap: int = 20, cond=None) -> Samples:
        """Sample until ``eos`` (or exactly ``length`` tokens when ``eos`` is None)."""
        core = self.core
        with T.no_grad():
            proj = (core.emb @ core.U).data
            bias = core.b.data if cond is None else (T.as_tensor(cond) @ core.Uc + core.b).data
            Vh, W = core.Vh.data, self.W.data
        steps = cap if self.eos is not None or length is None else int(length)
        h = np.zeros((n, core.hidden))
        prev = np.full(n, self.bos)
        out = np.zeros((n, steps), dtype=np.int64)
        done = np.zeros(n, dtype=bool)
        lengths = np.full(n, steps)
        for t in range(steps):
            h = np.tanh(proj[prev] + bias + h @ Vh)
            logits = h @ W
            p = np.exp(logits - logits.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            tok = rng.categorical(p)
            out[:, t] = tok
            if self.eos is not None:
                ended = (tok == self.eos) & ~done
                lengths[ended] = t + 1
                done |= ended
                if done.all():
                    break
            prev = tok
        truncated = ~done if self.eos is not None else np.zeros(n, dtype=bool)
        sents = [out[i, : lengths[i]].copy() for i in range(n)]
        return Samples(np.zeros(n, dtype=np.int64), sents, truncated)


class MixtureRnnLm(LatentModel):
    """z ~ Cat(mu); x | z ~ RNNLM with component-specific parameters."""

    latent = "discrete"
    family = "mixture-rnn"

    def __init__(self, K: int, V: int, hidden: int = 16, emb: int = 16, rng: Rng | None = None,
                 bos: int = 0, eos: int | None = None):
        super().__init__()
        rng = rng or Rng(0)
        self.K, self.V, self.eos = K, V, eos
        self.params["mu"] = simplex_logits(rng, (K,))
        self.components = [RnnLm(V, hidden, emb, rng=rng, bos=bos, eos=eos, params=self.params,
                                 prefix=f"comp{k}") for k in range(K)]

    def log_prior_all(self) -> Tensor:
        return T.log_softmax(self.params["mu"])

    def log_lik_rows(self, batch: Batch, z=None) -> Tensor:
        return T.stack([c.log_lik_rows(batch) for c in self.components], axis=1)

    def sample(self, rng: Rng, n: int, length=None, cap: int = 20) -> Samples:
        with T.no_grad():
            mu = T.softmax(self.params["mu"]).data
        z = rng.categorical(mu, n)
        sents: list = [None] * n
        trunc = np.zeros(n, dtype=bool)
        for k in range(self.K):
            idx = np.flatnonzero(z == k)
            if idx.size == 0:
                continue
            s = self.components[k].sample(rng, idx.size, length, cap)
            for j, i in enumerate(idx):
                sents[i] = s.sentences[j]
            trunc[idx] = s.truncated
        return Samples(z, sents, trunc)
