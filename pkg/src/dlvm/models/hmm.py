"""Hidden Markov models with tabular or MLP-generated parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..rng import Rng
from ..tensor import Tensor
from .base import LatentModel, Samples, simplex_logits, uniform_param
from .nn import Mlp


@dataclass
class HmmRows:
    """Realized log-probability tables: start (K,), trans (K, K), emit (K, V)."""

    start: Tensor
    trans: Tensor
    emit: Tensor


class Hmm(LatentModel):
    """z_1 ~ Cat(mu_0), z_t | z_{t-1} ~ Cat(mu_{z_{t-1}}), x_t | z_t ~ Cat(pi_{z_t}).

    ``kind="tabular"`` stores the K+1 transition rows (start row first) and K
    emission rows directly; ``kind="neural"`` produces them from state
    embeddings through one MLP for transitions and one for emissions.
    """

    latent = "structured"
    family = "hmm"

    def __init__(self, K: int, V: int, kind: str = "tabular", rng: Rng | None = None,
                 emb: int = 16, hidden: int = 16):
        super().__init__()
        if kind not in ("tabular", "neural"):
            raise ValueError(f"unknown HMM kind {kind!r}")
        rng = rng or Rng(0)
        self.K, self.V, self.kind = K, V, kind
        if kind == "tabular":
            self.params["trans"] = simplex_logits(rng, (K + 1, K))
            self.params["emit"] = simplex_logits(rng, (K, V))
        else:
            self.params["trans_emb"] = uniform_param(rng, (K + 1, emb))
            self.params["emit_emb"] = uniform_param(rng, (K, emb))
            self.trans_mlp = Mlp(self.params, "trans_mlp", emb, hidden, K, rng)
            self.emit_mlp = Mlp(self.params, "emit_mlp", emb, hidden, V, rng)

    @classmethod
    def from_probs(cls, start, trans, emit) -> "Hmm":
        trans, emit = np.asarray(trans, float), np.asarray(emit, float)
        m = cls(trans.shape[0], emit.shape[1])
        rows = np.vstack([np.asarray(start, float)[None, :], trans])
        for name, p in (("transition", rows), ("emission", emit)):
            if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError(f"{name} rows must lie on the probability simplex")
        m.params["trans"].data = np.log(np.maximum(rows, T.LOG_CLAMP))
        m.params["emit"].data = np.log(np.maximum(emit, T.LOG_CLAMP))
        return m

    def realize(self) -> HmmRows:
        if self.kind == "tabular":
            trans = T.log_softmax(self.params["trans"])
            emit = T.log_softmax(self.params["emit"])
        else:
            trans = T.log_softmax(self.trans_mlp(self.params["trans_emb"]))
            emit = T.log_softmax(self.emit_mlp(self.params["emit_emb"]))
        return HmmRows(trans[0], trans[1:], emit)

    def probs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        with T.no_grad():
            r = self.realize()
            return np.exp(r.start.data), np.exp(r.trans.data), np.exp(r.emit.data)

    def log_joint(self, x, z) -> Tensor:
        """log p(x, z) for one path (T,) or several paths (S, T)."""
        x = np.asarray(x, dtype=np.int64)
        z = np.asarray(z, dtype=np.int64)
        single = z.ndim == 1
        paths = z[None, :] if single else z
        if paths.shape[1] != x.shape[0]:
            raise ValueError(f"path length {paths.shape[1]} != sentence length {x.shape[0]}")
        r = self.realize()
        out = r.start[paths[:, 0]] + r.emit[paths, x[None, :]].sum(axis=1)
        if x.shape[0] > 1:
            out = out + r.trans[paths[:, :-1], paths[:, 1:]].sum(axis=1)
        return out[0] if single else out

    def sample(self, rng: Rng, n: int, length=10, cap: int = 20) -> Samples:
        start, trans, emit = self.probs()
        lengths = np.broadcast_to(np.asarray(length), (n,))
        zs, xs = [], []
        for i in range(n):
            L = int(lengths[i])
            z = np.empty(L, dtype=np.int64)
            z[0] = rng.categorical(start)
            for t in range(1, L):
                z[t] = rng.categorical(trans[z[t - 1]])
            x = rng.categorical(emit[z])
            zs.append(z)
            xs.append(np.asarray(x, dtype=np.int64))
        return Samples(np.array(zs, dtype=object), xs)


def neural_hmm_realize(model: Hmm) -> HmmRows:
    return model.realize()
