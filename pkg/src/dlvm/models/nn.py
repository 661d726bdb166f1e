"""Building blocks: one-hidden-layer MLPs and Elman recurrences over id batches."""

from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..rng import Rng
from ..tensor import Tensor
from .base import uniform_param, zeros_param


class Mlp:
    """x -> tanh(x W1 + b1) W2 + b2, parameters registered under ``prefix``."""

    def __init__(self, params: dict, prefix: str, n_in: int, n_hidden: int, n_out: int, rng: Rng | None):
        def w(shape):
            return zeros_param(shape) if rng is None else uniform_param(rng, shape)

        self.W1 = params[f"{prefix}.W1"] = w((n_in, n_hidden))
        self.b1 = params[f"{prefix}.b1"] = zeros_param((n_hidden,))
        self.W2 = params[f"{prefix}.W2"] = w((n_hidden, n_out))
        self.b2 = params[f"{prefix}.b2"] = zeros_param((n_out,))

    def __call__(self, x) -> Tensor:
        return T.tanh(T.as_tensor(x) @ self.W1 + self.b1) @ self.W2 + self.b2


class RnnCore:
    """Elman recurrence h_t = tanh(e(x_{t-1}) U + h_{t-1} Vh + [c Uc] + b), h_0 = 0.

    ``cond`` is an optional per-row vector concatenated to every input, which
    is equivalent to an extra input block ``Uc``.
    """

    def __init__(self, params: dict, prefix: str, V: int, emb: int, hidden: int, rng: Rng,
                 cond_dim: int = 0):
        self.hidden = hidden
        self.cond_dim = cond_dim
        self.emb = params[f"{prefix}.emb"] = uniform_param(rng, (V, emb))
        self.U = params[f"{prefix}.U"] = uniform_param(rng, (emb, hidden))
        self.Vh = params[f"{prefix}.Vh"] = uniform_param(rng, (hidden, hidden))
        self.b = params[f"{prefix}.b"] = uniform_param(rng, (hidden,))
        self.Uc = None
        if cond_dim:
            self.Uc = params[f"{prefix}.Uc"] = uniform_param(rng, (cond_dim, hidden))

    def states(self, inputs: np.ndarray, cond: Tensor | None = None) -> Tensor:
        """Hidden states (B, T, hidden) for an integer input matrix (B, T)."""
        B, Tn = inputs.shape
        proj = self.emb @ self.U  # (V, hidden): row lookup after projection is cheaper
        bias = self.b
        if self.cond_dim:
            if cond is None:
                raise ValueError("conditional recurrence needs a latent vector per row")
            bias = cond @ self.Uc + self.b
        h = None
        hs = []
        for t in range(Tn):
            pre = T.embedding(proj, inputs[:, t]) + bias
            if h is not None:
                pre = pre + h @ self.Vh
            h = T.tanh(pre)
            hs.append(h)
        return T.stack(hs, axis=1)
