"""Shared plumbing for latent-variable models over sentences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..data import Batch
from ..rng import Rng
from ..tensor import Tensor


class UnsupportedModelError(TypeError):
    """Raised when an operation needs a capability the model family lacks."""


@dataclass
class Samples:
    """Ancestral draws. ``truncated[i]`` marks sentences cut at the length cap."""

    z: np.ndarray
    sentences: list[np.ndarray]
    truncated: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.truncated is None:
            self.truncated = np.zeros(len(self.sentences), dtype=bool)


def uniform_param(rng: Rng, shape, scale: float = 0.1) -> Tensor:
    return Tensor(scale * (2.0 * rng.uniform(shape) - 1.0), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def simplex_logits(rng: Rng, shape) -> Tensor:
    """Log of Dirichlet(1) draws along the last axis."""
    shape = tuple(np.atleast_1d(shape))
    p = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1] or None)
    return Tensor(np.log(np.maximum(p, T.LOG_CLAMP)), requires_grad=True)


class LatentModel:
    """Base class.

    Subclasses set ``latent`` to ``"discrete"`` (flat categorical z with ``K``
    values), ``"continuous"`` (z in R^dim) or ``"structured"`` (HMM paths), and
    keep every trainable tensor in ``self.params``.
    """

    latent = "none"
    family = "base"
    relaxable = False
    V: int

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        from ..checkpoint import restore

        restore(self.params, values)

    def batch(self, x) -> Batch:
        return Batch.of(x, self.V)

    # ---- discrete latents
    def log_prior_all(self) -> Tensor:
        raise UnsupportedModelError(f"{self.family} has no flat discrete prior")

    def log_lik_rows(self, batch: Batch, z=None) -> Tensor:
        raise NotImplementedError

    def log_joint_rows(self, batch: Batch) -> Tensor:
        """(B, K) table of log p(x_b, z=k)."""
        return self.log_lik_rows(batch) + self.log_prior_all()

    def log_joint_all(self, x) -> Tensor:
        return self.log_joint_rows(self.batch(x))[0]

    # ---- continuous latents
    def log_prior(self, z) -> Tensor:
        raise UnsupportedModelError(f"{self.family} has no continuous prior")

    def log_likelihood(self, x, z) -> Tensor:
        """log p(x | z_s) for each of S latent values, shape (S,)."""
        if self.latent == "discrete":
            z = np.atleast_1d(np.asarray(z, dtype=np.int64))
            return self.log_lik_rows(self.batch(x))[0][z]
        z = T.as_tensor(z)
        z2 = z if z.ndim == 2 else T.reshape(z, (1, -1))
        return self.log_lik_rows(self.batch(x).repeat(z2.shape[0]), z2)

    def log_joint(self, x, z) -> Tensor:
        if self.latent == "discrete":
            z = np.atleast_1d(np.asarray(z, dtype=np.int64))
            return self.log_joint_all(x)[z]
        z = T.as_tensor(z)
        z2 = z if z.ndim == 2 else T.reshape(z, (1, -1))
        return self.log_likelihood(x, z2) + self.log_prior(z2)

    def sample(self, rng: Rng, n: int, length: int = 10, cap: int = 20) -> Samples:
        raise NotImplementedError
