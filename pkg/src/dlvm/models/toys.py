"""Small continuous-latent models with real-valued observations.

They exercise estimators and flows where exact answers are known in closed
form or by one-dimensional quadrature.
"""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..distributions import LOG_2PI, standard_normal_log_prob
from ..tensor import Tensor
from .base import LatentModel


class _ToyBase(LatentModel):
    latent = "continuous"

    def __init__(self, dim: int, noise_std: float):
        super().__init__()
        self.dim = dim
        self.noise_std = float(noise_std)
        self._zero = Tensor(np.zeros(dim))

    @property
    def prior_mean(self) -> Tensor:
        return self._zero

    def log_prior(self, z) -> Tensor:
        return standard_normal_log_prob(z)

    def _normal(self, x, centre) -> Tensor:
        s2 = self.noise_std**2
        d = T.as_tensor(x) - centre
        return -0.5 * ((d * d) / s2 + math.log(s2) + LOG_2PI).sum(axis=-1)

    def log_likelihood(self, x, z) -> Tensor:
        raise NotImplementedError

    def log_joint(self, x, z) -> Tensor:
        z = T.as_tensor(z)
        z2 = z if z.ndim == 2 else T.reshape(z, (1, -1))
        return self.log_likelihood(x, z2) + self.log_prior(z2)


class GaussianObservation(_ToyBase):
    """z ~ N(0, I); x | z ~ N(z, s^2 I). Posterior and marginal are Gaussian."""

    family = "gaussian-toy"

    def log_likelihood(self, x, z) -> Tensor:
        return self._normal(x, T.as_tensor(z))

    def log_marginal(self, x) -> float:
        v = 1.0 + self.noise_std**2
        x = np.atleast_1d(np.asarray(x, float))
        return float(-0.5 * np.sum(x * x / v + math.log(v) + LOG_2PI))

    def posterior(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance per dimension."""
        s2 = self.noise_std**2
        x = np.atleast_1d(np.asarray(x, float))
        return x / (1.0 + s2), np.full_like(x, s2 / (1.0 + s2))


class SymmetricMixtureToy(_ToyBase):
    """z ~ N(0, I); x | z ~ 0.5 N(z, s^2 I) + 0.5 N(-z, s^2 I).

    The posterior is symmetric about zero and bimodal once |x| is large
    relative to the noise.
    """

    family = "mixture-toy"

    def log_likelihood(self, x, z) -> Tensor:
        z = T.as_tensor(z)
        both = T.stack([self._normal(x, z), self._normal(x, -z)], axis=-1)
        return T.logsumexp(both, axis=-1) - math.log(2.0)
