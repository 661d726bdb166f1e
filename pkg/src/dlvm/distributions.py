"""Categorical, diagonal Gaussian, Gumbel and Concrete distributions."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor, as_tensor

LOG_2PI = math.log(2 * math.pi)


class KLMode:
    """Which prior the relaxed (Concrete) objective uses in its KL term."""

    CATEGORICAL = "categorical"
    CONCRETE = "concrete"
    ALL = (CATEGORICAL, CONCRETE)


# ------------------------------------------------------------- categorical
class Categorical:
    """Categorical over the last axis, parameterized by unnormalized logits."""

    def __init__(self, logits):
        self.logits = as_tensor(logits)

    @classmethod
    def from_probs(cls, probs, atol: float = 1e-9) -> "Categorical":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=atol):
            raise ValueError("categorical probabilities must be non-negative and sum to 1")
        return cls(np.log(np.maximum(p, T.LOG_CLAMP)))

    @property
    def K(self) -> int:
        return self.logits.shape[-1]

    def log_probs(self) -> Tensor:
        return T.log_softmax(self.logits)

    def probs(self) -> Tensor:
        return T.softmax(self.logits)

    def log_prob(self, k) -> Tensor:
        """Log probability of outcome(s) ``k``.

        For 1-d logits ``k`` may be an int or an index array; for 2-d logits
        ``k`` holds one outcome per row.
        """
        k = np.asarray(k)
        if k.size and (k.min() < 0 or k.max() >= self.K):
            raise IndexError(f"category index out of range for K={self.K}")
        lp = self.log_probs()
        if self.logits.ndim == 1:
            return lp[k]
        return lp[np.arange(lp.shape[0]), k]

    def sample(self, rng: Rng, n: int | None = None) -> np.ndarray:
        return rng.categorical(self.probs().data, n)

    def entropy(self) -> Tensor:
        lp = self.log_probs()
        return -(T.exp(lp) * lp).sum(axis=-1)


def cat_log_prob(probs, k: int) -> float:
    """log p_k, clamped so that zero-probability outcomes give about -690."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= k < p.shape[-1]:
        raise IndexError(f"category {k} out of range for K={p.shape[-1]}")
    return float(np.log(max(p[k], T.LOG_CLAMP)))


def cat_sample(probs, rng: Rng, n: int | None = None) -> np.ndarray:
    return rng.categorical(probs, n)


def categorical_kl(q: Categorical, prior_log_probs) -> Tensor:
    """KL[q || p] summed over the last axis."""
    lq = q.log_probs()
    return (T.exp(lq) * (lq - as_tensor(prior_log_probs))).sum(axis=-1)


# ---------------------------------------------------------------- gaussian
class DiagGaussian:
    """N(mean, diag(exp(log_var))) over the last axis."""

    def __init__(self, mean, log_var):
        self.mean = as_tensor(mean)
        self.log_var = as_tensor(log_var)
        if self.mean.shape != self.log_var.shape:
            raise T.ShapeError(f"DiagGaussian: mean shape {self.mean.shape} != log_var shape {self.log_var.shape}")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def log_prob(self, z) -> Tensor:
        z = as_tensor(z)
        diff = z - self.mean
        quad = diff * diff * T.exp(-self.log_var)
        return -0.5 * (quad + self.log_var + LOG_2PI).sum(axis=-1)

    def noise(self, rng: Rng, n: int | None = None) -> np.ndarray:
        shape = self.mean.shape if n is None else (n,) + self.mean.shape
        return rng.normal(shape)

    def rsample(self, eps) -> Tensor:
        return self.mean + T.exp(0.5 * self.log_var) * as_tensor(eps)

    def kl_standard(self) -> Tensor:
        return gaussian_kl(self)


def gaussian_log_prob(z, mean, log_var) -> float:
    return DiagGaussian(mean, log_var).log_prob(z).item()


def gaussian_sample_reparam(mean, log_var, eps) -> np.ndarray:
    return DiagGaussian(mean, log_var).rsample(eps).data


def gaussian_kl(q: DiagGaussian, prior_mean=None) -> Tensor:
    """KL[q || N(prior_mean, I)] in closed form, summed over the last axis."""
    mu = q.mean if prior_mean is None else q.mean - as_tensor(prior_mean)
    return -0.5 * (q.log_var - T.exp(q.log_var) - mu * mu + 1.0).sum(axis=-1)


def gaussian_kl_standard(mean, log_var) -> float:
    return gaussian_kl(DiagGaussian(mean, log_var)).item()


def standard_normal_log_prob(z, mean=None) -> Tensor:
    z = as_tensor(z)
    diff = z if mean is None else z - as_tensor(mean)
    return -0.5 * (diff * diff + LOG_2PI).sum(axis=-1)


# ------------------------------------------------------------------ gumbel
def gumbel_transform(u) -> np.ndarray:
    """Inverse-CDF map from uniforms to standard Gumbel draws."""
    return -np.log(-np.log(np.asarray(u, dtype=np.float64)))


def gumbel_sample(rng: Rng, size=None) -> np.ndarray:
    return gumbel_transform(rng.open_uniform(size))


def gumbel_max_sample(logits, rng: Rng, n: int | None = None) -> np.ndarray:
    """Exact categorical draw(s) via argmax of perturbed logits (ties go to the lowest index)."""
    a = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("gumbel_max_sample: logits must be finite")
    shape = a.shape if n is None else (n,) + a.shape
    return np.argmax(a + gumbel_sample(rng, shape), axis=-1)


# ---------------------------------------------------------------- concrete
class Concrete:
    """Continuous relaxation of a categorical with location ``logits`` = log alpha."""

    def __init__(self, logits, tau):
        self.logits = as_tensor(logits)
        self.tau = as_tensor(tau)
        if np.any(self.tau.data <= 0):
            raise ValueError("Concrete temperature must be positive")

    @property
    def K(self) -> int:
        return self.logits.shape[-1]

    def rsample_log(self, g) -> Tensor:
        """log s for s = softmax((logits + g) / tau); differentiable in logits and tau."""
        return T.log_softmax((self.logits + as_tensor(g)) / self.tau)

    def rsample(self, g) -> Tensor:
        return T.softmax((self.logits + as_tensor(g)) / self.tau)

    def sample(self, rng: Rng, n: int | None = None) -> np.ndarray:
        shape = self.logits.shape if n is None else (n,) + self.logits.shape
        return self.rsample(gumbel_sample(rng, shape)).data

    def log_density_from_log(self, log_s) -> Tensor:
        """Log density at the simplex point exp(log_s) (interior assumed)."""
        log_s = as_tensor(log_s)
        K = self.K
        la = self.logits
        tau = self.tau
        const = math.lgamma(K) + (K - 1) * T.log(tau)
        body = (la - (tau + 1.0) * log_s).sum(axis=-1)
        norm = K * T.logsumexp(la - tau * log_s, axis=-1)
        return const + body - norm

    def log_density(self, s) -> Tensor:
        s = as_tensor(s)
        if np.any(s.data <= 0) or np.any(s.data >= 1) and self.K > 1:
            raise ValueError("Concrete density is defined only on the open simplex interior")
        if not np.allclose(s.data.sum(axis=-1), 1.0, atol=1e-9):
            raise ValueError("Concrete density point must sum to 1")
        return self.log_density_from_log(T.log(s))


def concrete_sample(logits, tau: float, rng: Rng) -> np.ndarray:
    return Concrete(logits, tau).sample(rng)


def concrete_log_density(s, logits, tau: float) -> float:
    return Concrete(logits, tau).log_density(s).item()
