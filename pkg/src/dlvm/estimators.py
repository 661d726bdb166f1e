"""ELBO gradient estimators and importance-weighted bounds.

Variational parameters may be supplied either as a dict of local tensors
(``{"mean", "log_var"}`` or ``{"logits"}``) or as an :class:`Encoder`. With a
local dict the estimators also return per-sample gradients, computed in one
backward pass by giving every sample its own copy of the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Batch
from .distributions import Categorical, Concrete, DiagGaussian, KLMode, categorical_kl, gaussian_kl, gumbel_sample
from .models.base import LatentModel, UnsupportedModelError
from .rng import Rng
from .tensor import Tensor
from .variational import Encoder, encoder_forward, q_from_params


@dataclass
class GradEstimate:
    grads: dict[str, np.ndarray]
    tag: str
    n_samples: int
    seed: int | None = None
    per_sample: dict[str, np.ndarray] | None = None

    def stderr(self, name: str) -> np.ndarray:
        if self.per_sample is None:
            raise ValueError("per-sample gradients were not recorded")
        ps = self.per_sample[name]
        return ps.std(axis=0, ddof=1) / math.sqrt(ps.shape[0])

    def variance(self, name: str) -> np.ndarray:
        if self.per_sample is None:
            raise ValueError("per-sample gradients were not recorded")
        return self.per_sample[name].var(axis=0, ddof=1)

    def flat(self) -> np.ndarray:
        return np.concatenate([g.reshape(-1) for g in self.grads.values()])


@dataclass
class IwaeSample:
    log_weights: np.ndarray
    z: np.ndarray
    normalized: np.ndarray = field(init=False)

    def __post_init__(self):
        lw = self.log_weights - self.log_weights.max()
        w = np.exp(lw)
        self.normalized = w / w.sum()


class _Source:
    """Resolves local parameters or an encoder into a q builder plus leaves."""

    def __init__(self, q_source, x, S: int, model: LatentModel):
        self.local = not isinstance(q_source, Encoder)
        self.S = S
        if self.local:
            self.base = q_source
            self.leaves = {k: Tensor(np.broadcast_to(v.data, (S,) + v.shape), requires_grad=True)
                           for k, v in q_source.items()}
            self.q = q_from_params(self.leaves)
        else:
            self.base = q_source.params
            self.leaves = q_source.params
            for p in self.leaves.values():
                p.grad = None
            self.q = encoder_forward(q_source, x)
        self.model = model
        for p in model.params.values():
            p.grad = None

    def finish(self, tag: str, seed) -> GradEstimate:
        grads, per = {}, None
        if self.local:
            per = {}
            for k, leaf in self.leaves.items():
                g = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
                per[k] = g * self.S
                grads[k] = per[k].mean(axis=0)
        else:
            for k, p in self.leaves.items():
                grads[f"encoder.{k}"] = p.grad.copy() if p.grad is not None else np.zeros(p.shape)
        for k, p in self.model.params.items():
            grads[f"model.{k}"] = p.grad.copy() if p.grad is not None else np.zeros(p.shape)
        return GradEstimate(grads, tag, self.S, seed, per)


def _row_q(q, S: int):
    """Broadcast an unbatched q so that its leading axis matches S samples."""
    if isinstance(q, DiagGaussian):
        if q.mean.ndim == 1:
            return DiagGaussian(T.reshape(q.mean, (1, -1)), T.reshape(q.log_var, (1, -1)))
        return q
    if q.logits.ndim == 1:
        return Categorical(T.reshape(q.logits, (1, -1)))
    return q


def score_function_grad(model: LatentModel, q_source, x, n_samples: int, rng: Rng) -> GradEstimate:
    """E_q[(log p(x, z) - log q(z)) grad log q(z)] for q; E_q[grad log p(x, z)] for the model."""
    src = _Source(q_source, x, n_samples, model)
    q = _row_q(src.q, n_samples)
    if isinstance(q, DiagGaussian):
        z = q.mean.data + np.exp(0.5 * q.log_var.data) * rng.normal((n_samples, q.dim))
        lq = q.log_prob(z)
    else:
        z = Categorical(q.logits.data[0]).sample(rng, n_samples)
        rows = np.arange(n_samples) if q.logits.shape[0] == n_samples else np.zeros(n_samples, dtype=np.int64)
        lq = q.log_probs()[rows, z]
    lj = model.log_joint(x, z)
    reward = lj.data - lq.data
    (reward * lq + lj).mean().backward()
    return src.finish("score", rng.seed)


def reparam_grad(model: LatentModel, q_source, x, n_samples: int, rng: Rng, kl_mode: str = "analytic") -> GradEstimate:
    """Pathwise gradient through z = mean + sigma * eps plus the closed-form KL gradient."""
    src = _Source(q_source, x, n_samples, model)
    q = src.q
    if not isinstance(q, DiagGaussian):
        raise UnsupportedModelError("reparameterization needs a Gaussian family; "
                                    "use score_function_grad or concrete_relaxed_grad for categorical latents")
    q = _row_q(q, n_samples)
    z = q.rsample(rng.normal((n_samples, q.dim)))
    recon = model.log_likelihood(x, z)
    if kl_mode == "analytic":
        kl = gaussian_kl(q, model.prior_mean)
    else:
        kl = q.log_prob(z) - model.log_prior(z)
    (recon - kl).mean().backward()
    return src.finish("reparam", rng.seed)


def _relaxed_prior(model: LatentModel, tau: float) -> Concrete:
    return Concrete(model.log_prior_all(), tau)


def concrete_relaxed_grad(model: LatentModel, q_source, x, tau: float, n_samples: int, rng: Rng,
                          kl_mode: str = KLMode.CATEGORICAL) -> GradEstimate:
    """Gradient of the Concrete-relaxed ELBO.

    Reconstruction uses s = softmax((log alpha + g) / tau) in place of the
    one-hot z. ``kl_mode="categorical"`` keeps the exact categorical KL;
    ``"concrete"`` uses the sampled log ratio of Concrete densities.
    """
    if not model.relaxable:
        raise UnsupportedModelError(f"unsupported model: {model.family} indexes its parameters by z "
                                    "and has no relaxation on the simplex")
    if kl_mode not in KLMode.ALL:
        raise ValueError(f"unknown KL mode {kl_mode!r}")
    src = _Source(q_source, x, n_samples, model)
    q = _row_q(src.q, n_samples)
    if not isinstance(q, Categorical):
        raise UnsupportedModelError("the Concrete relaxation needs a categorical family")
    lq = q.log_probs()
    g = gumbel_sample(rng, (n_samples, q.K))
    log_s = Concrete(lq, tau).rsample_log(g)
    batch = Batch.of(x, model.V).repeat(n_samples)
    recon = model.log_lik_relaxed(batch, T.exp(log_s))
    if kl_mode == KLMode.CATEGORICAL:
        kl = categorical_kl(q, model.log_prior_all())
    else:
        kl = Concrete(lq, tau).log_density_from_log(log_s) - _relaxed_prior(model, tau).log_density_from_log(log_s)
    (recon - kl).mean().backward()
    return src.finish("concrete", rng.seed)


def exact_elbo_grad(model: LatentModel, q_source, x) -> GradEstimate:
    """Exact ELBO gradient for a categorical family, by enumerating z."""
    src = _Source(q_source, x, 1, model)
    q = Categorical(src.q.logits[0]) if src.local else src.q
    if not isinstance(q, Categorical):
        raise UnsupportedModelError("exact enumeration needs a categorical family")
    prior = model.log_prior_all()
    lik = model.log_joint_all(x) - prior
    ((q.probs() * lik).sum() - categorical_kl(q, prior)).backward()
    return src.finish("exact", None)


# ------------------------------------------------------------------- IWAE
def iwae_log_weights(model: LatentModel, q, x, K: int, rng: Rng | None = None, noise=None) -> tuple[Tensor, np.ndarray]:
    """(K,) log p(x, z_k) - log q(z_k); Gaussian draws are reparameterized."""
    if isinstance(q, DiagGaussian):
        eps = rng.normal((K, q.dim)) if noise is None else np.asarray(noise, float).reshape(K, q.dim)
        z = q.rsample(eps)
        return model.log_joint(x, z) - q.log_prob(z), z.data
    z = q.sample(rng, K) if noise is None else np.asarray(noise, dtype=np.int64)
    return model.log_joint(x, z) - q.log_prob(z), z


def iwae_objective(model: LatentModel, q, x, K: int, rng: Rng | None = None, noise=None) -> tuple[Tensor, np.ndarray, np.ndarray]:
    lw, z = iwae_log_weights(model, q, x, K, rng, noise)
    return T.logsumexp(lw) - math.log(K), lw.data, z


def iwae_bound(model: LatentModel, q, x, K: int, rng: Rng | None = None, noise=None) -> tuple[float, IwaeSample]:
    """log (1/K) sum_k w_k with w_k = p(x, z_k) / q(z_k)."""
    if K < 1:
        raise ValueError("IWAE needs K >= 1")
    with T.no_grad():
        val, lw, z = iwae_objective(model, q, x, K, rng, noise)
    return val.item(), IwaeSample(lw, z)


def iwae_grads(model: LatentModel, q_source, x, K: int, rng: Rng) -> tuple[GradEstimate, GradEstimate]:
    """Model gradient sum_k w~_k grad log p(x, z_k) and the pathwise q gradient of log I_K."""
    local = not isinstance(q_source, Encoder)
    leaves = q_source if local else q_source.params
    for p in list(leaves.values()) + list(model.params.values()):
        p.grad = None
    q = q_from_params(q_source) if local else encoder_forward(q_source, x)
    if not isinstance(q, DiagGaussian):
        raise UnsupportedModelError("pathwise IWAE gradients need a Gaussian family")
    eps = rng.normal((K, q.dim))
    z = q.rsample(eps)
    lw = model.log_joint(x, z) - q.log_prob(z)
    (T.logsumexp(lw) - math.log(K)).backward()
    prefix = "" if local else "encoder."
    phi = GradEstimate({f"{prefix}{k}": (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
                        for k, p in leaves.items()}, "iwae-pathwise", K, rng.seed)
    for p in model.params.values():
        p.grad = None
    w = IwaeSample(lw.data, z.data).normalized
    (model.log_joint(x, z.data) * w).sum().backward()
    theta = GradEstimate({f"model.{k}": (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
                          for k, p in model.params.items()}, "iwae-weighted", K, rng.seed)
    return theta, phi


def is_log_marginal(model: LatentModel, q, x, K: int, rng: Rng, chunk: int = 20000) -> float:
    """Importance-sampling estimate log (1/K) sum_k p(x, z_k) / q(z_k), z_k ~ q."""
    parts = []
    with T.no_grad():
        done = 0
        while done < K:
            n = min(chunk, K - done)
            lw, _ = iwae_log_weights(model, q, x, n, rng)
            parts.append(lw.data)
            done += n
    lw = np.concatenate(parts)
    m = lw.max()
    return float(m + np.log(np.exp(lw - m).mean()))
