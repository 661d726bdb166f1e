"""Normalizing flows on top of a diagonal Gaussian base: planar and IAF steps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributions import DiagGaussian
from .models.base import LatentModel
from .rng import Rng
from .tensor import Tensor
from .variational import ElboReport


class MaskError(ValueError):
    pass


# ------------------------------------------------------------------ planar
def planar_constrain(u, w) -> Tensor:
    """u_hat = u + (m(w.u) - w.u) w / |w|^2 with m(a) = -1 + log(1 + e^a).

    Guarantees w.u_hat >= -1, which keeps the planar map invertible. When
    w = 0 the map is the identity for any u and u is returned unchanged.
    """
    u, w = T.as_tensor(u), T.as_tensor(w)
    ww = float(np.dot(w.data, w.data))
    if ww == 0.0:
        return u
    wu = (w * u).sum()
    m = T.softplus(wu) - 1.0
    return u + (m - wu) * w / (w * w).sum()


@dataclass
class PlanarStep:
    """z' = z + u_hat tanh(w.z + b)."""

    u: Tensor
    w: Tensor
    b: Tensor
    constrain: bool = True

    @classmethod
    def create(cls, d: int, rng: Rng, constrain: bool = True) -> "PlanarStep":
        """A step that starts as the identity map (u_hat = 0)."""
        w = 0.1 * rng.normal(d)
        # softplus(w.u) = 1 makes the constrained u_hat vanish
        u = math.log(math.e - 1.0) * w / np.dot(w, w) if constrain else np.zeros(d)
        return cls(Tensor(u, requires_grad=True), Tensor(w, requires_grad=True),
                   Tensor(np.zeros(1), requires_grad=True), constrain)

    def params(self) -> dict[str, Tensor]:
        return {"u": self.u, "w": self.w, "b": self.b}


def planar_forward(step: PlanarStep, z) -> tuple[Tensor, Tensor]:
    """(z', log|det dz'/dz|) for a batch z of shape (S, d)."""
    z = T.as_tensor(z)
    u_hat = planar_constrain(step.u, step.w) if step.constrain else step.u
    a = z @ step.w + step.b  # (S,)
    h = T.tanh(a)
    z_new = z + T.reshape(h, (-1, 1)) * u_hat
    wu = (step.w * u_hat).sum()
    det = 1.0 + (1.0 - h * h) * wu
    return z_new, T.log(T.absolute(det))


# --------------------------------------------------------------------- IAF
def made_masks(d: int, hidden: int) -> tuple[np.ndarray, np.ndarray]:
    """Input->hidden and hidden->output masks for natural ordering 1..d.

    Output k only sees inputs with degree < k. With d = 1 no hidden unit can
    connect, so the hidden layer is empty.
    """
    deg_in = np.arange(1, d + 1)
    if d == 1:
        return np.zeros((1, 0)), np.zeros((0, 1))
    deg_h = np.arange(hidden) % (d - 1) + 1
    m1 = (deg_h[None, :] >= deg_in[:, None]).astype(float)
    m2 = (deg_in[None, :] > deg_h[:, None]).astype(float)
    check_autoregressive(m1, m2)
    return m1, m2


def check_autoregressive(m1: np.ndarray, m2: np.ndarray) -> None:
    """Raise unless output k depends only on inputs strictly before k."""
    conn = (m1 @ m2) > 0
    bad = np.argwhere(np.tril(conn))
    if bad.size:
        i, k = bad[0]
        raise MaskError(f"mask lets output {k} depend on input {i}")


class IafStep:
    """z' = mu(z) + sigma(z) * z with (mu, log sigma) from a masked one-layer MLP.

    sigma = exp(raw output), so a zero raw output gives sigma = 1.
    """

    def __init__(self, d: int, rng: Rng, hidden: int | None = None, scale: float = 0.1):
        hidden = hidden if hidden is not None else 2 * d
        self.d = d
        self.m1, self.m2 = made_masks(d, hidden)
        H = self.m1.shape[1]
        self.W1 = Tensor(scale * rng.normal((d, H)) * self.m1, requires_grad=True)
        self.b1 = Tensor(np.zeros(H), requires_grad=True)
        self.Wm = Tensor(scale * rng.normal((H, d)) * self.m2, requires_grad=True)
        self.bm = Tensor(np.zeros(d), requires_grad=True)
        self.Ws = Tensor(scale * rng.normal((H, d)) * self.m2, requires_grad=True)
        self.bs = Tensor(np.zeros(d), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"W1": self.W1, "b1": self.b1, "Wm": self.Wm, "bm": self.bm, "Ws": self.Ws, "bs": self.bs}

    def shift_and_log_scale(self, z) -> tuple[Tensor, Tensor]:
        z = T.as_tensor(z)
        h = T.tanh(z @ (self.W1 * self.m1) + self.b1)
        return h @ (self.Wm * self.m2) + self.bm, h @ (self.Ws * self.m2) + self.bs


def iaf_forward(step: IafStep, z) -> tuple[Tensor, Tensor]:
    z = T.as_tensor(z)
    mu, log_sigma = step.shift_and_log_scale(z)
    return mu + T.exp(log_sigma) * z, log_sigma.sum(axis=-1)


# ------------------------------------------------------------------- stack
class FlowStack:
    """A sequence of steps applied to base draws z_0."""

    def __init__(self, steps: list):
        self.steps = steps
        self.params: dict[str, Tensor] = {}
        for i, s in enumerate(steps):
            for k, v in s.params().items():
                self.params[f"step{i}.{k}"] = v

    @classmethod
    def create(cls, d: int, depth: int = 4, kind: str = "planar", rng: Rng | None = None) -> "FlowStack":
        rng = rng or Rng(0)
        if kind == "planar":
            return cls([PlanarStep.create(d, rng) for _ in range(depth)])
        if kind == "iaf":
            return cls([IafStep(d, rng) for _ in range(depth)])
        raise ValueError(f"unknown flow kind {kind!r}")

    def forward(self, z0) -> tuple[Tensor, Tensor]:
        z = T.as_tensor(z0)
        total = None
        for s in self.steps:
            z, ld = planar_forward(s, z) if isinstance(s, PlanarStep) else iaf_forward(s, z)
            total = ld if total is None else total + ld
        if total is None:
            total = Tensor(np.zeros(z.shape[0]))
        return z, total


def _as_rows(base: DiagGaussian) -> DiagGaussian:
    if base.mean.ndim == 1:
        return DiagGaussian(T.reshape(base.mean, (1, -1)), T.reshape(base.log_var, (1, -1)))
    return base


def flow_log_density(stack: FlowStack, base: DiagGaussian, z0) -> tuple[Tensor, Tensor]:
    """(z_K, log q_K(z_K)) with log q_K = log q_0(z_0) - sum of log-dets."""
    z0 = T.as_tensor(z0)
    zK, ld = stack.forward(z0)
    return zK, _as_rows(base).log_prob(z0) - ld


def flow_elbo_terms(model: LatentModel, base: DiagGaussian, stack: FlowStack, x, rng: Rng | None = None,
                    n_samples: int = 1, noise=None) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable (elbo, recon, kl) averaged over reparameterized base draws."""
    base = _as_rows(base)
    eps = rng.normal((n_samples, base.dim)) if noise is None else np.asarray(noise, float).reshape(-1, base.dim)
    z0 = base.rsample(eps)
    zK, log_qK = flow_log_density(stack, base, z0)
    recon = model.log_likelihood(x, zK).mean()
    kl = (log_qK - model.log_prior(zK)).mean()
    return recon - kl, recon, kl


def flow_elbo(model: LatentModel, base: DiagGaussian, stack: FlowStack, x, rng: Rng | None = None,
              n_samples: int = 1, noise=None) -> ElboReport:
    with T.no_grad():
        elbo, recon, kl = flow_elbo_terms(model, base, stack, x, rng, n_samples, noise)
    n = n_samples if noise is None else np.asarray(noise).reshape(-1, base.dim).shape[0]
    return ElboReport(elbo.item(), recon.item(), kl.item(), n)


def flow_sample(stack: FlowStack, base: DiagGaussian, rng: Rng, n: int) -> np.ndarray:
    with T.no_grad():
        b = _as_rows(base)
        return stack.forward(b.rsample(rng.normal((n, b.dim))))[0].data

