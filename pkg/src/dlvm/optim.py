"""Gradient-ascent optimizers over named parameter tensors.

Every update moves parameters *up* the gradient: training code maximizes
log-likelihoods and evidence lower bounds throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    kind: str = "adaptive"  # "plain" or "adaptive"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("plain", "adaptive"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected 'plain' or 'adaptive'")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def optimizer_step(state: OptimizerState, params: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Return updated copies of ``params`` and advance ``state.step`` by one."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if state.kind == "plain":
            out[name] = p + state.lr * g
            continue
        m = state.beta1 * state.m.get(name, 0.0) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(name, 0.0) + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        out[name] = p + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


class Optimizer:
    """Stateful wrapper that reads ``.grad`` from leaf tensors and updates ``.data``."""

    def __init__(self, params: dict[str, Tensor], kind: str = "adaptive", lr: float = 1e-3, **kw):
        self.params = params
        self.state = OptimizerState(kind=kind, lr=lr, **kw)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        values = {n: p.data for n, p in self.params.items()}
        new = optimizer_step(self.state, values, grads)
        for n, p in self.params.items():
            p.data = new[n]


def make_optimizer(params: dict[str, Tensor], name: str, lr: float) -> Optimizer:
    """Build from a config name: ``adam``/``adaptive`` or ``sgd``/``plain``."""
    kind = {"adam": "adaptive", "adaptive": "adaptive", "sgd": "plain", "plain": "plain"}.get(name)
    if kind is None:
        raise ValueError(f"unknown optimizer {name!r}")
    return Optimizer(params, kind=kind, lr=lr)
