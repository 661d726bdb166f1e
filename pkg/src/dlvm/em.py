"""Expectation maximization: closed form for naive Bayes, gradient M-steps otherwise."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .data import Batch
from .exact import posterior_rows
from .models.base import LatentModel
from .models.naive_bayes import NaiveBayes
from .optim import Optimizer
from .rng import Rng

EMPTY_CLUSTER = 1e-12


class EmptyClusterWarning(RuntimeWarning):
    pass


class MonotonicityError(RuntimeError):
    pass


def nb_log_joint_table(mu: np.ndarray, pi: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """(N, K) log p(x_n, z=k) from probabilities, with log clamped at 1e-300."""
    return np.log(np.maximum(mu, T.LOG_CLAMP)) + counts @ np.log(np.maximum(pi, T.LOG_CLAMP)).T


def _normalize_rows(lj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = lj.max(axis=1, keepdims=True)
    e = np.exp(lj - m)
    s = e.sum(axis=1, keepdims=True)
    return e / s, (m + np.log(s))[:, 0]


def nb_e_step(mu: np.ndarray, pi: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, float]:
    """Posterior responsibilities q (N, K) and the data log-likelihood under (mu, pi)."""
    q, lz = _normalize_rows(nb_log_joint_table(mu, pi, counts))
    return q, float(lz.sum())


def nb_m_step(q: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximizer of the expected complete-data log-likelihood.

    mu_k = sum_n q_nk / N and pi_kv = sum_n q_nk c_nv / sum_n q_nk T_n, with
    c the token counts and T_n the sentence lengths. A cluster with total
    responsibility below 1e-12 gets a uniform emission row and a warning.
    """
    q = np.asarray(q, float)
    N, K = q.shape
    mass = q.sum(axis=0)
    mu = mass / N
    weighted = q.T @ counts  # (K, V)
    tokens = weighted.sum(axis=1, keepdims=True)
    V = counts.shape[1]
    pi = np.empty_like(weighted)
    empty = mass < EMPTY_CLUSTER
    for k in np.flatnonzero(empty):
        warnings.warn(f"cluster {k} has total responsibility {mass[k]:.3g}; resetting its emissions to uniform",
                      EmptyClusterWarning, stacklevel=2)
    pi[empty] = 1.0 / V
    ok = ~empty
    pi[ok] = weighted[ok] / np.maximum(tokens[ok], T.LOG_CLAMP)
    return mu, pi


def expected_complete_loglik(q: np.ndarray, mu: np.ndarray, pi: np.ndarray, counts: np.ndarray) -> float:
    return float((q * nb_log_joint_table(mu, pi, counts)).sum())


@dataclass
class EmResult:
    mu: np.ndarray
    pi: np.ndarray
    trajectory: list[dict] = field(default_factory=list)
    converged: bool = False

    def model(self) -> NaiveBayes:
        return NaiveBayes.from_probs(self.mu, self.pi)


def em_fit(counts: np.ndarray, K: int, rng: Rng, max_iters: int = 100, tol: float = 1e-7,
           patience: int = 3, check_monotone: bool = True, init: tuple | None = None,
           callback: Callable[[dict], None] | None = None) -> EmResult:
    """Closed-form EM for naive Bayes on a (N, V) count matrix.

    Initialization draws Dirichlet(1) responsibilities and applies one M-step
    (unless ``init=(mu, pi)`` is given). Iteration stops once the improvement
    stays below ``tol`` for ``patience`` consecutive iterations.
    """
    counts = np.asarray(counts, float)
    if init is None:
        mu, pi = nb_m_step(rng.dirichlet(np.ones(K), size=counts.shape[0]), counts)
    else:
        mu, pi = (np.asarray(a, float).copy() for a in init)
    res = EmResult(mu, pi)
    quiet = 0
    prev = None
    for it in range(max_iters + 1):
        q, ll = nb_e_step(mu, pi, counts)
        rec = {"iter": it, "loglik": ll}
        res.trajectory.append(rec)
        if callback:
            callback(rec)
        if prev is not None:
            if check_monotone and ll < prev - 1e-8:
                raise MonotonicityError(f"EM log-likelihood decreased at iteration {it}: {prev!r} -> {ll!r}")
            quiet = quiet + 1 if ll - prev < tol else 0
            if quiet >= patience:
                res.converged = True
                break
        prev = ll
        if it == max_iters:
            break
        mu, pi = nb_m_step(q, counts)
        res.mu, res.pi = mu, pi
    return res


# ------------------------------------------------------------ generalized EM
def _grads(model: LatentModel) -> dict[str, np.ndarray]:
    return {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in model.params.items()}


def expected_complete_grad(model: LatentModel, batch: Batch, q: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of sum_n sum_z q_nz log p(x_n, z) with q held fixed."""
    for p in model.params.values():
        p.grad = None
    (model.log_joint_rows(batch) * np.asarray(q, float)).sum().backward()
    return _grads(model)


def direct_marginal_grad(model: LatentModel, batch: Batch) -> dict[str, np.ndarray]:
    """Gradient of sum_n log p(x_n) computed through the log-sum-exp."""
    for p in model.params.values():
        p.grad = None
    T.logsumexp(model.log_joint_rows(batch), axis=-1).sum().backward()
    return _grads(model)


def generalized_em_step(model: LatentModel, batch: Batch, optimizer: Optimizer,
                        q: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """E-step with exact (detached) posteriors, then one ascent step on Q.

    Returns the gradient used for the step.
    """
    if q is None:
        q = posterior_rows(model, batch)
    grads = expected_complete_grad(model, batch, q)
    optimizer.step()
    return grads
