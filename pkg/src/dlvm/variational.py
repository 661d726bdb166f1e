"""Evidence lower bounds, stochastic VI, amortized encoders and VAE training."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import Batch, minibatches
from .distributions import Categorical, DiagGaussian, categorical_kl, gaussian_kl
from .models.base import LatentModel, UnsupportedModelError
from .models.nn import RnnCore
from .models.base import uniform_param, zeros_param
from .optim import make_optimizer
from .rng import Rng
from .tensor import Tensor

DIVERGENCE_FLOOR = -1e8


class SviDivergedError(FloatingPointError):
    pass


# ---------------------------------------------------------------- families
@dataclass(frozen=True)
class VariationalFamily:
    """``kind`` is ``categorical`` (size K), ``diag-gaussian`` or ``flow-gaussian`` (size d)."""

    kind: str
    size: int
    flow_depth: int = 4
    flow_kind: str = "planar"

    def __post_init__(self):
        if self.kind not in ("categorical", "diag-gaussian", "flow-gaussian"):
            raise ValueError(f"unknown variational family {self.kind!r}")

    @classmethod
    def for_model(cls, model: LatentModel, **kw) -> "VariationalFamily":
        if model.latent == "discrete":
            return cls("categorical", model.K)
        if model.latent == "continuous":
            return cls("diag-gaussian", model.dim, **kw)
        raise UnsupportedModelError(f"no variational family for a {model.latent} latent ({model.family})")

    def init_params(self, rng: Rng | None = None) -> dict[str, Tensor]:
        if self.kind == "categorical":
            return {"logits": zeros_param((self.size,))}
        return {"mean": zeros_param((self.size,)), "log_var": zeros_param((self.size,))}


def q_from_params(params: dict[str, Tensor]):
    if "logits" in params:
        return Categorical(params["logits"])
    return DiagGaussian(params["mean"], params["log_var"])


# ---------------------------------------------------------------- encoder
class Encoder:
    """Amortized inference network producing q(z | x) for a batch.

    ``kind="rnn"``: Elman recurrence over the sentence, final state through a
    tanh layer, then linear heads. ``kind="bow"``: linear heads on the token
    count vector. Gaussian heads give (mean, log variance); categorical heads
    give logits.
    """

    def __init__(self, V: int, out: str, out_dim: int, kind: str = "rnn", emb: int = 16,
                 hidden: int = 16, rng: Rng | None = None):
        if out not in ("gaussian", "categorical"):
            raise ValueError(f"unknown encoder head {out!r}")
        if kind not in ("rnn", "bow"):
            raise ValueError(f"unknown encoder kind {kind!r}")
        rng = rng or Rng(0)
        self.V, self.out, self.out_dim, self.kind = V, out, out_dim, kind
        self.params: dict[str, Tensor] = {}
        if kind == "rnn":
            self.core = RnnCore(self.params, "enc", V, emb, hidden, rng)
            self.params["enc.A"] = uniform_param(rng, (hidden, hidden))
            self.params["enc.a"] = uniform_param(rng, (hidden,))
            feat = hidden
        else:
            feat = V
        heads = ("mean", "log_var") if out == "gaussian" else ("logits",)
        for h in heads:
            self.params[f"head.{h}.W"] = uniform_param(rng, (feat, out_dim))
            self.params[f"head.{h}.b"] = uniform_param(rng, (out_dim,))

    def features(self, batch: Batch) -> Tensor:
        if self.kind == "bow":
            return T.as_tensor(batch.counts)
        H = self.core.states(batch.ids)
        last = H[np.arange(len(batch)), batch.lengths - 1]
        return T.tanh(last @ self.params["enc.A"] + self.params["enc.a"])

    def _head(self, feat: Tensor, name: str) -> Tensor:
        return feat @ self.params[f"head.{name}.W"] + self.params[f"head.{name}.b"]

    def __call__(self, batch: Batch):
        feat = self.features(batch)
        if self.out == "gaussian":
            return DiagGaussian(self._head(feat, "mean"), self._head(feat, "log_var"))
        return Categorical(self._head(feat, "logits"))


def encoder_forward(encoder: Encoder, x):
    """q-parameters for a single sentence (batch dimension removed)."""
    q = encoder(Batch.of(x, encoder.V))
    if isinstance(q, DiagGaussian):
        return DiagGaussian(q.mean[0], q.log_var[0])
    return Categorical(q.logits[0])


# ------------------------------------------------------------------- ELBO
def kl_anneal(step: int, warmup: int = 5000) -> float:
    """Linear KL weight schedule min(1, step / warmup); warmup 0 means no annealing."""
    if warmup <= 0:
        return 1.0
    return min(1.0, max(step, 0) / warmup)


def free_bits(kl, floor: float) -> Tensor:
    """max(KL, floor): the KL term stops pulling once it is below the floor."""
    if floor < 0:
        raise ValueError("free-bits floor must be non-negative")
    return T.maximum(T.as_tensor(kl), floor)


@dataclass
class ElboReport:
    elbo: float
    recon: float
    kl: float
    n_samples: int  # 0 marks an exact expectation
    beta: float = 1.0
    free_bits: float = 0.0
    stderr: float = 0.0

    @property
    def exact(self) -> bool:
        return self.n_samples == 0


def elbo_terms(model: LatentModel, q, x, rng: Rng | None = None, n_samples: int = 1,
               kl_mode: str = "analytic", noise=None) -> tuple[Tensor, Tensor, Tensor]:
    """Differentiable (recon, kl, per-sample recon) for one observation.

    Categorical q uses the exact expectation. Gaussian q uses reparameterized
    samples ``z = mean + sigma * eps``; KL is closed form (``analytic``) or the
    single-draw log ratio averaged over the same samples (``sampled``).
    """
    if isinstance(q, Categorical):
        if model.latent != "discrete":
            raise UnsupportedModelError(f"categorical q needs a flat discrete model, got {model.family}")
        prior = model.log_prior_all()
        lik = model.log_joint_all(x) - prior
        qp = q.probs()
        recon = (qp * lik).sum()
        return recon, categorical_kl(q, prior), lik
    if not isinstance(q, DiagGaussian):
        raise TypeError(f"unsupported q type {type(q).__name__}")
    if noise is None:
        if rng is None:
            raise ValueError("sampling a Gaussian ELBO needs an rng or explicit noise")
        noise = q.noise(rng, n_samples)
    eps = np.asarray(noise, float).reshape(-1, q.dim)
    z = q.rsample(eps)
    lik = model.log_likelihood(x, z)
    recon = lik.mean()
    if kl_mode == "analytic":
        kl = gaussian_kl(q, model.prior_mean)
    elif kl_mode == "sampled":
        kl = (q.log_prob(z) - model.log_prior(z)).mean()
    else:
        raise ValueError(f"unknown kl_mode {kl_mode!r}")
    return recon, kl, lik


def elbo_value(model, q, x, rng=None, n_samples=1, kl_mode="analytic", beta=1.0, floor=0.0, noise=None) -> Tensor:
    recon, kl, _ = elbo_terms(model, q, x, rng, n_samples, kl_mode, noise)
    return recon - beta * free_bits(kl, floor) if floor > 0 else recon - beta * kl


def elbo_estimate(model: LatentModel, q, x, rng: Rng | None = None, n_samples: int = 1,
                  kl_mode: str = "analytic", beta: float = 1.0, floor: float = 0.0,
                  noise=None) -> ElboReport:
    with T.no_grad():
        recon, kl, lik = elbo_terms(model, q, x, rng, n_samples, kl_mode, noise)
    kl_v = kl.item()
    kl_term = max(kl_v, floor) if floor > 0 else kl_v
    exact = isinstance(q, Categorical)
    n = 0 if exact else lik.shape[0]
    se = 0.0 if exact or n < 2 else float(lik.data.std(ddof=1) / math.sqrt(n))
    return ElboReport(recon.item() - beta * kl_term, recon.item(), kl_v, n, beta, floor, se)


# -------------------------------------------------------------------- SVI
@dataclass
class SviResult:
    params: dict[str, Tensor]
    trajectory: list[float] = field(default_factory=list)
    flow: object = None

    def q(self):
        return q_from_params(self.params)


def svi_fit(model: LatentModel, x, family: VariationalFamily, rng: Rng, steps: int = 100,
            lr: float = 0.05, optimizer: str = "sgd", n_samples: int = 1,
            init: dict[str, np.ndarray] | None = None) -> SviResult:
    """Per-observation variational parameters by gradient ascent on the ELBO.

    ``trajectory[i]`` is the objective evaluated before update ``i``; the last
    entry is the objective after the final update.
    """
    params = family.init_params(rng)
    if init is not None:
        for k, v in init.items():
            params[k].data = np.array(v, dtype=np.float64).reshape(params[k].shape)
    flow = None
    opt_params = dict(params)
    if family.kind == "flow-gaussian":
        from .flows import FlowStack

        flow = FlowStack.create(family.size, family.flow_depth, family.flow_kind, rng)
        opt_params.update({f"flow.{k}": v for k, v in flow.params.items()})
    opt = make_optimizer(opt_params, optimizer, lr)
    res = SviResult(params, flow=flow)

    def objective() -> Tensor:
        if flow is not None:
            from .flows import flow_elbo_terms

            return flow_elbo_terms(model, q_from_params(params), flow, x, rng, n_samples)[0]
        return elbo_value(model, q_from_params(params), x, rng, n_samples)

    for step in range(steps + 1):
        opt.zero_grad()
        obj = objective()
        v = obj.item()
        if not np.isfinite(v) or v < DIVERGENCE_FLOOR:
            raise SviDivergedError(f"ELBO diverged to {v} at SVI step {step}")
        res.trajectory.append(v)
        if step == steps:
            break
        obj.backward()
        opt.step()
    return res


# ------------------------------------------------------------ VAE training
ESTIMATORS = ("reparam", "score", "enum", "concrete", "iwae")


@dataclass
class BatchObjective:
    objective: Tensor  # mean over rows of the training objective
    recon: float  # mean per-row reconstruction
    kl: float  # mean per-row KL (unfloored)
    kl_objective: float = float("nan")  # mean per-row max(KL, floor), the KL the objective penalizes


def batch_objective(model: LatentModel, encoder: Encoder, batch: Batch, rng: Rng,
                    estimator: str = "reparam", beta: float = 1.0, floor: float = 0.0,
                    tau: float = 0.5, iwae_k: int = 5) -> BatchObjective:
    """Surrogate whose gradient is the chosen estimator of the (beta, free-bits) ELBO gradient."""
    q = encoder(batch)
    B = len(batch)
    if isinstance(q, DiagGaussian):
        kl_rows = gaussian_kl(q, model.prior_mean)
        if estimator == "iwae":
            lw = iwae_log_weights_rows(model, q, batch, rng, iwae_k)
            obj = T.logsumexp(lw, axis=0) - math.log(iwae_k)
            kl = float(kl_rows.data.mean())
            return BatchObjective(obj.mean(), float("nan"), kl, kl)
        eps = q.noise(rng)
        if estimator == "reparam":
            z = q.rsample(eps)
            recon_rows = model.log_lik_rows(batch, z)
            surrogate = recon_rows
        elif estimator == "score":
            z = q.rsample(eps).detach()
            recon_rows = model.log_lik_rows(batch, z)
            surrogate = recon_rows + recon_rows.detach() * q.log_prob(z)
        else:
            raise ValueError(f"estimator {estimator!r} does not apply to a Gaussian latent")
    else:
        prior = model.log_prior_all()
        kl_rows = categorical_kl(q, prior)
        if estimator == "enum":
            lik = model.log_lik_rows(batch)
            recon_rows = (q.probs() * lik).sum(axis=-1)
            surrogate = recon_rows
        elif estimator == "score":
            z = q.sample(rng)
            lik = model.log_lik_rows(batch)
            recon_rows = lik[np.arange(B), z]
            surrogate = recon_rows + recon_rows.detach() * q.log_prob(z)
        elif estimator == "concrete":
            if not model.relaxable:
                raise UnsupportedModelError(f"{model.family} has no simplex relaxation; use score or enum")
            from .distributions import Concrete, gumbel_sample

            s = Concrete(q.log_probs(), tau).rsample(gumbel_sample(rng, q.logits.shape))
            recon_rows = model.log_lik_relaxed(batch, s)
            surrogate = recon_rows
        else:
            raise ValueError(f"estimator {estimator!r} does not apply to a categorical latent")
    penalty = free_bits(kl_rows, floor) if floor > 0 else kl_rows
    obj = (surrogate - beta * penalty).mean()
    return BatchObjective(obj, float(recon_rows.data.mean()), float(kl_rows.data.mean()),
                          float(penalty.data.mean()))


def iwae_log_weights_rows(model: LatentModel, q: DiagGaussian, batch: Batch, rng: Rng, K: int) -> Tensor:
    """(K, B) log weights log p(x_b, z_kb) - log q(z_kb | x_b) with reparameterized z."""
    B, d = q.mean.shape
    eps = rng.normal((K, B, d))
    z = q.rsample(eps)  # (K, B, d)
    zf = T.reshape(z, (K * B, d))
    lj = model.log_lik_rows(batch.tile(K), zf) + model.log_prior(zf)
    lq = q.log_prob(z)  # (K, B)
    return T.reshape(lj, (K, B)) - lq


def is_log_marginal_rows(model: LatentModel, q, batch: Batch, rng: Rng, K: int) -> np.ndarray:
    """(B,) importance-sampling estimates of log p(x_b) with K draws from q."""
    with T.no_grad():
        B = len(batch)
        if isinstance(q, DiagGaussian):
            lw = iwae_log_weights_rows(model, q, batch, rng, K).data
        else:
            lj = model.log_joint_rows(batch).data
            lq = q.log_probs().data
            z = np.stack([q.sample(rng) for _ in range(K)])  # (K, B)
            cols = np.arange(B)[None, :]
            lw = lj[cols, z] - lq[cols, z]
    m = lw.max(axis=0)
    return m + np.log(np.exp(lw - m).mean(axis=0))


def evaluate_vae(model: LatentModel, encoder: Encoder, sentences: Sequence, rng: Rng,
                 is_k: int = 10, batch_size: int = 128, floor: float = 0.0) -> dict:
    """Per-sentence means of the true ELBO (beta=1, no floor), its parts, and an IS estimate.

    ``kl_objective`` is the mean of max(KL_n, floor), the KL term a free-bits
    objective with that floor penalizes.
    """
    tot = {"elbo": 0.0, "recon": 0.0, "kl": 0.0, "kl_objective": 0.0, "lp_is": 0.0}
    n = len(sentences)
    with T.no_grad():
        for i in range(0, n, batch_size):
            batch = Batch.from_sentences(sentences[i: i + batch_size], model.V)
            est = "enum" if model.latent == "discrete" else "reparam"
            bo = batch_objective(model, encoder, batch, rng, est, floor=floor)
            tot["recon"] += bo.recon * len(batch)
            tot["kl_objective"] += bo.kl_objective * len(batch)
            tot["kl"] += bo.kl * len(batch)
            tot["elbo"] += (bo.recon - bo.kl) * len(batch)
            if is_k > 0:
                tot["lp_is"] += float(is_log_marginal_rows(model, encoder(batch), batch, rng, is_k).sum())
    return {k: v / n for k, v in tot.items()}


@dataclass
class VaeResult:
    history: list[dict]
    train_idx: np.ndarray
    heldout_idx: np.ndarray


def split_indices(n: int, rng: Rng, heldout_frac: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    k = max(1, int(round(n * heldout_frac))) if heldout_frac > 0 else 0
    return np.sort(perm[k:]), np.sort(perm[:k])


def train_vae(model: LatentModel, encoder: Encoder, sentences: Sequence, rng: Rng, epochs: int = 10,
              batch_size: int = 32, lr: float = 1e-3, optimizer: str = "adam", estimator: str = "reparam",
              kl_warmup: int = 0, floor: float = 0.0, heldout_frac: float = 0.1, is_k: int = 10,
              tau: float = 0.5, iwae_k: int = 5, callback: Callable[[dict], None] | None = None) -> VaeResult:
    """Joint ascent on model and encoder parameters with an amortized ELBO.

    Emits one record per split per epoch: epoch, split, elbo, recon, kl,
    kl_objective, beta, free_bits, lp_is. Epoch 0 is the untrained model.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    train_idx, held_idx = split_indices(len(sentences), rng.child(1), heldout_frac)
    train = [sentences[i] for i in train_idx]
    held = [sentences[i] for i in held_idx]
    params = {**{f"model.{k}": v for k, v in model.params.items()},
              **{f"encoder.{k}": v for k, v in encoder.params.items()}}
    opt = make_optimizer(params, optimizer, lr)
    draw = rng.child(2)
    eval_rng = rng.child(3)
    history: list[dict] = []
    step = 0

    def report(epoch: int, beta: float) -> None:
        for split, data in (("train", train), ("heldout", held)):
            if not data:
                continue
            ev = evaluate_vae(model, encoder, data, eval_rng, is_k, floor=floor)
            rec = {"epoch": epoch, "split": split, "elbo": ev["elbo"], "recon": ev["recon"], "kl": ev["kl"],
                   "kl_objective": ev["kl_objective"], "beta": beta, "free_bits": floor, "lp_is": ev["lp_is"]}
            history.append(rec)
            if callback:
                callback(rec)

    report(0, kl_anneal(0, kl_warmup))
    for epoch in range(1, epochs + 1):
        for idx in minibatches(len(train), batch_size, draw):
            step += 1
            beta = kl_anneal(step, kl_warmup)
            batch = Batch.from_sentences([train[i] for i in idx], model.V)
            opt.zero_grad()
            bo = batch_objective(model, encoder, batch, draw, estimator, beta, floor, tau, iwae_k)
            if not np.isfinite(bo.objective.item()):
                raise SviDivergedError(f"non-finite training objective at epoch {epoch}, step {step}")
            bo.objective.backward()
            opt.step()
        report(epoch, kl_anneal(step, kl_warmup))
    return VaeResult(history, train_idx, held_idx)


# ------------------------------------------------------------ gap analysis
@dataclass
class GapReport:
    log_px: float
    elbo_amortized: float
    elbo_refined: float
    approximation_gap: float
    amortization_gap: float
    inference_gap: float
    exact: bool  # False when log p(x) is itself an importance-sampling estimate


def _local_init(q) -> dict[str, np.ndarray]:
    if isinstance(q, Categorical):
        return {"logits": q.logits.data.copy()}
    return {"mean": q.mean.data.copy(), "log_var": q.log_var.data.copy()}


def refine(model: LatentModel, encoder: Encoder, x, rng: Rng, steps: int, lr: float = 0.1,
           optimizer: str = "sgd", n_samples: int = 1) -> SviResult:
    """SVI started from the encoder's output for ``x``."""
    with T.no_grad():
        q0 = encoder_forward(encoder, x)
    fam = VariationalFamily("categorical", q0.K) if isinstance(q0, Categorical) else \
        VariationalFamily("diag-gaussian", q0.dim)
    return svi_fit(model, x, fam, rng, steps, lr, optimizer, n_samples, init=_local_init(q0))


def inference_gap_report(model: LatentModel, encoder: Encoder, x, rng: Rng, refine_steps: int = 200,
                         lr: float = 0.1, optimizer: str = "sgd", n_eval: int = 2000,
                         is_k: int = 5000) -> GapReport:
    """Split log p(x) - ELBO(encoder) into approximation and amortization parts.

    The refined parameters come from SVI started at the encoder output. The
    inference gap is reported as the sum of the two parts, so the identity
    holds exactly in floating point.
    """
    with T.no_grad():
        q0 = encoder_forward(encoder, x)
    res = refine(model, encoder, x, rng, refine_steps, lr, optimizer)
    q1 = res.q()
    noise = None if isinstance(q0, Categorical) else rng.normal((n_eval, q0.dim))
    e0 = elbo_estimate(model, q0, x, noise=noise).elbo
    e1 = elbo_estimate(model, q1, x, noise=noise).elbo
    exact = model.latent in ("discrete", "structured")
    if exact:
        from .exact import log_marginal_enumeration

        with T.no_grad():
            lpx = log_marginal_enumeration(model, x).item()
    else:
        with T.no_grad():
            q1b = DiagGaussian(T.reshape(q1.mean, (1, -1)).detach(), T.reshape(q1.log_var, (1, -1)).detach())
            lpx = float(is_log_marginal_rows(model, q1b, Batch.of(x, model.V), rng, is_k)[0])
    approx = lpx - e1
    amort = e1 - e0
    return GapReport(lpx, e0, e1, approx, amort, approx + amort, exact)


# ------------------------------------------------- non-amortized corpus VI
def _local_rows(model: LatentModel, batch: Batch, lam: dict[str, Tensor], idx: np.ndarray, rng: Rng) -> Tensor:
    """(B,) ELBO rows for per-datum parameters ``lam`` restricted to ``idx``."""
    if model.latent == "discrete":
        q = Categorical(lam["logits"][idx])
        lj = model.log_joint_rows(batch)
        lq = q.log_probs()
        return (T.exp(lq) * (lj - lq)).sum(axis=-1)
    q = DiagGaussian(lam["mean"][idx], lam["log_var"][idx])
    z = q.rsample(q.noise(rng))
    return model.log_lik_rows(batch, z) - gaussian_kl(q, model.prior_mean)


def _init_local(model: LatentModel, n: int) -> dict[str, Tensor]:
    if model.latent == "discrete":
        return {"logits": zeros_param((n, model.K))}
    if model.latent == "continuous":
        return {"mean": zeros_param((n, model.dim)), "log_var": zeros_param((n, model.dim))}
    raise UnsupportedModelError(f"no local variational family for {model.family}")


def _local_ascent(model, batch, lam, idx, rng, steps, lr) -> float:
    """``steps`` plain-gradient updates of the rows ``idx`` of ``lam``; returns the final ELBO sum."""
    for _ in range(steps):
        sub = {k: Tensor(v.data[idx], requires_grad=True) for k, v in lam.items()}
        obj = _local_rows(model, batch, sub, np.arange(len(idx)), rng).sum()
        obj.backward()
        for k, v in sub.items():
            if not np.all(np.isfinite(v.grad)):
                raise SviDivergedError(f"non-finite gradient for local parameter {k}")
            lam[k].data[idx] = v.data + lr * v.grad
    with T.no_grad():
        return float(_local_rows(model, batch, lam, idx, rng).data.sum())


def variational_em(model: LatentModel, sentences: Sequence, rng: Rng, iters: int = 50, svi_steps: int = 20,
                   svi_lr: float = 0.5, callback: Callable[[dict], None] | None = None) -> list[dict]:
    """Variational EM with a categorical family per sentence.

    E-step: ``svi_steps`` gradient updates of each sentence's logits, warm
    started from the previous iteration. M-step: the naive Bayes closed form
    applied to the variational responsibilities.
    """
    from .em import nb_m_step
    from .exact import corpus_log_marginal
    from .models.naive_bayes import NaiveBayes

    if not isinstance(model, NaiveBayes):
        raise UnsupportedModelError(f"variational EM with a closed-form M-step needs naive Bayes, got {model.family}")
    batch = Batch.from_sentences(list(sentences), model.V)
    lam = _init_local(model, len(batch))
    idx = np.arange(len(batch))
    history = []
    for it in range(iters + 1):
        elbo = _local_ascent(model, batch, lam, idx, rng, svi_steps, svi_lr)
        rec = {"iter": it, "elbo": elbo, "loglik": corpus_log_marginal(model, sentences)}
        history.append(rec)
        if callback:
            callback(rec)
        if it == iters:
            break
        with T.no_grad():
            q = T.softmax(lam["logits"]).data
        model.set_probs(*nb_m_step(q, batch.counts))
    return history


def svi_train(model: LatentModel, sentences: Sequence, rng: Rng, epochs: int = 10, batch_size: int = 64,
              lr: float = 0.01, optimizer: str = "adam", svi_steps: int = 5, svi_lr: float = 0.1,
              callback: Callable[[dict], None] | None = None) -> list[dict]:
    """Stochastic variational inference: per minibatch, refine the local parameters
    with gradient steps, then take one gradient step on the model."""
    from .exact import corpus_log_marginal

    lam = _init_local(model, len(sentences))
    opt = make_optimizer(model.params, optimizer, lr)
    draw = rng.child(1)
    history = []

    def record(epoch: int) -> None:
        tot = 0.0
        for i in range(0, len(sentences), 512):
            idx = np.arange(i, min(i + 512, len(sentences)))
            with T.no_grad():
                b = Batch.from_sentences([sentences[j] for j in idx], model.V)
                tot += float(_local_rows(model, b, lam, idx, draw).data.sum())
        rec = {"epoch": epoch, "elbo": tot}
        if model.latent in ("discrete", "structured"):
            rec["loglik"] = corpus_log_marginal(model, sentences)
        history.append(rec)
        if callback:
            callback(rec)

    record(0)
    for epoch in range(1, epochs + 1):
        for idx in minibatches(len(sentences), batch_size, draw):
            batch = Batch.from_sentences([sentences[j] for j in idx], model.V)
            _local_ascent(model, batch, lam, idx, draw, svi_steps, svi_lr)
            opt.zero_grad()
            fixed = {k: Tensor(v.data) for k, v in lam.items()}
            obj = _local_rows(model, batch, fixed, idx, draw).sum()
            if not np.isfinite(obj.item()):
                raise SviDivergedError(f"non-finite ELBO at epoch {epoch}")
            obj.backward()
            opt.step()
        record(epoch)
    return history
