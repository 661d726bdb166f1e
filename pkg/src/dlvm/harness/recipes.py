"""Preset experiments. Each writes ``metrics.jsonl`` and returns a summary dict.

Every recipe is a pure function of its settings and seed, so rerunning one
reproduces its metrics file byte for byte.
"""

from __future__ import annotations

import os
from typing import Callable

import numpy as np

from .. import tensor as T
from ..data import Batch, minibatches
from ..em import em_fit
from ..estimators import concrete_relaxed_grad, exact_elbo_grad, reparam_grad, score_function_grad
from ..exact import corpus_log_marginal, log_marginal_enumeration, train_direct_marginal
from ..models import CategoricalBow, GaussianObservation, NaiveBayes
from ..rng import Rng
from ..tensor import Tensor
from ..optim import make_optimizer
from ..variational import Encoder, batch_objective, refine, svi_train, train_vae, variational_em
from ..wake_sleep import wake_sleep_train
from .config import Config, parse_overrides
from .metrics import MetricsWriter
from .synth import make_model, synth_corpus

RECIPES: dict[str, tuple[Callable, dict]] = {}


def recipe(name: str, **defaults):
    def wrap(fn):
        RECIPES[name] = (fn, defaults)
        return fn

    return wrap


def run_recipe(name: str, out_dir: str, overrides: list[str] | None = None) -> dict:
    if name not in RECIPES:
        raise KeyError(f"unknown recipe {name!r}; available: {sorted(RECIPES)}")
    fn, defaults = RECIPES[name]
    base = Config(**{k: v for k, v in defaults.items()})
    cfg = parse_overrides(overrides or [], base)
    os.makedirs(out_dir, exist_ok=True)
    cfg.write(out_dir)
    with MetricsWriter(os.path.join(out_dir, "metrics.jsonl")) as mw:
        summary = fn(cfg, mw)
        mw.write({"summary": name, **summary})
    return summary


# ------------------------------------------------------------- method sweep
@recipe("table1-sweep", family="naive-bayes", K=4, V=50, length=15, n_sentences=2000, truth_concentration=1.0,
        epochs=300, batch_size=100, lr=0.05, em_iters=3000, svi_steps=10, svi_lr=1.0, encoder="bow")
def table1_sweep(cfg: Config, mw: MetricsWriter) -> dict:
    """Every inference strategy on one naive Bayes corpus, all from the same starting point.

    Direct marginal-likelihood ascent runs full-batch, ``epochs`` steps at
    ``lr`` followed by ``epochs`` steps at ``lr / 10``, so that it settles on
    a stationary point comparable with EM's.
    """
    data = synth_corpus(cfg)
    sents = data.sentences
    n = len(sents)
    counts = Batch.from_sentences(sents, cfg.V).counts
    root = Rng(cfg.seed)
    init = NaiveBayes(cfg.K, cfg.V, root.child(20)).probs()
    truth_ll = corpus_log_marginal(data.truth, sents) / n
    mw.write({"method": "truth", "loglik": truth_ll})
    results = {}

    def fresh() -> NaiveBayes:
        return NaiveBayes.from_probs(*init)

    def log(method: str, rec: dict) -> None:
        mw.write({"method": method, **rec})

    em = em_fit(counts, cfg.K, root.child(21), cfg.em_iters, tol=1e-9, init=init, callback=lambda r: log("em", r))
    results["em"] = em.trajectory[-1]["loglik"] / n

    m = fresh()
    draw = root.child(22)
    train_direct_marginal(m, sents, draw, cfg.epochs, n, cfg.lr, callback=lambda r: log("direct-marginal", r))
    h = train_direct_marginal(m, sents, draw, cfg.epochs, n, cfg.lr / 10,
                              callback=lambda r: log("direct-marginal", {**r, "epoch": r["epoch"] + cfg.epochs}))
    results["direct-marginal"] = h[-1]["loglik"] / n

    m = fresh()
    h = variational_em(m, sents, root.child(23), 100, cfg.svi_steps, cfg.svi_lr,
                       callback=lambda r: log("variational-em", r))
    results["variational-em"] = h[-1]["loglik"] / n

    m = fresh()
    h = svi_train(m, sents, root.child(24), 20, cfg.batch_size, cfg.lr, svi_steps=cfg.svi_steps,
                  svi_lr=cfg.svi_lr, callback=lambda r: log("svi", r))
    results["svi"] = h[-1]["loglik"] / n

    m = fresh()
    enc = Encoder(cfg.V, "categorical", cfg.K, "bow", rng=root.child(25))
    train_vae(m, enc, sents, root.child(26), 20, cfg.batch_size, cfg.lr, estimator="enum",
              heldout_frac=0.0, is_k=0, callback=lambda r: log("vae", r))
    results["vae"] = corpus_log_marginal(m, sents) / n
    out = {f"loglik_{k}": v for k, v in results.items()}
    out["loglik_truth"] = truth_ll
    out["em_vs_direct_abs"] = abs(results["em"] - results["direct-marginal"])
    out["em_vs_direct_rel"] = out["em_vs_direct_abs"] / abs(results["em"])
    return out


# ----------------------------------------------------------- collapse demo
@recipe("collapse-demo", family="gaussian-crnn", V=12, K=4, dim=8, hidden=16, emb=16, max_length=30,
        n_sentences=600, truth_scale=10.0, epochs=12, batch_size=32, lr=0.005, free_bits=2.0, kl_warmup=100, is_k=5)
def collapse_demo(cfg: Config, mw: MetricsWriter) -> dict:
    """A strong autoregressive decoder trained plainly, with KL warm-up, and with a free-bits floor."""
    data = synth_corpus(cfg.updated(family="mixture-rnn"))
    root = Rng(cfg.seed)
    out = {}
    for tag, warmup, floor in (("plain", 0, 0.0), ("warmup", cfg.kl_warmup, 0.0), ("free-bits", 0, cfg.free_bits)):
        model = make_model(cfg, root.child(30), data.vocab)
        enc = Encoder(cfg.V, "gaussian", cfg.dim, "rnn", cfg.emb, cfg.hidden, root.child(31))
        res = train_vae(model, enc, data.sentences, root.child(32), cfg.epochs, cfg.batch_size, cfg.lr,
                        estimator="reparam", kl_warmup=warmup, floor=floor, is_k=cfg.is_k,
                        callback=lambda r, tag=tag: mw.write({"run": tag, **r}))
        last = [r for r in res.history if r["split"] == "train"][-1]
        out[f"{tag}_kl"] = last["kl"]
        out[f"{tag}_objective_kl"] = last["kl_objective"]
        out[f"{tag}_elbo"] = last["elbo"]
    return out


# -------------------------------------------------------------- wake-sleep
@recipe("wake-sleep-nb", family="naive-bayes", K=3, V=30, length=10, n_sentences=1000, truth_concentration=0.3,
        epochs=20, batch_size=50, lr=0.03, encoder="bow", inference="wake-sleep")
def wake_sleep_nb(cfg: Config, mw: MetricsWriter) -> dict:
    """Wake-sleep on a naive Bayes corpus, tracked against the exact likelihood and posterior."""
    data = synth_corpus(cfg)
    root = Rng(cfg.seed)
    model = make_model(cfg, root.child(50), data.vocab)
    enc = Encoder(cfg.V, "categorical", cfg.K, cfg.encoder, cfg.emb, cfg.hidden, root.child(51))
    hist = wake_sleep_train(model, enc, data.sentences, root.child(52), cfg.epochs, cfg.batch_size, cfg.lr,
                            cfg.optimizer, cfg.sleep_ratio, length=cfg.length, cap=cfg.max_length,
                            callback=mw.write).history
    return {"loglik_start": hist[0]["loglik"], "loglik_end": hist[-1]["loglik"], "tv_start": hist[0]["tv"],
            "tv_end": hist[-1]["tv"]}


# --------------------------------------------------------------- gap study
@recipe("gap-study", family="naive-bayes", K=4, V=30, length=8, n_sentences=1000, truth_concentration=0.3,
        em_iters=200, epochs=2, batch_size=50, lr=0.02, svi_lr=0.05, svi_steps=20, encoder="bow")
def gap_study(cfg: Config, mw: MetricsWriter, n_eval: int = 60, long_steps: int = 400) -> dict:
    """Inference-gap decomposition with a deliberately under-trained amortized encoder.

    The model is fitted by EM, then frozen. For each evaluation sentence the
    encoder output is refined by SVI; the residual amortization gap after k
    steps is ELBO(best refinement) - ELBO(after k steps).
    """
    data = synth_corpus(cfg)
    sents = data.sentences
    root = Rng(cfg.seed)
    counts = Batch.from_sentences(sents, cfg.V).counts
    em = em_fit(counts, cfg.K, root.child(40), cfg.em_iters)
    model = NaiveBayes.from_probs(em.mu, em.pi)
    enc = Encoder(cfg.V, "categorical", cfg.K, "bow", rng=root.child(41))
    opt = make_optimizer(enc.params, "adam", cfg.lr)
    draw = root.child(42)
    for _ in range(cfg.epochs):
        for idx in minibatches(len(sents), cfg.batch_size, draw):
            opt.zero_grad()
            batch_objective(model, enc, Batch.from_sentences([sents[i] for i in idx], cfg.V), draw, "enum").objective.backward()
            opt.step()
    k = cfg.svi_steps
    nonincreasing = 0
    identity_err = 0.0
    for i, x in enumerate(sents[:n_eval]):
        traj = refine(model, enc, x, draw, long_steps, cfg.svi_lr).trajectory
        with T.no_grad():
            lpx = log_marginal_enumeration(model, x).item()
        best = max(traj)
        amort0, amortk = best - traj[0], best - traj[k]
        approx = lpx - best
        inference = approx + amort0
        identity_err = max(identity_err, abs((lpx - traj[0]) - inference))
        nonincreasing += amortk <= amort0
        mw.write({"sentence": i, "log_px": lpx, "elbo_amortized": traj[0], "elbo_refined": best,
                  "approximation_gap": approx, "amortization_gap": amort0, f"amortization_gap_after_{k}": amortk,
                  "inference_gap": inference})
    return {"n_eval": n_eval, "frac_nonincreasing": nonincreasing / n_eval, "identity_max_err": identity_err}


# --------------------------------------------------------- estimator bench
@recipe("estimator-bench", family="gaussian-bow", K=2, V=4, length=6, tau=0.5)
def estimator_bench(cfg: Config, mw: MetricsWriter, n_samples: int = 10000, reps: int = 10) -> dict:
    """Score-function vs reparameterized gradients on a 1-d Gaussian toy, and
    Concrete-relaxed vs exact gradients on a K=2 categorical toy."""
    root = Rng(cfg.seed)
    toy = GaussianObservation(1, 1.0)
    x = np.array([1.5])
    mu, lv = 0.2, -0.4
    closed = {"mean": (x[0] - mu) - mu, "log_var": 0.5 - np.exp(lv)}
    lower = 0
    for r in range(reps):
        lam = {"mean": Tensor([mu]), "log_var": Tensor([lv])}
        sf = score_function_grad(toy, lam, x, n_samples, root.child(100 + r))
        rp = reparam_grad(toy, lam, x, n_samples, root.child(200 + r))
        for tag, g in (("score", sf), ("reparam", rp)):
            mw.write({"toy": "gaussian", "rep": r, "estimator": tag,
                      "grad_mean": float(g.grads["mean"][0]), "grad_log_var": float(g.grads["log_var"][0]),
                      "var_mean": float(g.variance("mean")[0]), "var_log_var": float(g.variance("log_var")[0])})
        lower += bool(rp.variance("mean")[0] < sf.variance("mean")[0])
    mw.write({"toy": "gaussian", "closed_mean": float(closed["mean"]), "closed_log_var": float(closed["log_var"])})

    cat = CategoricalBow(2, cfg.V, root.child(300), scale=1.0)
    xs = cat.sample(root.child(301), 1, length=cfg.length).sentences[0]
    lam = {"logits": Tensor([0.3, -0.2])}
    exact = exact_elbo_grad(cat, lam, xs).flat()
    cos = {}
    for tau in (0.1, cfg.tau, 1.0, 2.0):
        g = concrete_relaxed_grad(cat, lam, xs, tau, n_samples, root.child(400)).flat()
        c = float(g @ exact / (np.linalg.norm(g) * np.linalg.norm(exact)))
        cos[tau] = c
        mw.write({"toy": "categorical", "tau": tau, "cosine": c})
    return {"reparam_lower_variance": lower, "reps": reps, "cosine_at_tau": cos[cfg.tau]}
