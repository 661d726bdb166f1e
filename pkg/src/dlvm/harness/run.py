"""Training, evaluation, sampling and diagnosis driven by a :class:`Config`."""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..checkpoint import load_checkpoint, restore, save_checkpoint
from ..data import Batch, Vocab
from ..em import em_fit
from ..estimators import iwae_bound
from ..exact import corpus_log_marginal, log_marginal, train_direct_marginal
from ..models.base import LatentModel
from ..models.naive_bayes import NaiveBayes
from ..rng import Rng
from ..variational import (Encoder, encoder_forward, evaluate_vae, inference_gap_report, svi_train, train_vae,
                           variational_em)
from ..wake_sleep import wake_sleep_train
from .config import Config, ConfigError
from .corpus import corpus_paths, load_corpus, load_vocab, write_corpus
from .metrics import MetricsWriter
from .synth import make_model, make_vocab, synth_corpus


def default_estimator(cfg: Config, model: LatentModel) -> str:
    if cfg.estimator != "auto":
        return cfg.estimator
    return "enum" if model.latent == "discrete" else "reparam"


def make_encoder(cfg: Config, model: LatentModel, rng: Rng) -> Encoder:
    if model.latent == "discrete":
        return Encoder(model.V, "categorical", model.K, cfg.encoder, cfg.emb, cfg.hidden, rng)
    if model.latent == "continuous":
        return Encoder(model.V, "gaussian", model.dim, cfg.encoder, cfg.emb, cfg.hidden, rng)
    raise ConfigError(f"family {cfg.family} has no amortized inference network")


def load_data(cfg: Config, data_dir: str | None) -> tuple[list[np.ndarray], Vocab]:
    if data_dir is None:
        res = synth_corpus(cfg)
        return res.sentences, res.vocab
    paths = corpus_paths(data_dir)
    vocab = load_vocab(paths["vocab"])
    if len(vocab) != cfg.V:
        raise ConfigError(f"config V={cfg.V} but the vocabulary has {len(vocab)} tokens")
    return load_corpus(paths["corpus"], vocab), vocab


def train(cfg: Config, sentences: Sequence, vocab: Vocab, out_dir: str, resume: str | None = None) -> dict:
    """Fit a fresh model with ``cfg.inference``; writes metrics, checkpoints and the config echo."""
    os.makedirs(out_dir, exist_ok=True)
    cfg.write(out_dir)
    root = Rng(cfg.seed)
    model = make_model(cfg, root.child(10), vocab)
    encoder = None
    if cfg.inference in ("vae", "wake-sleep"):
        encoder = make_encoder(cfg, model, root.child(11))
    if resume:
        model.load_values({k[len("model."):]: v for k, v in load_checkpoint(resume).items() if k.startswith("model.")})
        if encoder is not None:
            enc_vals = {k[len("encoder."):]: v for k, v in load_checkpoint(resume).items() if k.startswith("encoder.")}
            if enc_vals:
                restore(encoder.params, enc_vals)
    rng = root.child(12)
    summary: dict = {"inference": cfg.inference}
    with MetricsWriter(os.path.join(out_dir, "metrics.jsonl")) as mw:
        if cfg.inference == "em":
            if not isinstance(model, NaiveBayes):
                raise ConfigError("closed-form EM is implemented for the naive-bayes family")
            counts = Batch.from_sentences(list(sentences), model.V).counts
            init = None if not resume else model.probs()
            res = em_fit(counts, model.K, rng, cfg.em_iters, init=init, callback=mw.write)
            model.set_probs(res.mu, res.pi)
            summary["loglik"] = res.trajectory[-1]["loglik"]
        elif cfg.inference == "direct-marginal":
            hist = train_direct_marginal(model, sentences, rng, cfg.epochs, cfg.batch_size, cfg.lr, cfg.optimizer,
                                         callback=mw.write)
            summary["loglik"] = hist[-1]["loglik"]
        elif cfg.inference == "variational-em":
            hist = variational_em(model, sentences, rng, cfg.em_iters, cfg.svi_steps, cfg.svi_lr, callback=mw.write)
            summary.update(loglik=hist[-1]["loglik"], elbo=hist[-1]["elbo"])
        elif cfg.inference == "svi":
            hist = svi_train(model, sentences, rng, cfg.epochs, cfg.batch_size, cfg.lr, cfg.optimizer,
                             cfg.svi_steps, cfg.svi_lr, callback=mw.write)
            summary.update(hist[-1])
        elif cfg.inference == "vae":
            res = train_vae(model, encoder, sentences, rng, cfg.epochs, cfg.batch_size, cfg.lr, cfg.optimizer,
                            default_estimator(cfg, model), cfg.kl_warmup, cfg.free_bits, cfg.heldout_frac,
                            cfg.is_k, cfg.tau, cfg.iwae_k, callback=mw.write)
            summary.update({f"{r['split']}_{k}": r[k] for r in res.history[-2:] for k in ("elbo", "kl")})
        else:
            hist = wake_sleep_train(model, encoder, sentences, rng, cfg.epochs, cfg.batch_size, cfg.lr,
                                    cfg.optimizer, cfg.sleep_ratio, cap=cfg.max_length, callback=mw.write)
            summary.update(hist.history[-1])
    params = {f"model.{k}": v for k, v in model.params.items()}
    if encoder is not None:
        params.update({f"encoder.{k}": v for k, v in encoder.params.items()})
    save_checkpoint(os.path.join(out_dir, "model.ckpt"), params)
    summary["out_dir"] = out_dir
    return summary


def load_trained(cfg: Config, ckpt: str, vocab: Vocab | None = None) -> tuple[LatentModel, Encoder | None]:
    vals = load_checkpoint(ckpt)
    root = Rng(cfg.seed)
    model = make_model(cfg, root.child(10), vocab or make_vocab(cfg))
    model.load_values({k[6:]: v for k, v in vals.items() if k.startswith("model.")})
    enc_vals = {k[8:]: v for k, v in vals.items() if k.startswith("encoder.")}
    encoder = None
    if enc_vals:
        encoder = make_encoder(cfg, model, root.child(11))
        restore(encoder.params, enc_vals)
    return model, encoder


def evaluate(cfg: Config, model: LatentModel, encoder: Encoder | None, sentences: Sequence,
             rng: Rng) -> tuple[dict, list[dict]]:
    """Corpus summary plus per-sentence rows.

    The summary has the exact per-sentence log-likelihood for enumerable
    models and, when an encoder is available, the ELBO, its parts and an IS
    estimate with ``is_k`` draws. Rows carry each sentence's exact
    log-likelihood and its IWAE bound with ``iwae_k`` draws, averaged over
    ``iwae_reps`` repetitions drawn from ``rng.child(i)``.
    """
    out: dict = {"n": len(sentences)}
    exact = model.latent in ("discrete", "structured")
    if exact:
        out["loglik"] = corpus_log_marginal(model, sentences) / len(sentences)
    if encoder is not None:
        ev = evaluate_vae(model, encoder, sentences, rng, cfg.is_k)
        out.update(elbo=ev["elbo"], recon=ev["recon"], kl=ev["kl"], lp_is=ev["lp_is"])
    rows = []
    if exact or encoder is not None:
        for i, x in enumerate(sentences):
            row: dict = {"sentence": i}
            with T.no_grad():
                if exact:
                    row["loglik"] = float(log_marginal(model, Batch.of(x, model.V)).data[0])
                if encoder is not None:
                    q, r = encoder_forward(encoder, x), rng.child(i)
                    row[f"iwae_{cfg.iwae_k}"] = float(np.mean([iwae_bound(model, q, x, cfg.iwae_k, r)[0]
                                                               for _ in range(cfg.iwae_reps)]))
            rows.append(row)
    return out, rows


def sample(cfg: Config, model: LatentModel, vocab: Vocab, n: int, rng: Rng, path: str) -> float:
    from ..models import RECURRENT

    s = model.sample(rng, n, length=cfg.length if cfg.family not in RECURRENT else None, cap=cfg.max_length)
    write_corpus(path, s.sentences, vocab)
    return float(np.mean(s.truncated))


def diagnose(cfg: Config, model: LatentModel, encoder: Encoder, sentences: Sequence, rng: Rng,
             steps: int, writer: MetricsWriter) -> None:
    for i, x in enumerate(sentences):
        g = inference_gap_report(model, encoder, x, rng, steps, cfg.svi_lr)
        writer.write({"sentence": i, "log_px": g.log_px, "elbo_amortized": g.elbo_amortized,
                      "elbo_refined": g.elbo_refined, "approximation_gap": g.approximation_gap,
                      "amortization_gap": g.amortization_gap, "inference_gap": g.inference_gap,
                      "exact": g.exact})
