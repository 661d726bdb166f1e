"""Generative model families and their log-joint evaluators."""

from __future__ import annotations

import numpy as np

from ..rng import Rng
from .base import LatentModel, Samples, UnsupportedModelError
from .gaussian import GaussianBow, GaussianCrnn
from .hmm import Hmm, HmmRows, neural_hmm_realize
from .naive_bayes import CategoricalBow, NaiveBayes
from .rnnlm import MixtureRnnLm, RnnLm
from .toys import GaussianObservation, SymmetricMixtureToy

FAMILIES = ("naive-bayes", "categorical-bow", "mixture-rnn", "gaussian-bow", "gaussian-crnn",
            "hmm", "neural-hmm", "rnnlm")

# Families whose sentences terminate with an end-of-sentence token.
RECURRENT = ("mixture-rnn", "gaussian-crnn", "rnnlm")


def nb_log_joint(model: NaiveBayes, x, z: int) -> float:
    return model.log_joint(x, z).data[0]


def rnnlm_log_likelihood(model: RnnLm, x) -> float:
    return model.log_likelihood_plain(x).item()


def crnnlm_log_likelihood(model: RnnLm, x, z) -> float:
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    return model.log_lik_rows(model.batch(x), z).item()


def mixture_rnn_log_joint(model: MixtureRnnLm, x, z: int) -> float:
    return model.log_joint(x, z).data[0]


def gaussian_bow_log_joint(model: GaussianBow, x, z) -> float:
    return model.log_joint(x, np.asarray(z, float)).data[0]


def gaussian_crnn_log_joint(model: GaussianCrnn, x, z) -> float:
    return model.log_joint(x, np.asarray(z, float)).data[0]


def hmm_log_joint(model: Hmm, x, z) -> float:
    return model.log_joint(x, z).item()


def ancestral_sample(model: LatentModel, rng: Rng, n: int, length=10, cap: int = 20) -> Samples:
    """Draw (z, x) pairs. Recurrent families stop at end-of-sentence or ``cap``."""
    return model.sample(rng, n, length=length, cap=cap)


def build_model(family: str, V: int, rng: Rng, K: int = 4, dim: int = 16, hidden: int = 16,
                emb: int = 16, bos: int = 0, eos: int | None = None) -> LatentModel:
    if family == "naive-bayes":
        return NaiveBayes(K, V, rng)
    if family == "categorical-bow":
        return CategoricalBow(K, V, rng)
    if family == "mixture-rnn":
        return MixtureRnnLm(K, V, hidden, emb, rng, bos=bos, eos=eos)
    if family == "gaussian-bow":
        return GaussianBow(dim, V, rng)
    if family == "gaussian-crnn":
        return GaussianCrnn(dim, V, hidden, emb, rng, bos=bos, eos=eos)
    if family == "hmm":
        return Hmm(K, V, "tabular", rng, emb, hidden)
    if family == "neural-hmm":
        return Hmm(K, V, "neural", rng, emb, hidden)
    if family == "rnnlm":
        return RnnLm(V, hidden, emb, rng=rng, bos=bos, eos=eos)
    raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")


__all__ = [
    "LatentModel", "Samples", "UnsupportedModelError", "NaiveBayes", "CategoricalBow", "RnnLm",
    "MixtureRnnLm", "GaussianBow", "GaussianCrnn", "Hmm", "HmmRows", "GaussianObservation",
    "SymmetricMixtureToy", "FAMILIES", "RECURRENT", "build_model", "ancestral_sample",
    "nb_log_joint", "rnnlm_log_likelihood", "crnnlm_log_likelihood", "mixture_rnn_log_joint",
    "gaussian_bow_log_joint", "gaussian_crnn_log_joint", "hmm_log_joint", "neural_hmm_realize",
]
