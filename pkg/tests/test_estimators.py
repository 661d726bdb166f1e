import math

import numpy as np
import pytest

from dlvm.distributions import Categorical, DiagGaussian
from dlvm.estimators import (concrete_relaxed_grad, exact_elbo_grad, is_log_marginal, iwae_bound, iwae_grads,
                             iwae_objective, reparam_grad, score_function_grad)
from dlvm.exact import log_marginal_enumeration
from dlvm.models import CategoricalBow, GaussianBow, GaussianObservation, NaiveBayes, UnsupportedModelError
from dlvm.rng import Rng
from dlvm.tensor import Tensor, grad_check_params
from dlvm.variational import Encoder, elbo_value


def gaussian_setup():
    # closed-form ELBO gradient for z ~ N(mu, e^lv), x | z ~ N(z, 1)
    toy = GaussianObservation(1, 1.0)
    x, mu, lv = np.array([1.5]), 0.2, -0.4
    closed = {"mean": (x[0] - mu) - mu, "log_var": 0.5 - math.exp(lv)}
    return toy, x, mu, lv, closed


def local(mu, lv):
    return {"mean": Tensor([mu], requires_grad=True), "log_var": Tensor([lv], requires_grad=True)}


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestGaussianEstimators:
    @pytest.mark.parametrize("which", ["score", "reparam"])
    def test_unbiased_against_closed_form(self, which):
        toy, x, mu, lv, closed = gaussian_setup()
        fn = score_function_grad if which == "score" else reparam_grad
        g = fn(toy, local(mu, lv), x, 100000, Rng(42))
        for k, v in closed.items():
            assert abs(g.grads[k][0] - v) < 4 * g.stderr(k)[0]

    def test_reparam_has_lower_variance(self):
        toy, x, mu, lv, _ = gaussian_setup()
        for k in ("mean", "log_var"):
            vs = score_function_grad(toy, local(mu, lv), x, 5000, Rng(1)).variance(k)
            vr = reparam_grad(toy, local(mu, lv), x, 5000, Rng(2)).variance(k)
            assert vr[0] < vs[0]

    def test_sampled_kl_mode_is_unbiased(self):
        toy, x, mu, lv, closed = gaussian_setup()
        g = reparam_grad(toy, local(mu, lv), x, 100000, Rng(3), kl_mode="sampled")
        for k, v in closed.items():
            assert abs(g.grads[k][0] - v) < 4 * g.stderr(k)[0]

    def test_model_gradients_agree(self):
        m = GaussianBow(2, 4, Rng(4))
        x = np.array([0, 3, 3])
        lam = {"mean": Tensor([0.1, -0.3], requires_grad=True), "log_var": Tensor([-1.0, -0.5], requires_grad=True)}
        gs = score_function_grad(m, lam, x, 40000, Rng(5))
        gr = reparam_grad(m, lam, x, 40000, Rng(6))
        np.testing.assert_allclose(gs.grads["model.W"], gr.grads["model.W"], atol=0.05)

    def test_encoder_source_names_parameters(self):
        m = GaussianBow(2, 4, Rng(7))
        enc = Encoder(4, "gaussian", 2, "bow", rng=Rng(8))
        g = reparam_grad(m, enc, np.array([1, 2]), 10, Rng(9))
        assert g.per_sample is None
        assert any(k.startswith("encoder.") for k in g.grads) and any(k.startswith("model.") for k in g.grads)
        with pytest.raises(ValueError):
            g.stderr("encoder.W")

    def test_reparam_rejects_categorical(self):
        with pytest.raises(UnsupportedModelError, match="score_function_grad"):
            reparam_grad(NaiveBayes(2, 3), {"logits": Tensor(np.zeros(2), requires_grad=True)}, np.array([0]), 5, Rng(0))


class TestCategoricalEstimators:
    def test_exact_gradient_matches_finite_differences(self):
        m = NaiveBayes(3, 5, Rng(10))
        x = np.array([0, 4, 4])
        lam = {"logits": Tensor([0.2, -0.1, 0.4], requires_grad=True)}
        err = grad_check_params(lambda: elbo_value(m, Categorical(lam["logits"]), x), {**lam, **m.params})
        assert max(err.values()) < 1e-6
        g = exact_elbo_grad(m, lam, x)
        h = 1e-6
        for i in range(3):
            d = np.zeros(3)
            d[i] = h
            fd = (elbo_value(m, Categorical(lam["logits"].data + d), x).item()
                  - elbo_value(m, Categorical(lam["logits"].data - d), x).item()) / (2 * h)
            np.testing.assert_allclose(g.grads["logits"][i], fd, atol=1e-7)

    def test_score_function_is_unbiased(self):
        m = NaiveBayes(3, 5, Rng(11))
        x = np.array([1, 2, 2, 3])
        lam = {"logits": Tensor([0.3, 0.0, -0.5], requires_grad=True)}
        exact = exact_elbo_grad(m, lam, x).grads["logits"]
        g = score_function_grad(m, lam, x, 100000, Rng(12))
        assert np.all(np.abs(g.grads["logits"] - exact) < 4 * g.stderr("logits") + 1e-12)

    def test_concrete_cosine_improves_as_temperature_falls(self):
        m = CategoricalBow(2, 4, Rng(13), scale=1.0)
        x = np.array([0, 3, 1, 1])
        lam = {"logits": Tensor([0.3, -0.2], requires_grad=True)}
        exact = exact_elbo_grad(m, lam, x).flat()
        cos = [cosine(concrete_relaxed_grad(m, lam, x, tau, 20000, Rng(14)).flat(), exact) for tau in (2.0, 0.1)]
        assert cos[1] > cos[0] and cos[1] > 0.99

    def test_concrete_kl_modes_run(self):
        m = CategoricalBow(3, 4, Rng(15))
        lam = {"logits": Tensor([0.1, 0.2, -0.3], requires_grad=True)}
        for mode in ("categorical", "concrete"):
            g = concrete_relaxed_grad(m, lam, np.array([0, 1]), 0.5, 100, Rng(16), kl_mode=mode)
            assert np.all(np.isfinite(g.flat()))
        with pytest.raises(ValueError):
            concrete_relaxed_grad(m, lam, np.array([0]), 0.5, 10, Rng(0), kl_mode="bogus")

    def test_concrete_rejects_indexed_models(self):
        with pytest.raises(UnsupportedModelError, match="unsupported model"):
            concrete_relaxed_grad(NaiveBayes(2, 3), {"logits": Tensor(np.zeros(2), requires_grad=True)},
                                  np.array([0]), 0.5, 5, Rng(0))


class TestIwae:
    def test_k1_is_single_sample_elbo(self):
        toy = GaussianObservation(2, 0.6)
        x = np.array([0.4, -1.0])
        q = DiagGaussian([0.1, -0.2], [-0.3, 0.2])
        eps = np.array([[0.5, -1.5]])
        val, _ = iwae_bound(toy, q, x, 1, noise=eps)
        np.testing.assert_allclose(val, elbo_value(toy, q, x, noise=eps, kl_mode="sampled").item(), rtol=1e-12)

    def test_bounds_order_on_average(self):
        toy = GaussianObservation(1, 0.5)
        x = np.array([1.3])
        q = DiagGaussian([0.0], [0.0])
        rng = Rng(17)
        means = [np.mean([iwae_bound(toy, q, x, K, rng)[0] for _ in range(300)]) for K in (1, 5, 50)]
        assert means[0] < means[1] < means[2] < toy.log_marginal(x)

    def test_importance_sampling_matches_enumeration(self):
        m = NaiveBayes(4, 6, Rng(18))
        x = np.array([0, 5, 2, 2])
        q = Categorical(np.zeros(4))
        est = is_log_marginal(m, q, x, 100000, Rng(19))
        assert abs(est - log_marginal_enumeration(m, x).item()) < 1e-2

    def test_importance_sampling_gaussian_closed_form(self):
        toy = GaussianObservation(2, 0.8)
        x = np.array([0.3, 1.1])
        mean, var = toy.posterior(x)
        q = DiagGaussian(mean, np.log(var) + 0.3)
        assert abs(is_log_marginal(toy, q, x, 100000, Rng(20)) - toy.log_marginal(x)) < 1e-3

    def test_normalized_weights(self):
        _, s = iwae_bound(GaussianObservation(1, 1.0), DiagGaussian([0.0], [0.0]), np.array([0.5]), 10, Rng(21))
        np.testing.assert_allclose(s.normalized.sum(), 1.0, rtol=1e-14)
        assert s.z.shape == (10, 1)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            iwae_bound(GaussianObservation(1, 1.0), DiagGaussian([0.0], [0.0]), np.array([0.0]), 0, Rng(0))

    def test_gradients_match_fixed_noise_objective(self):
        m = GaussianBow(2, 5, Rng(22))
        x = np.array([1, 1, 4])
        lam = {"mean": Tensor([0.2, 0.1], requires_grad=True), "log_var": Tensor([-0.4, 0.3], requires_grad=True)}
        K = 6
        eps = Rng(23).normal((K, 2))
        theta, phi = iwae_grads(m, lam, x, K, Rng(23))

        def objective():
            return iwae_objective(m, DiagGaussian(lam["mean"], lam["log_var"]), x, K, noise=eps)[0]

        err = grad_check_params(objective, {**lam, **m.params})
        assert max(err.values()) < 1e-4
        for p in list(lam.values()) + list(m.params.values()):
            p.grad = None
        objective().backward()
        for k in lam:
            np.testing.assert_allclose(phi.grads[k], lam[k].grad, rtol=1e-10)
        for k, p in m.params.items():
            np.testing.assert_allclose(theta.grads[f"model.{k}"], p.grad, rtol=1e-10, atol=1e-14)
