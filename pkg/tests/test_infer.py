from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, truncnorm

from iccflow.boed import LinearGaussianBank
from iccflow.errors import InvalidArgumentError, PosteriorError
from iccflow.infer import (
    QOI_GROUPS,
    GaussianPosterior,
    McmcSettings,
    NoiseModel,
    PriorSpec,
    fd_hessian,
    laplace_from_hessian,
    laplace_posterior,
    log_likelihood,
    log_posterior,
    log_prior,
    map_estimate,
    mcmc_sample,
    qoi_loglike_contributions,
    sample_prior,
    summarize,
)
from iccflow.reduce import ReducedObservation
from iccflow.surrogate import ParameterBounds

PRIOR = PriorSpec()
B = PRIOR.bounds
NOISE = NoiseModel()
THETA_TRUE = np.array([293.1, 94.0, 14.35, 11.19])


def linear_case(scale=100.0, seed=0):
    """Affine one-node bank (p=1) whose posterior is Gaussian with sd about 1/scale of the box."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4)) + 2 * np.eye(4)
    sig = np.sqrt([NOISE.psi2_disp, NOISE.psi2_disp, NOISE.psi2_load, NOISE.psi2_load])
    G = scale * sig[:, None] * A / B.width[None, :]
    c = rng.normal(size=4)
    bank = LinearGaussianBank({"A": (G, c)}, p=1)
    y = G @ THETA_TRUE + c
    ob = ReducedObservation(y[:1], y[1:2], y[2], y[3], "A")
    R = np.diag(sig**2)
    P = G.T @ np.linalg.solve(R, G) + np.diag(1 / np.asarray(PRIOR.delta2))
    S = np.linalg.inv(P)
    m = S @ (G.T @ np.linalg.solve(R, y - c) + PRIOR.mean / np.asarray(PRIOR.delta2))
    return bank, [ob], m, S


class TestPrior:
    def test_matches_scipy_truncnorm(self):
        a, b = PRIOR._standard_limits()
        th = np.array([300.0, 50.0, 10.0, 8.0])
        ref = sum(truncnorm.logpdf(th[d], a[d], b[d], PRIOR.mean[d], PRIOR.sd[d]) for d in range(4))
        assert log_prior(th, PRIOR) == pytest.approx(ref, rel=1e-12)

    def test_outside_bounds(self):
        assert log_prior(B.ub + 1.0, PRIOR) == -np.inf

    def test_sampler(self):
        s = sample_prior(PRIOR, 20000, seed=3)
        assert np.all(B.contains(s))
        a, b = PRIOR._standard_limits()
        ref = truncnorm.mean(a, b, PRIOR.mean, PRIOR.sd)
        se = truncnorm.std(a, b, PRIOR.mean, PRIOR.sd) / np.sqrt(20000)
        assert np.all(np.abs(s.mean(0) - ref) < 4 * se)
        np.testing.assert_array_equal(sample_prior(PRIOR, 50, seed=3), sample_prior(PRIOR, 50, seed=3))

    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            PriorSpec(delta2=(1.0, 1.0, 1.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            sample_prior(PRIOR, 0)


class TestLikelihood:
    def test_matches_multivariate_normal(self):
        bank, data, _, _ = linear_case()
        th = THETA_TRUE + 0.01 * B.width
        pred = bank.predict("A", th)
        R = np.diag([NOISE.psi2_disp, NOISE.psi2_disp, NOISE.psi2_load, NOISE.psi2_load])
        ref = multivariate_normal(pred, R).logpdf(data[0].vector())
        assert log_likelihood(data, th, bank, NOISE) == pytest.approx(ref, rel=1e-12)

    def test_contributions_sum_and_inactive_groups(self):
        bank, data, _, _ = linear_case()
        th = THETA_TRUE + 0.02 * B.width
        terms = qoi_loglike_contributions(data, th, bank, NOISE)
        assert set(terms) == set(QOI_GROUPS)
        assert sum(terms.values()) == pytest.approx(log_likelihood(data, th, bank, NOISE), rel=1e-14)
        only = qoi_loglike_contributions(data, th, bank, NOISE.with_qois(("load_X",)))
        assert only["dispPCA_X"] == 0.0 and only["load_X"] == terms["load_X"]

    def test_batch_matches_scalar(self):
        bank, data, _, _ = linear_case()
        ths = B.from_unit(np.random.default_rng(1).random((6, 4)))
        batch = log_posterior(ths, data, PRIOR, bank, NOISE)
        for t, v in zip(ths, batch):
            assert v == pytest.approx(log_posterior(t, data, PRIOR, bank, NOISE), rel=1e-12)

    def test_unknown_node(self):
        bank, data, _, _ = linear_case()
        bad = [ReducedObservation(data[0].scores_x, data[0].scores_y, 0.0, 0.0, "AB")]
        with pytest.raises(InvalidArgumentError):
            log_likelihood(bad, THETA_TRUE, bank, NOISE)

    def test_invalid_noise(self):
        with pytest.raises(InvalidArgumentError):
            NoiseModel(psi2_disp=-1.0)
        with pytest.raises(InvalidArgumentError):
            NoiseModel(qois=("strain",))


class TestMapAndLaplace:
    def test_map_matches_conjugate_mean(self):
        bank, data, m, S = linear_case()
        res = map_estimate(data, PRIOR, bank, NOISE)
        assert np.all(np.abs(res.theta - m) < 0.01 * np.sqrt(np.diag(S)))
        assert res.n_improved >= 1

    def test_laplace_matches_conjugate_covariance(self):
        bank, data, m, S = linear_case()
        post = laplace_posterior(data, PRIOR, bank, NOISE)
        np.testing.assert_allclose(post.covariance, S, rtol=1e-3, atol=1e-3 * np.sqrt(np.outer(np.diag(S), np.diag(S))).max())

    def test_fd_hessian_quadratic_interior_and_face(self):
        H0 = np.array([[2.0, 0.3], [0.3, 1.0]])
        f = lambda z: 0.5 * z @ H0 @ z + z.sum()
        H, one = fd_hessian(f, np.array([0.5, 0.5]), 1e-3)
        np.testing.assert_allclose(H, H0, rtol=1e-6)
        assert not one
        H, one = fd_hessian(f, np.array([0.0, 1.0]), 1e-3)
        np.testing.assert_allclose(H, H0, rtol=1e-6)
        assert one

    def test_indefinite_hessian_rejected(self):
        with pytest.raises(PosteriorError):
            laplace_from_hessian(THETA_TRUE, np.diag([1.0, -1.0, 1.0, 1.0]), B)

    def test_covariance_scaling(self):
        post = laplace_from_hessian(THETA_TRUE, 4.0 * np.eye(4), B)
        np.testing.assert_allclose(np.diag(post.covariance), B.width**2 / 4, rtol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_truncated_samples_inside(self, seed):
        post = GaussianPosterior(B.lb + 0.01 * B.width, np.diag((0.05 * B.width) ** 2), B)
        s = post.sample(64, np.random.default_rng(seed))
        assert s.shape == (64, 4) and np.all(B.contains(s))


class TestMcmc:
    def test_gaussian_target(self):
        bank, data, m, S = linear_case(scale=20.0)
        chain = mcmc_sample(data, PRIOR, bank, NOISE, McmcSettings(20000, 4000, 4, 100, seed=1),
                            start=m, initial_cov=S)
        sd = np.sqrt(np.diag(S))
        assert np.all(np.abs(chain.samples.mean(0) - m) < 0.2 * sd)
        ratio = chain.samples.std(0) / sd
        assert np.all((ratio > 0.8) & (ratio < 1.25))
        assert 0.05 <= chain.acceptance_rate <= 0.7

    def test_deterministic(self):
        bank, data, m, S = linear_case(scale=20.0)
        cfg = McmcSettings(600, 100, 5, 50, seed=9)
        a = mcmc_sample(data, PRIOR, bank, NOISE, cfg, start=m)
        b = mcmc_sample(data, PRIOR, bank, NOISE, cfg, start=m)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.samples.shape == (100, 4)

    def test_bad_start(self):
        bank, data, _, _ = linear_case()
        with pytest.raises(InvalidArgumentError):
            mcmc_sample(data, PRIOR, bank, NOISE, McmcSettings(10, 0, 1, 1), start=B.ub + 1)

    def test_invalid_settings(self):
        with pytest.raises(InvalidArgumentError):
            McmcSettings(100, 100)


class TestSummary:
    def test_gaussian_and_samples(self):
        S = np.array([[4.0, 1.0], [1.0, 9.0]])
        post = GaussianPosterior(np.zeros(2), S, ParameterBounds((0.0, 0.0), (1.0, 1.0)))
        s = summarize(post)
        np.testing.assert_allclose(s.zeta, 1.96 * np.array([2.0, 3.0]))
        assert s.generalized_variance == pytest.approx(35.0)
        assert s.correlation[0, 1] == pytest.approx(1 / 6)
        assert s.contains([3.9, -5.8]).all() and not s.contains([4.0, 0]).all()
        x = np.random.default_rng(0).normal(size=(500, 2))
        np.testing.assert_allclose(summarize(x).covariance, np.cov(x, rowvar=False))

    def test_too_few_samples(self):
        with pytest.raises(InvalidArgumentError):
            summarize(np.zeros((1, 4)))
