from __future__ import annotations

import logging

import numpy as np
import pytest
from scipy.stats import norm

from iccflow.boed import (
    EigSettings,
    LinearGaussianBank,
    SamplingDistribution,
    estimate_eig,
    run_icc,
    select_next_step,
)
from iccflow.errors import InvalidArgumentError
from iccflow.infer import GaussianPosterior, NoiseModel, PriorSpec
from iccflow.pathtree import LoadPathTree
from iccflow.reduce import ReducedObservation
from iccflow.surrogate import ParameterBounds

HALF_LN2 = 0.5 * np.log(2.0)
STUB_PRIOR = PriorSpec((0.0,), (1.0,), ParameterBounds((-50.0,), (50.0,)))


def stub(psi2=1.0, **maps):
    """1-D stub observing ``g * theta + c`` on the x load channel (p = 0)."""
    bank = LinearGaussianBank({k: (np.array([[g], [0.0]]), np.array([c, 0.0])) for k, (g, c) in maps.items()}, p=0)
    return bank, NoiseModel(1.0, psi2, qois=("load_X",))


class TestConjugateOracle:
    def test_half_ln2(self):
        bank, noise = stub(A=(1.0, 0.0))
        e = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=2000, M=500))
        assert abs(e.value - HALF_LN2) <= 3 * e.standard_error
        assert e.fallback_count == 0 and e.n_used == 2000

    def test_zero_information(self):
        bank, noise = stub(B=(0.0, 3.0))
        e = estimate_eig(STUB_PRIOR, "B", bank, noise, EigSettings(N=2000, M=500))
        assert abs(e.value) <= 3 * e.standard_error + 1e-12

    def test_multivariate_posterior_sampling(self):
        rng = np.random.default_rng(4)
        b = ParameterBounds((-100.0,) * 3, (100.0,) * 3)
        G = rng.normal(size=(4, 3))
        bank = LinearGaussianBank({"A": (G, np.zeros(4))}, p=1)
        noise = NoiseModel(0.5, 2.0)
        A = rng.normal(size=(3, 3))
        post = GaussianPosterior(np.array([1.0, -2.0, 0.5]), A @ A.T + np.eye(3), b)
        e = estimate_eig(post, "A", bank, noise, EigSettings(N=1500, M=500, seed=2))
        exact = bank.exact_eig("A", post.covariance, noise)
        assert abs(e.value - exact) <= 3 * e.standard_error + 0.02 * exact

    def test_m_bias_direction(self):
        bank, noise = stub(A=(3.0, 0.0))
        lo = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=1000, M=10))
        hi = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=1000, M=1000))
        exact = 0.5 * np.log(10.0)
        # the nested estimator is biased upward; the bias shrinks with M
        assert lo.value > hi.value
        assert abs(hi.value - exact) < abs(lo.value - exact)


class TestUnderflowFallback:
    def test_tiny_noise_uses_fallback(self):
        bank, noise = stub(psi2=1e-12, A=(1.0, 0.0))
        e = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=200, M=200))
        exact = 0.5 * np.log(1.0 + 1e12)
        assert e.n_degenerate > 0 and e.fallback_count == e.n_degenerate
        assert np.isfinite(e.value)
        assert abs(e.value - exact) <= 4 * e.standard_error + 0.05

    def test_never_policy_is_plain_sum(self):
        bank, noise = stub(psi2=1e-12, A=(1.0, 0.0))
        e = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=100, M=100, fallback="never"))
        assert e.fallback_count == 0 and e.n_degenerate > 0

    def test_always_agrees_with_plain_where_valid(self):
        bank, noise = stub(A=(1.0, 0.0))
        plain = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=300, M=300, fallback="never"))
        hyb = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=300, M=300, fallback="always"))
        assert hyb.fallback_count == 300
        assert abs(plain.value - hyb.value) <= 3 * np.hypot(plain.standard_error, hyb.standard_error)


class TestEstimatorMechanics:
    def test_chunk_independent_and_deterministic(self):
        bank, noise = stub(A=(2.0, 1.0))
        a = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=100, M=50, chunk=7))
        b = estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=100, M=50, chunk=64))
        assert a.value == pytest.approx(b.value, rel=1e-12)
        assert a == estimate_eig(STUB_PRIOR, "A", bank, noise, EigSettings(N=100, M=50, chunk=7))

    def test_unknown_node(self):
        bank, noise = stub(A=(1.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            estimate_eig(STUB_PRIOR, "AB", bank, noise, EigSettings(N=10, M=10))

    def test_settings_invariants(self):
        with pytest.raises(InvalidArgumentError):
            EigSettings(N=0)
        with pytest.raises(InvalidArgumentError):
            EigSettings(fallback="sometimes")
        assert (EigSettings.full().N, EigSettings.full().M) == (10000, 1000)

    def test_truncated_posterior_density_is_normalized(self):
        post = GaussianPosterior(np.zeros(1), np.eye(1), ParameterBounds((0.0,), (50.0,)))
        d = SamplingDistribution(post)
        assert d.logpdf(np.array([0.5]))[0] == pytest.approx(norm.logpdf(0.5) + np.log(2.0), rel=1e-6)
        assert d.logpdf(np.array([-0.5]))[0] == -np.inf

    def test_prior_sampling_distribution_matches_log_prior(self):
        d = SamplingDistribution(STUB_PRIOR)
        assert d.logpdf(np.array([0.3]))[0] == pytest.approx(norm.logpdf(0.3), rel=1e-12)
        with pytest.raises(InvalidArgumentError):
            SamplingDistribution("prior")


class TestSelection:
    def test_picks_informative_child(self):
        bank, noise = stub(A=(0.0, 0.0), AA=(0.05, 0.0), AB=(4.0, 0.0))
        sel = select_next_step(STUB_PRIOR, "A", bank, noise, EigSettings(N=400, M=200))
        assert sel.axis == "B" and not sel.tie
        assert sel.estimates[1].value > sel.estimates[0].value

    def test_tie_resolves_to_a(self, caplog):
        bank, noise = stub(A=(0.0, 0.0), AA=(1.0, 0.0), AB=(1.0, 5.0))
        with caplog.at_level(logging.INFO):
            sel = select_next_step(STUB_PRIOR, "A", bank, noise, EigSettings(N=200, M=100))
        assert sel.tie and sel.axis == "A"
        assert "tie" in caplog.text

    def test_leaf_rejected(self):
        bank, noise = stub(A=(1.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            select_next_step(STUB_PRIOR, "A", bank, noise, depth=1)


class TestRunIcc:
    def make(self):
        gains = {"A": 1.0, "AA": 0.2, "AB": 3.0, "ABA": 2.0, "ABB": 0.1, "AAA": 0.1, "AAB": 0.1}
        bank, noise = stub(**{k: (g, 0.0) for k, g in gains.items()})
        theta = 0.7
        truth = {k: ReducedObservation(np.zeros(0), np.zeros(0), g * theta, 0.0, k) for k, g in gains.items()}
        return bank, noise, truth

    def test_follows_eig_and_chains_posteriors(self):
        bank, noise, truth = self.make()
        s = EigSettings(N=300, M=150)
        res = run_icc(truth, LoadPathTree(3), bank, STUB_PRIOR, noise, s)
        assert res.path == "ABA"
        assert [st.node_id for st in res.steps] == ["A", "AB", "ABA"]
        assert res.steps[-1].selection is None and len(res.eig_table) == 2
        # the decision after step 2 samples from exactly the step-2 posterior
        again = estimate_eig(res.steps[1].posterior, "ABA", bank, noise, s)
        assert again == res.steps[1].selection.estimates[0]
        assert res.chosen_eigs().shape == (2,)
        assert res.final.contains([0.7]).all()

    def test_failure_reports_step(self):
        bank, noise, truth = self.make()
        truth["AB"] = ReducedObservation(np.zeros(0), np.zeros(0), 0.0, 0.0, "ZZ")
        with pytest.raises(InvalidArgumentError) as ei:
            run_icc(truth, LoadPathTree(3), bank, STUB_PRIOR, noise, EigSettings(N=50, M=50))
        assert ei.value.step == 2 and "step 2" in str(ei.value)
