from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iccflow.boed import LinearGaussianBank
from iccflow.errors import InvalidArgumentError
from iccflow.infer import GaussianPosterior, NoiseModel
from iccflow.reduce import ReducedObservation
from iccflow.report import (
    PredictiveEnsemble,
    band_differences,
    bflpd,
    credible_band,
    error_metrics,
    line_scan_nodes,
    posterior_predictive,
    save_calibration,
)
from iccflow.structure import build_cruciform_mesh
from iccflow.surrogate import ParameterBounds

THETA = np.array([293.1, 94.0, 14.35, 11.19])


class TestErrorMetrics:
    def test_double_prediction_gives_two_thirds(self):
        t = np.arange(1.0, 13.0).reshape(1, 12)
        m = error_metrics(t, 2 * t)
        for g in m.values():
            np.testing.assert_allclose(g["sMAPE"], 200 / 3)
        np.testing.assert_allclose(m["load_X"]["MAE"], [11.0])

    def test_accepts_observations(self):
        ob = ReducedObservation(np.ones(2), np.ones(2), 10.0, -5.0, "A")
        m = error_metrics([ob], [ob])
        assert m["dispPCA_Y"]["sMAPE"].shape == (2,)
        assert all(np.all(g["MAE"] == 0) for g in m.values())

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            error_metrics(np.ones((2, 12)), np.ones((3, 12)))

    @given(arrays(float, (3, 8), elements=st.floats(-1e3, 1e3)), arrays(float, (3, 8), elements=st.floats(-1e3, 1e3)))
    def test_smape_bounded_and_symmetric(self, a, b):
        m1, m2 = error_metrics(a, b), error_metrics(b, a)
        for g in m1:
            s1, s2 = m1[g]["sMAPE"], m2[g]["sMAPE"]
            ok = np.isfinite(s1)
            assert np.all((s1[ok] >= 0) & (s1[ok] <= 200 + 1e-9))
            np.testing.assert_allclose(s1[ok], s2[ok])


class TestBands:
    def _ensemble(self, count=50, spread=0.0):
        rng = np.random.default_rng(0)
        obs = np.ones((count, 2, 4)) + spread * rng.standard_normal((count, 2, 4))
        f = np.zeros((count, 2, 7))
        return PredictiveEnsemble("AA", ("A", "AA"), np.zeros((count, 4)), obs, f, f)

    def test_constant_ensemble_zero_width(self):
        b = credible_band(self._ensemble())
        np.testing.assert_array_equal(b.load_lower, b.load_upper)
        assert b.field_x_lower.shape == (2, 7)

    def test_too_few_draws(self):
        with pytest.raises(InvalidArgumentError):
            credible_band(self._ensemble(count=10))

    def test_gaussian_band_width(self):
        b = credible_band(self._ensemble(count=20000, spread=1.0))
        np.testing.assert_allclose(b.load_upper - b.load_lower, 2 * 1.96, rtol=0.05)

    def test_band_differences(self):
        d = band_differences(np.zeros(4), np.ones(4), np.array([-0.5, 0.2, 1.0, 3.0]))
        np.testing.assert_array_equal(d, [-0.5, 0.0, 0.0, 2.0])


class TestPredictive:
    def test_noise_floor_and_determinism(self, tiny_bank):
        bank, _ = tiny_bank
        noise = NoiseModel.from_bank(bank)
        b = ParameterBounds()
        post = GaussianPosterior(THETA, np.diag((1e-9 * b.width) ** 2), b)
        ens = posterior_predictive(post, "AB", bank, noise, count=2000, seed=3)
        assert ens.observations.shape == (2000, 2, 2 * bank.p + 2)
        assert ens.fields_x.shape[:2] == (2000, 2)
        np.testing.assert_allclose(ens.loads.std(0), np.sqrt(noise.psi2_load), rtol=0.06)
        again = posterior_predictive(post, "AB", bank, noise, count=2000, seed=3)
        np.testing.assert_array_equal(ens.observations, again.observations)

    def test_missing_node(self, tiny_bank):
        bank, _ = tiny_bank
        post = GaussianPosterior(THETA, np.eye(4), ParameterBounds())
        with pytest.raises(InvalidArgumentError):
            posterior_predictive(post, "ABB", bank, NoiseModel.from_bank(bank), count=30)


class TestBflpd:
    def test_noise_free_data_at_truth(self):
        G = np.random.default_rng(1).normal(size=(4, 4))
        bank = LinearGaussianBank({"A": (G, np.zeros(4))}, p=1)
        noise = NoiseModel(0.5, 2.0)
        y = G @ THETA
        ob = ReducedObservation(y[:1], y[1:2], y[2], y[3], "A")
        ref = -2 * np.log(2 * np.pi) - 0.5 * np.log(0.5**2 * 2.0**2)
        assert bflpd([ob], THETA, bank, noise) == pytest.approx(ref, rel=1e-12)
        assert bflpd([ob], THETA * 1.01, bank, noise) < ref


class TestLineScans:
    def test_scan_lines(self):
        mesh = build_cruciform_mesh()
        s = line_scan_nodes(mesh)
        xy = mesh.nodes[mesh.gauge]
        assert (s["horizontal"].size, s["diagonal"].size) == (14, 11)
        np.testing.assert_allclose(xy[s["horizontal"], 1], 0.0, atol=1e-9)
        r = np.hypot(*xy[s["diagonal"]].T)
        assert np.all(np.diff(r) > 0)


class TestPersistence:
    def test_calibration_record(self, tmp_path):
        post = GaussianPosterior(THETA, np.diag([1.0, 2.0, 3.0, 4.0]), ParameterBounds())
        p = save_calibration(tmp_path, "AAAAA", post)
        rec = json.loads(p.read_text())
        assert rec["path"] == "AAAAA"
        np.testing.assert_allclose(rec["mean"], THETA)
