from __future__ import annotations

import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import qmc

from iccflow.errors import InvalidArgumentError
from iccflow.surrogate import (
    KSI,
    BankConfig,
    GpSettings,
    ParameterBounds,
    SurrogateBank,
    bank_predict,
    build_bank,
    gp_predict_mean,
    gp_predict_var,
    halton_samples,
    heldout_errors,
    load_gp,
    save_gp,
    train_gp,
)
from iccflow.surrogate.gp import multi_channel_mean


class TestBounds:
    def test_defaults_in_mpa(self):
        b = ParameterBounds()
        np.testing.assert_allclose(b.lb, [32 * KSI, 1 * KSI, 0.5, 4.0])
        np.testing.assert_allclose(b.ub, [50 * KSI, 20 * KSI, 20.0, 16.0])
        assert b.lb[0] == pytest.approx(220.6, abs=0.05) and b.ub[0] == pytest.approx(344.7, abs=0.05)

    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            ParameterBounds((1.0, 2.0), (1.0, 3.0))

    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4))
    def test_unit_round_trip(self, z):
        b = ParameterBounds()
        np.testing.assert_allclose(b.to_unit(b.from_unit(z)), z, atol=1e-12)


class TestHalton:
    def test_first_point(self):
        b = ParameterBounds()
        x = halton_samples(1, b)[0]
        np.testing.assert_allclose(b.to_unit(x), [1 / 2, 1 / 3, 1 / 5, 1 / 7], rtol=1e-14)

    def test_strictly_inside(self):
        b = ParameterBounds()
        assert np.all(b.contains(halton_samples(420, b), strict=True))

    def test_offset_continues_sequence(self):
        np.testing.assert_array_equal(halton_samples(30)[10:], halton_samples(20, start=10))

    def test_lower_discrepancy_than_uniform(self):
        b = ParameterBounds()
        d_h = qmc.discrepancy(b.to_unit(halton_samples(400, b)), method="L2-star")
        rng = np.random.default_rng(0)
        d_u = np.median([qmc.discrepancy(rng.random((400, 4)), method="L2-star") for _ in range(20)])
        assert d_h < d_u


def _sin_gp(n=30):
    x = (np.arange(n) + 0.5)[:, None] / n
    return train_gp(x, np.sin(2 * np.pi * x[:, 0]), [0.0], [1.0]), x


class TestGp:
    def test_sin_oracle(self):
        m, _ = _sin_gp()
        g = np.linspace(0, 1, 1001)[:, None]
        rmse = np.sqrt(np.mean((gp_predict_mean(m, g) - np.sin(2 * np.pi * g[:, 0])) ** 2))
        assert rmse < 1e-3

    def test_interpolates_training_points(self):
        m, x = _sin_gp()
        y = np.sin(2 * np.pi * x[:, 0])
        np.testing.assert_allclose(gp_predict_mean(m, x), y, rtol=0, atol=1e-5)

    def test_constant_targets(self):
        x = np.random.default_rng(0).random((12, 2))
        m = train_gp(x, np.full(12, 3.25), [0, 0], [1, 1])
        np.testing.assert_allclose(gp_predict_mean(m, np.random.default_rng(1).random((50, 2))), 3.25, atol=1e-8)

    def test_linear_target(self):
        rng = np.random.default_rng(2)
        x = rng.random((40, 3))
        f = lambda z: 2 * z[:, 0] - z[:, 1] + 0.5 * z[:, 2]
        m = train_gp(x, f(x), [0] * 3, [1] * 3)
        q = rng.random((200, 3))
        rmse = np.sqrt(np.mean((gp_predict_mean(m, q) - f(q)) ** 2))
        assert rmse < 1e-3 * np.ptp(f(x))

    def test_deterministic(self):
        m, _ = _sin_gp()
        q = np.random.default_rng(5).random((10, 1))
        np.testing.assert_array_equal(gp_predict_mean(m, q), gp_predict_mean(m, q))
        m2, _ = _sin_gp()
        np.testing.assert_array_equal(m.lengthscales, m2.lengthscales)

    def test_too_few_points(self):
        with pytest.raises(InvalidArgumentError):
            train_gp(np.zeros((4, 3)), np.zeros(4))

    def test_variance_small_at_data_nonnegative_elsewhere(self):
        m, x = _sin_gp()
        assert np.all(gp_predict_var(m, x) < 1e-6)
        assert np.all(gp_predict_var(m, np.linspace(0, 1, 77)[:, None]) >= 0)

    def test_extrapolation_warns(self, caplog):
        m, _ = _sin_gp()
        with caplog.at_level(logging.WARNING):
            gp_predict_mean(m, np.array([1.5]))
        assert "extrapolation" in caplog.text

    def test_persistence_round_trip(self, tmp_path):
        m, _ = _sin_gp()
        p = save_gp(m, tmp_path / "m.gp", {"node": "A"})
        m2 = load_gp(p)
        q = np.linspace(0, 1, 33)[:, None]
        np.testing.assert_array_equal(gp_predict_mean(m, q), gp_predict_mean(m2, q))

    def test_multi_channel_kernel_matches_single(self):
        rng = np.random.default_rng(3)
        x = rng.random((25, 2))
        models = [train_gp(x, np.sin(3 * x[:, 0]) + k * x[:, 1], [0, 0], [1, 1]) for k in range(3)]
        q = rng.random((7, 2))
        out = np.empty((7, 3))
        multi_channel_mean(q, x, np.stack([1 / m.lengthscales for m in models]), np.stack([m.alpha for m in models]),
                           np.array([m.y_mean for m in models]), np.array([m.y_scale for m in models]), out)
        for k, m in enumerate(models):
            np.testing.assert_allclose(out[:, k], gp_predict_mean(m, q), rtol=1e-12, atol=1e-12)

    def test_settings_invariants(self):
        with pytest.raises(InvalidArgumentError):
            GpSettings(n_starts=0)


class TestBank:
    def test_layout_and_counts(self, tiny_bank):
        bank, d = tiny_bank
        assert bank.nodes == ["A", "AA", "AB"]
        man = json.loads((d / "manifest.json").read_text())
        assert man["counts"]["gp_models"] == 3 * 2 * (3 + 1)
        for node in bank.nodes:
            assert (d / node / "pca_X.basis").exists()
            assert (d / node / "Y" / "dispPCA_2.gp").exists()
            assert (d / node / "X" / "load.gp").exists()
            assert len(bank.models(node)) == 8

    def test_default_count_formula(self):
        cfg = BankConfig()
        assert len(cfg.nodes) * 2 * (cfg.p + 1) == 372

    def test_interpolates_training_sample(self, tiny_bank):
        bank, d = tiny_bank
        theta = halton_samples(1, ParameterBounds())[0]
        raw = np.load(d / "samples" / "sample_0000.npy")
        v = (raw.shape[1] - 2) // 2
        r = bank_predict(bank, "AA", theta)
        from iccflow.reduce import project
        sx = project(bank.basis("AA", "X"), raw[1, :v])
        np.testing.assert_allclose(r.scores_x, sx, rtol=1e-4, atol=1e-4 * np.abs(sx).max())
        assert r.load_x == pytest.approx(raw[1, 2 * v], rel=1e-4)

    def test_nodes_differ(self, tiny_bank):
        bank, _ = tiny_bank
        theta = ParameterBounds().from_unit([0.4, 0.6, 0.5, 0.5])
        assert not np.allclose(bank.predict("A", theta), bank.predict("AB", theta))

    def test_missing_node(self, tiny_bank):
        with pytest.raises(InvalidArgumentError):
            tiny_bank[0].predict("BB", ParameterBounds().from_unit([0.5] * 4))

    def test_batch_shape(self, tiny_bank):
        th = ParameterBounds().from_unit(np.full((2, 5, 4), 0.5))
        assert tiny_bank[0].predict("A", th).shape == (2, 5, 8)

    def test_resume_skips_training(self, tiny_bank, tiny_config, caplog):
        _, d = tiny_bank
        with caplog.at_level(logging.INFO):
            build_bank(tiny_config, d)
        assert "0 GPs trained, 24 reused" in caplog.text

    def test_reload_identical(self, tiny_bank):
        bank, d = tiny_bank
        again = SurrogateBank.load(d)
        th = halton_samples(5, ParameterBounds(), start=40)
        np.testing.assert_array_equal(bank.predict("AB", th), again.predict("AB", th))

    def test_heldout_report(self, tiny_bank, tiny_config):
        bank, d = tiny_bank
        e = heldout_errors(bank, tiny_config, d, 4e-6, 582.11)
        assert e["mae"].shape == (3, 8)
        assert np.all(e["mae"] >= 0) and np.all(e["range"] > 0)
