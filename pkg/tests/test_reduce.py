from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iccflow.errors import InvalidArgumentError
from iccflow.reduce import (
    ReducedObservation,
    fit_pca,
    load_basis,
    project,
    reconstruct,
    save_basis,
    transform_noise_covariance,
)


def training(u=40, v=30, rank=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(u, rank)) @ rng.normal(size=(rank, v)) + rng.normal(size=v)


class TestFitPca:
    def test_orthonormal_rows_and_ordering(self):
        b = fit_pca(training(), p=5)
        np.testing.assert_allclose(b.components @ b.components.T, np.eye(5), atol=1e-10)
        assert np.all(np.diff(b.singular_values) <= 0)
        assert b.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rank_one(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=20)
        A = rng.normal(size=(15, 1)) * v + 3.0
        b = fit_pca(A, p=1)
        assert b.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)

    def test_row_permutation_invariance(self):
        A = training()
        b1 = fit_pca(A, p=5)
        b2 = fit_pca(A[np.random.default_rng(3).permutation(A.shape[0])], p=5)
        np.testing.assert_allclose(b1.components, b2.components, atol=1e-10)
        np.testing.assert_allclose(b1.mean, b2.mean, atol=1e-12)

    def test_sign_convention(self):
        b = fit_pca(training(), p=5)
        idx = np.argmax(np.abs(b.components), axis=1)
        assert np.all(b.components[np.arange(5), idx] > 0)

    def test_full_rank_reconstruction_exact(self):
        A = training(u=12, v=30, rank=30)
        b = fit_pca(A, p=11)
        rec = reconstruct(b, project(b, A))
        assert np.abs(rec - A).max() <= 1e-10 * np.abs(A).max()

    def test_degenerate_rank(self):
        b = fit_pca(training(rank=2), p=5)
        assert b.degenerate

    def test_variance_threshold_mode(self):
        b = fit_pca(training(), p=None, variance_threshold=0.999)
        assert b.retained_variance >= 0.999
        assert fit_pca(training(), p=b.p - 1).retained_variance < 0.999

    def test_bad_p(self):
        with pytest.raises(InvalidArgumentError):
            fit_pca(training(u=4), p=5)


class TestProjection:
    def setup_method(self):
        self.b = fit_pca(training(), p=5)

    def test_mean_projects_to_zero(self):
        np.testing.assert_allclose(project(self.b, self.b.mean), 0.0, atol=1e-12)

    def test_first_direction(self):
        s0 = self.b.singular_values[0]
        z = project(self.b, self.b.mean + s0 * self.b.components[0])
        np.testing.assert_allclose(z, [s0, 0, 0, 0, 0], atol=1e-10 * s0)

    def test_zero_scores_give_mean(self):
        np.testing.assert_array_equal(reconstruct(self.b, np.zeros(5)), self.b.mean)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 5, elements=st.floats(-1e3, 1e3)))
    def test_project_reconstruct_identity(self, z):
        np.testing.assert_allclose(project(self.b, reconstruct(self.b, z)), z, atol=1e-10 * max(1, np.abs(z).max()))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 30, elements=st.floats(-1e3, 1e3)))
    def test_contraction(self, f):
        assert np.linalg.norm(project(self.b, f)) <= np.linalg.norm(f - self.b.mean) * (1 + 1e-10) + 1e-10

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            project(self.b, np.zeros(7))
        with pytest.raises(InvalidArgumentError):
            reconstruct(self.b, np.zeros(3))


class TestNoiseTransform:
    def test_identity_for_orthonormal_basis(self):
        b = fit_pca(training(), p=5)
        np.testing.assert_allclose(transform_noise_covariance(b, 4e-6), 4e-6 * np.eye(5), atol=1e-12 * 4e-6)

    def test_linearity(self):
        b = fit_pca(training(), p=5)
        np.testing.assert_allclose(transform_noise_covariance(b, 2.0), 2 * transform_noise_covariance(b, 1.0),
                                   rtol=1e-15)

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidArgumentError):
            transform_noise_covariance(fit_pca(training(), p=5), 0.0)


class TestPersistence:
    def test_round_trip_exact(self, tmp_path):
        b = fit_pca(training(), p=5, node_id="ABA", component="Y")
        path = save_basis(b, tmp_path / "b.basis")
        c = load_basis(path)
        np.testing.assert_array_equal(c.components, b.components)
        np.testing.assert_array_equal(c.mean, b.mean)
        np.testing.assert_array_equal(c.singular_values, b.singular_values)
        assert (c.node_id, c.component, c.n_samples, c.degenerate) == ("ABA", "Y", 40, False)
        assert "sign_convention=largest-magnitude-entry-positive" in path.read_text()

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "x.basis"
        p.write_text("hello\n")
        with pytest.raises(InvalidArgumentError):
            load_basis(p)


def test_reduced_observation_vector_order():
    r = ReducedObservation(np.array([1.0, 2.0]), np.array([3.0, 4.0]), 5.0, 6.0, "A")
    np.testing.assert_array_equal(r.vector(), [1, 2, 3, 4, 5, 6])
