from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from iccflow.errors import InvalidArgumentError
from iccflow.material import MaterialParams, yield_function
from iccflow.structure import (
    CruciformGeometry,
    LoadPath,
    NoiseSpec,
    PlaneStressModel,
    build_cruciform_mesh,
    material_point_path,
    read_observations,
    simulate_tree,
    solve_load_path,
    synthesize_data,
    write_observations,
)
from iccflow.structure.mesh import element_angles, shape_gradients

TRUTH = MaterialParams(E=68300.0, nu=0.33, sigma_y=293.1, A=94.0, n=14.35, a=11.19)


@pytest.fixture(scope="module")
def mesh():
    return build_cruciform_mesh()


@pytest.fixture(scope="module")
def aaaaa(mesh):
    return solve_load_path(mesh, TRUTH, LoadPath("AAAAA"))


def linear_reaction(mesh, ua, ub):
    """Independent linear-elastic solve with the virgin tangent."""
    model = PlaneStressModel(mesh, TRUTH)
    K = model._full(model._k_conv).tocsr()
    up = model.prescribed_vector(ua, ub)
    f, p = model.free, model.presc
    u = up.copy()
    u[f] = spla.spsolve(K[f][:, f].tocsc(), -(K[f][:, p] @ up[p]))
    r = K @ u
    return r[model.dof_ax].sum(), r[model.dof_by].sum()


class TestMesh:
    def test_regression_fixture(self, mesh):
        assert (mesh.n_nodes, mesh.n_elements, mesh.gauge.size) == (686, 624, 219)

    def test_refinement_quadruples(self):
        assert build_cruciform_mesh(refinement=1).n_elements == 4 * 624

    def test_angles_and_jacobians(self, mesh):
        ang = element_angles(mesh.nodes, mesh.elements)
        assert ang.min() > 10 and ang.max() < 170
        _, detJ = shape_gradients(mesh.nodes, mesh.elements)
        assert np.all(detJ > 0)

    def test_gauge_thinner_than_arms(self, mesh):
        g = mesh.geometry
        assert mesh.thickness.min() == pytest.approx(g.gauge_thickness)
        assert mesh.thickness.max() == pytest.approx(g.arm_thickness)

    def test_boundary_sets(self, mesh):
        assert np.allclose(mesh.nodes[mesh.edge_a, 0], mesh.geometry.arm_length)
        assert np.allclose(mesh.nodes[mesh.edge_b, 1], mesh.geometry.arm_length)
        assert np.allclose(mesh.nodes[mesh.sym_x, 0], 0.0)
        assert np.allclose(mesh.nodes[mesh.sym_y, 1], 0.0)
        assert not set(mesh.edge_a) & set(mesh.edge_b)

    def test_deterministic(self, mesh):
        np.testing.assert_array_equal(build_cruciform_mesh().nodes, mesh.nodes)

    def test_bad_geometry(self):
        with pytest.raises(InvalidArgumentError):
            CruciformGeometry(half_width=5.0, fillet_radius=6.0)


class TestSolver:
    def test_elastic_step_matches_linear_solve(self, mesh):
        h = 1e-4
        obs = solve_load_path(mesh, TRUTH, LoadPath("A", increment=h))
        fx, fy = linear_reaction(mesh, h, 0.0)
        assert obs[0].load_x == pytest.approx(fx, rel=1e-6)
        assert obs[0].load_y == pytest.approx(fy, rel=1e-6, abs=1e-9 * abs(fx))

    def test_elastic_linearity(self, mesh):
        a = solve_load_path(mesh, TRUTH, LoadPath("A", increment=1e-4))[0].load_x
        b = solve_load_path(mesh, TRUTH, LoadPath("A", increment=2e-4))[0].load_x
        assert b == pytest.approx(2 * a, rel=1e-6)

    def test_history_dependence(self, mesh):
        aa = solve_load_path(mesh, TRUTH, LoadPath("AA"))
        ab = solve_load_path(mesh, TRUTH, LoadPath("AB"))
        np.testing.assert_array_equal(aa[0].displacement_x, ab[0].displacement_x)
        assert aa[0].load_x == ab[0].load_x
        assert abs(aa[1].load_x - ab[1].load_x) > 1.0

    def test_global_equilibrium(self, mesh):
        model = PlaneStressModel(mesh, TRUTH)
        for step, (a, b) in enumerate([(0.25, 0), (0, 0.25), (0.25, 0)], start=1):
            model.apply_increment(a, b, step)
            f = model.reactions
            assert np.abs(f[model.free]).max() <= 1e-8 * np.abs(f).max() * 10
            r = model.constraint_reactions()
            # x-forces: arm A edge against the x-symmetry edge; likewise for y
            assert abs(r["edge_a"] + r["sym_x"]) <= 1e-8 * abs(r["edge_a"]) * 100
            assert abs(r["edge_b"] + r["sym_y"]) <= 1e-8 * max(abs(r["edge_b"]), abs(r["edge_a"])) * 100

    def test_diagonal_symmetry(self, mesh):
        model = PlaneStressModel(mesh, TRUTH)
        model.apply_increment(0.25, 0.25, 1)
        ob = model.observe(1)
        assert ob.load_x == pytest.approx(ob.load_y, rel=1e-6)

    def test_softening_after_yield(self, mesh, aaaaa):
        fx_el = linear_reaction(mesh, 1e-4, 0.0)[0] * 0.25 / 1e-4
        loads = np.array([o.load_x for o in aaaaa])
        inc = np.diff(np.r_[0.0, loads])
        assert np.all(inc[1:] < fx_el)
        assert inc[-1] < inc[0]

    def test_truth_path_shape(self, aaaaa):
        lx = np.array([o.load_x for o in aaaaa])
        ly = np.array([o.load_y for o in aaaaa])
        assert np.all(np.diff(lx) > 0)
        assert np.abs(ly).max() < 0.5 * lx.max()

    def test_gauge_reaches_plasticity(self, mesh):
        model = PlaneStressModel(mesh, TRUTH)
        for t in range(5):
            model.apply_increment(0.25, 0.0, t + 1)
        assert model.hist.kappa.max() > 0.01

    @pytest.mark.slow
    def test_mesh_convergence(self, mesh, aaaaa):
        fine = solve_load_path(build_cruciform_mesh(refinement=1), TRUTH, LoadPath("AAAAA"))
        assert abs(fine[-1].load_x - aaaaa[-1].load_x) < 0.05 * abs(aaaaa[-1].load_x)

    def test_tree_matches_direct_paths(self, mesh):
        tree = simulate_tree(mesh, TRUTH, depth=3, root="A")
        assert list(tree) == ["A", "AA", "AAA", "AAB", "AB", "ABA", "ABB"]
        direct = solve_load_path(mesh, TRUTH, LoadPath("ABA"))
        np.testing.assert_allclose(tree["ABA"].displacement_y, direct[-1].displacement_y, rtol=0, atol=1e-12)
        assert tree["ABA"].load_x == pytest.approx(direct[-1].load_x, rel=1e-12)

    def test_invalid_path(self):
        with pytest.raises(InvalidArgumentError):
            LoadPath("AC")
        with pytest.raises(InvalidArgumentError):
            LoadPath("A", increment=0.0)


class TestMaterialPointPath:
    def test_elastic_step(self):
        obs = material_point_path(TRUTH, LoadPath("A"), strain_increment=1e-3)
        assert obs[0].stress[0] == pytest.approx(68300 * 1e-3 / (1 - 0.33**2), rel=1e-9)

    def test_on_yield_surface_after_five_a_steps(self):
        obs = material_point_path(TRUTH, LoadPath("AAAAA"))
        s = obs[-1].stress
        s6 = np.array([s[0], s[1], 0, s[2], 0, 0])
        assert obs[-1].plastic
        assert abs(yield_function(s6, obs[-1].kappa, TRUTH)) <= 1e-6 * TRUTH.sigma_y

    def test_path_dependence(self):
        a = material_point_path(TRUTH, LoadPath("AAAAA"))[-1].stress
        b = material_point_path(TRUTH, LoadPath("ABABA"))[-1].stress
        assert np.abs(a - b).max() > 1.0


class TestSyntheticData:
    def test_determinism_and_variance(self, aaaaa):
        spec = NoiseSpec(seed=4)
        n1 = synthesize_data(aaaaa, spec)
        n2 = synthesize_data(aaaaa, spec)
        for a, b in zip(n1, n2):
            np.testing.assert_array_equal(a.displacement_x, b.displacement_x)
            assert a.noisy
        d = np.concatenate([np.r_[a.displacement_x - c.displacement_x, a.displacement_y - c.displacement_y]
                            for a, c in zip(synthesize_data(aaaaa * 5, spec), aaaaa * 5)])
        assert d.size >= 10_000
        assert np.var(d) == pytest.approx(4e-6, rel=0.05)

    def test_tiny_noise_limit(self, aaaaa):
        out = synthesize_data(aaaaa, NoiseSpec(1e-300, 1e-300))
        np.testing.assert_allclose(out[0].displacement_x, aaaaa[0].displacement_x, rtol=0, atol=1e-140)

    def test_rejects_noisy_input(self, aaaaa):
        noisy = synthesize_data(aaaaa, NoiseSpec())
        with pytest.raises(InvalidArgumentError):
            synthesize_data(noisy, NoiseSpec())

    def test_invalid_spec(self):
        with pytest.raises(InvalidArgumentError):
            NoiseSpec(psi2_disp=0.0)

    def test_csv_round_trip(self, tmp_path, mesh, aaaaa):
        write_observations(tmp_path, "AAAAA", aaaaa, mesh)
        back = read_observations(tmp_path, "AAAAA")
        assert len(back) == 5
        for a, b in zip(aaaaa, back):
            np.testing.assert_array_equal(a.displacement_x, b.displacement_x)
            assert a.load_y == b.load_y and a.node_id == b.node_id
