"""Displacement-controlled Newton-Raphson solver for the quarter cross."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from ..errors import InvalidArgumentError, SolverError
from ..material import MaterialParams, Tolerances
from ._assembly import assemble
from .mesh import GAUSS_WTS, CruciformMesh, shape_gradients

log = logging.getLogger(__name__)

AXES = ("A", "B")


@dataclass(frozen=True)
class LoadPath:
    """Sequence of axis labels; each step adds ``increment`` mm on that arm."""

    axes: str
    increment: float = 0.25

    def __post_init__(self):
        if len(self.axes) < 1 or any(c not in AXES for c in self.axes):
            raise InvalidArgumentError(f"load path must be a non-empty string over A/B, got {self.axes!r}")
        if not self.increment > 0:
            raise InvalidArgumentError("increment must be positive")

    def __len__(self) -> int:
        return len(self.axes)

    def increments(self) -> list[tuple[float, float]]:
        return [(self.increment, 0.0) if c == "A" else (0.0, self.increment) for c in self.axes]


@dataclass(frozen=True)
class FieldObservation:
    """Gauge displacements (mm) and arm resultant loads (N) after one step."""

    step: int
    displacement_x: np.ndarray
    displacement_y: np.ndarray
    load_x: float
    load_y: float
    noisy: bool = False
    node_id: str = ""

    def __post_init__(self):
        if self.displacement_x.shape != self.displacement_y.shape:
            raise InvalidArgumentError("displacement components must have equal length")
        if not (np.isfinite(self.load_x) and np.isfinite(self.load_y)):
            raise InvalidArgumentError("loads must be finite")


@dataclass
class _History:
    u: np.ndarray
    ep: np.ndarray
    kappa: np.ndarray
    strain: np.ndarray
    prescribed: np.ndarray = field(default_factory=lambda: np.zeros(2))


class PlaneStressModel:
    """Incremental plane-stress model of the cross under arm displacements.

    Holds the committed history so load steps can be applied one at a time,
    and supports ``snapshot``/``restore`` for depth-first traversal of a
    load-path tree.

    ``predictor="history"`` starts each step from the displacement rate of
    the last converged step on the same axis (falling back to a tangent
    solve); ``"tangent"`` always solves with the last converged tangent.
    Newton corrections are capped at ``max_correction`` mm per dof.
    """

    def __init__(self, mesh: CruciformMesh, params: MaterialParams,
                 tol: Tolerances = Tolerances(), residual_tol: float = 1e-8,
                 max_newton: int = 25, max_bisections: int = 4, max_correction: float = 0.03,
                 predictor: str = "history"):
        self.mesh = mesh
        self.params = params
        self.tol = tol
        self.residual_tol = residual_tol
        self.max_newton = max_newton
        self.max_bisections = max_bisections
        self.max_correction = max_correction
        if predictor not in ("history", "tangent"):
            raise InvalidArgumentError(f"unknown predictor {predictor!r}")
        self.predictor = predictor
        self._setup()
        self.reset()

    # -- setup -------------------------------------------------------------
    def _setup(self):
        m = self.mesh
        nn = m.n_nodes
        self.n_dof = 2 * nn
        el = m.elements
        self.edofs = np.empty((el.shape[0], 8), dtype=np.int64)
        self.edofs[:, 0::2] = 2 * el
        self.edofs[:, 1::2] = 2 * el + 1

        dN, detJ = shape_gradients(m.nodes, el)
        ne = el.shape[0]
        B = np.zeros((ne, 4, 3, 8))
        B[:, :, 0, 0::2] = dN[..., 0]
        B[:, :, 1, 1::2] = dN[..., 1]
        B[:, :, 2, 0::2] = dN[..., 1]
        B[:, :, 2, 1::2] = dN[..., 0]
        self.Bm = np.ascontiguousarray(B)
        self.wdet = np.ascontiguousarray(detJ * GAUSS_WTS[None, :] * m.thickness)

        rows = np.repeat(self.edofs, 8, axis=1).ravel()
        cols = np.tile(self.edofs, (1, 8)).ravel()
        keys = cols * self.n_dof + rows
        ukeys, inv = np.unique(keys, return_inverse=True)
        self.kmap = inv.reshape(ne, 64).astype(np.int64)
        self.nnz = ukeys.size
        self.k_indices = (ukeys % self.n_dof).astype(np.int32)
        counts = np.bincount(ukeys // self.n_dof, minlength=self.n_dof)
        self.k_indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

        self.dof_ax = 2 * m.edge_a
        self.dof_by = 2 * m.edge_b + 1
        fixed = np.concatenate([2 * m.sym_x, 2 * m.sym_y + 1])
        self.presc = np.unique(np.concatenate([fixed, self.dof_ax, self.dof_by]))
        self.free = np.setdiff1d(np.arange(self.n_dof), self.presc)
        if np.intersect1d(self.dof_ax, fixed).size or np.intersect1d(self.dof_by, fixed).size:
            raise InvalidArgumentError("loaded edges overlap symmetry constraints")

        tagged = sp.csc_matrix((np.arange(1, self.nnz + 1, dtype=float), self.k_indices, self.k_indptr),
                               shape=(self.n_dof, self.n_dof))
        ff = tagged[self.free][:, self.free].tocsc()
        ff.sort_indices()
        self.ff_map = ff.data.astype(np.int64) - 1
        self.ff_indices = ff.indices
        self.ff_indptr = ff.indptr
        self.banded = _BandedSystem(ff, self.ff_map)

        ng = (ne, 4)
        self._f = np.zeros(self.n_dof)
        self._k = np.zeros(self.nnz)
        self._strain_t = np.zeros(ng + (3,))
        self._ep_t = np.zeros(ng + (4,))
        self._kappa_t = np.zeros(ng)
        self._dk_seed = np.zeros(ng)

    def reset(self):
        ne = self.mesh.n_elements
        self._dk_seed[...] = 0.0
        self._rate = {}
        self.hist = _History(np.zeros(self.n_dof), np.zeros((ne, 4, 4)), np.zeros((ne, 4)),
                             np.zeros((ne, 4, 3)))
        self._assemble(self.hist.u, want_k=True)
        self._k_conv = self._k.copy()
        self.reactions = self._f.copy()

    def snapshot(self) -> tuple:
        h = self.hist
        return (h.u.copy(), h.ep.copy(), h.kappa.copy(), h.strain.copy(), h.prescribed.copy(),
                self._k_conv.copy(), self.reactions.copy(), self._dk_seed.copy(),
                dict(self._rate))

    def restore(self, snap: tuple):
        u, ep, kap, strain, presc, kconv, reac, seed, rate = snap
        self._rate = dict(rate)
        self.hist = _History(u.copy(), ep.copy(), kap.copy(), strain.copy(), presc.copy())
        self._k_conv = kconv.copy()
        self.reactions = reac.copy()
        self._dk_seed[...] = seed

    # -- kernels -----------------------------------------------------------
    def _assemble(self, u, want_k=True):
        p = self.params
        h = self.hist
        fails = assemble(u, self.edofs, self.Bm, self.wdet, h.ep, h.kappa,
                         p.E, p.nu, p.sigma_y, p.A, p.n, p.a, self.tol.consistency,
                         self.tol.max_iter, self.kmap, want_k,
                         self._f, self._k, self._strain_t, self._ep_t, self._kappa_t, self._dk_seed)
        return fails

    def _kff(self, kdata):
        return sp.csc_matrix((kdata[self.ff_map], self.ff_indices, self.ff_indptr),
                             shape=(self.free.size, self.free.size))

    def _full(self, kdata):
        return sp.csc_matrix((kdata, self.k_indices, self.k_indptr), shape=(self.n_dof, self.n_dof))

    def prescribed_vector(self, ua: float, ub: float) -> np.ndarray:
        v = np.zeros(self.n_dof)
        v[self.dof_ax] = ua
        v[self.dof_by] = ub
        return v

    # -- stepping ----------------------------------------------------------
    def _try_increment(self, dua: float, dub: float) -> bool:
        h = self.hist
        du = self.prescribed_vector(dua, dub)
        axis, amount = _axis_of(dua, dub)
        prior = self._rate.get(axis) if self.predictor == "history" else None
        if prior is not None:
            # reuse the displacement rate of the last step on this axis
            u = h.u + amount * prior
        else:
            u = h.u + du
            rhs = -(self._full(self._k_conv) @ du)[self.free]
            self.banded.factor(self._k_conv)
            u[self.free] += self.banded.solve(rhs)
        if self._assemble(u, want_k=True):
            return False
        rn = np.linalg.norm(self._f[self.free])
        for it in range(self.max_newton):
            ref = max(np.linalg.norm(self._f[self.presc]), 1e-12)
            if not np.isfinite(rn):
                return False
            if rn <= self.residual_tol * ref:
                if axis is not None:
                    self._rate[axis] = (u - h.u) / amount
                self._commit(u)
                return True
            self.banded.factor(self._k)
            delta = self.banded.solve(-self._f[self.free])
            big = np.abs(delta).max()
            if big > self.max_correction:
                # nearly singular tangents (soft hardening) propose huge moves
                delta *= self.max_correction / big
            u, ok = self._line_search(u, delta)
            if not ok:
                return False
            rn = np.linalg.norm(self._f[self.free])
        log.debug("Newton stalled at residual %.3e (ref %.3e)", rn, ref)
        return False

    def _line_search(self, u, delta, eta=0.6, max_evals=6):
        """Regula falsi on the directional residual ``delta . r(u + s delta)``.

        The backward-Euler incremental problem derives from a convex
        potential, so the directional residual is monotone in ``s`` and its
        root is a safe step length.
        """
        free = self.free
        s0 = -abs(float(delta @ self._f[free]))
        lo, g_lo = 0.0, s0
        hi, g_hi = None, None
        best, best_g = None, np.inf
        step = 1.0
        for _ in range(max_evals):
            trial = u.copy()
            trial[free] += step * delta
            g = np.inf if self._assemble(trial, want_k=True) else float(delta @ self._f[free])
            if np.isnan(g):
                g = np.inf
            if abs(g) <= eta * abs(s0):
                return trial, True
            if abs(g) < best_g:
                best, best_g = step, abs(g)
            if g < 0:
                lo, g_lo = step, g
            else:
                hi, g_hi = step, g
            if hi is None:
                # the full step still descends: take it rather than extrapolate
                return trial, True
            elif np.isinf(g_hi):
                step = 0.5 * (lo + hi)
            else:
                step = lo - g_lo * (hi - lo) / (g_hi - g_lo)
        if best is None:
            return u, False
        trial = u.copy()
        trial[free] += best * delta
        return trial, not self._assemble(trial, want_k=True)

    def _commit(self, u):
        h = self.hist
        h.u = u.copy()
        h.ep = self._ep_t.copy()
        h.kappa = self._kappa_t.copy()
        h.strain = self._strain_t.copy()
        self._k_conv = self._k.copy()
        self.reactions = self._f.copy()

    def apply_increment(self, dua: float, dub: float, step: int | None = None):
        """Advance the arm displacements by (dua, dub) with bisection on failure."""
        pieces = [(dua, dub, 0)]
        while pieces:
            a, b, depth = pieces.pop(0)
            snap = self.snapshot()
            if self._try_increment(a, b):
                self.hist.prescribed = self.hist.prescribed + np.array([a, b])
                continue
            self.restore(snap)
            if depth >= self.max_bisections:
                raise SolverError("equilibrium iteration failed after bisection", step=step,
                                  increment=(a, b), depth=depth)
            log.debug("bisecting increment (%.4g, %.4g) at depth %d", a, b, depth + 1)
            pieces = [(a / 2, b / 2, depth + 1), (a / 2, b / 2, depth + 1)] + pieces

    def observe(self, step: int, node_id: str = "") -> FieldObservation:
        u = self.hist.u
        g = self.mesh.gauge
        return FieldObservation(step=step, displacement_x=u[2 * g].copy(), displacement_y=u[2 * g + 1].copy(),
                                load_x=float(self.reactions[self.dof_ax].sum()),
                                load_y=float(self.reactions[self.dof_by].sum()),
                                noisy=False, node_id=node_id)

    def constraint_reactions(self) -> dict[str, float]:
        """Resultant forces on each constrained edge (N)."""
        m = self.mesh
        f = self.reactions
        return {"edge_a": float(f[self.dof_ax].sum()), "edge_b": float(f[self.dof_by].sum()),
                "sym_x": float(f[2 * m.sym_x].sum()), "sym_y": float(f[2 * m.sym_y + 1].sum())}


def _axis_of(dua: float, dub: float):
    if dua != 0.0 and dub == 0.0:
        return "A", dua
    if dub != 0.0 and dua == 0.0:
        return "B", dub
    return None, 0.0


class _BandedSystem:
    """Symmetric banded factorization of the free-free stiffness block.

    Nodes are renumbered by reverse Cuthill-McKee so the block has a narrow
    band; Cholesky is tried first and banded LU is the fallback for the rare
    indefinite tangent.
    """

    def __init__(self, ff: sp.csc_matrix, ff_map: np.ndarray):
        n = ff.shape[0]
        self.n = n
        self.perm = reverse_cuthill_mckee(ff.tocsr(), symmetric_mode=True)
        iperm = np.empty(n, dtype=np.int64)
        iperm[self.perm] = np.arange(n)
        # ff.data carries 1-based positions; entries are in CSC order
        cols = np.repeat(np.arange(n), np.diff(ff.indptr))
        rows = ff.indices
        pr, pc = iperm[rows], iperm[cols]
        self.bw = int(np.abs(pr - pc).max())
        up = pr <= pc
        self.src_up = ff_map[up]
        self.pos_up = (self.bw + pr[up] - pc[up]) * n + pc[up]
        self.src_all = ff_map
        self.pos_all = (self.bw + pr - pc) * n + pc
        self._chol = None
        self._lu = None

    def factor(self, kdata: np.ndarray):
        bw, n = self.bw, self.n
        ab = np.zeros((bw + 1) * n)
        ab[self.pos_up] = kdata[self.src_up]
        try:
            self._chol = sla.cholesky_banded(ab.reshape(bw + 1, n), lower=False, check_finite=False)
            self._lu = None
        except np.linalg.LinAlgError:
            full = np.zeros((2 * bw + 1) * n)
            full[self.pos_all] = kdata[self.src_all]
            self._chol = None
            self._lu = full.reshape(2 * bw + 1, n)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = rhs[self.perm]
        if self._chol is not None:
            x = sla.cho_solve_banded((self._chol, False), b, check_finite=False)
        else:
            x = sla.solve_banded((self.bw, self.bw), self._lu, b, check_finite=False)
        out = np.empty_like(x)
        out[self.perm] = x
        return out


def solve_steps(mesh: CruciformMesh, params: MaterialParams, increments, tol: Tolerances = Tolerances(),
                labels=None) -> list[FieldObservation]:
    """Apply a sequence of (dUA, dUB) increments and observe after each."""
    model = PlaneStressModel(mesh, params, tol)
    out = []
    for t, (da, db) in enumerate(increments, start=1):
        model.apply_increment(da, db, step=t)
        out.append(model.observe(t, labels[t - 1] if labels else ""))
    return out


def solve_load_path(mesh: CruciformMesh, params: MaterialParams, path: LoadPath,
                    tol: Tolerances = Tolerances()) -> list[FieldObservation]:
    """Noiseless observations at the end of every step of ``path``."""
    labels = [path.axes[:t] for t in range(1, len(path) + 1)]
    return solve_steps(mesh, params, path.increments(), tol, labels)


def simulate_tree(mesh: CruciformMesh, params: MaterialParams, depth: int = 5, root: str = "A",
                  increment: float = 0.25, tol: Tolerances = Tolerances(),
                  model: PlaneStressModel | None = None) -> dict[str, FieldObservation]:
    """Noiseless observations at every node of the subtree under ``root``.

    The traversal is depth-first with snapshot/restore, so each tree node is
    solved exactly once and shared prefixes are never recomputed. The
    returned dict is in depth-first order.
    """
    if not root or len(root) > depth or any(c not in AXES for c in root):
        raise InvalidArgumentError(f"invalid subtree root {root!r} for depth {depth}")
    model = model or PlaneStressModel(mesh, params, tol)
    model.params = params
    model.reset()
    out: dict[str, FieldObservation] = {}

    def step(node: str) -> FieldObservation:
        da, db = (increment, 0.0) if node[-1] == "A" else (0.0, increment)
        try:
            model.apply_increment(da, db, step=len(node))
        except SolverError as exc:
            raise SolverError(f"{exc} at tree node {node!r}", step=len(node), node=node,
                              **exc.diagnostics) from exc
        return model.observe(len(node), node)

    def visit(node: str):
        out[node] = step(node)
        if len(node) < depth:
            snap = model.snapshot()
            for c in AXES:
                visit(node + c)
                model.restore(snap)

    for t in range(1, len(root)):
        step(root[:t])
    visit(root)
    return out
