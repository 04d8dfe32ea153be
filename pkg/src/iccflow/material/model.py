"""Public constitutive API: Hosford yield, Voce hardening, return mapping.

Symmetric tensors are ``(..., 6)`` arrays ordered (xx, yy, zz, xy, yz, zx)
with tensorial shear strains. Stresses are in MPa.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, InvalidArgumentError
from . import _kernels as K

VOIGT_ORDER = ("xx", "yy", "zz", "xy", "yz", "zx")
# in-plane components inside a 6-vector
_IN_PLANE = np.array([0, 1, 3])
_ZZ = 2


@dataclass(frozen=True)
class MaterialParams:
    """Elastic constants plus the four calibration parameters."""

    E: float
    nu: float
    sigma_y: float
    A: float
    n: float
    a: float

    def __post_init__(self):
        vals = (self.E, self.nu, self.sigma_y, self.A, self.n, self.a)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidArgumentError(f"non-finite material parameter in {vals}")
        if self.E <= 0:
            raise InvalidArgumentError(f"E must be positive, got {self.E}")
        if not 0.0 < self.nu < 0.5:
            raise InvalidArgumentError(f"nu must lie in (0, 0.5), got {self.nu}")
        if self.sigma_y <= 0:
            raise InvalidArgumentError(f"sigma_y must be positive, got {self.sigma_y}")
        if self.A < 0:
            raise InvalidArgumentError(f"A must be non-negative, got {self.A}")
        if self.n <= 0:
            raise InvalidArgumentError(f"n must be positive, got {self.n}")
        if self.a <= 1:
            raise InvalidArgumentError(f"Hosford exponent must exceed 1, got {self.a}")

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.sigma_y, self.A, self.n, self.a])

    def with_theta(self, theta) -> "MaterialParams":
        s, A, n, a = (float(v) for v in theta)
        return MaterialParams(self.E, self.nu, s, A, n, a)

    def elastic_stiffness(self) -> np.ndarray:
        """6x6 isotropic stiffness mapping tensorial strain to stress."""
        lam = self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))
        mu = self.E / (2 * (1 + self.nu))
        C = np.zeros((6, 6))
        C[:3, :3] = lam
        C[np.arange(6), np.arange(6)] += 2 * mu
        return C


@dataclass(frozen=True)
class Tolerances:
    consistency: float = 1e-10
    plane_stress: float = 1e-8
    max_iter: int = 50

    def __post_init__(self):
        if self.consistency <= 0 or self.plane_stress <= 0 or self.max_iter < 1:
            raise InvalidArgumentError(f"invalid tolerances {self}")


@dataclass(frozen=True)
class MaterialState:
    """History variables at one material point.

    ``strain`` is the accumulated total strain. It is carried so that updates
    can be driven by increments while the integration itself works in
    total-strain form.
    """

    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(6))
    kappa: float = 0.0
    strain: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        if self.kappa < 0:
            raise InvalidArgumentError(f"kappa must be non-negative, got {self.kappa}")

    @classmethod
    def virgin(cls) -> "MaterialState":
        return cls()


@dataclass(frozen=True)
class StressUpdateResult:
    stress: np.ndarray
    state: MaterialState
    tangent: np.ndarray
    plastic_flag: bool


def _as_voigt(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1:] != (6,):
        raise InvalidArgumentError(f"{name} must have trailing dimension 6, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def voigt_to_matrix(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    M = np.empty(v.shape[:-1] + (3, 3))
    M[..., 0, 0], M[..., 1, 1], M[..., 2, 2] = v[..., 0], v[..., 1], v[..., 2]
    M[..., 0, 1] = M[..., 1, 0] = v[..., 3]
    M[..., 1, 2] = M[..., 2, 1] = v[..., 4]
    M[..., 2, 0] = M[..., 0, 2] = v[..., 5]
    return M


def principal_stresses(stress) -> np.ndarray:
    """Principal values sorted in descending order, shape ``(..., 3)``."""
    s = _as_voigt(stress, "stress")
    return np.linalg.eigvalsh(voigt_to_matrix(s))[..., ::-1]


def hosford_effective_stress(stress, a: float) -> np.ndarray | float:
    """Hosford effective stress of one or many 3-D stress states.

    Parameters
    ----------
    stress : array_like, shape (..., 6)
    a : float
        Hosford exponent, must exceed 1.

    Returns
    -------
    float or ndarray
        Effective stress in the units of ``stress``.
    """
    if not np.isfinite(a) or a <= 1:
        raise InvalidArgumentError(f"Hosford exponent must exceed 1, got {a}")
    p = principal_stresses(stress)
    d = np.abs(np.stack([p[..., 0] - p[..., 1], p[..., 1] - p[..., 2], p[..., 2] - p[..., 0]], axis=-1))
    scale = d.max(axis=-1)
    safe = np.where(scale > 0, scale, 1.0)
    F = 0.5 * np.sum((d / safe[..., None]) ** a, axis=-1)
    out = np.where(scale > 0, scale * F ** (1.0 / a), 0.0)
    return float(out) if out.ndim == 0 else out


def flow_stress(kappa, params: MaterialParams):
    """Voce saturation flow stress."""
    k = np.asarray(kappa, dtype=float)
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise InvalidArgumentError("kappa must be finite and non-negative")
    out = params.sigma_y + params.A * (1.0 - np.exp(-params.n * k))
    return float(out) if out.ndim == 0 else out


def yield_function(stress, kappa, params: MaterialParams):
    return hosford_effective_stress(stress, params.a) - flow_stress(kappa, params)


def _update_points(strain, eps_p, kappa, params, tol):
    """Vectorized 3-D return map for total strains ``strain`` (N, 6)."""
    N = strain.shape[0]
    sig = np.empty((N, 6))
    ep = np.empty((N, 6))
    kap = np.empty(N)
    status = np.empty(N, dtype=np.int64)
    iters = np.empty(N, dtype=np.int64)
    K.update_3d_batch(np.ascontiguousarray(strain), np.ascontiguousarray(eps_p),
                      np.ascontiguousarray(kappa, dtype=float),
                      params.E, params.nu, params.sigma_y, params.A, params.n, params.a,
                      tol.consistency, tol.max_iter, sig, ep, kap, status, iters)
    if np.any(status == K.STATUS_FAILED):
        bad = np.flatnonzero(status == K.STATUS_FAILED)
        raise ConvergenceError("return mapping did not converge",
                               points=bad.tolist(), iterations=int(iters[bad].max()))
    return sig, ep, kap, status


def _fd_step(strain, params) -> float:
    return 1e-7 * max(float(np.linalg.norm(strain)), params.sigma_y / params.E)


def _fd_tangent(strain, eps_p, kappa, params, tol) -> np.ndarray:
    """Central-difference derivative of stress w.r.t. total strain (6x6)."""
    h = _fd_step(strain, params)
    probes = np.repeat(strain[None, :], 12, axis=0)
    for j in range(6):
        probes[2 * j, j] += h
        probes[2 * j + 1, j] -= h
    sig, _, _, _ = _update_points(probes, np.repeat(eps_p[None], 12, 0), np.full(12, kappa), params, tol)
    return ((sig[0::2] - sig[1::2]) / (2 * h)).T


def stress_update(strain_increment, state: MaterialState, params: MaterialParams,
                  tol: Tolerances = Tolerances(), tangent: bool = True) -> StressUpdateResult:
    """Backward-Euler closest-point update of a 3-D material point.

    The consistent tangent is the central-difference derivative of the whole
    update map with respect to total strain.
    """
    de = _as_voigt(strain_increment, "strain_increment")
    strain = np.asarray(state.strain, float) + de
    eps_p = np.asarray(state.plastic_strain, float)
    sig, ep, kap, status = _update_points(strain[None], eps_p[None], np.array([state.kappa]), params, tol)
    plastic = bool(status[0] == K.STATUS_PLASTIC)
    T = _fd_tangent(strain, eps_p, state.kappa, params, tol) if tangent else None
    new_state = MaterialState(ep[0], float(kap[0]), strain) if plastic else \
        MaterialState(eps_p.copy(), state.kappa, strain)
    return StressUpdateResult(sig[0], new_state, T, plastic)


def plane_stress_update(in_plane_strain_increment, state: MaterialState, params: MaterialParams,
                        tol: Tolerances = Tolerances()) -> StressUpdateResult:
    """Plane-stress update by a scalar Newton loop on the out-of-plane strain.

    Returns in-plane stress (xx, yy, xy), the updated 3-D state and the 3x3
    condensed tangent with respect to tensorial (exx, eyy, exy).
    """
    d3 = np.asarray(in_plane_strain_increment, dtype=float)
    if d3.shape != (3,) or not np.all(np.isfinite(d3)):
        raise InvalidArgumentError("in-plane increment must be 3 finite values")
    de = np.zeros(6)
    de[_IN_PLANE] = d3
    nu = params.nu
    # elastic guess for the out-of-plane strain
    de[_ZZ] = -nu / (1 - nu) * (d3[0] + d3[1])
    target = tol.plane_stress * params.sigma_y
    for it in range(tol.max_iter):
        strain = np.asarray(state.strain, float) + de
        h = _fd_step(strain, params)
        probes = np.repeat(strain[None], 3, axis=0)
        probes[1, _ZZ] += h
        probes[2, _ZZ] -= h
        sig, _, _, _ = _update_points(probes, np.repeat(np.asarray(state.plastic_strain, float)[None], 3, 0),
                                      np.full(3, state.kappa), params, tol)
        szz = sig[0, _ZZ]
        if abs(szz) <= target:
            break
        dszz = (sig[1, _ZZ] - sig[2, _ZZ]) / (2 * h)
        de[_ZZ] -= szz / dszz
    else:
        raise ConvergenceError("plane-stress iteration did not converge",
                               iterations=tol.max_iter, sigma_zz=float(szz))
    full = stress_update(de, state, params, tol)
    C = full.tangent
    idx = _IN_PLANE
    Ct = C[np.ix_(idx, idx)] - np.outer(C[idx, _ZZ], C[_ZZ, idx]) / C[_ZZ, _ZZ]
    return StressUpdateResult(full.stress[idx], full.state, Ct, full.plastic_flag)


def plane_stress_batch(strain3, plastic_strain4, kappa, params: MaterialParams,
                       tol: Tolerances = Tolerances()):
    """Fast plane-stress update for many points with the analytic tangent.

    Used by the finite element assembly. ``strain3`` holds total tensorial
    (exx, eyy, exy); ``plastic_strain4`` holds (xx, yy, zz, xy).

    Returns
    -------
    stress (N, 3), tangent (N, 3, 3), plastic_strain (N, 4), kappa (N,), status (N,)
    """
    N = strain3.shape[0]
    sig = np.empty((N, 3))
    D = np.empty((N, 3, 3))
    ep = np.empty((N, 4))
    kap = np.empty(N)
    status = np.empty(N, dtype=np.int64)
    K.plane_stress_batch(np.ascontiguousarray(strain3, float), np.ascontiguousarray(plastic_strain4, float),
                         np.ascontiguousarray(kappa, float), params.E, params.nu, params.sigma_y,
                         params.A, params.n, params.a, tol.consistency, tol.max_iter,
                         sig, D, ep, kap, status)
    if np.any(status == K.STATUS_FAILED):
        bad = np.flatnonzero(status == K.STATUS_FAILED)
        raise ConvergenceError("plane-stress return mapping did not converge", points=bad.tolist())
    return sig, D, ep, kap, status
