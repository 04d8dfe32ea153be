"""PCA reduction of displacement fields and noise propagation into score space."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

BASIS_FORMAT = "iccflow-pca-basis"
BASIS_VERSION = 1
SIGN_CONVENTION = "largest-magnitude-entry-positive"


@dataclass(frozen=True)
class PcaBasis:
    """Mean field and retained principal directions of one (node, component) pair.

    ``components`` has shape (p, v) with orthonormal rows. ``singular_values``
    and ``explained_variance_ratio`` cover all r = min(u, v) directions of
    the centered training matrix.
    """

    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray
    explained_variance_ratio: np.ndarray
    node_id: str = ""
    component: str = "X"
    n_samples: int = 0
    degenerate: bool = False

    @property
    def p(self) -> int:
        return self.components.shape[0]

    @property
    def v(self) -> int:
        return self.components.shape[1]

    @property
    def retained_variance(self) -> float:
        return float(self.explained_variance_ratio[: self.p].sum())


@dataclass(frozen=True)
class ReducedObservation:
    """PCA scores of both displacement components plus the two loads at one node."""

    scores_x: np.ndarray
    scores_y: np.ndarray
    load_x: float
    load_y: float
    node_id: str = ""

    def vector(self) -> np.ndarray:
        """Channels in bank order: x scores, y scores, load x, load y."""
        return np.concatenate([self.scores_x, self.scores_y, [self.load_x, self.load_y]])


def fit_pca(training: np.ndarray, p: int | None = 5, variance_threshold: float | None = None,
            node_id: str = "", component: str = "X") -> PcaBasis:
    """Thin-SVD PCA of a ``(u, v)`` training matrix.

    Either a fixed ``p`` is retained or, with ``p=None``, the smallest count
    whose cumulative explained variance reaches ``variance_threshold``. Each
    retained direction is signed so its largest-magnitude entry is positive.
    If the centered matrix has rank below ``p`` the trailing directions have
    zero singular values and ``degenerate`` is set.
    """
    A = np.asarray(training, dtype=float)
    if A.ndim != 2 or not np.all(np.isfinite(A)):
        raise InvalidArgumentError("training matrix must be a finite 2-D array")
    u, v = A.shape
    if p is None:
        if variance_threshold is None or not 0 < variance_threshold <= 1:
            raise InvalidArgumentError("give p or a variance threshold in (0, 1]")
    elif not 1 <= p <= min(u, v):
        raise InvalidArgumentError(f"need 1 <= p <= min(u, v) = {min(u, v)}, got p={p}")
    mean = A.mean(axis=0)
    _, s, vt = np.linalg.svd(A - mean, full_matrices=False)
    total = float(np.sum(s**2))
    evr = s**2 / total if total > 0 else np.zeros_like(s)
    if p is None:
        p = int(np.searchsorted(np.cumsum(evr), variance_threshold - 1e-15) + 1)
        p = min(p, s.size)
    comps = vt[:p].copy()
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(p), idx])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]
    tiny = s[:p] <= s[0] * 1e-13 if s[0] > 0 else np.ones(p, bool)
    degenerate = bool(np.any(tiny))
    if degenerate:
        log.warning("PCA for node %r component %s: rank below p=%d", node_id, component, p)
    return PcaBasis(mean=mean, components=comps, singular_values=s, explained_variance_ratio=evr,
                    node_id=node_id, component=component, n_samples=u, degenerate=degenerate)


def project(basis: PcaBasis, field: np.ndarray) -> np.ndarray:
    """Scores ``(field - mean) V*``; accepts one field or a stack of fields."""
    f = np.asarray(field, dtype=float)
    if f.shape[-1] != basis.v:
        raise InvalidArgumentError(f"field length {f.shape[-1]} does not match basis length {basis.v}")
    return (f - basis.mean) @ basis.components.T


def reconstruct(basis: PcaBasis, scores: np.ndarray) -> np.ndarray:
    """Field ``mean + scores V*^T``; accepts one score vector or a stack."""
    z = np.asarray(scores, dtype=float)
    if z.shape[-1] != basis.p:
        raise InvalidArgumentError(f"score length {z.shape[-1]} does not match p = {basis.p}")
    return basis.mean + z @ basis.components


def transform_noise_covariance(basis: PcaBasis, psi2_disp: float) -> np.ndarray:
    """Score-space covariance of i.i.d. field noise, ``V*^T (psi2 I) V*``.

    Computed explicitly rather than assumed to be ``psi2 I`` so that a
    non-orthonormal basis would still be handled correctly.
    """
    if not psi2_disp > 0:
        raise InvalidArgumentError("displacement noise variance must be positive")
    V = basis.components
    cov = V @ (psi2_disp * V.T)
    return 0.5 * (cov + cov.T)


def save_basis(basis: PcaBasis, path) -> Path:
    """Text format: ``#`` header lines then one array per line at full precision."""
    path = Path(path)
    header = [
        f"# {BASIS_FORMAT} version={BASIS_VERSION}",
        f"# node_id={basis.node_id}",
        f"# component={basis.component}",
        f"# u={basis.n_samples} v={basis.v} p={basis.p} r={basis.singular_values.size}",
        f"# sign_convention={SIGN_CONVENTION}",
        f"# degenerate={int(basis.degenerate)}",
    ]

    def row(a):
        return " ".join(repr(float(x)) for x in np.ravel(a))

    lines = header + ["mean " + row(basis.mean), "singular_values " + row(basis.singular_values),
                      "explained_variance_ratio " + row(basis.explained_variance_ratio)]
    lines += [f"component_{k} " + row(c) for k, c in enumerate(basis.components)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_basis(path) -> PcaBasis:
    text = Path(path).read_text()
    if not text.startswith(f"# {BASIS_FORMAT} "):
        raise InvalidArgumentError(f"{path}: not a PCA basis file")
    meta: dict[str, str] = {}
    rows: dict[str, np.ndarray] = {}
    for line in text.splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, val = tok.split("=", 1)
                    meta[k] = val
            continue
        if line.strip():
            key, _, rest = line.partition(" ")
            rows[key] = np.array([float(x) for x in rest.split()]) if rest.strip() else np.zeros(0)
    if int(meta.get("version", -1)) != BASIS_VERSION:
        raise InvalidArgumentError(f"{path}: not a version-{BASIS_VERSION} basis file")
    p = int(meta["p"])
    comps = np.stack([rows[f"component_{k}"] for k in range(p)])
    return PcaBasis(mean=rows["mean"], components=comps, singular_values=rows["singular_values"],
                    explained_variance_ratio=rows["explained_variance_ratio"], node_id=meta.get("node_id", ""),
                    component=meta.get("component", "X"), n_samples=int(meta["u"]),
                    degenerate=bool(int(meta["degenerate"])))
