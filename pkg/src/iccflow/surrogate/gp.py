"""Gaussian process regression with an anisotropic squared-exponential kernel.

Inputs are mapped to the unit box and targets standardized before fitting.
The signal variance is profiled out of the log marginal likelihood, leaving
the log-lengthscales to a multi-start bounded quasi-Newton search.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from numba import njit
from scipy.optimize import minimize
from scipy.stats import qmc

from ..errors import InvalidArgumentError, TrainingError

log = logging.getLogger(__name__)

GP_FORMAT = "iccflow-gp"
GP_VERSION = 1


@dataclass(frozen=True)
class GpSettings:
    """Hyperparameter search and conditioning controls.

    ``log_ls_bounds`` bound the natural log of each lengthscale in
    unit-box coordinates; ``nugget`` is the initial jitter (relative to the
    signal variance) which grows by ``nugget_factor`` up to ``max_nugget``
    whenever a factorization fails. When the training set is larger than
    ``hyper_subset`` the multi-start search runs on its first
    ``hyper_subset`` points (a Halton prefix is itself space-filling) and the
    winner is polished on the full set for at most ``polish_iter``
    iterations.
    """

    n_starts: int = 8
    nugget: float = 1e-10
    max_nugget: float = 1e-4
    nugget_factor: float = 10.0
    log_ls_bounds: tuple[float, float] = (np.log(1e-2), np.log(1e2))
    start_box: tuple[float, float] = (np.log(0.1), np.log(3.0))
    max_iter: int = 200
    hyper_subset: int | None = 200
    polish_iter: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1:
            raise InvalidArgumentError("need at least one optimizer start")
        if not 0 < self.nugget <= self.max_nugget:
            raise InvalidArgumentError("need 0 < nugget <= max_nugget")
        if self.nugget_factor <= 1:
            raise InvalidArgumentError("nugget escalation factor must exceed 1")


@dataclass
class GpModel:
    """Fitted GP; inputs live in ``[0, 1]^D`` via ``lower``/``upper``.

    ``alpha`` solves ``(R + nugget I) alpha = y_std`` for the correlation
    matrix ``R``, so the standardized mean at ``x`` is ``r(x) . alpha``.
    """

    inputs: np.ndarray          # (u, D) normalized
    targets: np.ndarray         # (u,) standardized
    lengthscales: np.ndarray    # (D,)
    signal_variance: float      # of the standardized targets
    nugget: float
    alpha: np.ndarray
    y_mean: float
    y_scale: float
    lower: np.ndarray
    upper: np.ndarray
    log_marginal_likelihood: float = np.nan
    _chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def normalize(self, theta: np.ndarray) -> np.ndarray:
        return (np.asarray(theta, float) - self.lower) / (self.upper - self.lower)

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            R = correlation(self.inputs, self.inputs, self.lengthscales)
            R[np.diag_indices_from(R)] += self.nugget
            self._chol = np.linalg.cholesky(R)
        return self._chol


def _sqdist_stack(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (D, u, u)."""
    return (X.T[:, :, None] - X.T[:, None, :]) ** 2


def correlation(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = X1 / lengthscales
    b = X2 / lengthscales
    d2 = np.sum(a**2, 1)[:, None] + np.sum(b**2, 1)[None, :] - 2.0 * a @ b.T
    return np.exp(-0.5 * np.maximum(d2, 0.0))


def _neg_profiled_lml(log_ls, D2, y, nugget):
    """Negative log marginal likelihood with the signal variance profiled out.

    Returns the value and its gradient in log-lengthscale, or ``None`` when
    the kernel matrix cannot be factorized at this nugget.
    """
    u = y.size
    inv_l2 = np.exp(-2.0 * log_ls)
    R = np.exp(-0.5 * np.tensordot(inv_l2, D2, axes=1))
    K = R.copy()
    K[np.diag_indices(u)] += nugget
    try:
        c, low = sla.cho_factor(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    alpha = sla.cho_solve((c, low), y, check_finite=False)
    q = float(y @ alpha)
    if not q > 0:
        return None
    s2 = q / u
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    nll = 0.5 * u * np.log(s2) + 0.5 * logdet + 0.5 * u * (1.0 + np.log(2 * np.pi))
    Kinv, info = sla.lapack.dpotri(c, lower=1)
    if info != 0:
        return None
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    # dR/dlog(l_d) = R * D2_d / l_d^2
    W = (np.outer(alpha, alpha) / s2 - Kinv) * R
    grad = -0.5 * inv_l2 * np.tensordot(D2, W, axes=([1, 2], [0, 1]))
    return nll, grad


def _local_search(x0, D2, y, nugget, bounds, max_iter):
    """One bounded L-BFGS-B run; ``None`` if the start point cannot be factorized."""
    D = x0.size

    def fun(z):
        r = _neg_profiled_lml(z, D2, y, nugget)
        return (1e30, np.zeros(D)) if r is None else r

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if fun(x0)[0] >= 1e30:
            return None
        res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter})
    return res if res.fun < 1e30 else None


def train_gp(inputs: np.ndarray, targets: np.ndarray, lower=None, upper=None,
             settings: GpSettings = GpSettings()) -> GpModel:
    """Fit a GP to ``targets`` observed at physical ``inputs`` inside [lower, upper].

    Raises
    ------
    TrainingError
        If no kernel matrix can be factorized up to the maximum nugget.
    """
    X = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InvalidArgumentError("inputs must be (u, D) and targets (u,)")
    u, D = X.shape
    if u < D + 2:
        raise InvalidArgumentError(f"need at least D + 2 = {D + 2} training points, got {u}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("training data must be finite")
    lo = X.min(0) if lower is None else np.asarray(lower, float)
    hi = X.max(0) if upper is None else np.asarray(upper, float)
    if np.any(hi <= lo):
        raise InvalidArgumentError("upper bounds must exceed lower bounds")
    Xn = (X - lo) / (hi - lo)
    y_mean = float(y.mean())
    y_scale = float(y.std())
    if y_scale <= 1e-300 or y_scale <= 1e-14 * max(abs(y_mean), 1e-300):
        # constant targets: the mean is exact, no kernel to fit
        ls = np.ones(D)
        return GpModel(Xn, np.zeros(u), ls, 0.0, settings.nugget, np.zeros(u), y_mean, 1.0, lo, hi, np.inf)
    ys = (y - y_mean) / y_scale

    D2 = _sqdist_stack(Xn)
    sub = settings.hyper_subset
    subset = sub is not None and u > sub
    D2s, yss = (_sqdist_stack(Xn[:sub]), ys[:sub]) if subset else (D2, ys)
    starts = qmc.Halton(d=D, scramble=True, seed=settings.seed).random(settings.n_starts)
    a, b = settings.start_box
    starts = a + (b - a) * starts
    bounds = [settings.log_ls_bounds] * D

    nugget = settings.nugget
    final = None
    while nugget <= settings.max_nugget * (1 + 1e-9):
        best = None
        for x0 in starts:
            res = _local_search(x0, D2s, yss, nugget, bounds, settings.max_iter)
            if res is not None and (best is None or res.fun < best.fun):
                best = res
        if best is not None and subset:
            best = _local_search(best.x, D2, ys, nugget, bounds, settings.polish_iter)
        if best is not None:
            final = _neg_profiled_lml(best.x, D2, ys, nugget)
            if final is not None:
                break
        log.debug("escalating nugget from %.1e", nugget)
        nugget *= settings.nugget_factor
    if final is None:
        raise TrainingError(f"kernel matrix not positive definite up to nugget {settings.max_nugget:g}")

    ls = np.exp(best.x)
    R = correlation(Xn, Xn, ls)
    R[np.diag_indices(u)] += nugget
    L = np.linalg.cholesky(R)
    alpha = sla.cho_solve((L, True), ys, check_finite=False)
    s2 = float(ys @ alpha) / u
    return GpModel(Xn, ys, ls, s2, nugget, alpha, y_mean, y_scale, lo, hi, -float(final[0]), L)


def gp_predict_mean(model: GpModel, theta: np.ndarray) -> np.ndarray | float:
    """De-standardized posterior mean at one or many physical inputs."""
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    xn = model.normalize(th)
    if np.any(xn < -1e-9) or np.any(xn > 1 + 1e-9):
        log.warning("GP prediction outside the training box (extrapolation)")
    out = model.y_mean + model.y_scale * _mean_kernel(xn, model.inputs, 1.0 / model.lengthscales, model.alpha)
    return float(out[0]) if np.ndim(theta) == 1 else out


def gp_predict_var(model: GpModel, theta: np.ndarray) -> np.ndarray:
    """Posterior variance (physical units) at physical inputs, excluding the nugget."""
    xn = model.normalize(np.atleast_2d(np.asarray(theta, dtype=float)))
    r = correlation(xn, model.inputs, model.lengthscales)
    v = sla.solve_triangular(model.cholesky(), r.T, lower=True, check_finite=False)
    var = model.signal_variance * np.maximum(1.0 - np.sum(v**2, axis=0), 0.0)
    return var * model.y_scale**2


@njit(cache=True)
def _mean_kernel(xq, X, inv_ls, alpha):
    n, D = xq.shape
    u = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(u):
            d2 = 0.0
            for d in range(D):
                t = (xq[i, d] - X[j, d]) * inv_ls[d]
                d2 += t * t
            acc += alpha[j] * np.exp(-0.5 * d2)
        out[i] = acc
    return out


@njit(cache=True)
def multi_channel_mean(xq, X, inv_ls, alpha, y_mean, y_scale, out):
    """Means of C channels sharing training inputs ``X``.

    ``inv_ls`` is (C, D), ``alpha`` is (C, u) and ``out`` is (n, C).
    """
    n, D = xq.shape
    u = X.shape[0]
    C = alpha.shape[0]
    diff = np.empty(D)
    for i in range(n):
        for c in range(C):
            out[i, c] = 0.0
        for j in range(u):
            for d in range(D):
                diff[d] = xq[i, d] - X[j, d]
            for c in range(C):
                d2 = 0.0
                for d in range(D):
                    t = diff[d] * inv_ls[c, d]
                    d2 += t * t
                out[i, c] += alpha[c, j] * np.exp(-0.5 * d2)
        for c in range(C):
            out[i, c] = y_mean[c] + y_scale[c] * out[i, c]


def _row(a) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(a))


def save_gp(model: GpModel, path, meta: dict | None = None) -> Path:
    """Versioned text record; floats are written with ``repr`` so reload is exact."""
    path = Path(path)
    u, D = model.inputs.shape
    head = [f"# {GP_FORMAT} version={GP_VERSION}", f"# u={u} D={D}"]
    for k, v in sorted((meta or {}).items()):
        head.append(f"# {k}={v}")
    body = [
        "lengthscales " + _row(model.lengthscales),
        f"signal_variance {model.signal_variance!r}",
        f"nugget {model.nugget!r}",
        f"y_mean {model.y_mean!r}",
        f"y_scale {model.y_scale!r}",
        f"log_marginal_likelihood {model.log_marginal_likelihood!r}",
        "lower " + _row(model.lower),
        "upper " + _row(model.upper),
        "alpha " + _row(model.alpha),
        "targets " + _row(model.targets),
    ] + [f"input_{k} " + _row(model.inputs[:, k]) for k in range(D)]
    path.write_text("\n".join(head + body) + "\n")
    return path


def read_gp_meta(path) -> dict[str, str]:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
    return meta


def load_gp(path) -> GpModel:
    text = Path(path).read_text()
    if not text.startswith(f"# {GP_FORMAT} "):
        raise InvalidArgumentError(f"{path}: not a GP record")
    meta = read_gp_meta(path)
    if int(meta.get("version", -1)) != GP_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported GP record version {meta.get('version')}")
    rows = {}
    for line in text.splitlines():
        if line and not line.startswith("#"):
            k, _, rest = line.partition(" ")
            rows[k] = np.array([float(x) for x in rest.split()])
    D = int(meta["D"])
    X = np.stack([rows[f"input_{k}"] for k in range(D)], axis=1)
    return GpModel(X, rows["targets"], rows["lengthscales"], float(rows["signal_variance"][0]),
                   float(rows["nugget"][0]), rows["alpha"], float(rows["y_mean"][0]), float(rows["y_scale"][0]),
                   rows["lower"], rows["upper"], float(rows["log_marginal_likelihood"][0]))
