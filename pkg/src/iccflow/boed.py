"""Expected information gain, underflow-safe evidence and the ICC feedback loop."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from .errors import EigError, InvalidArgumentError, OptimizationError, PosteriorError, SelectionError
from .infer import (
    GaussianPosterior,
    LaplaceSettings,
    NoiseModel,
    PosteriorSummary,
    PriorSpec,
    _fd_grad,
    _rejection_normal,
    fd_hessian,
    laplace_from_hessian,
    laplace_posterior,
    log_prior,
    summarize,
)
from .pathtree import LoadPathTree
from .rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EigSettings:
    """Nested Monte Carlo budget and the underflow policy.

    ``fallback`` is ``"auto"`` (Laplace importance sampling for outer samples
    whose inner sum is degenerate), ``"never"`` or ``"always"``. A sample is
    degenerate when every inner log-likelihood sits more than
    ``underflow_nats`` below the outer sample's own log-likelihood.
    """

    N: int = 2000
    M: int = 500
    seed: int = 0
    underflow_nats: float = 700.0
    fallback: str = "auto"
    chunk: int = 32

    def __post_init__(self):
        if self.N < 1 or self.M < 1 or self.chunk < 1:
            raise InvalidArgumentError("EIG sample counts must be at least 1")
        if self.fallback not in ("auto", "never", "always"):
            raise InvalidArgumentError(f"unknown fallback policy {self.fallback!r}")

    @classmethod
    def full(cls, seed: int = 0) -> "EigSettings":
        return cls(N=10000, M=1000, seed=seed)


@dataclass(frozen=True)
class EigEstimate:
    value: float
    standard_error: float
    fallback_count: int
    node_id: str
    n_used: int = 0
    n_degenerate: int = 0
    n_excluded: int = 0


# -- sampling distributions ---------------------------------------------------
class SamplingDistribution:
    """Uniform interface over a truncated-normal prior and a bounded Gaussian posterior."""

    def __init__(self, source):
        if not isinstance(source, (PriorSpec, GaussianPosterior)):
            raise InvalidArgumentError("sampling distribution must be a PriorSpec or GaussianPosterior")
        self.source = source
        self.bounds = source.bounds

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        s = self.source
        if isinstance(s, PriorSpec):
            return _rejection_normal(rng, s.mean, s.sd, s.bounds, count)
        return s.sample(count, rng, truncate=True)

    @cached_property
    def _log_mass(self) -> float:
        s = self.source
        mass = multivariate_normal(s.mean, s.covariance).cdf(s.bounds.ub, lower_limit=s.bounds.lb)
        return float(np.log(max(mass, 1e-300)))

    def logpdf(self, theta) -> np.ndarray:
        """Exact normalized log density (``-inf`` outside the bounds)."""
        s = self.source
        th = np.atleast_2d(np.asarray(theta, float))
        if isinstance(s, PriorSpec):
            return np.atleast_1d(log_prior(th, s))
        lp = np.atleast_1d(s.logpdf(th)) - self._log_mass
        return np.where(s.bounds.contains(th), lp, -np.inf)


# -- likelihood pieces -------------------------------------------------------
class _ChannelNoise:
    """Whitening of the active channels of one node."""

    def __init__(self, node: str, bank, noise: NoiseModel):
        blocks = [(g, sl, cov) for g, sl, cov in noise.blocks(node, bank.p)
                  if g in noise.qois and sl.stop > sl.start]
        if not blocks:
            raise InvalidArgumentError("no active QoI channels")
        self.idx = np.concatenate([np.arange(sl.start, sl.stop) for _, sl, _ in blocks])
        k = self.idx.size
        cov = np.zeros((k, k))
        o = 0
        for _, sl, c in blocks:
            w = sl.stop - sl.start
            cov[o:o + w, o:o + w] = c
            o += w
        self.L = np.linalg.cholesky(cov)
        self.Linv = np.linalg.inv(self.L)
        self.const = -np.sum(np.log(np.diag(self.L))) - 0.5 * k * np.log(2 * np.pi)

    def simulate(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return mean[..., self.idx] + rng.standard_normal(self.idx.size) @ self.L.T

    def loglike(self, y: np.ndarray, pred: np.ndarray) -> np.ndarray:
        z = (y - pred[..., self.idx]) @ self.Linv.T
        return self.const - 0.5 * np.sum(z * z, axis=-1)


def laplace_importance_evidence(theta0: np.ndarray, y: np.ndarray, node: str, bank, noise: NoiseModel,
                                dist, M: int, rng: np.random.Generator,
                                settings: LaplaceSettings = LaplaceSettings()) -> float:
    """Log evidence of ``y`` by importance sampling from a Laplace fit of its posterior.

    The per-sample posterior is the sampling distribution times the
    candidate-step likelihood; its MAP is sought from ``theta0`` and the
    proposal is the untruncated Gaussian at that MAP, so proposal draws
    outside the bounds simply get zero weight.

    Raises
    ------
    OptimizationError
        If the MAP search or the Hessian fails for this sample.
    """
    dist = dist if isinstance(dist, SamplingDistribution) else SamplingDistribution(dist)
    ch = _ChannelNoise(node, bank, noise)
    b = dist.bounds

    def neg_post(Z):
        th = b.from_unit(np.clip(np.atleast_2d(Z), 0.0, 1.0))
        lp = dist.logpdf(th)
        out = np.full(th.shape[0], np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = -(lp[ok] + ch.loglike(y, bank.predict(node, th[ok])))
        return out

    z0 = np.clip(b.to_unit(theta0), 1e-6, 1 - 1e-6)
    h = min(settings.map.fd_step, 1e-7)

    def fun(z):
        v, g = _fd_grad(neg_post, z, h)
        return (1e300, np.zeros_like(z)) if not np.isfinite(v) else (v, g)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * b.dim,
                       options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12})
    if not np.isfinite(res.fun):
        raise OptimizationError("per-sample MAP failed", theta0=np.asarray(theta0).tolist())
    try:
        H, _ = fd_hessian(lambda zz: float(neg_post(zz)[0]), res.x, _hessian_step(neg_post, res.x, settings.step))
        q = laplace_from_hessian(b.from_unit(res.x), _absolute_eigenvalues(H), b, settings.eig_floor)
    except PosteriorError as exc:
        raise OptimizationError(f"per-sample Laplace failed: {exc}") from exc
    th = q.sample(M, rng, truncate=False)
    logw = np.full(M, -np.inf)
    lp = dist.logpdf(th)
    ok = np.isfinite(lp)
    if np.any(ok):
        logw[ok] = ch.loglike(y, bank.predict(node, th[ok])) + lp[ok] - q.logpdf(th[ok])
    return float(logsumexp(logw) - np.log(M))


def _absolute_eigenvalues(H: np.ndarray) -> np.ndarray:
    """Replace negative curvature by its magnitude.

    Any proposal that covers the support keeps the importance estimate
    unbiased, so a saddle or a bound-pinned MAP only costs efficiency.
    """
    lam, Q = np.linalg.eigh(0.5 * (H + H.T))
    if lam.min() < 0:
        log.debug("per-sample Hessian indefinite (%s); using absolute eigenvalues", lam)
    return (Q * np.abs(lam)) @ Q.T


def _hessian_step(f, z, h0):
    """Shrink the FD step until the curvature probe changes f by at most ~1 nat.

    A sharply peaked per-sample posterior needs a stencil inside its width;
    for ordinary widths this returns ``h0`` unchanged.
    """
    f0 = float(f(z)[0])
    h = h0
    for _ in range(12):
        probes = []
        for d in range(z.size):
            e = np.zeros(z.size)
            e[d] = h
            for s in (1, -1):
                zz = z + s * e
                if np.all((zz >= 0) & (zz <= 1)):
                    probes.append(zz)
        vals = f(np.array(probes))
        if np.all(np.isfinite(vals)) and np.max(vals - f0) <= 1.0:
            return h
        h *= 0.1
    return h


# -- EIG ---------------------------------------------------------------------
def estimate_eig(sampling, node: str, bank, noise: NoiseModel, settings: EigSettings = EigSettings(),
                 laplace: LaplaceSettings = LaplaceSettings()) -> EigEstimate:
    """Double-nested Monte Carlo EIG of observing tree node ``node``.

    Every outer sample ``i`` owns RNG streams derived from ``(seed, i)``, so
    results do not depend on chunking, and both children of a node see the
    same parameter and noise draws (common random numbers).
    """
    if node not in bank:
        raise InvalidArgumentError(f"candidate node {node!r} is not in the bank")
    dist = sampling if isinstance(sampling, SamplingDistribution) else SamplingDistribution(sampling)
    ch = _ChannelNoise(node, bank, noise)
    N, M = settings.N, settings.M
    terms = np.full(N, np.nan)
    fallback = degenerate = excluded = 0
    for c0 in range(0, N, settings.chunk):
        idx = range(c0, min(N, c0 + settings.chunk))
        outer_th, ys, inner_th = [], [], []
        for i in idx:
            r_out = stream(settings.seed, "eig-outer", i)
            th0 = dist.sample(1, r_out)[0]
            outer_th.append(th0)
            inner_th.append(dist.sample(M, stream(settings.seed, "eig-inner", i)))
        outer_th = np.array(outer_th)
        pred0 = bank.predict(node, outer_th)
        for k, i in enumerate(idx):
            ys.append(ch.simulate(pred0[k], stream(settings.seed, "eig-noise", i)))
        ys = np.array(ys)
        outer_ll = ch.loglike(ys, pred0)
        inner_pred = bank.predict(node, np.concatenate(inner_th)).reshape(len(idx), M, -1)
        inner_ll = ch.loglike(ys[:, None, :], inner_pred)
        for k, i in enumerate(idx):
            degen = bool(np.max(inner_ll[k]) < outer_ll[k] - settings.underflow_nats)
            degenerate += degen
            use_fb = settings.fallback == "always" or (settings.fallback == "auto" and degen)
            if use_fb:
                try:
                    ev = laplace_importance_evidence(outer_th[k], ys[k], node, bank, noise, dist, M,
                                                     stream(settings.seed, "eig-fallback", i), laplace)
                    fallback += 1
                except OptimizationError as exc:
                    log.warning("EIG outer sample %d excluded: %s", i, exc)
                    excluded += 1
                    continue
            else:
                ev = float(logsumexp(inner_ll[k]) - np.log(M))
            terms[i] = outer_ll[k] - ev
    ok = np.isfinite(terms)
    if not np.any(ok):
        raise EigError(f"every outer sample failed for node {node!r}")
    t = terms[ok]
    se = float(t.std(ddof=1) / np.sqrt(t.size)) if t.size > 1 else float("inf")
    if degenerate:
        log.info("EIG %s: %d of %d outer samples degenerate (fallback %d)", node, degenerate, N, fallback)
    return EigEstimate(float(t.mean()), se, fallback, node, int(t.size), degenerate, excluded)


@dataclass(frozen=True)
class Selection:
    axis: str
    estimates: tuple[EigEstimate, EigEstimate]
    tie: bool


def select_next_step(current_posterior, current_node: str, bank, noise: NoiseModel,
                     settings: EigSettings = EigSettings(), depth: int | None = None) -> Selection:
    """Myopic choice between the two children of ``current_node``.

    Estimates whose one-standard-error intervals overlap count as a tie,
    which is resolved toward axis A and flagged.
    """
    if depth is not None and len(current_node) >= depth:
        raise InvalidArgumentError(f"node {current_node!r} is a leaf")
    ests = []
    for axis in ("A", "B"):
        try:
            ests.append(estimate_eig(current_posterior, current_node + axis, bank, noise, settings))
        except EigError as exc:
            log.warning("EIG for %s failed: %s", current_node + axis, exc)
            ests.append(None)
    a, b = ests
    if a is None and b is None:
        raise SelectionError(f"both EIG estimates failed at node {current_node!r}")
    if a is None or b is None:
        return Selection("A" if b is None else "B", (a, b), False)
    tie = abs(a.value - b.value) <= a.standard_error + b.standard_error
    axis = "A" if (tie or a.value >= b.value) else "B"
    if tie:
        log.info("EIG tie at %r (A %.4f +- %.4f, B %.4f +- %.4f); choosing A",
                 current_node, a.value, a.standard_error, b.value, b.standard_error)
    return Selection(axis, (a, b), tie)


# -- the loop ----------------------------------------------------------------
@dataclass
class IccStep:
    step: int
    node_id: str
    posterior: GaussianPosterior
    summary: PosteriorSummary
    selection: Selection | None
    seconds: float


@dataclass
class IccResult:
    path: str
    steps: list[IccStep] = field(default_factory=list)

    @property
    def final(self) -> PosteriorSummary:
        return self.steps[-1].summary

    @property
    def eig_table(self) -> list[tuple[int, str, float, float, float, float, str, bool]]:
        """Rows (step, node, EIG_A, SE_A, EIG_B, SE_B, choice, tie) for each decision."""
        rows = []
        for s in self.steps:
            if s.selection is None:
                continue
            a, b = s.selection.estimates
            rows.append((s.step, s.node_id, a.value if a else np.nan, a.standard_error if a else np.nan,
                         b.value if b else np.nan, b.standard_error if b else np.nan,
                         s.selection.axis, s.selection.tie))
        return rows

    def chosen_eigs(self) -> np.ndarray:
        """EIG of the chosen child at each decision (steps 2..T)."""
        out = []
        for s in self.steps:
            if s.selection is not None:
                a, b = s.selection.estimates
                out.append((a if s.selection.axis == "A" else b).value)
        return np.array(out)


def run_icc(truth, tree: LoadPathTree, bank, prior: PriorSpec, noise: NoiseModel,
            settings: EigSettings = EigSettings(), laplace: LaplaceSettings = LaplaceSettings(),
            first: str = "A") -> IccResult:
    """Interlaced calibration: observe, update the Laplace posterior, pick the next step.

    ``truth`` maps a node id to its ReducedObservation (a dict or a callable).
    The sampling distribution for the decision after step t is exactly the
    posterior stored for step t.
    """
    get = truth if callable(truth) else truth.__getitem__
    node = first
    data = []
    result = IccResult(path="")
    for t in range(1, tree.depth + 1):
        t0 = time.perf_counter()
        try:
            data.append(get(node))
            post = laplace_posterior(data, prior, bank, noise, laplace)
            sel = select_next_step(post, node, bank, noise, settings) if t < tree.depth else None
        except (EigError, SelectionError, OptimizationError, PosteriorError, InvalidArgumentError) as exc:
            log.error("ICC failed at step %d, node %r", t, node)
            exc.args = (f"ICC step {t} at node {node!r}: {exc}",) + exc.args[1:]
            exc.step = t
            raise
        result.steps.append(IccStep(t, node, post, summarize(post), sel, time.perf_counter() - t0))
        log.info("ICC step %d node %s: MAP %s%s", t, node, np.round(post.mean, 3).tolist(),
                 "" if sel is None else f", next {sel.axis}")
        result.path = node
        if sel is not None:
            node = node + sel.axis
    return result


# -- conjugate oracle --------------------------------------------------------
class LinearGaussianBank:
    """Stand-in surrogate bank with affine predictions ``G[node] @ theta + c[node]``.

    With a Gaussian sampling distribution whose mass lies inside the bounds,
    the EIG of a node has the closed form returned by :meth:`exact_eig`.
    """

    def __init__(self, maps: dict[str, tuple[np.ndarray, np.ndarray]], p: int):
        self.maps = {k: (np.asarray(G, float), np.asarray(c, float)) for k, (G, c) in maps.items()}
        self.p = p
        for G, c in self.maps.values():
            if G.shape[0] != 2 * p + 2 or c.shape != (2 * p + 2,):
                raise InvalidArgumentError("affine maps must have 2p+2 output channels")

    @property
    def nodes(self) -> list[str]:
        return list(self.maps)

    @property
    def n_channels(self) -> int:
        return 2 * self.p + 2

    def __contains__(self, node) -> bool:
        return node in self.maps

    def predict(self, node: str, theta) -> np.ndarray:
        G, c = self.maps[node]
        return np.asarray(theta, float) @ G.T + c

    def exact_eig(self, node: str, covariance: np.ndarray, noise: NoiseModel) -> float:
        """0.5 log det(I + R^-1 G S G^T) over the active channels."""
        ch = _ChannelNoise(node, self, noise)
        G = self.maps[node][0][ch.idx]
        R = ch.L @ ch.L.T
        _, ld1 = np.linalg.slogdet(G @ covariance @ G.T + R)
        _, ld0 = np.linalg.slogdet(R)
        return 0.5 * (ld1 - ld0)
