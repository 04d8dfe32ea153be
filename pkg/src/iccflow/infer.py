"""Priors, surrogate likelihood, MAP, Laplace posterior, adaptive Metropolis, summaries."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import InvalidArgumentError, OptimizationError, PosteriorError
from .reduce import transform_noise_covariance
from .rng import stream
from .surrogate.design import KSI, ParameterBounds

log = logging.getLogger(__name__)

QOI_GROUPS = ("dispPCA_X", "dispPCA_Y", "load_X", "load_Y")
_LOG2PI = np.log(2.0 * np.pi)


# -- prior -------------------------------------------------------------------
@dataclass(frozen=True)
class PriorSpec:
    """Independent truncated normals on theta = [sigma_y, A, n, a]."""

    mu: tuple[float, ...] = (40.0 * KSI, 10.0 * KSI, 10.0, 10.0)
    delta2: tuple[float, ...] = (225.0 * KSI**2, 225.0 * KSI**2, 225.0, 225.0)
    bounds: ParameterBounds = field(default_factory=ParameterBounds)

    def __post_init__(self):
        mu, d2 = np.asarray(self.mu, float), np.asarray(self.delta2, float)
        if mu.shape != d2.shape or mu.shape != (self.bounds.dim,):
            raise InvalidArgumentError("prior mean, variance and bounds must have equal length")
        if not np.all(d2 > 0):
            raise InvalidArgumentError("prior variances must be positive")

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.mu, float)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.delta2, float))

    def _standard_limits(self):
        return (self.bounds.lb - self.mean) / self.sd, (self.bounds.ub - self.mean) / self.sd

    def log_normalizer(self) -> np.ndarray:
        """Per-coordinate log of the probability mass inside the bounds."""
        a, b = self._standard_limits()
        return np.log(ndtr(b) - ndtr(a))

    def acceptance(self) -> np.ndarray:
        return np.exp(self.log_normalizer())


def log_prior(theta, prior: PriorSpec):
    """Sum of truncated-normal log densities; ``-inf`` outside the bounds."""
    th = np.asarray(theta, float)
    z = (th - prior.mean) / prior.sd
    lp = np.sum(-0.5 * z**2 - 0.5 * _LOG2PI - np.log(prior.sd) - prior.log_normalizer(), axis=-1)
    inside = prior.bounds.contains(th)
    out = np.where(inside, lp, -np.inf)
    return float(out) if np.ndim(out) == 0 else out


def sample_prior(prior: PriorSpec, count: int, seed: int = 0) -> np.ndarray:
    """Truncated-normal draws by per-coordinate rejection from the untruncated normal."""
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    rng = stream(seed, "prior")
    return _rejection_normal(rng, prior.mean, prior.sd, prior.bounds, count)


def _rejection_normal(rng, mean, sd, bounds, count):
    out = np.empty((count, mean.size))
    for d in range(mean.size):
        got = np.empty(0)
        while got.size < count:
            x = mean[d] + sd[d] * rng.standard_normal(2 * (count - got.size) + 16)
            got = np.concatenate([got, x[(x >= bounds.lb[d]) & (x <= bounds.ub[d])]])
        out[:, d] = got[:count]
    return out


# -- likelihood --------------------------------------------------------------
@dataclass
class NoiseModel:
    """Known observation noise and its image in every node's score space.

    ``qois`` selects which of the four QoI groups enter the likelihood.
    """

    psi2_disp: float = 4e-6
    psi2_load: float = 582.11
    score_cov: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    qois: tuple[str, ...] = QOI_GROUPS

    def __post_init__(self):
        if not (self.psi2_disp > 0 and self.psi2_load > 0):
            raise InvalidArgumentError("noise variances must be positive")
        if not self.qois or any(q not in QOI_GROUPS for q in self.qois):
            raise InvalidArgumentError(f"qois must be a non-empty subset of {QOI_GROUPS}")

    @classmethod
    def from_bank(cls, bank, psi2_disp: float = 4e-6, psi2_load: float = 582.11,
                  qois: tuple[str, ...] = QOI_GROUPS) -> "NoiseModel":
        nm = cls(psi2_disp, psi2_load, {}, tuple(qois))
        for node in bank.nodes:
            nm.score_cov[node] = (transform_noise_covariance(bank.basis(node, "X"), psi2_disp),
                                  transform_noise_covariance(bank.basis(node, "Y"), psi2_disp))
        return nm

    def with_qois(self, qois) -> "NoiseModel":
        return NoiseModel(self.psi2_disp, self.psi2_load, self.score_cov, tuple(qois))

    def blocks(self, node: str, p: int) -> list[tuple[str, slice, np.ndarray]]:
        """(group, channel slice, covariance) for every QoI group at ``node``."""
        if node in self.score_cov:
            cx, cy = self.score_cov[node]
        else:
            cx = cy = self.psi2_disp * np.eye(p)
        return [("dispPCA_X", slice(0, p), cx), ("dispPCA_Y", slice(p, 2 * p), cy),
                ("load_X", slice(2 * p, 2 * p + 1), np.array([[self.psi2_load]])),
                ("load_Y", slice(2 * p + 1, 2 * p + 2), np.array([[self.psi2_load]]))]


def _gauss_terms(resid, cov):
    """Gaussian log density of residual rows ``(..., k)`` under ``cov``."""
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, np.moveaxis(resid, -1, 0).reshape(cov.shape[0], -1))
    quad = np.sum(z**2, axis=0).reshape(resid.shape[:-1])
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * quad - 0.5 * logdet - 0.5 * cov.shape[0] * _LOG2PI


def qoi_loglike_contributions(data, theta, bank, noise: NoiseModel) -> dict[str, np.ndarray | float]:
    """The additive log-likelihood terms of the four QoI groups (inactive groups are 0)."""
    th = np.asarray(theta, float)
    terms = {g: np.zeros(th.shape[:-1]) for g in QOI_GROUPS}
    for ob in data:
        if ob.node_id not in bank:
            raise InvalidArgumentError(f"observation node {ob.node_id!r} is not in the bank")
        pred = bank.predict(ob.node_id, th)
        resid = ob.vector() - pred
        for g, sl, cov in noise.blocks(ob.node_id, bank.p):
            if g in noise.qois:
                terms[g] = terms[g] + _gauss_terms(resid[..., sl], cov)
    if th.ndim == 1:
        return {g: float(v) for g, v in terms.items()}
    return terms


def log_likelihood(data, theta, bank, noise: NoiseModel):
    """Sum over observed steps and QoI groups of Gaussian log densities."""
    terms = qoi_loglike_contributions(data, theta, bank, noise)
    total = sum(terms[g] for g in QOI_GROUPS)
    return float(total) if np.ndim(total) == 0 else total


def log_posterior(theta, data, prior: PriorSpec, bank, noise: NoiseModel):
    """Unnormalized log posterior; surrogates are not evaluated outside the prior box."""
    th = np.asarray(theta, float)
    lp = np.atleast_1d(log_prior(th, prior))
    out = lp.copy()
    ok = np.isfinite(lp)
    if data and np.any(ok):
        flat = th.reshape(-1, th.shape[-1])
        out[ok] += np.atleast_1d(log_likelihood(data, flat[ok], bank, noise))
    return float(out[0]) if th.ndim == 1 else out.reshape(th.shape[:-1])


# -- MAP ---------------------------------------------------------------------
@dataclass(frozen=True)
class MapSettings:
    n_starts: int = 16
    fd_step: float = 1e-6      # normalized coordinates
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.n_starts < 1 or not self.fd_step > 0:
            raise InvalidArgumentError("invalid MAP settings")


@dataclass(frozen=True)
class MapResult:
    theta: np.ndarray
    log_posterior: float
    n_improved: int
    starts: np.ndarray


def _objective(data, prior, bank, noise):
    b = prior.bounds

    def f(z):
        return -log_posterior(b.from_unit(z), data, prior, bank, noise)
    return f


def _fd_grad(f_batch, z, h):
    """Central differences, one-sided where the stencil would leave [0, 1]."""
    D = z.size
    pts = [z]
    plan = []
    for d in range(D):
        lo, hi = z[d] - h >= 0, z[d] + h <= 1
        e = np.zeros(D)
        e[d] = h
        if lo and hi:
            plan.append(("c", len(pts)))
            pts += [z + e, z - e]
        elif hi:
            plan.append(("f", len(pts)))
            pts += [z + e]
        else:
            plan.append(("b", len(pts)))
            pts += [z - e]
    vals = f_batch(np.array(pts))
    g = np.empty(D)
    for d, (kind, i) in enumerate(plan):
        if kind == "c":
            g[d] = (vals[i] - vals[i + 1]) / (2 * h)
        elif kind == "f":
            g[d] = (vals[i] - vals[0]) / h
        else:
            g[d] = (vals[0] - vals[i]) / h
    return vals[0], g


def map_estimate(data, prior: PriorSpec, bank, noise: NoiseModel, settings: MapSettings = MapSettings()) -> MapResult:
    """Multi-start bounded L-BFGS-B on the negative log posterior.

    Starts are the first ``n_starts`` points of a scrambled Halton sequence
    over the bounds; gradients are central finite differences in normalized
    coordinates.
    """
    b = prior.bounds
    data = list(data)

    def f_batch(Z):
        return -log_posterior(b.from_unit(np.clip(Z, 0.0, 1.0)), data, prior, bank, noise)

    def fun(z):
        v, g = _fd_grad(f_batch, z, settings.fd_step)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(z)
        return v, g

    eng = qmc.Halton(d=b.dim, scramble=True, seed=settings.seed)
    # keep starts off the faces so the FD stencil fits
    starts = 0.02 + 0.96 * eng.random(settings.n_starts)
    best_z, best_f, improved = None, np.inf, 0
    start_vals = f_batch(starts)
    for z0, f0 in zip(starts, start_vals):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * b.dim,
                           options={"maxiter": settings.max_iter, "ftol": 1e-15, "gtol": 1e-10})
        if np.isfinite(res.fun) and res.fun < f0:
            improved += 1
        if res.fun < best_f:
            best_z, best_f = res.x, float(res.fun)
    i0 = int(np.argmin(start_vals))
    if improved == 0 or best_f > start_vals[i0]:
        raise OptimizationError("no optimizer start improved on its starting point",
                                best_start=b.from_unit(starts[i0]).tolist(), best_value=float(-start_vals[i0]))
    return MapResult(b.from_unit(best_z), -best_f, improved, b.from_unit(starts))


# -- Laplace -----------------------------------------------------------------
@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian approximation N(mean, covariance) restricted to ``bounds``."""

    mean: np.ndarray
    covariance: np.ndarray
    bounds: ParameterBounds
    log_posterior_at_mean: float = np.nan

    def __post_init__(self):
        C = np.asarray(self.covariance, float)
        if C.shape != (self.mean.size, self.mean.size):
            raise InvalidArgumentError("covariance shape does not match the mean")
        if not np.allclose(C, C.T, rtol=0, atol=1e-10 * max(np.abs(C).max(), 1e-300)):
            raise InvalidArgumentError("covariance must be symmetric")

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, theta) -> np.ndarray:
        """Untruncated Gaussian log density (exact; used as an importance proposal)."""
        L = np.linalg.cholesky(self.covariance)
        r = np.atleast_2d(np.asarray(theta, float)) - self.mean
        z = np.linalg.solve(L, r.T)
        out = -0.5 * np.sum(z**2, 0) - np.sum(np.log(np.diag(L))) - 0.5 * self.dim * _LOG2PI
        return out if np.ndim(theta) > 1 else out[0]

    def sample(self, count: int, rng: np.random.Generator, truncate: bool = True,
               max_rounds: int = 1000) -> np.ndarray:
        """Draws from the Gaussian, rejecting those outside the bounds when ``truncate``."""
        L = np.linalg.cholesky(self.covariance)
        if not truncate:
            return self.mean + rng.standard_normal((count, self.dim)) @ L.T
        out = np.empty((0, self.dim))
        for _ in range(max_rounds):
            need = count - out.shape[0]
            if need <= 0:
                break
            x = self.mean + rng.standard_normal((2 * need + 8, self.dim)) @ L.T
            out = np.concatenate([out, x[self.bounds.contains(x)]])
        else:
            raise PosteriorError("posterior mass inside the bounds is too small to sample")
        return out[:count]


@dataclass(frozen=True)
class LaplaceSettings:
    step: float = 1e-4             # normalized coordinates
    eig_floor: float = 1e-12
    map: MapSettings = field(default_factory=MapSettings)


def fd_hessian(f, z: np.ndarray, h: float) -> tuple[np.ndarray, bool]:
    """Second-derivative matrix of scalar ``f`` on [0, 1]^D by finite differences.

    Central stencils are used where they fit; near a face each affected
    direction switches to a one-sided stencil. Returns the Hessian and
    whether any one-sided stencil was needed.
    """
    D = z.size
    sgn = np.ones(D)
    central = np.ones(D, bool)
    for d in range(D):
        if z[d] - h < 0 or z[d] + h > 1:
            central[d] = False
            sgn[d] = 1.0 if z[d] + 2 * h <= 1 else -1.0
    E = np.eye(D) * h
    f0 = f(z)
    H = np.empty((D, D))
    for i in range(D):
        if central[i]:
            H[i, i] = (f(z + E[i]) - 2 * f0 + f(z - E[i])) / h**2
        else:
            s = sgn[i]
            H[i, i] = (f(z + 2 * s * E[i]) - 2 * f(z + s * E[i]) + f0) / h**2
        for j in range(i):
            if central[i] and central[j]:
                H[i, j] = (f(z + E[i] + E[j]) - f(z + E[i] - E[j]) - f(z - E[i] + E[j])
                           + f(z - E[i] - E[j])) / (4 * h * h)
            else:
                si = sgn[i] if not central[i] else 1.0
                sj = sgn[j] if not central[j] else 1.0
                H[i, j] = (f(z + si * E[i] + sj * E[j]) - f(z + si * E[i]) - f(z + sj * E[j]) + f0) / (si * sj * h * h)
            H[j, i] = H[i, j]
    return H, not np.all(central)


def laplace_from_hessian(theta_map, H_norm, bounds: ParameterBounds, eig_floor: float = 1e-12,
                         log_post: float = np.nan) -> GaussianPosterior:
    """Covariance ``W H^-1 W`` from a normalized-coordinate Hessian of ``-J``."""
    H = 0.5 * (H_norm + H_norm.T)
    lam, Q = np.linalg.eigh(H)
    if not np.all(np.isfinite(lam)):
        raise PosteriorError("Hessian has non-finite entries", eigenvalues=lam)
    scale = max(np.abs(lam).max(), 1e-300)
    if lam.min() < -1e-6 * scale:
        raise PosteriorError("Hessian of the negative log posterior is indefinite", eigenvalues=lam)
    floor = eig_floor * scale
    if lam.min() < floor:
        log.warning("Laplace Hessian near singular (eigenvalues %s); flooring at %.3g", lam, floor)
    cov_eigs = np.maximum(1.0 / np.maximum(lam, floor), eig_floor)
    Sn = (Q * cov_eigs) @ Q.T
    W = np.diag(bounds.width)
    S = W @ Sn @ W
    S = 0.5 * (S + S.T)
    return GaussianPosterior(np.asarray(theta_map, float), S, bounds, log_post)


def laplace_posterior(data, prior: PriorSpec, bank, noise: NoiseModel,
                      settings: LaplaceSettings = LaplaceSettings(), theta_map=None) -> GaussianPosterior:
    """MAP plus the inverse finite-difference Hessian of ``-J`` at the MAP."""
    data = list(data)
    if theta_map is None:
        m = map_estimate(data, prior, bank, noise, settings.map)
        theta_map, lp = m.theta, m.log_posterior
    else:
        lp = log_posterior(np.asarray(theta_map, float), data, prior, bank, noise)
    b = prior.bounds
    z = b.to_unit(theta_map)

    def f(zz):
        return -log_posterior(b.from_unit(zz), data, prior, bank, noise)

    H, one_sided = fd_hessian(f, z, settings.step)
    if one_sided:
        log.warning("MAP within one FD step of a bound; one-sided Hessian stencil used")
    return laplace_from_hessian(theta_map, H, b, settings.eig_floor, lp)


# -- MCMC --------------------------------------------------------------------
@dataclass(frozen=True)
class McmcSettings:
    n_samples: int = 30000
    burn_in: int = 5000
    thin: int = 5
    adapt_interval: int = 100
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.burn_in < self.n_samples and self.thin >= 1 and self.adapt_interval >= 1):
            raise InvalidArgumentError("invalid MCMC settings")

    @classmethod
    def full(cls, seed: int = 0) -> "McmcSettings":
        return cls(120000, 20000, 10, 100, seed)


@dataclass(frozen=True)
class McmcChain:
    samples: np.ndarray          # (n_kept, D) thinned, post burn-in
    log_posterior: np.ndarray
    acceptance_rate: float       # post burn-in
    burn_in_acceptance: float
    proposal_cov: np.ndarray


def mcmc_sample(data, prior: PriorSpec, bank, noise: NoiseModel, settings: McmcSettings = McmcSettings(),
                start=None, initial_cov=None, log_target=None) -> McmcChain:
    """Adaptive random-walk Metropolis (covariance adapted during burn-in only).

    ``log_target`` overrides the surrogate posterior (used for testing on
    analytic targets); proposals outside the prior bounds are rejected.
    """
    data = list(data)
    b = prior.bounds
    D = b.dim
    target = log_target or (lambda t: log_posterior(t, data, prior, bank, noise))
    rng = stream(settings.seed, "mcmc")
    x = np.asarray(start if start is not None else prior.mean, float).copy()
    lp = float(target(x))
    if not np.isfinite(lp):
        raise InvalidArgumentError("MCMC start has zero posterior density")
    cov0 = np.asarray(initial_cov, float) if initial_cov is not None else np.diag((0.05 * b.width) ** 2)
    sd = 2.38**2 / D
    eps = 1e-10 * np.diag(b.width**2)
    prop = sd * cov0 + eps
    L = np.linalg.cholesky(prop)
    kept, kept_lp = [], []
    acc_burn = acc_post = 0
    # running moments of the burn-in chain for adaptation
    mean_run, m2 = x.copy(), np.zeros((D, D))
    n_run = 1
    for it in range(settings.n_samples):
        y = x + L @ rng.standard_normal(D)
        if b.contains(y):
            lpy = float(target(y))
            if np.log(rng.random()) < lpy - lp:
                x, lp = y, lpy
                if it < settings.burn_in:
                    acc_burn += 1
                else:
                    acc_post += 1
        if it < settings.burn_in:
            n_run += 1
            delta = x - mean_run
            mean_run = mean_run + delta / n_run
            m2 = m2 + np.outer(delta, x - mean_run)
            if (it + 1) % settings.adapt_interval == 0 and n_run > 2 * D:
                emp = m2 / (n_run - 1)
                try:
                    L = np.linalg.cholesky(sd * emp + eps)
                    prop = sd * emp + eps
                except np.linalg.LinAlgError:
                    pass
        elif (it - settings.burn_in) % settings.thin == 0:
            kept.append(x.copy())
            kept_lp.append(lp)
    n_post = settings.n_samples - settings.burn_in
    rate = acc_post / n_post
    if not 0.05 <= rate <= 0.7:
        log.warning("MCMC acceptance rate %.3f outside [0.05, 0.7]", rate)
    return McmcChain(np.array(kept), np.array(kept_lp), rate,
                     acc_burn / max(settings.burn_in, 1), prop)


# -- summaries ---------------------------------------------------------------
@dataclass(frozen=True)
class PosteriorSummary:
    mean: np.ndarray
    variance: np.ndarray
    zeta: np.ndarray              # 95% half-widths 1.96 sd
    generalized_variance: float   # det of the covariance
    correlation: np.ndarray
    covariance: np.ndarray

    def ci(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean - self.zeta, self.mean + self.zeta

    def contains(self, theta) -> np.ndarray:
        lo, hi = self.ci()
        t = np.asarray(theta, float)
        return (t >= lo) & (t <= hi)


def summarize(source) -> PosteriorSummary:
    """Summary of a GaussianPosterior, an McmcChain or a raw (n, D) sample array."""
    if isinstance(source, GaussianPosterior):
        mean, cov = source.mean.copy(), source.covariance.copy()
    else:
        s = source.samples if isinstance(source, McmcChain) else np.asarray(source, float)
        if s.ndim != 2 or s.shape[0] < 2:
            raise InvalidArgumentError("need at least two samples to summarize")
        mean, cov = s.mean(0), np.cov(s, rowvar=False)
    var = np.diag(cov).copy()
    sd = np.sqrt(var)
    corr = cov / np.outer(sd, sd)
    lam = np.linalg.eigvalsh(cov)
    return PosteriorSummary(mean, var, 1.96 * sd, float(np.prod(lam)), corr, cov)
