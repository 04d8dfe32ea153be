"""Parameter box and Halton training designs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from ..errors import InvalidArgumentError

KSI = 6.894757  # MPa per ksi
PARAM_NAMES = ("sigma_y", "A", "n", "a")
HALTON_BASES = (2, 3, 5, 7)


@dataclass(frozen=True)
class ParameterBounds:
    """Box for theta = [sigma_y, A, n, a] (MPa, MPa, -, -)."""

    lower: tuple[float, ...] = (32.0 * KSI, 1.0 * KSI, 0.5, 4.0)
    upper: tuple[float, ...] = (50.0 * KSI, 20.0 * KSI, 20.0, 16.0)

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidArgumentError("bounds must be equal-length vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise InvalidArgumentError(f"need finite lower < upper, got {self.lower}, {self.upper}")

    @property
    def lb(self) -> np.ndarray:
        return np.asarray(self.lower, float)

    @property
    def ub(self) -> np.ndarray:
        return np.asarray(self.upper, float)

    @property
    def width(self) -> np.ndarray:
        return self.ub - self.lb

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, theta, strict: bool = False) -> np.ndarray | bool:
        t = np.asarray(theta, float)
        ok = np.all((t > self.lb) & (t < self.ub), axis=-1) if strict else \
            np.all((t >= self.lb) & (t <= self.ub), axis=-1)
        return bool(ok) if np.ndim(ok) == 0 else ok

    def to_unit(self, theta) -> np.ndarray:
        return (np.asarray(theta, float) - self.lb) / self.width

    def from_unit(self, z) -> np.ndarray:
        return self.lb + np.asarray(z, float) * self.width


def halton_samples(count: int, bounds: ParameterBounds = ParameterBounds(), start: int = 0) -> np.ndarray:
    """Points ``start .. start+count-1`` of the unscrambled Halton sequence, scaled into ``bounds``.

    Point 0 is Halton index 1, i.e. the radical inverses (1/2, 1/3, 1/5, 1/7);
    the all-zero index-0 point is skipped so every point is strictly interior.
    """
    if count < 1 or start < 0:
        raise InvalidArgumentError("need count >= 1 and start >= 0")
    if bounds.dim > len(HALTON_BASES):
        raise InvalidArgumentError(f"at most {len(HALTON_BASES)} dimensions supported")
    eng = qmc.Halton(d=bounds.dim, scramble=False)
    eng.fast_forward(1 + start)
    return bounds.from_unit(eng.random(count))
