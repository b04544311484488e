"""Scalar Gaussian numerics used as the base predictive CDF of each box coordinate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

PROB_EPS = 1e-12
VAR_FLOOR = 1e-12

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DomainError(ValueError):
    """Raised when a numeric argument lies outside an operation's domain."""


@dataclass(frozen=True)
class Gaussian1D:
    """Predictive distribution of one coordinate.

    The variance is floored at ``VAR_FLOOR`` on construction so that a
    zero-spread MC-dropout estimate still yields a usable distribution.
    """

    mean: float
    variance: float

    def __post_init__(self):
        mean = float(self.mean)
        var = float(self.variance)
        if not math.isfinite(mean):
            raise DomainError(f"mean must be finite, got {self.mean!r}")
        if not math.isfinite(var) or var < 0:
            raise DomainError(f"variance must be finite and >= 0, got {self.variance!r}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", max(var, VAR_FLOOR))

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def _clamp_prob(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def cdf(g: Gaussian1D, z: float) -> float:
    """P(X <= z), clamped into [PROB_EPS, 1 - PROB_EPS]."""
    z = float(z)
    if not math.isfinite(z):
        raise DomainError(f"z must be finite, got {z!r}")
    return float(_clamp_prob(special.ndtr((z - g.mean) / g.std)))


def pdf(g: Gaussian1D, z: float) -> float:
    x = (float(z) - g.mean) / g.std
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x) / g.std


def _standard_quantile(q):
    """Inverse standard normal CDF with one Newton refinement step."""
    x = special.ndtri(q)
    dens = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    # Newton step is a no-op where the density underflows.
    step = np.where(dens > 0, (special.ndtr(x) - q) / np.where(dens > 0, dens, 1.0), 0.0)
    return x - step


def quantile(g: Gaussian1D, q: float) -> float:
    """Inverse CDF: the z with cdf(g, z) = q."""
    q = float(q)
    if not (0.0 < q < 1.0):
        raise DomainError(f"q must lie in (0, 1), got {q!r}")
    return g.mean + g.std * float(_standard_quantile(q))


def cdf_array(means, variances, z) -> np.ndarray:
    """Vectorised ``cdf`` over parallel arrays of means, variances and points."""
    means = np.asarray(means, dtype=float)
    std = np.sqrt(np.maximum(np.asarray(variances, dtype=float), VAR_FLOOR))
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("z must be finite")
    return _clamp_prob(special.ndtr((z - means) / std))


def quantile_array(means, variances, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise DomainError("q must lie in (0, 1)")
    std = np.sqrt(np.maximum(np.asarray(variances, dtype=float), VAR_FLOOR))
    return np.asarray(means, dtype=float) + std * _standard_quantile(q)
