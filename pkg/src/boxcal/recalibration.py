"""Isotonic recalibration of Gaussian predictive CDFs.

A ``Recalibrator`` is a nondecreasing piecewise-linear map on [0, 1] fitted
so that, composed with a coordinate's raw predictive CDF, the q-quantile
covers the truth with frequency q.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from boxcal.gaussian import PROB_EPS, DomainError, Gaussian1D, cdf, cdf_array, quantile, quantile_array
from boxcal.predictive import UsageError

MIN_FIT_POINTS = 10
RECAL_SCHEMA_VERSION = 1


class FitError(ValueError):
    """The calibration set cannot support a recalibrator."""


def pava(values: Sequence[float], weights: Sequence[float] | None = None) -> np.ndarray:
    """Weighted least-squares projection onto nondecreasing sequences.

    Pool-adjacent-violators with a block stack; a pooled block's value is its
    weighted sum over its total weight.
    """
    y = np.asarray(values, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if y.ndim != 1 or y.size == 0 or w.shape != y.shape:
        raise UsageError("pava needs equal-length, non-empty 1-d values and weights")
    if np.any(w <= 0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(y)):
        raise UsageError("pava needs finite values and positive weights")

    vals: list[float] = []
    sums: list[float] = []
    wts: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y.tolist(), w.tolist()):
        # Singleton blocks keep y itself; (y * w) / w may be off by an ulp.
        vals.append(yi)
        sums.append(yi * wi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            vals.pop()
            s, ww, k = sums.pop(), wts.pop(), sizes.pop()
            sums[-1] += s
            wts[-1] += ww
            sizes[-1] += k
            vals[-1] = sums[-1] / wts[-1]
    return np.repeat(vals, sizes)


@dataclass(frozen=True)
class Recalibrator:
    """Monotone map R: [0, 1] -> [0, 1] through sorted interior knots.

    ``p`` is strictly increasing, ``r`` nondecreasing; (0, 0) and (1, 1) are
    implicit anchors. Between knots the map is linear.
    """

    p: np.ndarray
    r: np.ndarray
    coordinate: str = ""

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).copy()
        r = np.asarray(self.r, dtype=float).copy()
        if p.ndim != 1 or p.shape != r.shape:
            raise UsageError("knot arrays must be 1-d and equally long")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(r))):
            raise UsageError("knots must be finite")
        if np.any((p <= 0) | (p >= 1)) or np.any((r < 0) | (r > 1)):
            raise UsageError("interior knots need p in (0, 1) and r in [0, 1]")
        if np.any(np.diff(p) <= 0) or np.any(np.diff(r) < 0):
            raise UsageError("knots must have strictly increasing p and nondecreasing r")
        p.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "_xp", np.concatenate([[0.0], p, [1.0]]))
        object.__setattr__(self, "_fp", np.concatenate([[0.0], r, [1.0]]))

    @classmethod
    def identity(cls, coordinate: str = "") -> "Recalibrator":
        return cls(np.array([0.5]), np.array([0.5]), coordinate)

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.p.tolist(), self.r.tolist()))

    def __call__(self, p):
        return apply(self, p)

    def to_json(self) -> dict:
        return {
            "schema_version": RECAL_SCHEMA_VERSION,
            "coordinate": self.coordinate,
            "knots": [[a, b] for a, b in self.knots],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Recalibrator":
        if doc.get("schema_version") != RECAL_SCHEMA_VERSION:
            raise UsageError(f"unsupported recalibrator schema_version {doc.get('schema_version')!r}")
        knots = np.asarray(doc["knots"], dtype=float).reshape(-1, 2)
        return cls(knots[:, 0], knots[:, 1], str(doc.get("coordinate", "")))

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def __eq__(self, other):
        if not isinstance(other, Recalibrator):
            return NotImplemented
        return (self.coordinate == other.coordinate and np.array_equal(self.p, other.p)
                and np.array_equal(self.r, other.r))

    __hash__ = None


def fit(cdf_values: Sequence[float], coordinate: str = "") -> Recalibrator:
    """Fit R from the raw CDF values P(y_t) of one coordinate.

    Each point is paired with its empirical frequency rank/N (the fraction
    of points with a CDF value at most its own); duplicate CDF values share
    one knot and the targets go through ``pava`` before becoming knots.
    """
    p = np.asarray(cdf_values, dtype=float)
    if p.ndim != 1 or p.size < MIN_FIT_POINTS:
        raise FitError(f"need at least {MIN_FIT_POINTS} calibration points, got {p.size}")
    if not np.all(np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise FitError("CDF values must lie in [0, 1]")
    n = p.size
    p = np.sort(p)
    freq = np.searchsorted(p, p, side="right") / n
    uniq, start, counts = np.unique(p, return_index=True, return_counts=True)
    targets = np.add.reduceat(freq, start) / counts
    fitted = pava(targets, counts.astype(float))
    # The anchors own p = 0 and p = 1.
    keep = (uniq > 0) & (uniq < 1)
    return Recalibrator(uniq[keep], np.clip(fitted[keep], 0.0, 1.0), coordinate)


def _check_prob(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any((arr < 0) | (arr > 1)):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


def apply(recal: Recalibrator, p):
    """R(p) by linear interpolation through the knots and anchors."""
    arr = _check_prob(p, "p")
    out = np.interp(arr, recal._xp, recal._fp)
    return float(out) if out.ndim == 0 else out


def inverse(recal: Recalibrator, q):
    """Generalized inverse inf{p : R(p) >= q}; flat runs map to their left end."""
    arr = _check_prob(q, "q")
    xp, fp = recal._xp, recal._fp
    k = np.searchsorted(fp, arr, side="left")
    k = np.clip(k, 1, len(fp) - 1)
    lo_p, hi_p = xp[k - 1], xp[k]
    lo_r, hi_r = fp[k - 1], fp[k]
    span = hi_r - lo_r
    # span > 0 whenever q > 0, because fp[k-1] < q <= fp[k].
    frac = np.where(span > 0, (arr - lo_r) / np.where(span > 0, span, 1.0), 0.0)
    out = np.where(arr <= 0, 0.0, lo_p + frac * (hi_p - lo_p))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CalibratedCdf:
    base: Gaussian1D
    recal: Recalibrator


def calibrated_cdf(c: CalibratedCdf, z: float) -> float:
    return apply(c.recal, cdf(c.base, z))


def calibrated_quantile(c: CalibratedCdf, q: float) -> float:
    q = float(np.clip(q, PROB_EPS, 1.0 - PROB_EPS))
    p = float(np.clip(inverse(c.recal, q), PROB_EPS, 1.0 - PROB_EPS))
    return quantile(c.base, p)


def calibrated_cdf_array(recal: Recalibrator, means, variances, z) -> np.ndarray:
    return np.asarray(apply(recal, cdf_array(means, variances, z)))


def calibrated_quantile_array(recal: Recalibrator, means, variances, q) -> np.ndarray:
    q = np.clip(np.asarray(q, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    p = np.clip(np.asarray(inverse(recal, q)), PROB_EPS, 1.0 - PROB_EPS)
    return quantile_array(means, variances, p)
