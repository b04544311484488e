"""Reliability curves, calibration MSE and the variance/error validation scatter."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from boxcal.gaussian import Gaussian1D, cdf_array
from boxcal.predictive import GroundTruth, PredictiveBox, UsageError
from boxcal.recalibration import CalibratedCdf, Recalibrator, apply

DEFAULT_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))
MODES = ("one-sided", "central", "classification")


@dataclass(frozen=True)
class ReliabilityCurve:
    expected: np.ndarray
    observed: np.ndarray
    mode: str
    counts: np.ndarray | None = None
    mse: float = field(init=False)

    def __post_init__(self):
        e = np.asarray(self.expected, dtype=float)
        o = np.asarray(self.observed, dtype=float)
        if e.size == 0 or e.shape != o.shape:
            raise UsageError("reliability curve needs matching, non-empty point arrays")
        if np.any(np.diff(e) <= 0):
            raise UsageError("expected values must be strictly increasing")
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "expected", e)
        object.__setattr__(self, "observed", o)
        object.__setattr__(self, "mse", float(np.mean((o - e) ** 2)))

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.expected.tolist(), self.observed.tolist()))

    def to_json(self) -> dict:
        doc = {"mode": self.mode, "mse": self.mse, "points": [list(pt) for pt in self.points]}
        if self.counts is not None:
            doc["counts"] = np.asarray(self.counts).tolist()
        return doc

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["expected", "observed"] + (["count"] if self.counts is not None else []))
        for k, (e, o) in enumerate(self.points):
            w.writerow([repr(e), repr(o)] + ([int(self.counts[k])] if self.counts is not None else []))
        return buf.getvalue()


def calibration_mse(curve: ReliabilityCurve) -> float:
    """Mean squared distance of the curve from the diagonal."""
    return float(np.mean((curve.observed - curve.expected) ** 2))


def _check_levels(levels) -> np.ndarray:
    q = np.asarray(levels, dtype=float)
    if q.ndim != 1 or q.size == 0 or np.any((q <= 0) | (q >= 1)) or np.any(np.diff(q) <= 0):
        raise UsageError("levels must be strictly increasing within (0, 1)")
    return q


def reliability_from_pvalues(pvalues, levels=DEFAULT_LEVELS, mode: str = "one-sided") -> ReliabilityCurve:
    """Reliability curve from the (possibly recalibrated) CDF value of each truth.

    ``one-sided``: fraction with CDF(truth) <= q. ``central``: fraction
    inside the central q-interval around the median, |CDF(truth) - 1/2| <= q/2.
    """
    p = np.asarray(pvalues, dtype=float).ravel()
    if p.size == 0:
        raise UsageError("no examples")
    q = _check_levels(levels)
    if mode == "one-sided":
        obs = (p[None, :] <= q[:, None]).mean(axis=1)
    elif mode == "central":
        obs = (np.abs(p[None, :] - 0.5) <= q[:, None] / 2).mean(axis=1)
    else:
        raise UsageError(f"localization mode must be one-sided or central, got {mode!r}")
    return ReliabilityCurve(q, obs, mode)


def reliability_localization(examples: Sequence[tuple[Gaussian1D | CalibratedCdf, float]],
                             levels=DEFAULT_LEVELS, mode: str = "one-sided") -> ReliabilityCurve:
    if len(examples) == 0:
        raise UsageError("no examples")
    pvals = np.empty(len(examples))
    for k, (dist, truth) in enumerate(examples):
        if isinstance(dist, CalibratedCdf):
            pvals[k] = apply(dist.recal, float(cdf_array(dist.base.mean, dist.base.variance, truth)))
        else:
            pvals[k] = float(cdf_array(dist.mean, dist.variance, truth))
    return reliability_from_pvalues(pvals, levels, mode)


def reliability_classification(confidences, correct, bins: int = 10) -> ReliabilityCurve:
    """Equal-width confidence bins; empty bins are dropped."""
    if bins < 1:
        raise UsageError("bins must be >= 1")
    conf = np.asarray(confidences, dtype=float)
    ok = np.asarray(correct, dtype=bool)
    if conf.size == 0 or conf.shape != ok.shape:
        raise UsageError("need matching, non-empty confidences and correctness flags")
    if np.any((conf < 0) | (conf > 1)):
        raise UsageError("confidences must lie in [0, 1]")
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    nonempty = counts > 0
    mean_conf = np.bincount(idx, weights=conf, minlength=bins)[nonempty] / counts[nonempty]
    acc = np.bincount(idx, weights=ok.astype(float), minlength=bins)[nonempty] / counts[nonempty]
    return ReliabilityCurve(mean_conf, acc, "classification", counts=counts[nonempty])


@dataclass(frozen=True)
class ScatterSeries:
    variances: np.ndarray
    squared_errors: np.ndarray
    bin_centers: np.ndarray
    bin_mean_errors: np.ndarray
    bin_counts: np.ndarray
    rank_correlation: float
    degenerate: bool

    @property
    def points(self):
        return list(zip(self.variances.tolist(), self.squared_errors.tolist()))

    @property
    def binned_means(self):
        return list(zip(self.bin_centers.tolist(), self.bin_mean_errors.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variance", "squared_error"])
        for v, e in self.points:
            w.writerow([repr(v), repr(e)])
        return buf.getvalue()

    def binned_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variance_bin_center", "mean_squared_error", "count"])
        for (c, e), n in zip(self.binned_means, self.bin_counts.tolist()):
            w.writerow([repr(c), repr(e), n])
        return buf.getvalue()


def scatter_from_arrays(variances, squared_errors, bins: int = 10) -> ScatterSeries:
    """Raw points, equal-count variance bins, and Spearman correlation.

    Quantile edges that coincide are merged, so heavily tied variances
    produce fewer (possibly one) bins.
    """
    v = np.asarray(variances, dtype=float)
    e = np.asarray(squared_errors, dtype=float)
    if v.size == 0 or v.shape != e.shape:
        raise UsageError("scatter needs matching, non-empty arrays")
    if bins < 1:
        raise UsageError("bins must be >= 1")
    edges = np.unique(np.quantile(v, np.linspace(0, 1, bins + 1)))
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, max(len(edges) - 2, 0))
    counts = np.bincount(idx)
    used = counts > 0
    centers = np.bincount(idx, weights=v)[used] / counts[used]
    means = np.bincount(idx, weights=e)[used] / counts[used]

    degenerate = v.size < 2 or np.ptp(v) == 0 or np.ptp(e) == 0
    rho = 0.0 if degenerate else float(stats.spearmanr(v, e)[0])
    return ScatterSeries(v, e, centers, means, counts[used], rho, bool(degenerate))


def variance_error_scatter(examples: Sequence[tuple[PredictiveBox, GroundTruth]], coordinate: int,
                           bins: int = 10) -> ScatterSeries:
    if coordinate not in range(4):
        raise UsageError(f"coordinate index must be 0..3, got {coordinate!r}")
    if len(examples) == 0:
        raise UsageError("no examples")
    var = np.array([box.coords[coordinate].variance for box, _ in examples])
    err = np.array([(truth.box[coordinate] - box.coords[coordinate].mean) ** 2 for box, truth in examples])
    return scatter_from_arrays(var, err, bins)


def recalibrated_pvalues(recal: Recalibrator | None, means, variances, truths) -> np.ndarray:
    p = cdf_array(means, variances, truths)
    return p if recal is None else np.asarray(apply(recal, p))
