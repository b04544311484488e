"""Calibrated per-coordinate confidence intervals and the box region they imply.

The interval for level q is centred, in calibrated probability, on the
calibrated CDF value of the predicted mean: [F^-1(r - q/2), F^-1(r + q/2)]
with r = F(mean). When r +- q/2 leaves [0, 1] it is clamped, which makes
extreme-level intervals asymmetric around the mean.

The region is the axis-aligned product of the four intervals: the outer box
takes the outermost bound on every side, the inner box the innermost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from boxcal.gaussian import PROB_EPS
from boxcal.predictive import COORD_NAMES, PredictiveBox, UsageError
from boxcal.recalibration import (
    CalibratedCdf,
    Recalibrator,
    calibrated_cdf,
    calibrated_cdf_array,
    calibrated_quantile,
    calibrated_quantile_array,
)

REGION_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CoordinateInterval:
    lower: float
    upper: float
    level: float
    coordinate: int

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise UsageError(f"interval bounds out of order: {self.lower} > {self.upper}")

    def contains(self, z: float) -> bool:
        return self.lower <= z <= self.upper

    def to_json(self) -> dict:
        return {"coordinate": COORD_NAMES[self.coordinate], "level": self.level,
                "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_json(cls, doc: dict) -> "CoordinateInterval":
        return cls(float(doc["lower"]), float(doc["upper"]), float(doc["level"]),
                   COORD_NAMES.index(doc["coordinate"]))


@dataclass(frozen=True)
class ConfidenceRegion:
    intervals: tuple[CoordinateInterval, ...]
    mean_box: tuple[float, ...]
    outer_box: tuple[float, ...]
    inner_box: tuple[float, ...] | None
    level: float

    def to_json(self, record_id: str = "") -> dict:
        return {
            "schema_version": REGION_SCHEMA_VERSION,
            "id": record_id,
            "level": self.level,
            "mean_box": list(self.mean_box),
            "outer_box": list(self.outer_box),
            "inner_box": None if self.inner_box is None else list(self.inner_box),
            "intervals": [iv.to_json() for iv in self.intervals],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ConfidenceRegion":
        if doc.get("schema_version") != REGION_SCHEMA_VERSION:
            raise UsageError(f"unsupported region schema_version {doc.get('schema_version')!r}")
        inner = doc["inner_box"]
        return cls(
            intervals=tuple(CoordinateInterval.from_json(d) for d in doc["intervals"]),
            mean_box=tuple(float(v) for v in doc["mean_box"]),
            outer_box=tuple(float(v) for v in doc["outer_box"]),
            inner_box=None if inner is None else tuple(float(v) for v in inner),
            level=float(doc["level"]),
        )


def _check_level(q: float) -> float:
    q = float(q)
    if not (0.0 < q < 1.0):
        raise UsageError(f"level must lie in (0, 1), got {q!r}")
    return q


def _band(r, q):
    return (np.clip(r - q / 2, PROB_EPS, 1 - PROB_EPS), np.clip(r + q / 2, PROB_EPS, 1 - PROB_EPS))


def coord_interval(c: CalibratedCdf, q: float, coordinate: int = 0) -> CoordinateInterval:
    q = _check_level(q)
    r = calibrated_cdf(c, c.base.mean)
    lo, hi = _band(r, q)
    return CoordinateInterval(calibrated_quantile(c, float(lo)), calibrated_quantile(c, float(hi)), q, coordinate)


def interval_bounds(recal: Recalibrator, means, variances, q: float):
    """Vectorised ``coord_interval`` bounds for many examples of one coordinate."""
    q = _check_level(q)
    means = np.asarray(means, dtype=float)
    r = calibrated_cdf_array(recal, means, variances, means)
    lo, hi = _band(r, q)
    return (calibrated_quantile_array(recal, means, variances, lo),
            calibrated_quantile_array(recal, means, variances, hi))


def region_from_intervals(intervals: Sequence[CoordinateInterval], mean_box, q) -> ConfidenceRegion:
    x0, y0, x1, y1 = intervals
    outer = (x0.lower, y0.lower, x1.upper, y1.upper)
    inner = (x0.upper, y0.upper, x1.lower, y1.lower)
    if not (inner[0] <= inner[2] and inner[1] <= inner[3]):
        inner = None
    return ConfidenceRegion(tuple(intervals), tuple(mean_box), outer, inner, q)


def box_region(box: PredictiveBox, recals: Sequence[Recalibrator], q: float) -> ConfidenceRegion:
    if len(recals) != 4:
        raise UsageError("box_region needs one recalibrator per coordinate")
    q = _check_level(q)
    ivs = [coord_interval(CalibratedCdf(g, rc), q, i) for i, (g, rc) in enumerate(zip(box.coords, recals))]
    return region_from_intervals(ivs, box.mean_box, q)
