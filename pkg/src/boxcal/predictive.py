"""Aggregation of MC-dropout forward passes into a per-coordinate predictive box."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from boxcal.gaussian import Gaussian1D, VAR_FLOOR, cdf

COORD_NAMES = ("x_min", "y_min", "x_max", "y_max")
SIMPLEX_TOL = 1e-9


class UsageError(ValueError):
    """Invalid call: empty inputs, bad indices, malformed records."""


def _check_simplex(p: np.ndarray, what: str):
    if np.any(~np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise UsageError(f"{what} must lie on the probability simplex")


@dataclass(frozen=True)
class McSample:
    """One stochastic forward pass for a single input."""

    coord_means: tuple[float, ...]
    coord_logvars: tuple[float, ...]
    class_probs: tuple[float, ...]

    def __post_init__(self):
        m = np.asarray(self.coord_means, dtype=float)
        s = np.asarray(self.coord_logvars, dtype=float)
        if m.shape != (4,) or s.shape != (4,):
            raise UsageError("coord_means and coord_logvars need 4 entries each")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise UsageError("coordinate outputs must be finite")
        _check_simplex(np.asarray(self.class_probs, dtype=float), "class_probs")


@dataclass(frozen=True)
class GroundTruth:
    box: tuple[float, float, float, float]
    class_id: int

    def __post_init__(self):
        b = np.asarray(self.box, dtype=float)
        if b.shape != (4,) or not np.all(np.isfinite(b)):
            raise UsageError("box needs 4 finite coordinates")
        if np.any(b < 0) or np.any(b > 1):
            raise UsageError(f"box coordinates must lie in [0, 1], got {tuple(b)}")
        if not (b[0] < b[2] and b[1] < b[3]):
            raise UsageError(f"box must satisfy x_min < x_max and y_min < y_max, got {tuple(b)}")
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise UsageError(f"class_id must be a non-negative integer, got {self.class_id!r}")


@dataclass(frozen=True)
class PredictiveBox:
    """Four independent coordinate Gaussians plus class probabilities.

    ``coords[i].variance`` is the sum of ``epistemic_var[i]`` and
    ``aleatoric_var[i]`` (up to the variance floor).
    """

    coords: tuple[Gaussian1D, Gaussian1D, Gaussian1D, Gaussian1D]
    epistemic_var: tuple[float, ...]
    aleatoric_var: tuple[float, ...]
    class_probs: tuple[float, ...]
    sample_count: int

    @classmethod
    def from_moments(cls, means, epistemic, aleatoric, class_probs, sample_count: int = 1):
        means = np.asarray(means, dtype=float)
        epistemic = np.asarray(epistemic, dtype=float)
        aleatoric = np.asarray(aleatoric, dtype=float)
        if means.shape != (4,) or epistemic.shape != (4,) or aleatoric.shape != (4,):
            raise UsageError("predictive box needs 4 coordinates")
        if np.any(epistemic < 0) or np.any(aleatoric < 0):
            raise UsageError("variances must be non-negative")
        coords = tuple(
            Gaussian1D(float(m), float(e + a)) for m, e, a in zip(means, epistemic, aleatoric)
        )
        return cls(
            coords=coords,
            epistemic_var=tuple(float(v) for v in epistemic),
            aleatoric_var=tuple(float(v) for v in aleatoric),
            class_probs=tuple(float(p) for p in class_probs),
            sample_count=int(sample_count),
        )

    @property
    def mean_box(self) -> tuple[float, ...]:
        return tuple(g.mean for g in self.coords)

    @property
    def total_var(self) -> tuple[float, ...]:
        return tuple(g.variance for g in self.coords)


def aggregate_arrays(means: np.ndarray, logvars: np.ndarray, probs: np.ndarray):
    """Moment aggregation over the leading (sample) axis.

    Returns ``(mean, epistemic, aleatoric, class_probs)`` with the sample
    axis removed. Epistemic variance is the population variance of the
    sampled means, exactly zero when they do not vary.
    """
    means = np.asarray(means, dtype=float)
    if means.shape[0] == 0:
        raise UsageError("need at least one MC sample")
    mean = means.mean(axis=0)
    dev = means - mean
    epistemic = np.where(np.ptp(means, axis=0) == 0, 0.0, (dev * dev).mean(axis=0))
    aleatoric = np.exp(np.asarray(logvars, dtype=float)).mean(axis=0)
    class_probs = np.asarray(probs, dtype=float).mean(axis=0)
    return mean, epistemic, aleatoric, class_probs


def aggregate(samples: Sequence[McSample]) -> PredictiveBox:
    if len(samples) == 0:
        raise UsageError("cannot aggregate an empty sample list")
    mean, epi, ale, probs = aggregate_arrays(
        np.array([s.coord_means for s in samples], dtype=float),
        np.array([s.coord_logvars for s in samples], dtype=float),
        np.array([s.class_probs for s in samples], dtype=float),
    )
    ale = np.maximum(ale, VAR_FLOOR)
    return PredictiveBox.from_moments(mean, epi, ale, probs, sample_count=len(samples))


def coordinate_cdf(box: PredictiveBox, i: int, z: float) -> float:
    if i not in range(4):
        raise UsageError(f"coordinate index must be 0..3, got {i!r}")
    return cdf(box.coords[i], z)
