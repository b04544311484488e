"""Calibrated localization uncertainty for single-object bounding boxes."""

from boxcal.gaussian import Gaussian1D, cdf, quantile
from boxcal.intervals import ConfidenceRegion, CoordinateInterval, box_region, coord_interval
from boxcal.predictive import GroundTruth, McSample, PredictiveBox, aggregate, coordinate_cdf
from boxcal.recalibration import CalibratedCdf, Recalibrator, apply, fit, inverse, pava

__all__ = [
    "CalibratedCdf",
    "ConfidenceRegion",
    "CoordinateInterval",
    "Gaussian1D",
    "GroundTruth",
    "McSample",
    "PredictiveBox",
    "Recalibrator",
    "aggregate",
    "apply",
    "box_region",
    "cdf",
    "coord_interval",
    "coordinate_cdf",
    "fit",
    "inverse",
    "pava",
    "quantile",
]
