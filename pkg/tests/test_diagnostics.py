import numpy as np
import pytest
from scipy import special

from boxcal.diagnostics import (
    DEFAULT_LEVELS,
    ReliabilityCurve,
    calibration_mse,
    recalibrated_pvalues,
    reliability_classification,
    reliability_from_pvalues,
    reliability_localization,
    scatter_from_arrays,
    variance_error_scatter,
)
from boxcal.gaussian import Gaussian1D
from boxcal.predictive import GroundTruth, PredictiveBox, UsageError
from boxcal.recalibration import CalibratedCdf, Recalibrator, fit


def gaussian_examples(n, model_sd, seed):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.3, 0.7, size=n)
    y = mu + rng.normal(scale=0.02, size=n)
    return [(Gaussian1D(m, (model_sd * 0.02) ** 2), t) for m, t in zip(mu, y)]


class TestLocalization:
    def test_calibrated_model(self):
        curve = reliability_localization(gaussian_examples(10_000, 1.0, 0))
        assert np.max(np.abs(curve.observed - curve.expected)) < 0.02
        assert curve.mse < 1e-4

    def test_overconfident_one_sided(self):
        # closed form Phi(Phi^-1(q) / 2): q=0.2 -> 0.3369, q=0.4 -> 0.4496
        curve = reliability_localization(gaussian_examples(20_000, 0.5, 1), levels=[0.2, 0.4])
        np.testing.assert_allclose(curve.observed, [0.3369, 0.4496], atol=0.015)

    def test_overconfident_central(self):
        # central q=0.4 -> 2 Phi(Phi^-1(0.7) / 2) - 1 = 0.2068
        curve = reliability_localization(gaussian_examples(20_000, 0.5, 2), levels=[0.4], mode="central")
        assert curve.observed[0] == pytest.approx(0.2068, abs=0.015)

    def test_single_example_at_mean(self):
        curve = reliability_localization([(Gaussian1D(0.5, 0.01), 0.5)])
        np.testing.assert_array_equal(curve.observed, (np.asarray(DEFAULT_LEVELS) >= 0.5).astype(float))

    def test_calibrated_cdf_inputs(self):
        ex = gaussian_examples(500, 0.5, 3)
        rc = Recalibrator([0.3, 0.6], [0.2, 0.9])
        curve = reliability_localization([(CalibratedCdf(g, rc), t) for g, t in ex])
        pv = recalibrated_pvalues(rc, [g.mean for g, _ in ex], [g.variance for g, _ in ex], [t for _, t in ex])
        np.testing.assert_array_equal(curve.observed, reliability_from_pvalues(pv).observed)

    def test_one_sided_monotone(self):
        pv = np.random.default_rng(5).beta(2, 5, size=300)
        curve = reliability_from_pvalues(pv, np.linspace(0.01, 0.99, 99))
        assert np.all(np.diff(curve.observed) >= 0)

    @pytest.mark.parametrize("levels", [[], [0.5, 0.4], [0.0, 0.5], [0.5, 1.0]])
    def test_bad_levels(self, levels):
        with pytest.raises(UsageError):
            reliability_from_pvalues([0.5], levels)

    def test_empty(self):
        with pytest.raises(UsageError):
            reliability_localization([])

    def test_recalibration_does_not_hurt_in_sample(self):
        ex = gaussian_examples(3000, 0.5, 4)
        pv = recalibrated_pvalues(None, [g.mean for g, _ in ex], [g.variance for g, _ in ex], [t for _, t in ex])
        rc = fit(pv)
        before = reliability_from_pvalues(pv).mse
        after = reliability_from_pvalues(rc(pv)).mse
        assert after <= before + 1e-4


class TestClassification:
    def test_perfect(self):
        curve = reliability_classification([1.0] * 10, [True] * 10)
        assert curve.points == [(1.0, 1.0)]
        assert curve.mse == 0.0

    def test_overconfident_single_bin(self):
        curve = reliability_classification([0.9] * 100, [True] * 50 + [False] * 50)
        assert curve.points == [(pytest.approx(0.9, abs=1e-12), 0.5)]
        assert curve.mse == pytest.approx(0.16, abs=1e-15)

    def test_calibrated_bernoulli(self):
        rng = np.random.default_rng(0)
        conf = rng.uniform(0.5, 1.0, size=10_000)
        correct = rng.random(10_000) < conf
        curve = reliability_classification(conf, correct)
        assert curve.mse < 1e-3

    def test_bins_partition(self):
        rng = np.random.default_rng(1)
        conf = rng.uniform(size=777)
        curve = reliability_classification(conf, rng.random(777) < 0.5, bins=7)
        assert curve.counts.sum() == 777
        assert np.all((curve.observed >= 0) & (curve.observed <= 1))

    def test_bins_validated(self):
        with pytest.raises(UsageError):
            reliability_classification([0.5], [True], bins=0)

    def test_confidence_range(self):
        with pytest.raises(UsageError):
            reliability_classification([1.2], [True])


class TestMse:
    def test_diagonal(self):
        assert calibration_mse(ReliabilityCurve([0.1, 0.5], [0.1, 0.5], "one-sided")) == 0.0

    def test_single_point(self):
        assert calibration_mse(ReliabilityCurve([0.4], [0.2], "one-sided")) == pytest.approx(0.04, abs=1e-15)

    def test_field_matches_function(self):
        c = ReliabilityCurve([0.1, 0.3, 0.8], [0.2, 0.25, 0.9], "central")
        assert c.mse == calibration_mse(c)

    def test_expected_strictly_increasing(self):
        with pytest.raises(UsageError):
            ReliabilityCurve([0.3, 0.3], [0.1, 0.2], "one-sided")

    def test_csv(self):
        text = ReliabilityCurve([0.25, 0.5], [0.2, 0.5], "one-sided").to_csv()
        assert text == "expected,observed\n0.25,0.2\n0.5,0.5\n"


class TestScatter:
    def test_known_heteroscedastic_noise(self):
        rng = np.random.default_rng(0)
        var = rng.uniform(1e-4, 4e-3, size=5000)
        err = rng.normal(size=5000) ** 2 * var
        s = scatter_from_arrays(var, err, bins=10)
        interior = slice(1, -1)
        np.testing.assert_allclose(s.bin_mean_errors[interior], s.bin_centers[interior], rtol=0.2)
        assert s.rank_correlation > 0.2

    def test_constant(self):
        s = scatter_from_arrays([0.01] * 50, [0.02] * 50, bins=10)
        assert len(s.bin_centers) == 1
        assert s.degenerate and s.rank_correlation == 0.0

    def test_comonotone(self):
        v = np.linspace(0.001, 0.01, 100)
        s = scatter_from_arrays(v, v ** 2, bins=5)
        assert s.rank_correlation == pytest.approx(1.0)
        assert np.all(np.diff(s.bin_centers) > 0)
        assert s.bin_counts.sum() == 100

    def test_from_boxes(self):
        box = PredictiveBox.from_moments((0.2, 0.2, 0.8, 0.8), (0.0,) * 4, (0.01,) * 4, (1.0,))
        truth = GroundTruth((0.3, 0.2, 0.8, 0.8), 0)
        s = variance_error_scatter([(box, truth)] * 3, coordinate=0)
        assert s.points == [(0.01, pytest.approx(0.01))] * 3

    def test_empty(self):
        with pytest.raises(UsageError):
            variance_error_scatter([], 0)
