import numpy as np
import pytest

from boxcal.predictive import UsageError, aggregate, aggregate_arrays
from boxcal.toymodel import (
    SynthConfig,
    ToyModelParams,
    TrainingError,
    heteroscedastic_loss,
    heteroscedastic_loss_grad,
    init_params,
    loss_and_grads,
    mc_predict,
    mc_predict_arrays,
    split_counts,
    synth_arrays,
    synth_generate,
    train,
    weight_scaled_predict,
)

from oracles import central_diff, rel_error


@pytest.fixture(scope="module")
def trained():
    data = synth_generate(SynthConfig(num_examples=3800, seed=5))
    n_train, n_cal, _ = split_counts(len(data))
    result = train(data[:n_train], init_params(8, seed=5), seed=5)
    return data[:n_train], data[n_train:], result


class TestSynth:
    def test_deterministic(self):
        a = synth_arrays(SynthConfig(num_examples=200, seed=11))
        b = synth_arrays(SynthConfig(num_examples=200, seed=11))
        for x, y in zip(a, b):
            assert x.tobytes() == y.tobytes()

    def test_seed_matters(self):
        a = synth_arrays(SynthConfig(num_examples=50, seed=1))[0]
        b = synth_arrays(SynthConfig(num_examples=50, seed=2))[0]
        assert not np.array_equal(a, b)

    def test_vanishing_noise(self):
        _, boxes, _, latent = synth_arrays(SynthConfig(num_examples=500, noise_scale_range=(1e-9, 1e-9)))
        assert np.max(np.abs(boxes - latent)) < 1e-6

    def test_count_and_ordering(self):
        data = synth_generate(SynthConfig(num_examples=1000, seed=3))
        assert len(data) == 1000
        for ex in data:
            b = ex.truth.box
            assert b[0] < b[2] and b[1] < b[3]
            assert all(0 <= v <= 1 for v in b)

    @pytest.mark.parametrize("kwargs", [
        {"num_examples": 0},
        {"num_examples": 10, "noise_scale_range": (0.0, 0.0)},
        {"num_examples": 10, "noise_scale_range": (0.05, 0.01)},
        {"num_examples": 10, "class_count": 1},
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(UsageError):
            SynthConfig(**kwargs)

    def test_split_counts(self):
        assert split_counts(3800) == (2000, 900, 900)
        assert sum(split_counts(1234)) == 1234


class TestLoss:
    def test_zero(self):
        assert heteroscedastic_loss([0.3] * 4, [0.0] * 4, [0.3] * 4) == 0.0

    def test_one_residual(self):
        assert heteroscedastic_loss([1.0, 0, 0, 0], [0.0] * 4, [0.0] * 4) == 0.5

    def test_non_finite(self):
        with pytest.raises(ValueError):
            heteroscedastic_loss([np.nan, 0, 0, 0], [0.0] * 4, [0.0] * 4)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m, s, b = rng.normal(size=4), rng.uniform(-3, 2, size=4), rng.normal(size=4)
            dm, ds = heteroscedastic_loss_grad(m, s, b)
            assert rel_error(dm, central_diff(lambda v: heteroscedastic_loss(v, s, b), m)) < 1e-5
            assert rel_error(ds, central_diff(lambda v: heteroscedastic_loss(m, v, b), s)) < 1e-5


def _random_instance(rng, n=5, d=3, h=4, c=3):
    params = init_params(d, h, c, dropout_rate=0.3, seed=int(rng.integers(2**32)))
    for name, arr in params.arrays().items():
        arr[...] = rng.normal(scale=0.5, size=arr.shape)
    x = rng.normal(size=(n, d))
    boxes = rng.uniform(size=(n, 4))
    classes = rng.integers(c, size=n)
    mask = (rng.random((n, h)) < 0.7).astype(float)
    return params, x, boxes, classes, mask


def network_gradient_errors(rng):
    """Relative error of every analytic parameter gradient against central differences."""
    params, x, boxes, classes, mask = _random_instance(rng)
    _, grads = loss_and_grads(params, x, boxes, classes, mask)
    errors = {}
    for name, arr in params.arrays().items():
        def f(v, name=name):
            p = params.copy()
            setattr(p, name, v)
            return loss_and_grads(p, x, boxes, classes, mask)[0]
        errors[name] = rel_error(grads[name], central_diff(f, arr))
    return errors


class TestNetwork:
    def test_gradients(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            assert max(network_gradient_errors(rng).values()) < 1e-5

    def test_zero_learning_rate_is_identity(self):
        data = synth_generate(SynthConfig(num_examples=64, seed=2))
        p0 = init_params(8, seed=2)
        p1 = train(data, p0, epochs=3, learning_rate=0.0, seed=2).params
        for name, arr in p0.arrays().items():
            np.testing.assert_array_equal(arr, getattr(p1, name))

    def test_training_is_bit_reproducible(self):
        data = synth_generate(SynthConfig(num_examples=200, seed=4))
        runs = [train(data, init_params(8, seed=4), epochs=5, seed=9) for _ in range(2)]
        assert runs[0].epoch_losses == runs[1].epoch_losses
        for name, arr in runs[0].params.arrays().items():
            assert arr.tobytes() == getattr(runs[1].params, name).tobytes()

    def test_divergence_names_epoch(self):
        data = synth_generate(SynthConfig(num_examples=64, seed=2))
        with pytest.raises(TrainingError, match="epoch"), np.errstate(all="ignore"):
            train(data, init_params(8, seed=2), epochs=50, learning_rate=1e6, seed=2)

    def test_empty_data(self):
        with pytest.raises(UsageError):
            train([], init_params(8))

    @pytest.mark.slow
    def test_overfits_single_example(self):
        # Stable step size for the log-variance floor of -10 needs lr * e^10 * |dm/dW|^2 < 2.
        data = synth_generate(SynthConfig(num_examples=1, seed=3))
        params = init_params(8, dropout_rate=0.0, seed=3)
        result = train(data, params, epochs=40000, learning_rate=3e-5, seed=0, batch_size=1, decay_epoch=None)
        losses = np.array(result.epoch_losses)
        assert np.all(np.diff(losses[100:]) < 0)
        pred = mc_predict(result.params, data[0].features, samples=1)[0]
        assert np.max(np.abs(np.subtract(pred.coord_means, data[0].truth.box))) < 1e-3

    def test_beats_mean_baseline(self, trained):
        _, held_out, result = trained
        x = np.array([ex.features for ex in held_out])
        boxes = np.array([ex.truth.box for ex in held_out])
        mean = aggregate_arrays(*mc_predict_arrays(result.params, x, 50, 0))[0]
        assert np.mean((boxes - mean) ** 2) < np.mean(boxes.var(axis=0))

    def test_params_json_round_trip(self, trained):
        params = trained[2].params
        back = ToyModelParams.from_json(params.to_json())
        assert back.dropout_rate == params.dropout_rate
        for name, arr in params.arrays().items():
            assert arr.tobytes() == getattr(back, name).tobytes()


class TestInference:
    def test_no_dropout_samples_identical(self):
        p = init_params(8, dropout_rate=0.0, seed=1)
        samples = mc_predict(p, np.linspace(-1, 1, 8), samples=5, seed=3)
        assert all(s == samples[0] for s in samples)

    def test_same_seed_same_samples(self):
        p = init_params(8, seed=1)
        f = np.linspace(-1, 1, 8)
        assert mc_predict(p, f, 10, seed=3) == mc_predict(p, f, 10, seed=3)

    def test_epistemic_positive(self, trained):
        _, held_out, result = trained
        x = np.array([ex.features for ex in held_out])
        epi = aggregate_arrays(*mc_predict_arrays(result.params, x, 50, 1))[1]
        assert np.mean(np.all(epi > 0, axis=1)) >= 0.99

    def test_weight_scaled_equals_mc_without_dropout(self):
        p = init_params(8, dropout_rate=0.0, seed=1)
        f = np.linspace(-1, 1, 8)
        assert weight_scaled_predict(p, f) == mc_predict(p, f, samples=1, seed=123)[0]

    def test_weight_scaled_deterministic_and_on_simplex(self):
        p = init_params(8, class_count=3, seed=1)
        f = np.linspace(-1, 1, 8)
        a, b = weight_scaled_predict(p, f), weight_scaled_predict(p, f)
        assert a == b
        assert abs(sum(a.class_probs) - 1) < 1e-12

    def test_weight_scaled_uses_keep_probability(self):
        p = init_params(8, dropout_rate=0.5, seed=1)
        f = np.linspace(-1, 1, 8)
        h = np.tanh(f @ p.w_hidden + p.b_hidden) * 0.5
        np.testing.assert_allclose(weight_scaled_predict(p, f).coord_means, h @ p.w_mean + p.b_mean)

    def test_mc_predict_aggregates(self):
        p = init_params(8, seed=1)
        box = aggregate(mc_predict(p, np.linspace(-1, 1, 8), 30, 0))
        assert box.sample_count == 30
