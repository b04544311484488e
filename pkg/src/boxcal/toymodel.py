"""Synthetic single-object localization task and a small dropout MLP.

The network maps a feature vector to four coordinate means, four
log-variances and class logits through one tanh hidden layer. Dropout acts
on the hidden activations without rescaling during training, so the
deterministic test-time approximation multiplies them by the keep
probability instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from boxcal.predictive import GroundTruth, McSample, UsageError
from boxcal.rng import stream

log = logging.getLogger(__name__)

LOGVAR_MIN = -10.0
LOGVAR_MAX = 4.0
PARAM_NAMES = ("w_hidden", "b_hidden", "w_mean", "b_mean", "w_logvar", "b_logvar", "w_class", "b_class")
PARAMS_SCHEMA_VERSION = 1

# Latent box corners are drawn from these bands so that x_min < x_max and
# y_min < y_max hold with a wide margin before observation noise.
_LO_BAND = (0.20, 0.35)
_HI_BAND = (0.65, 0.80)
_CLASS_STRENGTH = 0.15
_FEATURE_NOISE = 0.02


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_examples: int
    feature_dim: int = 8
    noise_scale_range: tuple[float, float] = (0.01, 0.06)
    seed: int = 0
    class_count: int = 2

    def __post_init__(self):
        lo, hi = self.noise_scale_range
        if self.num_examples < 1 or self.feature_dim < 1:
            raise UsageError("num_examples and feature_dim must be positive")
        if not (0 < lo <= hi):
            raise UsageError(f"noise_scale_range must satisfy 0 < low <= high, got {self.noise_scale_range}")
        if self.class_count < 2:
            raise UsageError("class_count must be at least 2")
        if not (0 <= self.seed < 2**64):
            raise UsageError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class LabeledExample:
    features: tuple[float, ...]
    truth: GroundTruth


@dataclass
class ToyModelParams:
    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_mean: np.ndarray
    b_mean: np.ndarray
    w_logvar: np.ndarray
    b_logvar: np.ndarray
    w_class: np.ndarray
    b_class: np.ndarray
    dropout_rate: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise UsageError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise UsageError(f"parameter {name} has non-finite entries")
            setattr(self, name, arr)

    @property
    def feature_dim(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def class_count(self) -> int:
        return self.w_class.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(**{k: v.copy() for k, v in self.arrays().items()}, dropout_rate=self.dropout_rate)

    def to_json(self) -> dict:
        return {
            "schema_version": PARAMS_SCHEMA_VERSION,
            "kind": "toy_model",
            "dropout_rate": self.dropout_rate,
            "shapes": {k: list(v.shape) for k, v in self.arrays().items()},
            "arrays": {k: v.ravel().tolist() for k, v in self.arrays().items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ToyModelParams":
        if doc.get("schema_version") != PARAMS_SCHEMA_VERSION or doc.get("kind") != "toy_model":
            raise UsageError("not a toy model document (schema_version/kind mismatch)")
        arrays = {}
        for name in PARAM_NAMES:
            shape = tuple(doc["shapes"][name])
            flat = np.asarray(doc["arrays"][name], dtype=float)
            if flat.size != math.prod(shape):
                raise UsageError(f"parameter {name}: {flat.size} values for shape {shape}")
            arrays[name] = flat.reshape(shape)
        return cls(**arrays, dropout_rate=float(doc["dropout_rate"]))


# --- synthetic data -------------------------------------------------------


def _feature_map(feature_dim: int, class_count: int) -> np.ndarray:
    # Fixed across dataset seeds: every seed samples from the same world.
    rng = stream(feature_dim * 1000 + class_count, "world")
    latent_dim = 5 + class_count
    return rng.normal(size=(latent_dim, feature_dim)) / math.sqrt(latent_dim)


def synth_arrays(cfg: SynthConfig):
    """Generate ``(features, boxes, class_ids, latent_boxes)`` as arrays."""
    rng = stream(cfg.seed, "data")
    n = cfg.num_examples
    lo = rng.uniform(*_LO_BAND, size=(n, 2))
    hi = rng.uniform(*_HI_BAND, size=(n, 2))
    latent = np.column_stack([lo[:, 0], lo[:, 1], hi[:, 0], hi[:, 1]])
    difficulty = rng.uniform(size=n)
    classes = rng.integers(cfg.class_count, size=n)
    noise_lo, noise_hi = cfg.noise_scale_range
    scale = noise_lo + difficulty * (noise_hi - noise_lo)

    boxes = latent + scale[:, None] * rng.normal(size=(n, 4))
    # Redraw the rare perturbations that break box ordering or leave [0, 1].
    for _ in range(100):
        bad = ~_valid_boxes(boxes)
        if not bad.any():
            break
        boxes[bad] = latent[bad] + scale[bad, None] * rng.normal(size=(int(bad.sum()), 4))
    else:
        raise UsageError("noise_scale_range too wide to keep boxes valid")

    onehot = np.eye(cfg.class_count)[classes] * _CLASS_STRENGTH
    z = np.column_stack([2.0 * latent - 1.0, 2.0 * difficulty - 1.0, onehot])
    features = np.tanh(z @ _feature_map(cfg.feature_dim, cfg.class_count))
    features += _FEATURE_NOISE * rng.normal(size=features.shape)
    return features, boxes, classes, latent


def _valid_boxes(b: np.ndarray) -> np.ndarray:
    return (b[:, 0] < b[:, 2]) & (b[:, 1] < b[:, 3]) & np.all((b >= 0) & (b <= 1), axis=1)


def synth_generate(cfg: SynthConfig) -> list[LabeledExample]:
    features, boxes, classes, _ = synth_arrays(cfg)
    return [
        LabeledExample(tuple(f.tolist()), GroundTruth(tuple(b.tolist()), int(c)))
        for f, b, c in zip(features, boxes, classes)
    ]


def split_counts(n: int, ratios: Sequence[float] = (2.0, 0.9, 0.9)) -> tuple[int, int, int]:
    """Sizes of the train / calibration / test partitions for ``n`` examples."""
    if len(ratios) != 3 or min(ratios) <= 0:
        raise UsageError(f"split needs three positive ratios, got {ratios}")
    total = sum(ratios)
    n_train = int(round(n * ratios[0] / total))
    n_cal = int(round(n * ratios[1] / total))
    return n_train, n_cal, n - n_train - n_cal


# --- loss -----------------------------------------------------------------


def heteroscedastic_loss(pred_means, pred_logvars, truth_box) -> float:
    m, s, b = (np.asarray(a, dtype=float) for a in (pred_means, pred_logvars, truth_box))
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s)) and np.all(np.isfinite(b))):
        raise ValueError("heteroscedastic_loss needs finite inputs")
    r = b - m
    return float(np.sum(0.5 * r * r * np.exp(-s) + 0.5 * s))


def heteroscedastic_loss_grad(pred_means, pred_logvars, truth_box):
    """Gradient of ``heteroscedastic_loss`` with respect to (means, logvars)."""
    m, s, b = (np.asarray(a, dtype=float) for a in (pred_means, pred_logvars, truth_box))
    r = b - m
    inv = np.exp(-s)
    return -r * inv, 0.5 - 0.5 * r * r * inv


# --- network --------------------------------------------------------------


def init_params(feature_dim: int, hidden: int = 32, class_count: int = 2,
                dropout_rate: float = 0.2, seed: int = 0) -> ToyModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = stream(seed, "init")

    def glorot(fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return ToyModelParams(
        w_hidden=glorot(feature_dim, hidden),
        b_hidden=np.zeros(hidden),
        w_mean=glorot(hidden, 4),
        b_mean=np.zeros(4),
        w_logvar=glorot(hidden, 4),
        b_logvar=np.zeros(4),
        w_class=glorot(hidden, class_count),
        b_class=np.zeros(class_count),
        dropout_rate=dropout_rate,
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: ToyModelParams, x: np.ndarray, hidden_scale) -> dict:
    """One pass; ``hidden_scale`` is a dropout mask or the keep probability."""
    h = np.tanh(x @ params.w_hidden + params.b_hidden)
    hd = h * hidden_scale
    raw_logvar = hd @ params.w_logvar + params.b_logvar
    logits = hd @ params.w_class + params.b_class
    return {
        "h": h,
        "hd": hd,
        "means": hd @ params.w_mean + params.b_mean,
        "raw_logvar": raw_logvar,
        "logvars": np.clip(raw_logvar, LOGVAR_MIN, LOGVAR_MAX),
        "probs": _softmax(logits),
    }


def loss_and_grads(params: ToyModelParams, x: np.ndarray, boxes: np.ndarray,
                   classes: np.ndarray, mask) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-example loss (heteroscedastic + cross-entropy) and its gradient."""
    n = x.shape[0]
    out = forward(params, x, mask)
    m, s, probs = out["means"], out["logvars"], out["probs"]
    r = boxes - m
    inv = np.exp(-s)
    picked = probs[np.arange(n), classes]
    loss = np.sum(0.5 * r * r * inv + 0.5 * s) - np.sum(np.log(np.maximum(picked, 1e-300)))
    loss /= n

    d_mean = -r * inv / n
    inside = (out["raw_logvar"] > LOGVAR_MIN) & (out["raw_logvar"] < LOGVAR_MAX)
    d_logvar = (0.5 - 0.5 * r * r * inv) * inside / n
    d_logits = probs.copy()
    d_logits[np.arange(n), classes] -= 1.0
    d_logits /= n

    hd = out["hd"]
    d_hd = d_mean @ params.w_mean.T + d_logvar @ params.w_logvar.T + d_logits @ params.w_class.T
    d_pre = d_hd * mask * (1.0 - out["h"] ** 2)
    grads = {
        "w_hidden": x.T @ d_pre,
        "b_hidden": d_pre.sum(axis=0),
        "w_mean": hd.T @ d_mean,
        "b_mean": d_mean.sum(axis=0),
        "w_logvar": hd.T @ d_logvar,
        "b_logvar": d_logvar.sum(axis=0),
        "w_class": hd.T @ d_logits,
        "b_class": d_logits.sum(axis=0),
    }
    return float(loss), grads


def _as_arrays(data: Sequence[LabeledExample]):
    x = np.array([ex.features for ex in data], dtype=float)
    boxes = np.array([ex.truth.box for ex in data], dtype=float)
    classes = np.array([ex.truth.class_id for ex in data], dtype=int)
    return x, boxes, classes


@dataclass
class TrainResult:
    params: ToyModelParams
    epoch_losses: list[float] = field(default_factory=list)


def train(data: Sequence[LabeledExample], params: ToyModelParams, epochs: int = 200,
          learning_rate: float = 1e-2, seed: int = 0, batch_size: int = 32,
          decay_epoch: int | None = 150, decay_factor: float = 0.01) -> TrainResult:
    """Minibatch SGD with a dropout mask per example per step.

    The learning rate is multiplied by ``decay_factor`` from ``decay_epoch``
    onwards. Raises ``TrainingError`` on the first non-finite epoch loss.
    """
    if len(data) == 0:
        raise UsageError("cannot train on an empty dataset")
    if epochs < 0 or batch_size < 1 or learning_rate < 0:
        raise UsageError("epochs, batch_size and learning_rate must be non-negative (batch_size >= 1)")
    x, boxes, classes = _as_arrays(data)
    if x.shape[1] != params.feature_dim:
        raise UsageError(f"features have dim {x.shape[1]}, model expects {params.feature_dim}")
    if classes.max() >= params.class_count:
        raise UsageError("class id outside the model's class range")

    params = params.copy()
    shuffle_rng = stream(seed, "shuffle")
    dropout_rng = stream(seed, "dropout")
    keep = 1.0 - params.dropout_rate
    n = len(data)
    losses = []
    for epoch in range(epochs):
        lr = learning_rate
        if decay_epoch is not None and epoch >= decay_epoch:
            lr *= decay_factor
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if params.dropout_rate > 0:
                mask = (dropout_rng.random((len(idx), params.hidden)) < keep).astype(float)
            else:
                mask = np.ones((len(idx), params.hidden))
            loss, grads = loss_and_grads(params, x[idx], boxes[idx], classes[idx], mask)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            if lr > 0:
                for name, g in grads.items():
                    getattr(params, name)[...] -= lr * g
        losses.append(total / n)
        log.debug("epoch %d: mean loss %.6f", epoch, losses[-1])
    return TrainResult(params, losses)


# --- inference ------------------------------------------------------------


def mc_predict_arrays(params: ToyModelParams, x: np.ndarray, samples: int, seed: int):
    """``samples`` dropout passes over a feature matrix.

    Returns arrays shaped (samples, n, 4), (samples, n, 4), (samples, n, classes).
    """
    if samples < 1:
        raise UsageError("need at least one MC sample")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rng = stream(seed, "mc")
    keep = 1.0 - params.dropout_rate
    means, logvars, probs = [], [], []
    for _ in range(samples):
        if params.dropout_rate > 0:
            mask = (rng.random((x.shape[0], params.hidden)) < keep).astype(float)
        else:
            mask = 1.0
        out = forward(params, x, mask)
        means.append(out["means"])
        logvars.append(out["logvars"])
        probs.append(out["probs"])
    return np.stack(means), np.stack(logvars), np.stack(probs)


def _to_sample(m, s, p) -> McSample:
    return McSample(tuple(m.tolist()), tuple(s.tolist()), tuple(p.tolist()))


def mc_predict(params: ToyModelParams, features, samples: int = 50, seed: int = 0) -> list[McSample]:
    m, s, p = mc_predict_arrays(params, np.asarray(features, dtype=float)[None, :], samples, seed)
    return [_to_sample(m[t, 0], s[t, 0], p[t, 0]) for t in range(samples)]


def weight_scaled_arrays(params: ToyModelParams, x: np.ndarray):
    out = forward(params, np.atleast_2d(np.asarray(x, dtype=float)), 1.0 - params.dropout_rate)
    return out["means"], out["logvars"], out["probs"]


def weight_scaled_predict(params: ToyModelParams, features) -> McSample:
    m, s, p = weight_scaled_arrays(params, np.asarray(features, dtype=float)[None, :])
    return _to_sample(m[0], s[0], p[0])
