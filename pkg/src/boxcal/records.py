"""JSONL record formats for datasets and predictions.

Every record carries ``schema_version``. Floats are written with Python's
shortest round-trip repr, so re-reading a file reproduces the exact values.
NaN and infinities are rejected on both read and write.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from boxcal.predictive import GroundTruth, PredictiveBox, UsageError
from boxcal.toymodel import LabeledExample

SCHEMA_VERSION = 1


class SchemaError(UsageError):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} not allowed")


def dumps(doc) -> str:
    return json.dumps(doc, allow_nan=False, separators=(",", ":"))


def loads(text: str):
    return json.loads(text, parse_constant=_reject_constant)


def write_json(path: str | Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, allow_nan=False, indent=1) + "\n")


def read_json(path: str | Path):
    try:
        return loads(Path(path).read_text())
    except ValueError as exc:
        raise SchemaError(str(exc), path) from exc


def write_jsonl(path: str | Path, docs: Iterable[dict]) -> int:
    n = 0
    with open(path, "w") as fh:
        for doc in docs:
            fh.write(dumps(doc) + "\n")
            n += 1
    return n


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = loads(line)
            except ValueError as exc:
                raise SchemaError(str(exc), path, lineno) from exc
            if not isinstance(doc, dict):
                raise SchemaError("record is not a JSON object", path, lineno)
            if doc.get("schema_version") != SCHEMA_VERSION:
                raise SchemaError(f"unsupported schema_version {doc.get('schema_version')!r}", path, lineno)
            yield lineno, doc


def _floats(doc: dict, key: str, n: int | None = None) -> tuple[float, ...]:
    vals = doc.get(key)
    if not isinstance(vals, list) or (n is not None and len(vals) != n):
        raise UsageError(f"field {key!r} must be a list" + (f" of {n} numbers" if n else ""))
    out = []
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise UsageError(f"field {key!r} has a non-numeric or non-finite entry")
        out.append(float(v))
    return tuple(out)


def truth_to_json(t: GroundTruth) -> dict:
    return {"box": list(t.box), "class_id": int(t.class_id)}


def truth_from_json(doc) -> GroundTruth:
    if not isinstance(doc, dict):
        raise UsageError("truth must be an object")
    cid = doc.get("class_id")
    if isinstance(cid, bool) or not isinstance(cid, int):
        raise UsageError("truth.class_id must be an integer")
    return GroundTruth(_floats(doc, "box", 4), cid)


# --- datasets -------------------------------------------------------------


def example_to_json(ex: LabeledExample, record_id: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "id": record_id,
            "features": list(ex.features), "truth": truth_to_json(ex.truth)}


def read_dataset(path: str | Path) -> tuple[list[str], list[LabeledExample]]:
    ids, data = [], []
    for lineno, doc in iter_jsonl(path):
        try:
            ex = LabeledExample(_floats(doc, "features"), truth_from_json(doc.get("truth")))
            ids.append(str(doc["id"]))
        except (UsageError, KeyError) as exc:
            raise SchemaError(str(exc), path, lineno) from exc
        data.append(ex)
    return ids, data


# --- predictions ----------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    coord_means: tuple[float, ...]
    epistemic_var: tuple[float, ...]
    aleatoric_var: tuple[float, ...]
    class_probs: tuple[float, ...]
    truth: GroundTruth | None = None
    ws_class_probs: tuple[float, ...] | None = None

    def __post_init__(self):
        if min(self.epistemic_var) < 0 or min(self.aleatoric_var) < 0:
            raise UsageError("variance fields must be non-negative")
        for probs in (self.class_probs, self.ws_class_probs):
            if probs is None:
                continue
            p = np.asarray(probs)
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise UsageError("class probabilities must lie on the simplex")

    def box(self) -> PredictiveBox:
        return PredictiveBox.from_moments(self.coord_means, self.epistemic_var, self.aleatoric_var,
                                          self.class_probs)

    def to_json(self) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "coord_means": list(self.coord_means),
            "epistemic_var": list(self.epistemic_var),
            "aleatoric_var": list(self.aleatoric_var),
            "class_probs": list(self.class_probs),
        }
        if self.ws_class_probs is not None:
            doc["ws_class_probs"] = list(self.ws_class_probs)
        if self.truth is not None:
            doc["truth"] = truth_to_json(self.truth)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "PredictionRecord":
        if "id" not in doc:
            raise UsageError("missing field 'id'")
        return cls(
            id=str(doc["id"]),
            coord_means=_floats(doc, "coord_means", 4),
            epistemic_var=_floats(doc, "epistemic_var", 4),
            aleatoric_var=_floats(doc, "aleatoric_var", 4),
            class_probs=_floats(doc, "class_probs"),
            truth=truth_from_json(doc["truth"]) if doc.get("truth") is not None else None,
            ws_class_probs=_floats(doc, "ws_class_probs") if "ws_class_probs" in doc else None,
        )


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    for lineno, doc in iter_jsonl(path):
        try:
            out.append(PredictionRecord.from_json(doc))
        except UsageError as exc:
            raise SchemaError(str(exc), path, lineno) from exc
    return out


def prediction_arrays(records: list[PredictionRecord]):
    """Stack labelled records into ``(means, total_vars, truth_boxes)`` arrays, each (n, 4)."""
    means = np.array([r.coord_means for r in records], dtype=float).reshape(-1, 4)
    total = (np.array([r.epistemic_var for r in records], dtype=float)
             + np.array([r.aleatoric_var for r in records], dtype=float)).reshape(-1, 4)
    truths = np.array([r.truth.box for r in records], dtype=float).reshape(-1, 4)
    return means, total, truths
