"""Command-line pipeline: synth -> train -> predict -> validate -> fit -> diagnose -> interval.

Exit codes: 0 success, 1 usage or schema error, 2 fit failure or validation warning.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from boxcal import diagnostics, records
from boxcal.gaussian import DomainError
from boxcal.intervals import CoordinateInterval, interval_bounds, region_from_intervals
from boxcal.predictive import COORD_NAMES, UsageError, aggregate_arrays
from boxcal.recalibration import FitError, Recalibrator, fit
from boxcal.records import PredictionRecord, SchemaError
from boxcal.toymodel import (
    SynthConfig,
    ToyModelParams,
    TrainingError,
    init_params,
    mc_predict_arrays,
    split_counts,
    synth_generate,
    train,
    weight_scaled_arrays,
)

log = logging.getLogger("boxcal")

EXIT_OK, EXIT_USAGE, EXIT_WARN = 0, 1, 2
SPLIT_NAMES = ("train", "calibration", "test")
DEFAULT_SPLIT = (2.0, 0.9, 0.9)


class ValidationWarning(Exception):
    pass


def _levels(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}")
    q = np.asarray(vals)
    if np.any((q <= 0) | (q >= 1)) or np.any(np.diff(q) <= 0):
        raise argparse.ArgumentTypeError("levels must be strictly increasing within (0, 1)")
    return vals


def _split(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split {text!r}")
    if len(vals) != 3 or min(vals) <= 0:
        raise argparse.ArgumentTypeError("split needs three positive ratios, e.g. 2:0.9:0.9")
    return vals


def _labelled(recs: list[PredictionRecord]) -> list[PredictionRecord]:
    return [r for r in recs if r.truth is not None]


# --- subcommands ----------------------------------------------------------


def cmd_synth(out_dir, num_examples: int = 3800, seed: int = 0, feature_dim: int = 8,
              noise_range=(0.01, 0.06), class_count: int = 2, split=DEFAULT_SPLIT) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(num_examples, feature_dim, tuple(noise_range), seed, class_count)
    data = synth_generate(cfg)
    sizes = split_counts(len(data), split)
    paths = {}
    start = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        path = out_dir / f"{name}.jsonl"
        records.write_jsonl(path, (records.example_to_json(data[k], f"ex-{k:06d}")
                                   for k in range(start, start + size)))
        paths[name] = path
        start += size
    log.info("synth: %s examples split %s", len(data), dict(zip(SPLIT_NAMES, sizes)))
    return paths


def cmd_train(data_path, out_path, epochs: int = 200, learning_rate: float = 1e-2, hidden: int = 32,
              dropout: float = 0.2, seed: int = 0, batch_size: int = 32, decay_epoch: int | None = 150,
              decay_factor: float = 0.01, logvar_shift: float = 0.0) -> ToyModelParams:
    """Train the toy model; ``logvar_shift`` offsets the trained log-variance bias."""
    _, data = records.read_dataset(data_path)
    if not data:
        raise UsageError(f"{data_path}: no training examples")
    class_count = max(2, max(ex.truth.class_id for ex in data) + 1)
    params = init_params(len(data[0].features), hidden, class_count, dropout, seed)
    result = train(data, params, epochs, learning_rate, seed, batch_size, decay_epoch, decay_factor)
    params = result.params
    if logvar_shift:
        params.b_logvar = params.b_logvar + logvar_shift
    doc = params.to_json()
    doc["training"] = {"epochs": epochs, "learning_rate": learning_rate, "seed": seed,
                       "batch_size": batch_size, "decay_epoch": decay_epoch, "decay_factor": decay_factor,
                       "logvar_shift": logvar_shift, "epoch_losses": result.epoch_losses}
    records.write_json(out_path, doc)
    if result.epoch_losses:
        log.info("train: final epoch loss %.6f", result.epoch_losses[-1])
    return params


def _read_inputs(path):
    ids, feats, truths = [], [], []
    for lineno, doc in records.iter_jsonl(path):
        try:
            feats.append(records._floats(doc, "features"))
            truths.append(records.truth_from_json(doc["truth"]) if doc.get("truth") is not None else None)
            ids.append(str(doc["id"]))
        except (UsageError, KeyError) as exc:
            raise SchemaError(str(exc), path, lineno) from exc
    return ids, feats, truths


def cmd_predict(model_path, data_path, out_path, mc_samples: int = 50, seed: int = 0) -> list[PredictionRecord]:
    params = ToyModelParams.from_json(records.read_json(model_path))
    ids, feats, truths = _read_inputs(data_path)
    if not ids:
        raise UsageError(f"{data_path}: no records")
    x = np.asarray(feats, dtype=float)
    if x.shape[1] != params.feature_dim:
        raise UsageError(f"{data_path}: features have dim {x.shape[1]}, model expects {params.feature_dim}")
    mean, epi, ale, probs = aggregate_arrays(*mc_predict_arrays(params, x, mc_samples, seed))
    ws_probs = weight_scaled_arrays(params, x)[2]
    recs = [
        PredictionRecord(ids[k], tuple(mean[k].tolist()), tuple(epi[k].tolist()), tuple(ale[k].tolist()),
                         tuple(probs[k].tolist()), truths[k], tuple(ws_probs[k].tolist()))
        for k in range(len(ids))
    ]
    recs.sort(key=lambda r: r.id)
    records.write_jsonl(out_path, (r.to_json() for r in recs))
    log.info("predict: %d records, T=%d", len(recs), mc_samples)
    return recs


def cmd_validate(pred_path, out_dir, bins: int = 10, threshold: float = 0.1) -> dict:
    """Variance vs squared-error scatter per coordinate.

    Raises ``ValidationWarning`` (exit 2) after writing outputs when any
    coordinate's rank correlation falls below ``threshold``.
    """
    recs = _labelled(records.read_predictions(pred_path))
    if not recs:
        raise UsageError(f"{pred_path}: no records with truth")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    means, total, truths = records.prediction_arrays(recs)
    report = {"schema_version": records.SCHEMA_VERSION, "n": len(recs), "threshold": threshold,
              "coordinates": {}}
    weak = []
    for i, name in enumerate(COORD_NAMES):
        series = diagnostics.scatter_from_arrays(total[:, i], (truths[:, i] - means[:, i]) ** 2, bins)
        (out_dir / f"scatter_{name}.csv").write_text(series.to_csv())
        (out_dir / f"scatter_{name}_binned.csv").write_text(series.binned_csv())
        report["coordinates"][name] = {"rank_correlation": series.rank_correlation,
                                       "degenerate": series.degenerate,
                                       "binned_means": [list(p) for p in series.binned_means]}
        if series.rank_correlation < threshold:
            weak.append(name)
    report["warning"] = bool(weak)
    records.write_json(out_dir / "validate_report.json", report)
    if weak:
        raise ValidationWarning(
            f"variance barely tracks squared error for {', '.join(weak)} (rank correlation < {threshold}); "
            "recalibration is unlikely to help")
    return report


def cmd_fit(pred_path, out_dir) -> list[Recalibrator]:
    all_recs = records.read_predictions(pred_path)
    recs = _labelled(all_recs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not recs:
        raise FitError(f"{pred_path}: no records with truth to fit on")
    means, total, truths = records.prediction_arrays(recs)
    pvals = diagnostics.recalibrated_pvalues(None, means, total, truths)
    recals = []
    report = {"schema_version": records.SCHEMA_VERSION, "n": len(recs),
              "skipped_without_truth": len(all_recs) - len(recs), "coordinates": {}}
    for i, name in enumerate(COORD_NAMES):
        rc = fit(pvals[:, i], coordinate=name)
        records.write_json(out_dir / f"{name}.json", rc.to_json())
        report["coordinates"][name] = {"knots": len(rc.p)}
        recals.append(rc)
    records.write_json(out_dir / "fit_report.json", report)
    log.info("fit: %d rows, %d skipped without truth", len(recs), report["skipped_without_truth"])
    return recals


def load_recalibrators(recal_dir) -> list[Recalibrator]:
    out = []
    for name in COORD_NAMES:
        path = Path(recal_dir) / f"{name}.json"
        try:
            rc = Recalibrator.from_json(records.read_json(path))
        except (UsageError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(str(exc), path) from exc
        if rc.coordinate and rc.coordinate != name:
            raise SchemaError(f"file holds coordinate {rc.coordinate!r}", path)
        out.append(rc)
    return out


def cmd_diagnose(pred_path, out_dir, recal_dir=None, levels=diagnostics.DEFAULT_LEVELS,
                 mode: str = "one-sided", bins: int = 10) -> dict:
    recs = _labelled(records.read_predictions(pred_path))
    if not recs:
        raise UsageError(f"{pred_path}: no records with truth")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recals = load_recalibrators(recal_dir) if recal_dir is not None else None
    means, total, truths = records.prediction_arrays(recs)

    summary = {"schema_version": records.SCHEMA_VERSION, "n": len(recs), "mode": mode,
               "levels": list(levels), "localization": {}}
    stages = [("before", [None] * 4)] + ([("after", recals)] if recals else [])
    for stage, rcs in stages:
        per = {}
        for i, name in enumerate(COORD_NAMES):
            p = diagnostics.recalibrated_pvalues(rcs[i], means[:, i], total[:, i], truths[:, i])
            curve = diagnostics.reliability_from_pvalues(p, levels, mode)
            (out_dir / f"reliability_{name}_{stage}.csv").write_text(curve.to_csv())
            per[name] = curve.mse
        per["average"] = float(np.mean([per[n] for n in COORD_NAMES]))
        summary["localization"][stage] = per

    correct_ids = np.array([r.truth.class_id for r in recs])
    summary["classification"] = {}
    variants = [("mc_dropout", [r.class_probs for r in recs])]
    if all(r.ws_class_probs is not None for r in recs):
        variants.append(("weight_scaling", [r.ws_class_probs for r in recs]))
    for label, probs in variants:
        probs = np.asarray(probs, dtype=float)
        curve = diagnostics.reliability_classification(probs.max(axis=1), probs.argmax(axis=1) == correct_ids, bins)
        (out_dir / f"classification_{label}.csv").write_text(curve.to_csv())
        summary["classification"][label] = {"mse": curve.mse, "accuracy": float(np.mean(probs.argmax(axis=1) == correct_ids))}
    records.write_json(out_dir / "summary.json", summary)
    return summary


def cmd_interval(pred_path, recal_dir, out_path, level: float = 0.95) -> int:
    if not (0.0 < level < 1.0):
        raise UsageError(f"level must lie in (0, 1), got {level}")
    recs = records.read_predictions(pred_path)
    recals = load_recalibrators(recal_dir)
    if not recs:
        raise UsageError(f"{pred_path}: no records")
    means = np.array([r.coord_means for r in recs], dtype=float)
    total = np.array([r.epistemic_var for r in recs]) + np.array([r.aleatoric_var for r in recs])
    bounds = [interval_bounds(recals[i], means[:, i], total[:, i], level) for i in range(4)]
    docs = []
    for k, rec in enumerate(recs):
        ivs = [CoordinateInterval(float(bounds[i][0][k]), float(bounds[i][1][k]), level, i) for i in range(4)]
        docs.append(region_from_intervals(ivs, rec.coord_means, level).to_json(rec.id))
    return records.write_jsonl(out_path, docs)


def cmd_pipeline(workdir, num_examples: int = 3800, seed: int = 0, split=DEFAULT_SPLIT, mc_samples: int = 50,
                 epochs: int = 200, learning_rate: float = 1e-2, hidden: int = 32, dropout: float = 0.2,
                 levels=diagnostics.DEFAULT_LEVELS, mode: str = "one-sided", level: float = 0.95,
                 bins: int = 10, threshold: float = 0.1, logvar_shift: float = 0.0) -> dict:
    """Run every stage into ``workdir`` and return the diagnose summary.

    A validation warning is logged but does not stop the run.
    """
    work = Path(workdir)
    paths = cmd_synth(work / "data", num_examples, seed, split=split)
    cmd_train(paths["train"], work / "model.json", epochs, learning_rate, hidden, dropout, seed,
              logvar_shift=logvar_shift)
    for name in ("calibration", "test"):
        cmd_predict(work / "model.json", paths[name], work / f"pred_{name}.jsonl", mc_samples, seed)
    try:
        cmd_validate(work / "pred_calibration.jsonl", work / "validate", bins, threshold)
    except ValidationWarning as exc:
        log.warning("validate: %s", exc)
    cmd_fit(work / "pred_calibration.jsonl", work / "recal")
    summary = cmd_diagnose(work / "pred_test.jsonl", work / "diagnose", work / "recal", levels, mode, bins)
    cmd_interval(work / "pred_test.jsonl", work / "recal", work / "regions_test.jsonl", level)
    return summary


# --- argument parsing -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="boxcal", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset split into train/calibration/test")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-examples", type=int, default=3800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--noise-range", type=float, nargs=2, default=(0.01, 0.06), metavar=("LOW", "HIGH"))
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--split", type=_split, default=DEFAULT_SPLIT)

    p = sub.add_parser("train", help="train the dropout MLP")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--decay-epoch", type=int, default=150)
    p.add_argument("--decay-factor", type=float, default=0.01)
    p.add_argument("--logvar-shift", type=float, default=0.0,
                   help="add a constant to the trained log-variance bias (miscalibration experiments)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("predict", help="MC-dropout predictions as JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mc-samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("validate", help="variance vs squared-error scatter and rank correlation")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.1)

    p = sub.add_parser("fit", help="fit one recalibrator per coordinate")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("diagnose", help="reliability curves and calibration MSE")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--recal-dir")
    p.add_argument("--levels", type=_levels, default=diagnostics.DEFAULT_LEVELS)
    p.add_argument("--mode", choices=("one-sided", "central"), default="one-sided")
    p.add_argument("--bins", type=int, default=10)

    p = sub.add_parser("interval", help="calibrated confidence regions as JSONL")
    p.add_argument("--predictions", required=True)
    p.add_argument("--recal-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--workdir", required=True)
    p.add_argument("--num-examples", type=int, default=3800)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=_split, default=DEFAULT_SPLIT)
    p.add_argument("--mc-samples", type=int, default=50)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--levels", type=_levels, default=diagnostics.DEFAULT_LEVELS)
    p.add_argument("--mode", choices=("one-sided", "central"), default="one-sided")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--logvar-shift", type=float, default=0.0)
    return ap


def _print_summary(summary: dict):
    loc = summary["localization"]
    print(f"{'coordinate':<10} " + " ".join(f"{stage:>12}" for stage in loc))
    for name in COORD_NAMES + ("average",):
        print(f"{name:<10} " + " ".join(f"{loc[stage][name]:12.3e}" for stage in loc))
    for label, vals in summary["classification"].items():
        print(f"classification {label}: mse {vals['mse']:.3e} accuracy {vals['accuracy']:.4f}")


def run(args: argparse.Namespace) -> int:
    c = args.command
    if c == "synth":
        cmd_synth(args.out_dir, args.num_examples, args.seed, args.feature_dim, args.noise_range,
                  args.classes, args.split)
    elif c == "train":
        cmd_train(args.data, args.out, args.epochs, args.lr, args.hidden, args.dropout, args.seed,
                  args.batch_size, args.decay_epoch, args.decay_factor, args.logvar_shift)
    elif c == "predict":
        cmd_predict(args.model, args.data, args.out, args.mc_samples, args.seed)
    elif c == "validate":
        report = cmd_validate(args.predictions, args.out_dir, args.bins, args.threshold)
        for name, vals in report["coordinates"].items():
            print(f"{name}: rank correlation {vals['rank_correlation']:.3f}")
    elif c == "fit":
        cmd_fit(args.predictions, args.out_dir)
    elif c == "diagnose":
        _print_summary(cmd_diagnose(args.predictions, args.out_dir, args.recal_dir, args.levels,
                                    args.mode, args.bins))
    elif c == "interval":
        cmd_interval(args.predictions, args.recal_dir, args.out, args.level)
    elif c == "pipeline":
        _print_summary(cmd_pipeline(args.workdir, args.num_examples, args.seed, args.split, args.mc_samples,
                                    args.epochs, args.lr, levels=args.levels, mode=args.mode,
                                    level=args.level, bins=args.bins, threshold=args.threshold,
                                    logvar_shift=args.logvar_shift))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ValidationWarning, FitError) as exc:
        print(f"warning: {exc}", file=sys.stderr)
        return EXIT_WARN
    except (UsageError, DomainError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
