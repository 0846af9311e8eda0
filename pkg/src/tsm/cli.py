"""Command-line front end: ``tsm gen|train|calibrate|eval|experiment``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
degeneracy.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .calibration import (
    CalibrationResult,
    calibrate_none,
    calibrate_plts,
    calibrate_tsm,
    calibrate_upa,
    evaluate_calibrated,
)
from .errors import ConfigError, DataError, InvalidSpec, TSMError
from .experiment import ExperimentConfig, run_experiment, summarize, write_rows
from .metrics import auc, roc_curve, sensitivity, specificity, write_roc_csv
from .mil import ChowderModel, Cohort, predict_selected, selected_matrix, train_predictor
from .synthdata import CohortSpec, generate_cohort, read_cohort, write_cohort

log = logging.getLogger("tsm")


def _load_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidSpec(f"{path}: {e}") from None


def _read(path) -> Cohort:
    try:
        return read_cohort(path)
    except (KeyError, ValueError) as e:
        raise DataError(f"{path}: malformed cohort file ({e})") from None


def cmd_gen(args) -> int:
    d = _load_json(args.config) if args.config else {}
    overrides = {
        "n_slides": args.n_slides,
        "tiles_per_slide": args.tiles,
        "prevalence": args.prevalence,
        "name": args.name,
        "seed": args.seed,
    }
    d.update({k: v for k, v in overrides.items() if v is not None})
    spec = CohortSpec.from_dict(d)
    cohort = generate_cohort(spec)
    write_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} slides to {args.out} (prevalence {cohort.prevalence:.4f})")
    return 0


def cmd_train(args) -> int:
    cohort = _read(args.cohort)
    model = train_predictor(cohort, args.k, args.epochs, args.lr, args.seed)
    model.save(args.out)
    scores = predict_selected(model, selected_matrix(model, cohort))
    print(f"final loss {model.train_loss:.6f}, training AUC {auc(scores, cohort.labels):.4f}")
    return 0


def _constant_label(calib: Cohort, label: int, method: str) -> Cohort:
    """Drop slides labeled with the opposite class; unlabeled slides are kept."""
    kept = tuple(s for s in calib if s.label is None or s.label == label)
    dropped = len(calib) - len(kept)
    if dropped:
        log.warning("%s: ignoring %d calibration slides with label %d", method, dropped, 1 - label)
    return Cohort(kept, calib.name)


def cmd_calibrate(args) -> int:
    model = ChowderModel.load(args.model)
    level = args.level
    if args.method == "none":
        result = calibrate_none(_read(args.train), model, args.sigma, level)
    elif args.method == "tsm":
        result = calibrate_tsm(
            _read(args.train), _read(args.calib), model, args.omega_c, args.sigma, level
        )
    elif args.method == "upa":
        result = calibrate_upa(_read(args.train), _read(args.calib), model, args.sigma, level)
    else:
        label = 1 if args.method == "plts+" else 0
        calib = _constant_label(_read(args.calib), label, args.method)
        scores = predict_selected(model, selected_matrix(model, calib))
        result = calibrate_plts(scores, args.sigma, "positive" if label else "negative")
    result.save(args.out)
    msg = f"{result.method}: threshold {result.threshold:.6f}"
    if result.map is not None:
        knots = result.map.source_knots
        dev = np.max(np.abs(result.map.target_knots - knots))
        msg += f", max |map(x) - x| at knots {dev:.6f}"
    if result.omega_c is not None:
        msg += f", omega_c {result.omega_c:.4f}"
    print(msg)
    return 0


def _sens_curve_rows(before, after, y, grid):
    pos = y == 1
    rows = []
    for t in grid:
        row = [repr(float(t))]
        for s in (before, after):
            row.append(repr(float(np.mean(s[pos] >= t))) if pos.any() else "")
        rows.append(row)
    return rows


def cmd_eval(args) -> int:
    model = ChowderModel.load(args.model)
    result = CalibrationResult.load(args.calibration)
    cohort = _read(args.cohort)
    y = cohort.labels
    before = predict_selected(model, selected_matrix(model, cohort))
    after, predicted = evaluate_calibrated(result, model, cohort)
    tau = result.threshold

    def maybe(fn, *a):
        try:
            return fn(*a)
        except DataError:
            return None

    metrics = {
        "method": result.method,
        "threshold": tau,
        "target_level": result.target_level,
        "level_kind": result.level_kind,
        "n_slides": len(cohort),
        "n_predicted_positive": int(predicted.sum()),
        "sensitivity": maybe(sensitivity, after, y, tau),
        "specificity": maybe(specificity, after, y, tau),
        "sensitivity_uncalibrated": maybe(sensitivity, before, y, tau),
        "specificity_uncalibrated": maybe(specificity, before, y, tau),
        "auc_before": maybe(auc, before, y),
        "auc_after": maybe(auc, after, y),
    }
    with open(args.out, "w") as f:
        json.dump(metrics, f, indent=2)
    if args.roc:
        write_roc_csv(roc_curve(after, y), args.roc)
    if args.sens_curve:
        with open(args.sens_curve, "w") as f:
            f.write("threshold,sensitivity_uncalibrated,sensitivity_calibrated\n")
            for row in _sens_curve_rows(before, after, y, np.linspace(0, 1, 101)):
                f.write(",".join(row) + "\n")
    print(json.dumps(metrics))
    return 0


def cmd_experiment(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = replace(config, base_seed=args.seed)
    rows = run_experiment(config, artifacts_dir=args.artifacts)
    write_rows(rows, args.out)
    for method, s in summarize(rows).items():
        print(
            f"{method:6s} n={s['n']:4d} sensitivity mean {s['sensitivity_mean']:.4f} "
            f"std {s['sensitivity_std']:.4f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic cohort (JSON Lines)")
    g.add_argument("--config", help="cohort spec JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-slides", type=int)
    g.add_argument("--tiles", type=int)
    g.add_argument("--prevalence", type=float)
    g.add_argument("--name")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="fit the slide predictor on a labeled cohort")
    t.add_argument("--cohort", required=True)
    t.add_argument("--k", type=int, default=5)
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--lr", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="calibrate a model to a new cohort")
    c.add_argument("--method", required=True, choices=["tsm", "upa", "plts+", "plts-", "none"])
    c.add_argument("--train", help="reference cohort (tsm, upa, none)")
    c.add_argument("--calib", help="calibration cohort (tsm, upa, plts+, plts-)")
    c.add_argument("--model", required=True)
    c.add_argument("--sigma", type=float, default=0.9)
    c.add_argument("--omega-c", type=float)
    c.add_argument("--level", choices=["sensitivity", "specificity"], default="sensitivity")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, help="unused; calibration is deterministic")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("eval", help="metrics of a calibrated model on a cohort")
    e.add_argument("--model", required=True)
    e.add_argument("--calibration", required=True)
    e.add_argument("--cohort", required=True)
    e.add_argument("--out", required=True, help="metrics JSON")
    e.add_argument("--roc", help="ROC curve CSV (threshold,fpr,tpr)")
    e.add_argument("--sens-curve", help="sensitivity vs threshold CSV")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="repeated-sampling calibration experiment")
    x.add_argument("--config", required=True)
    x.add_argument("--out", required=True, help="results CSV")
    x.add_argument("--seed", type=int, help="override the config's base seed")
    x.add_argument("--artifacts", help="directory for per-row calibration JSON")
    x.set_defaults(func=cmd_experiment)
    return p


def _check_paths(args):
    needs = {
        "tsm": ("train", "calib"),
        "upa": ("train", "calib"),
        "none": ("train",),
        "plts+": ("calib",),
        "plts-": ("calib",),
    }
    if args.command == "calibrate":
        missing = [n for n in needs[args.method] if getattr(args, n) is None]
        if missing:
            raise ConfigError(f"--method {args.method} requires --{' --'.join(missing)}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _check_paths(args)
        return args.func(args)
    except TSMError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
