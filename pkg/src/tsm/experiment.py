"""Repeated-sampling calibration experiments.

Each repetition draws a calibration set from the validation cohort, runs
every requested method, and records the sensitivity, specificity and AUC
achieved on the validation cohort at the resulting threshold. Repetition
``r`` uses seed ``base_seed + r`` so runs are reproducible and repetitions
can execute in any order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibration import (
    CalibrationResult,
    calibrate_plts,
    calibrate_tsm,
    calibrate_upa,
    evaluate_selected,
    reference_distributions,
    select_threshold,
)
from .errors import DataError, InfeasiblePlan, InvalidSpec, NumericalError
from .metrics import auc, sensitivity, specificity
from .mil import ChowderModel, Cohort, predict_selected, selected_matrix, train_predictor
from .synthdata import CohortSpec, ShiftSpec, generate_cohort, read_cohort

log = logging.getLogger(__name__)

__all__ = [
    "TrainSettings",
    "ExperimentConfig",
    "ExperimentContext",
    "CSV_HEADER",
    "METHOD_NAMES",
    "prepare",
    "sample_calibration",
    "run_repetition",
    "run_experiment",
    "write_rows",
    "summarize",
    "low_data_config",
]

CSV_HEADER = [
    "repetition",
    "method",
    "threshold",
    "omega_c",
    "sensitivity",
    "specificity",
    "auc_before",
    "auc_after",
]
METHOD_NAMES = ("tsm", "upa", "plts+", "plts-", "none")


@dataclass(frozen=True)
class TrainSettings:
    k: int = 5
    epochs: int = 2000
    learning_rate: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    train: CohortSpec | str
    validation: CohortSpec | str
    model: TrainSettings | str = field(default_factory=TrainSettings)
    methods: tuple[str, ...] = METHOD_NAMES
    sigma: float = 0.9
    n_total: int | None = 30
    n_pos: int | None = None
    n_neg: int | None = None
    repetitions: int = 100
    base_seed: int = 0
    # "from-sample", "cohort" (validation prevalence) or an explicit float
    omega_c: str | float = "from-sample"
    exclude_calib_from_eval: bool = False
    workers: int = 1

    def validate(self):
        bad = set(self.methods) - set(METHOD_NAMES)
        if bad or not self.methods:
            raise InvalidSpec(f"methods must be a nonempty subset of {METHOD_NAMES}, got {self.methods}")
        if not 0.0 < self.sigma < 1.0:
            raise InvalidSpec(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.repetitions < 1:
            raise InvalidSpec("repetitions must be >= 1")
        stratified = self.n_pos is not None or self.n_neg is not None
        if stratified == (self.n_total is not None):
            raise InvalidSpec("give either n_total or n_pos/n_neg as the sampling plan")
        if self.n_total is not None and self.n_total < 1:
            raise InvalidSpec("n_total must be >= 1")
        if stratified and ((self.n_pos or 0) < 0 or (self.n_neg or 0) < 0 or (self.n_pos or 0) + (self.n_neg or 0) < 1):
            raise InvalidSpec("n_pos and n_neg must be nonnegative with a positive total")
        if isinstance(self.omega_c, str):
            if self.omega_c not in ("from-sample", "cohort"):
                raise InvalidSpec(f"omega_c policy must be 'from-sample', 'cohort' or a number, got {self.omega_c!r}")
        elif not 0.0 <= float(self.omega_c) <= 1.0:
            raise InvalidSpec("explicit omega_c must lie in [0, 1]")
        if self.workers < 1:
            raise InvalidSpec("workers must be >= 1")

    @property
    def stratified(self) -> bool:
        return self.n_total is None

    def to_dict(self) -> dict:
        def source(x):
            return {"path": x} if isinstance(x, str) else {"spec": x.to_dict()}

        plan = (
            {"n_total": self.n_total}
            if not self.stratified
            else {"n_pos": self.n_pos or 0, "n_neg": self.n_neg or 0}
        )
        model = (
            {"path": self.model}
            if isinstance(self.model, str)
            else {"train": self.model.__dict__.copy()}
        )
        return {
            "train": source(self.train),
            "validation": source(self.validation),
            "model": model,
            "methods": list(self.methods),
            "sigma": self.sigma,
            "plan": plan,
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
            "omega_c": self.omega_c,
            "exclude_calib_from_eval": self.exclude_calib_from_eval,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | str | None = None) -> "ExperimentConfig":
        base = Path(base_dir) if base_dir is not None else None

        def path(p):
            p = Path(p)
            return str(base / p if base is not None and not p.is_absolute() else p)

        def source(x, what):
            if not isinstance(x, dict) or len(x) != 1 or not ({"path", "spec"} & set(x)):
                raise InvalidSpec(f"{what} must be {{'path': ...}} or {{'spec': {{...}}}}")
            return path(x["path"]) if "path" in x else CohortSpec.from_dict(x["spec"])

        try:
            m = d.get("model", {"train": {}})
            if "path" in m:
                model = path(m["path"])
            else:
                model = TrainSettings(**m.get("train", {}))
            plan = d.get("plan", {"n_total": 30})
            unknown = set(plan) - {"n_total", "n_pos", "n_neg"}
            if unknown:
                raise InvalidSpec(f"unknown plan fields {sorted(unknown)}")
            omega = d.get("omega_c", "from-sample")
            cfg = cls(
                train=source(d["train"], "train"),
                validation=source(d["validation"], "validation"),
                model=model,
                methods=tuple(d.get("methods", METHOD_NAMES)),
                sigma=float(d.get("sigma", 0.9)),
                n_total=plan.get("n_total"),
                n_pos=plan.get("n_pos"),
                n_neg=plan.get("n_neg"),
                repetitions=int(d.get("repetitions", 100)),
                base_seed=int(d.get("base_seed", 0)),
                omega_c=omega if isinstance(omega, str) else float(omega),
                exclude_calib_from_eval=bool(d.get("exclude_calib_from_eval", False)),
                workers=int(d.get("workers", 1)),
            )
        except KeyError as e:
            raise InvalidSpec(f"missing config field {e}") from None
        except TypeError as e:
            raise InvalidSpec(str(e)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidSpec(f"{path}: {e}") from None
        return cls.from_dict(d, base_dir=path.parent)


@dataclass
class ExperimentContext:
    """Everything that stays fixed across repetitions."""

    config: ExperimentConfig
    train: Cohort
    validation: Cohort
    model: ChowderModel
    ref_scores: np.ndarray
    ref_dists: tuple
    tau_ref: float
    val_selected: np.ndarray
    val_scores: np.ndarray
    val_labels: np.ndarray


def _load_cohort(source: CohortSpec | str) -> Cohort:
    if isinstance(source, str):
        return read_cohort(source)
    return generate_cohort(source)


def prepare(config: ExperimentConfig) -> ExperimentContext:
    config.validate()
    train = _load_cohort(config.train)
    validation = _load_cohort(config.validation)
    if isinstance(config.model, str):
        model = ChowderModel.load(config.model)
    else:
        s = config.model
        model = train_predictor(train, s.k, s.epochs, s.learning_rate, s.seed)
    ref_scores = predict_selected(model, selected_matrix(model, train))
    y_ref = train.labels
    val_selected = selected_matrix(model, validation)
    return ExperimentContext(
        config=config,
        train=train,
        validation=validation,
        model=model,
        ref_scores=ref_scores,
        ref_dists=reference_distributions(model, train),
        tau_ref=select_threshold(ref_scores[y_ref == 1], config.sigma),
        val_selected=val_selected,
        val_scores=predict_selected(model, val_selected),
        val_labels=validation.labels,
    )


def sample_calibration(ctx: ExperimentContext, repetition: int) -> np.ndarray:
    """Sorted validation indices of the calibration set for one repetition."""
    cfg = ctx.config
    rng = np.random.default_rng(cfg.base_seed + repetition)
    n = len(ctx.validation)
    if not cfg.stratified:
        if cfg.n_total > n:
            raise InfeasiblePlan(f"plan asks for {cfg.n_total} slides, cohort has {n}")
        return np.sort(rng.choice(n, cfg.n_total, replace=False))
    y = ctx.val_labels
    picked = []
    for label, want in ((1, cfg.n_pos or 0), (0, cfg.n_neg or 0)):
        pool = np.flatnonzero(y == label)
        if want > pool.size:
            raise InfeasiblePlan(
                f"plan asks for {want} slides with label {label}, cohort has {pool.size}"
            )
        picked.append(rng.choice(pool, want, replace=False))
    return np.sort(np.concatenate(picked))


def _omega(ctx: ExperimentContext, idx: np.ndarray) -> float | None:
    policy = ctx.config.omega_c
    if policy == "from-sample":
        y = ctx.val_labels[idx]
        if np.isnan(y).any():
            return None  # calibrate_tsm raises MissingPrevalence
        return float(y.mean())
    if policy == "cohort":
        return ctx.validation.prevalence
    return float(policy)


def _calibrate(ctx: ExperimentContext, method: str, idx: np.ndarray) -> CalibrationResult:
    cfg = ctx.config
    calib = ctx.validation.subset(idx)
    if method == "tsm":
        return calibrate_tsm(
            ctx.train, calib, ctx.model, _omega(ctx, idx), cfg.sigma,
            ref_dists=ctx.ref_dists, tau=ctx.tau_ref,
        )
    if method == "upa":
        return calibrate_upa(
            ctx.train, calib, ctx.model, cfg.sigma,
            ref_scores=ctx.ref_scores, tau=ctx.tau_ref,
        )
    if method in ("plts+", "plts-"):
        label = 1 if method == "plts+" else 0
        y = ctx.val_labels[idx]
        scores = ctx.val_scores[idx][y == label]
        return calibrate_plts(scores, cfg.sigma, "positive" if label else "negative")
    return CalibrationResult("NONE", ctx.tau_ref, cfg.sigma)


def _safe_metric(fn, *args) -> float:
    try:
        return fn(*args)
    except DataError:
        return math.nan


def run_repetition(
    ctx: ExperimentContext, repetition: int, artifacts_dir: Path | None = None
) -> list[dict]:
    cfg = ctx.config
    idx = sample_calibration(ctx, repetition)
    keep = np.ones(len(ctx.validation), dtype=bool)
    if cfg.exclude_calib_from_eval:
        keep[idx] = False
    y = ctx.val_labels[keep]
    before = ctx.val_scores[keep]
    rows = []
    for method in cfg.methods:
        row = {"repetition": repetition, "method": method}
        try:
            result = _calibrate(ctx, method, idx)
        except (DataError, NumericalError) as e:
            log.warning("repetition %d, %s: %s", repetition, method, e)
            row.update(threshold=math.nan, omega_c=None, sensitivity=math.nan,
                       specificity=math.nan, auc_before=_safe_metric(auc, before, y),
                       auc_after=math.nan)
            rows.append(row)
            continue
        after, _ = evaluate_selected(result, ctx.model, ctx.val_selected[keep])
        row.update(
            threshold=result.threshold,
            omega_c=result.omega_c,
            sensitivity=_safe_metric(sensitivity, after, y, result.threshold),
            specificity=_safe_metric(specificity, after, y, result.threshold),
            auc_before=_safe_metric(auc, before, y),
            auc_after=_safe_metric(auc, after, y),
        )
        rows.append(row)
        if artifacts_dir is not None:
            result.save(artifacts_dir / f"rep{repetition:04d}_{method}.json")
    return rows


def run_experiment(
    config: ExperimentConfig,
    artifacts_dir: Path | str | None = None,
    ctx: ExperimentContext | None = None,
) -> list[dict]:
    """All rows ordered by (repetition, method order in the config)."""
    ctx = ctx or prepare(config)
    if ctx.config is not config:
        ctx = ExperimentContext(**{**ctx.__dict__, "config": config})
    art = None
    if artifacts_dir is not None:
        art = Path(artifacts_dir)
        art.mkdir(parents=True, exist_ok=True)
        ctx.model.save(art / "model.json")
    reps = range(config.repetitions)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            chunks = list(pool.map(lambda r: run_repetition(ctx, r, art), reps))
    else:
        chunks = [run_repetition(ctx, r, art) for r in reps]
    return [row for chunk in chunks for row in chunk]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in CSV_HEADER])


def summarize(rows: list[dict]) -> dict[str, dict[str, float]]:
    """Per-method mean and standard deviation of achieved sensitivity and
    specificity, ignoring repetitions where a method could not run."""
    out = {}
    for method in dict.fromkeys(r["method"] for r in rows):
        sens = np.array([r["sensitivity"] for r in rows if r["method"] == method], dtype=float)
        spec = np.array([r["specificity"] for r in rows if r["method"] == method], dtype=float)
        ok = ~np.isnan(sens)
        out[method] = {
            "n": int(ok.sum()),
            "sensitivity_mean": float(np.mean(sens[ok])) if ok.any() else math.nan,
            "sensitivity_std": float(np.std(sens[ok], ddof=1)) if ok.sum() > 1 else math.nan,
            "specificity_mean": float(np.nanmean(spec)) if (~np.isnan(spec)).any() else math.nan,
        }
    return out


def low_data_config(
    n_total: int | None = None,
    n_pos: int | None = None,
    n_neg: int | None = None,
    methods=("tsm", "upa", "plts+", "none"),
    repetitions: int = 100,
    n_slides: int = 500,
    tiles_per_slide: int = 150,
    seed: int = 0,
    base_seed: int = 0,
    paired: bool = True,
) -> ExperimentConfig:
    """Reference and validation cohorts at prevalence 0.2, the validation
    tile scores pushed down by a logit warp.

    With ``paired`` the validation cohort is the warped reference draw (same
    seed), so only the shift separates the two cohorts; otherwise it is an
    independent draw.
    """
    train = CohortSpec(n_slides=n_slides, tiles_per_slide=tiles_per_slide, seed=seed, name="train")
    val = replace(
        train,
        seed=seed if paired else seed + 1,
        name="validation",
        shift=ShiftSpec("logit_warp", temperature=1.25, shift=-0.5),
    )
    return ExperimentConfig(
        train=train,
        validation=val,
        methods=tuple(methods),
        sigma=0.9,
        n_total=n_total,
        n_pos=n_pos,
        n_neg=n_neg,
        repetitions=repetitions,
        base_seed=base_seed,
    )
