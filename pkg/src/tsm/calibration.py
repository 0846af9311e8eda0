"""Threshold calibration under distribution shift.

Four ways of making a threshold chosen on a reference cohort hold on a new
cohort:

* ``TSM``: transport pooled calibration tile scores onto the reference tile
  score distribution, reweighted to the calibration prevalence; the
  reference threshold is kept.
* ``UPA``: the same transport on slide scores, label-free and without
  reweighting.
* ``PLTS_POS`` / ``PLTS_NEG``: pick the threshold directly as an order
  statistic of calibration slide scores of one class.
* ``NONE``: reference threshold, no transport.

Slides are called positive when score >= threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import (
    EmpiricalDistribution,
    MongeMap,
    apply_map,
    build_empirical,
    build_monge_map,
    build_target_mixture,
)
from .errors import (
    DegenerateDistribution,
    DegenerateLabels,
    InvalidProbability,
    MissingPrevalence,
    NoNegatives,
    NoPositives,
    NoSamples,
)
from .mil import ChowderModel, Cohort, predict_selected, selected_matrix

__all__ = [
    "METHODS",
    "CalibrationResult",
    "min_count",
    "select_threshold",
    "select_threshold_specificity",
    "reference_distributions",
    "calibrate_none",
    "calibrate_tsm",
    "calibrate_upa",
    "calibrate_plts",
    "calibrate_tsm_ensemble",
    "evaluate_calibrated",
    "evaluate_selected",
]

METHODS = ("TSM", "UPA", "PLTS_POS", "PLTS_NEG", "NONE")
LEVEL_KINDS = ("sensitivity", "specificity")


@dataclass(frozen=True)
class CalibrationResult:
    method: str
    threshold: float
    target_level: float
    level_kind: str = "sensitivity"
    map: MongeMap | None = None
    omega_c: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.level_kind not in LEVEL_KINDS:
            raise ValueError(f"unknown level kind {self.level_kind!r}")
        if not 0.0 < self.target_level < 1.0:
            raise InvalidProbability(f"target level must lie in (0, 1), got {self.target_level}")
        if (self.map is not None) != (self.method in ("TSM", "UPA")):
            raise ValueError(f"method {self.method} {'requires' if self.map is None else 'takes no'} map")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "threshold": self.threshold,
            "target_level": self.target_level,
            "level_kind": self.level_kind,
            "omega_c": self.omega_c,
            "map": None if self.map is None else self.map.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        return cls(
            method=d["method"],
            threshold=float(d["threshold"]),
            target_level=float(d["target_level"]),
            level_kind=d.get("level_kind", "sensitivity"),
            map=None if d.get("map") is None else MongeMap.from_dict(d["map"]),
            omega_c=d.get("omega_c"),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "CalibrationResult":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _check_level(sigma: float) -> float:
    sigma = float(sigma)
    if not 0.0 < sigma < 1.0:
        raise InvalidProbability(f"target level must lie in (0, 1), got {sigma}")
    return sigma


def min_count(sigma: float, m: int) -> int:
    """Smallest ``c`` with ``c / m >= sigma`` under float comparison."""
    c = min(max(math.ceil(sigma * m), 0), m)
    while c > 0 and (c - 1) / m >= sigma:
        c -= 1
    while c < m and c / m < sigma:
        c += 1
    return c


def select_threshold(scores_pos, sigma: float) -> float:
    """Largest threshold whose sensitivity on ``scores_pos`` is at least ``sigma``.

    This is the ``ceil(sigma * m)``-th largest score.
    """
    sigma = _check_level(sigma)
    s = np.sort(np.asarray(scores_pos, dtype=float).ravel())[::-1]
    if s.size == 0:
        raise NoPositives("threshold selection needs at least one positive score")
    return float(s[min_count(sigma, s.size) - 1])


def select_threshold_specificity(scores_neg, sigma: float) -> float:
    """Smallest threshold whose specificity on ``scores_neg`` is at least ``sigma``.

    Candidates are the scores themselves. If even the largest score does not
    reach the level (it counts as a positive under the >= rule), the next
    float above it is returned, which yields specificity 1.
    """
    sigma = _check_level(sigma)
    s = np.sort(np.asarray(scores_neg, dtype=float).ravel())
    if s.size == 0:
        raise NoNegatives("threshold selection needs at least one negative score")
    c = min_count(sigma, s.size)
    below = np.searchsorted(s, s, side="left")
    ok = np.flatnonzero(below >= c)
    if ok.size == 0:
        return float(np.nextafter(s[-1], np.inf))
    return float(s[ok[0]])


def _reference_threshold(
    model: ChowderModel, reference: Cohort, sigma: float, level_kind: str
) -> float:
    if not reference.is_labeled:
        raise DegenerateLabels(f"reference cohort {reference.name!r} must be fully labeled")
    scores = predict_selected(model, selected_matrix(model, reference))
    y = reference.labels
    if level_kind == "sensitivity":
        pos = scores[y == 1]
        if pos.size == 0:
            raise NoPositives(f"reference cohort {reference.name!r} has no positive slides")
        return select_threshold(pos, sigma)
    neg = scores[y == 0]
    if neg.size == 0:
        raise NoNegatives(f"reference cohort {reference.name!r} has no negative slides")
    return select_threshold_specificity(neg, sigma)


def _pooled_tiles(model: ChowderModel, slides) -> np.ndarray:
    parts = [model.tile_scores(s) for s in slides]
    return np.concatenate(parts) if parts else np.empty(0)


def reference_distributions(
    model: ChowderModel, reference: Cohort
) -> tuple[EmpiricalDistribution | None, EmpiricalDistribution | None]:
    """Class-conditional pooled tile score distributions of the reference cohort.

    A class with fewer than two distinct tile scores yields ``None``.
    """
    if not reference.is_labeled:
        raise DegenerateLabels(f"reference cohort {reference.name!r} must be fully labeled")
    out = []
    for label in (1, 0):
        tiles = _pooled_tiles(model, reference.with_label(label))
        try:
            out.append(build_empirical(tiles))
        except DegenerateDistribution:
            out.append(None)
    return out[0], out[1]


def _resolve_omega(calib: Cohort, omega_c: float | None) -> float:
    if omega_c is not None:
        omega_c = float(omega_c)
        if not 0.0 <= omega_c <= 1.0:
            raise InvalidProbability(f"omega_c must lie in [0, 1], got {omega_c}")
        return omega_c
    if len(calib) and calib.is_labeled:
        return calib.prevalence
    raise MissingPrevalence(
        "omega_c not given and the calibration cohort is not fully labeled"
    )


def calibrate_none(
    reference: Cohort, model: ChowderModel, sigma: float, level_kind: str = "sensitivity"
) -> CalibrationResult:
    tau = _reference_threshold(model, reference, sigma, level_kind)
    return CalibrationResult("NONE", tau, sigma, level_kind)


def calibrate_tsm(
    reference: Cohort,
    calib: Cohort,
    model: ChowderModel,
    omega_c: float | None = None,
    sigma: float = 0.9,
    level_kind: str = "sensitivity",
    *,
    ref_dists: tuple | None = None,
    tau: float | None = None,
) -> CalibrationResult:
    """Tile-score matching.

    ``ref_dists`` and ``tau`` let repeated calibrations against the same
    reference skip recomputing the class-conditional reference distributions
    and the reference threshold.
    """
    sigma = _check_level(sigma)
    omega = _resolve_omega(calib, omega_c)
    a = build_empirical(_pooled_tiles(model, calib))
    pos, neg = ref_dists if ref_dists is not None else reference_distributions(model, reference)
    b = build_target_mixture(pos, neg, omega)
    monge = build_monge_map(a, b)
    if tau is None:
        tau = _reference_threshold(model, reference, sigma, level_kind)
    return CalibrationResult("TSM", tau, sigma, level_kind, monge, omega)


def calibrate_upa(
    reference: Cohort,
    calib: Cohort,
    model: ChowderModel,
    sigma: float = 0.9,
    level_kind: str = "sensitivity",
    *,
    ref_scores: np.ndarray | None = None,
    tau: float | None = None,
) -> CalibrationResult:
    """Quantile matching of slide scores; calibration labels are ignored.

    ``ref_scores`` (reference slide scores) and ``tau`` may be passed to
    skip recomputing them.
    """
    sigma = _check_level(sigma)
    a = build_empirical(predict_selected(model, selected_matrix(model, calib)))
    if ref_scores is None:
        ref_scores = predict_selected(model, selected_matrix(model, reference))
    monge = build_monge_map(a, build_empirical(ref_scores))
    if tau is None:
        tau = _reference_threshold(model, reference, sigma, level_kind)
    return CalibrationResult("UPA", tau, sigma, level_kind, monge)


def calibrate_plts(calib_scores, sigma: float, polarity: str = "positive") -> CalibrationResult:
    """Threshold as an order statistic of constant-label calibration scores.

    ``positive``: scores of positive slides, largest order statistic keeping
    sensitivity >= sigma. ``negative``: scores of negative slides, smallest
    threshold keeping specificity >= sigma.
    """
    s = np.asarray(calib_scores, dtype=float).ravel()
    if s.size == 0:
        raise NoSamples("PLTS needs at least one calibration score")
    if polarity == "positive":
        return CalibrationResult("PLTS_POS", select_threshold(s, sigma), float(sigma), "sensitivity")
    if polarity == "negative":
        return CalibrationResult(
            "PLTS_NEG", select_threshold_specificity(s, sigma), float(sigma), "specificity"
        )
    raise ValueError(f"polarity must be 'positive' or 'negative', got {polarity!r}")


def calibrate_tsm_ensemble(
    reference: Cohort,
    calib: Cohort,
    models: Sequence[ChowderModel],
    omega_c: float | None = None,
    sigma: float = 0.9,
) -> tuple[list[MongeMap], float]:
    """Fit one tile-score map per member; threshold the averaged reference scores."""
    maps = [
        calibrate_tsm(reference, calib, m, omega_c, sigma, tau=0.5).map for m in models
    ]
    y = reference.labels
    if np.isnan(y).any():
        raise DegenerateLabels(f"reference cohort {reference.name!r} must be fully labeled")
    ens = np.mean([predict_selected(m, selected_matrix(m, reference)) for m in models], axis=0)
    return maps, select_threshold(ens[y == 1], sigma)


def evaluate_selected(
    result: CalibrationResult, model: ChowderModel, selected: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """:func:`evaluate_calibrated` on a precomputed selection matrix."""
    if result.method == "TSM":
        scores = predict_selected(model, selected, result.map)
    else:
        scores = predict_selected(model, selected)
        if result.method == "UPA":
            scores = apply_map(result.map, scores)
    return scores, (scores >= result.threshold).astype(int)


def evaluate_calibrated(
    result: CalibrationResult, model: ChowderModel, cohort: Cohort
) -> tuple[np.ndarray, np.ndarray]:
    """Per-slide calibrated scores and predicted labels (score >= threshold).

    TSM maps the selected tile scores, UPA maps slide scores, the other
    methods leave scores untouched.
    """
    return evaluate_selected(result, model, selected_matrix(model, cohort))
