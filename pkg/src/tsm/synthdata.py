"""Synthetic cohorts of tile scores with controllable prevalence and shift.

Tiles are i.i.d. given the slide label. Negative slides draw every tile from
``neg_dist``; positive slides draw ``round(evidence_fraction * N)`` tiles (at
least one) from ``pos_dist`` and the rest from ``neg_dist``. A shift is then
applied to every tile score.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .errors import InvalidSpec
from .mil import Cohort, Slide

__all__ = [
    "ScoreDist",
    "ShiftSpec",
    "CohortSpec",
    "generate_cohort",
    "apply_shift",
    "shift_scores",
    "write_cohort",
    "read_cohort",
]

SHIFT_KINDS = ("none", "affine", "logit_warp", "nonmonotone_bump")
_EPS = 1e-12


@dataclass(frozen=True)
class ScoreDist:
    """``beta`` with shape parameters (a, b), or ``gaussian`` with mean a and
    standard deviation b clipped to [0, 1]."""

    family: str = "beta"
    a: float = 2.0
    b: float = 5.0

    def validate(self):
        if self.family not in ("beta", "gaussian"):
            raise InvalidSpec(f"unknown score distribution family {self.family!r}")
        if self.family == "beta" and (self.a <= 0 or self.b <= 0):
            raise InvalidSpec("beta parameters must be positive")
        if self.family == "gaussian" and self.b < 0:
            raise InvalidSpec("gaussian standard deviation must be nonnegative")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "beta":
            return rng.beta(self.a, self.b, size=size)
        return np.clip(rng.normal(self.a, self.b, size=size), 0.0, 1.0)


@dataclass(frozen=True)
class ShiftSpec:
    """Tile score transformation between cohorts.

    ``affine``: ``clip(scale * x + offset, 0, 1)``.
    ``logit_warp``: ``expit(logit(x) / temperature + shift)``.
    ``nonmonotone_bump``: ``x + amplitude * sin(pi * (x - center) / width)`` for
    ``|x - center| < width``, clipped to [0, 1]; not monotone once
    ``amplitude * pi > width``.
    """

    kind: str = "none"
    scale: float = 1.0
    offset: float = 0.0
    temperature: float = 1.0
    shift: float = 0.0
    center: float = 0.5
    width: float = 0.1
    amplitude: float = 0.05

    @property
    def monotone(self) -> bool:
        if self.kind == "nonmonotone_bump":
            return self.amplitude * np.pi <= self.width
        return True

    def validate(self):
        if self.kind not in SHIFT_KINDS:
            raise InvalidSpec(f"unknown shift kind {self.kind!r}")
        if self.kind == "affine" and self.scale <= 0:
            raise InvalidSpec("affine scale must be positive")
        if self.kind == "logit_warp" and self.temperature <= 0:
            raise InvalidSpec("logit_warp temperature must be positive")
        if self.kind == "nonmonotone_bump" and self.width <= 0:
            raise InvalidSpec("bump width must be positive")


def shift_scores(scores, shift: ShiftSpec) -> np.ndarray:
    x = np.asarray(scores, dtype=float)
    if shift.kind == "none":
        return x.copy()
    if shift.kind == "affine":
        return np.clip(shift.scale * x + shift.offset, 0.0, 1.0)
    if shift.kind == "logit_warp":
        z = logit(np.clip(x, _EPS, 1.0 - _EPS))
        return expit(z / shift.temperature + shift.shift)
    if shift.kind == "nonmonotone_bump":
        d = x - shift.center
        bump = np.where(
            np.abs(d) < shift.width,
            shift.amplitude * np.sin(np.pi * d / shift.width),
            0.0,
        )
        return np.clip(x + bump, 0.0, 1.0)
    raise InvalidSpec(f"unknown shift kind {shift.kind!r}")


@dataclass(frozen=True)
class CohortSpec:
    n_slides: int = 500
    tiles_per_slide: int | tuple[int, int] = 150
    prevalence: float = 0.2
    evidence_fraction: float = 0.03
    neg_dist: ScoreDist = field(default_factory=lambda: ScoreDist("beta", 2.0, 5.0))
    pos_dist: ScoreDist = field(default_factory=lambda: ScoreDist("beta", 5.0, 2.0))
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    seed: int = 0
    name: str = "synthetic"
    # keep a random subset of this many tiles per slide after generation
    subsample: int | None = None

    def validate(self):
        if int(self.n_slides) != self.n_slides or self.n_slides < 1:
            raise InvalidSpec("n_slides must be a positive integer")
        lo, hi = self.tile_range
        if lo < 1 or hi < lo:
            raise InvalidSpec("tiles_per_slide must be positive (or a valid lo, hi range)")
        if not 0.0 < self.prevalence < 1.0:
            raise InvalidSpec(f"prevalence must lie strictly in (0, 1), got {self.prevalence}")
        if not 0.0 < self.evidence_fraction <= 1.0:
            raise InvalidSpec("evidence_fraction must lie in (0, 1]")
        if self.subsample is not None and self.subsample < 1:
            raise InvalidSpec("subsample must be a positive integer")
        self.neg_dist.validate()
        self.pos_dist.validate()
        self.shift.validate()

    @property
    def tile_range(self) -> tuple[int, int]:
        t = self.tiles_per_slide
        if isinstance(t, (tuple, list)):
            return int(t[0]), int(t[1])
        return int(t), int(t)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.tiles_per_slide, tuple):
            d["tiles_per_slide"] = list(self.tiles_per_slide)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown cohort spec fields: {sorted(unknown)}")
        try:
            for key in ("neg_dist", "pos_dist"):
                if key in d:
                    d[key] = ScoreDist(**d[key])
            if "shift" in d:
                d["shift"] = ShiftSpec(**d["shift"])
        except TypeError as e:
            raise InvalidSpec(str(e)) from None
        if isinstance(d.get("tiles_per_slide"), list):
            d["tiles_per_slide"] = tuple(d["tiles_per_slide"])
        spec = cls(**d)
        spec.validate()
        return spec

    def with_seed(self, seed: int) -> "CohortSpec":
        return replace(self, seed=seed)


def generate_cohort(spec: CohortSpec) -> Cohort:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.tile_range
    labels = (rng.random(spec.n_slides) < spec.prevalence).astype(int)
    width = len(str(spec.n_slides - 1))
    slides = []
    for i, y in enumerate(labels):
        n = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        if y == 1:
            n_ev = min(n, max(1, round(spec.evidence_fraction * n)))
            scores = np.concatenate(
                [spec.pos_dist.sample(rng, n_ev), spec.neg_dist.sample(rng, n - n_ev)]
            )
            scores = rng.permutation(scores)
        else:
            scores = spec.neg_dist.sample(rng, n)
        if spec.subsample is not None and spec.subsample < n:
            scores = scores[np.sort(rng.choice(n, spec.subsample, replace=False))]
        scores = shift_scores(scores, spec.shift)
        slides.append(Slide(f"{spec.name}-{i:0{width}d}", scores, int(y)))
    return Cohort(tuple(slides), spec.name)


def apply_shift(cohort: Cohort, shift: ShiftSpec) -> Cohort:
    """New cohort with every tile score shifted; ids and labels kept."""
    shift.validate()
    slides = tuple(
        Slide(s.slide_id, shift_scores(s.tile_scores, shift), s.label) for s in cohort
    )
    return Cohort(slides, cohort.name)


def write_cohort(cohort: Cohort, path) -> None:
    """One JSON object per line: slide_id, label (0, 1 or null), tile_scores."""
    with open(path, "w") as f:
        for s in cohort:
            f.write(json.dumps(s.to_dict()) + "\n")


def read_cohort(path, name: str | None = None) -> Cohort:
    slides = []
    with open(path) as f:
        for line in f:
            if line.strip():
                slides.append(Slide.from_dict(json.loads(line)))
    return Cohort(tuple(slides), name or str(path))
