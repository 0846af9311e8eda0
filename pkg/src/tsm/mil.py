"""Chowder-style MIL model over bags of tile scores.

A slide score is ``h(r(g(T_1), ..., g(T_N)))``: ``g`` scores tiles (identity on
precomputed scores, or a linear scorer over tile features), ``r`` keeps the
top-k scores in descending order followed by the bottom-k in ascending
order, and ``h`` is a logistic regression on those ``2k`` values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .distributions import MongeMap, apply_map
from .errors import DegenerateLabels, EnsembleMismatch, TooFewTiles

__all__ = [
    "Slide",
    "Cohort",
    "ChowderModel",
    "rank_select",
    "rank_select_indices",
    "predict_slide",
    "predict_slide_mapped",
    "selected_matrix",
    "predict_selected",
    "train_predictor",
    "ensemble_predict",
]

_TINY = np.finfo(float).tiny
_ONE_MINUS = np.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class Slide:
    slide_id: str
    tile_scores: np.ndarray
    label: int | None = None
    tile_features: np.ndarray | None = None

    def __post_init__(self):
        scores = np.array(self.tile_scores, dtype=float).ravel()
        scores.setflags(write=False)
        object.__setattr__(self, "tile_scores", scores)
        if self.label is not None:
            if self.label not in (0, 1):
                raise ValueError(f"label must be 0 or 1, got {self.label!r}")
            object.__setattr__(self, "label", int(self.label))
        if self.tile_features is not None:
            feats = np.array(self.tile_features, dtype=float)
            if feats.ndim != 2:
                raise ValueError("tile_features must be a 2D array (tiles x features)")
            feats.setflags(write=False)
            object.__setattr__(self, "tile_features", feats)

    @property
    def n_tiles(self) -> int:
        if self.tile_features is not None:
            return self.tile_features.shape[0]
        return self.tile_scores.size

    def to_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "label": self.label,
            "tile_scores": self.tile_scores.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Slide":
        return cls(d["slide_id"], d["tile_scores"], d.get("label"))


@dataclass(frozen=True)
class Cohort:
    slides: tuple[Slide, ...]
    name: str = "cohort"

    def __post_init__(self):
        slides = tuple(self.slides)
        ids = [s.slide_id for s in slides]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate slide ids in cohort {self.name!r}")
        object.__setattr__(self, "slides", slides)

    def __len__(self):
        return len(self.slides)

    def __iter__(self):
        return iter(self.slides)

    def __getitem__(self, i):
        return self.slides[i]

    @property
    def labels(self) -> np.ndarray:
        """Labels as floats, NaN where unlabeled."""
        return np.array(
            [np.nan if s.label is None else s.label for s in self.slides], dtype=float
        )

    @property
    def is_labeled(self) -> bool:
        return all(s.label is not None for s in self.slides)

    @property
    def prevalence(self) -> float | None:
        """Positive fraction among labeled slides (None if none are labeled)."""
        labels = self.labels
        labels = labels[~np.isnan(labels)]
        return float(labels.mean()) if labels.size else None

    def subset(self, indices, name: str | None = None) -> "Cohort":
        return Cohort(tuple(self.slides[i] for i in indices), name or self.name)

    def with_label(self, label: int) -> "Cohort":
        return Cohort(tuple(s for s in self.slides if s.label == label), self.name)


@dataclass(frozen=True, eq=False)
class ChowderModel:
    k: int
    h_weights: np.ndarray
    h_bias: float = 0.0
    g_weights: np.ndarray | None = None
    g_bias: float = 0.0
    train_loss: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        h = np.array(self.h_weights, dtype=float).ravel()
        if h.size != 2 * self.k:
            raise ValueError(f"h_weights must have length 2k={2 * self.k}, got {h.size}")
        h.setflags(write=False)
        object.__setattr__(self, "h_weights", h)
        object.__setattr__(self, "h_bias", float(self.h_bias))
        if self.g_weights is not None:
            g = np.array(self.g_weights, dtype=float).ravel()
            g.setflags(write=False)
            object.__setattr__(self, "g_weights", g)
            object.__setattr__(self, "g_bias", float(self.g_bias))

    def __eq__(self, other):
        if not isinstance(other, ChowderModel):
            return NotImplemented
        same_g = (self.g_weights is None and other.g_weights is None) or (
            self.g_weights is not None
            and other.g_weights is not None
            and np.array_equal(self.g_weights, other.g_weights)
            and self.g_bias == other.g_bias
        )
        return (
            self.k == other.k
            and np.array_equal(self.h_weights, other.h_weights)
            and self.h_bias == other.h_bias
            and same_g
        )

    __hash__ = None

    def tile_scores(self, slide: Slide) -> np.ndarray:
        """Apply the tile scorer ``g``."""
        if self.g_weights is None:
            return slide.tile_scores
        if slide.tile_features is None:
            raise ValueError(f"slide {slide.slide_id!r} has no tile features for g")
        return slide.tile_features @ self.g_weights + self.g_bias

    def to_dict(self) -> dict:
        g = None
        if self.g_weights is not None:
            g = {"weights": self.g_weights.tolist(), "bias": self.g_bias}
        return {
            "k": self.k,
            "g_weights": g,
            "h_weights": self.h_weights.tolist(),
            "h_bias": self.h_bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChowderModel":
        g = d.get("g_weights")
        return cls(
            k=d["k"],
            h_weights=d["h_weights"],
            h_bias=d["h_bias"],
            g_weights=None if g is None else g["weights"],
            g_bias=0.0 if g is None else g["bias"],
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "ChowderModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _sigmoid(logit):
    # expit saturates to exactly 0 or 1 for large |logit|
    return np.clip(expit(logit), _TINY, _ONE_MINUS)


def _h(model: ChowderModel, z: np.ndarray):
    # same reduction for one slide and for a matrix of slides, so the two
    # paths agree bit for bit (a BLAS dot and gemv can differ in the last ulp)
    return _sigmoid(np.sum(z * model.h_weights, axis=-1) + model.h_bias)


def rank_select_indices(tile_scores, k: int) -> np.ndarray:
    """Indices of the top-k (descending) then bottom-k (ascending) tiles.

    Ties are broken by tile index, lower first, in both halves. A 2-D input
    is treated as a stack of equal-length slides, one per row.
    """
    scores = np.asarray(tile_scores, dtype=float)
    n = scores.shape[-1] if scores.ndim else 0
    if n < 2 * k:
        raise TooFewTiles(f"need at least 2k={2 * k} tiles, got {n}")
    top = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    bottom = np.argsort(scores, axis=-1, kind="stable")[..., :k]
    return np.concatenate([top, bottom], axis=-1)


def rank_select(tile_scores, k: int) -> np.ndarray:
    scores = np.asarray(tile_scores, dtype=float)
    return np.take_along_axis(scores, rank_select_indices(scores, k), axis=-1)


def predict_slide(model: ChowderModel, slide: Slide, *, return_indices: bool = False):
    scores = model.tile_scores(slide)
    idx = rank_select_indices(scores, model.k)
    p = float(_h(model, scores[idx]))
    return (p, idx) if return_indices else p


def predict_slide_mapped(
    model: ChowderModel,
    slide: Slide,
    monge_map: MongeMap,
    *,
    post_rank: bool = True,
    return_indices: bool = False,
):
    """Slide score after transporting tile scores through ``monge_map``.

    The default post-rank path maps only the ``2k`` selected scores, which is
    equivalent to mapping all ``N`` scores first because the map is monotone.
    ``post_rank=False`` runs the map-everything path for comparison.
    """
    scores = model.tile_scores(slide)
    if post_rank:
        idx = rank_select_indices(scores, model.k)
        z = apply_map(monge_map, scores[idx])
    else:
        mapped = apply_map(monge_map, scores)
        idx = rank_select_indices(mapped, model.k)
        z = mapped[idx]
    p = float(_h(model, z))
    return (p, idx) if return_indices else p


def selected_matrix(model: ChowderModel, cohort: Cohort | Sequence[Slide]) -> np.ndarray:
    """Stack ``r(g(slide))`` for every slide into an ``(n_slides, 2k)`` array."""
    rows = [rank_select(model.tile_scores(s), model.k) for s in cohort]
    if not rows:
        return np.empty((0, 2 * model.k))
    return np.vstack(rows)


def predict_selected(
    model: ChowderModel, selected: np.ndarray, monge_map: MongeMap | None = None
) -> np.ndarray:
    """Vectorized ``h`` over a precomputed :func:`selected_matrix`."""
    z = selected if monge_map is None else apply_map(monge_map, selected)
    return _h(model, z)


def _bce(p, y):
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def train_predictor(
    cohort: Cohort,
    k: int,
    epochs: int = 500,
    learning_rate: float = 0.5,
    seed: int = 0,
    *,
    return_history: bool = False,
):
    """Fit ``h`` by full-batch gradient descent on binary cross-entropy.

    ``g`` is the identity, so the rank-selected features do not change from
    one epoch to the next and are computed once.
    """
    if len(cohort) == 0 or not cohort.is_labeled:
        raise DegenerateLabels("training requires a fully labeled cohort")
    y = cohort.labels
    if y.min() == y.max():
        raise DegenerateLabels("training requires both classes")
    X = np.vstack([rank_select(s.tile_scores, k) for s in cohort])
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=2 * k)
    b = 0.0
    history = []
    n = len(y)
    for _ in range(epochs):
        p = _sigmoid(X @ w + b)
        history.append(_bce(p, y))
        resid = p - y
        w = w - learning_rate * (X.T @ resid) / n
        b = b - learning_rate * resid.mean()
    final = _bce(_sigmoid(X @ w + b), y)
    history.append(final)
    model = ChowderModel(k=k, h_weights=w, h_bias=b, train_loss=final)
    return (model, history) if return_history else model


def ensemble_predict(
    models: Sequence[ChowderModel],
    slide: Slide,
    maps: Sequence[MongeMap] | None = None,
) -> float:
    """Unweighted mean of member predictions, each member with its own map."""
    if len(models) == 0:
        raise EnsembleMismatch("ensemble needs at least one model")
    if maps is None:
        preds = [predict_slide(m, slide) for m in models]
    else:
        if len(maps) != len(models):
            raise EnsembleMismatch(f"{len(models)} models but {len(maps)} maps")
        preds = [predict_slide_mapped(m, slide, mp) for m, mp in zip(models, maps)]
    return float(np.mean(preds))
