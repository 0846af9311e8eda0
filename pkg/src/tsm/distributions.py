"""Weighted empirical distributions on the real line and exact 1D Monge maps.

The CDF of an empirical distribution is the piecewise-linear curve through
the midpoints of its jumps: at support point ``v_i`` it equals
``W_{i-1} + w_i / 2`` (``(i - 0.5) / n`` for ``n`` uniform points), it is
linear in between and constant outside the support. This makes it strictly
increasing on the support and exactly invertible there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDistribution, InvalidProbability, InvalidWeight

__all__ = [
    "EmpiricalDistribution",
    "MongeMap",
    "build_empirical",
    "cdf",
    "quantile",
    "build_target_mixture",
    "build_monge_map",
    "apply_map",
    "identity_map",
    "ks_distance",
]


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Finite weighted point mass collection with strictly increasing support."""

    values: np.ndarray
    weights: np.ndarray
    cum: np.ndarray = field(init=False, repr=False)
    knot_probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if values.ndim != 1 or values.shape != weights.shape:
            raise ValueError("values and weights must be 1D arrays of equal length")
        if values.size < 2:
            raise DegenerateDistribution(
                f"need at least 2 distinct support points, got {values.size}"
            )
        if np.any(np.diff(values) <= 0):
            raise ValueError("values must be strictly increasing")
        if np.any(weights <= 0):
            raise InvalidWeight("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidWeight(f"weights sum to {weights.sum()!r}, expected 1")
        cum = np.cumsum(weights)
        values.setflags(write=False)
        weights.setflags(write=False)
        cum.setflags(write=False)
        probs = cum - 0.5 * weights
        probs.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "cum", cum)
        object.__setattr__(self, "knot_probs", probs)

    @property
    def n(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, EmpiricalDistribution):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None


def _interp(x, xp: np.ndarray, fp: np.ndarray):
    """Piecewise-linear interpolation, constant outside ``[xp[0], xp[-1]]``.

    Unlike ``np.interp`` the result is monotone in ``x`` whenever ``fp`` is,
    even across knots closer together than the rounding error of a slope,
    and equals ``fp[j]`` exactly at ``x == xp[j]``.
    """
    x = np.asarray(x, dtype=float)
    j = np.clip(np.searchsorted(xp, x, side="right") - 1, 0, xp.size - 2)
    x0, x1 = xp[j], xp[j + 1]
    y0, y1 = fp[j], fp[j + 1]
    width = x1 - x0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(width > 0, (x - x0) / width, 0.0)
    t = np.clip(t, 0.0, 1.0)
    # y0 + 1 * (y1 - y0) need not round to y1, so pin the right end
    y = np.where(t >= 1.0, y1, y0 + t * (y1 - y0))
    y = np.clip(y, np.minimum(y0, y1), np.maximum(y0, y1))
    return y


def _merge(values: np.ndarray, weights: np.ndarray) -> EmpiricalDistribution:
    # mixture weights can underflow to zero for extreme prevalences
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    uniq, inverse = np.unique(values, return_inverse=True)
    if uniq.size < 2:
        raise DegenerateDistribution(
            f"need at least 2 distinct support points, got {uniq.size}"
        )
    merged = np.bincount(inverse, weights=weights, minlength=uniq.size)
    merged = merged / merged.sum()
    return EmpiricalDistribution(uniq, merged)


def build_empirical(samples, weights=None) -> EmpiricalDistribution:
    """Empirical distribution of ``samples``; duplicates are merged.

    Weights default to ``1/n`` and are normalized to sum to one otherwise.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if weights is None:
        w = np.full(x.size, 1.0)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape:
            raise InvalidWeight(
                f"got {w.size} weights for {x.size} samples"
            )
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InvalidWeight("weights must be finite and positive")
    return _merge(x, w)


def cdf(dist: EmpiricalDistribution, x):
    """Interpolated CDF, clamped to its knot values outside the support."""
    out = _interp(x, dist.values, dist.knot_probs)
    return float(out) if np.ndim(out) == 0 else out


def quantile(dist: EmpiricalDistribution, p):
    """Inverse of :func:`cdf`; clamps to the support outside the knot range."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(p_arr)) or np.any(p_arr < 0) or np.any(p_arr > 1):
        raise InvalidProbability("probabilities must lie in [0, 1]")
    out = _interp(p_arr, dist.knot_probs, dist.values)
    return float(out) if np.ndim(out) == 0 else out


def build_target_mixture(
    pos: EmpiricalDistribution | None,
    neg: EmpiricalDistribution | None,
    omega_c: float,
) -> EmpiricalDistribution:
    """Prevalence-reweighted mixture ``omega_c * pos + (1 - omega_c) * neg``.

    With ``omega_c`` equal to 1 (resp. 0) the positive (resp. negative)
    component is returned unchanged and the other one may be ``None``.
    """
    omega_c = float(omega_c)
    if not 0.0 <= omega_c <= 1.0:
        raise InvalidProbability(f"omega_c must lie in [0, 1], got {omega_c}")
    if omega_c == 1.0:
        if pos is None:
            raise DegenerateDistribution("omega_c=1 requires a positive distribution")
        return pos
    if omega_c == 0.0:
        if neg is None:
            raise DegenerateDistribution("omega_c=0 requires a negative distribution")
        return neg
    if pos is None or neg is None:
        raise DegenerateDistribution(
            "both class-conditional distributions are needed for 0 < omega_c < 1"
        )
    values = np.concatenate([pos.values, neg.values])
    weights = np.concatenate([omega_c * pos.weights, (1.0 - omega_c) * neg.weights])
    return _merge(values, weights)


@dataclass(frozen=True, eq=False)
class MongeMap:
    """Nondecreasing piecewise-linear map, constant beyond its end knots."""

    source_knots: np.ndarray
    target_knots: np.ndarray

    def __post_init__(self):
        src = np.array(self.source_knots, dtype=float)
        tgt = np.array(self.target_knots, dtype=float)
        if src.ndim != 1 or src.shape != tgt.shape or src.size < 2:
            raise ValueError("knot sequences must be 1D with equal length >= 2")
        if np.any(np.diff(src) < 0) or np.any(np.diff(tgt) < 0):
            raise ValueError("knot sequences must be nondecreasing")
        src.setflags(write=False)
        tgt.setflags(write=False)
        object.__setattr__(self, "source_knots", src)
        object.__setattr__(self, "target_knots", tgt)

    def __call__(self, x):
        out = _interp(x, self.source_knots, self.target_knots)
        return float(out) if np.ndim(out) == 0 else out

    def __eq__(self, other):
        if not isinstance(other, MongeMap):
            return NotImplemented
        return np.array_equal(self.source_knots, other.source_knots) and np.array_equal(
            self.target_knots, other.target_knots
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "source_knots": self.source_knots.tolist(),
            "target_knots": self.target_knots.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MongeMap":
        return cls(d["source_knots"], d["target_knots"])


def identity_map(lo: float = 0.0, hi: float = 1.0) -> MongeMap:
    return MongeMap([lo, hi], [lo, hi])


def build_monge_map(a: EmpiricalDistribution, b: EmpiricalDistribution) -> MongeMap:
    """Quantile-matching map ``x -> quantile(b, cdf(a, x))`` pushing ``a`` onto ``b``.

    Both CDFs are piecewise linear, so the composition is piecewise linear
    with breakpoints at the support of ``a`` and at the preimages of the
    support of ``b``; the returned knots include both, which makes the map
    exact everywhere rather than only at the support of ``a``.
    """
    # preimages of b's knots that fall strictly inside a's probability range
    lo, hi = a.knot_probs[0], a.knot_probs[-1]
    inner = b.knot_probs[(b.knot_probs > lo) & (b.knot_probs < hi)]
    extra = _interp(inner, a.knot_probs, a.values)
    src = np.unique(np.concatenate([a.values, extra]))
    tgt = _interp(_interp(src, a.values, a.knot_probs), b.knot_probs, b.values)
    # guard against round-off reversing consecutive targets
    tgt = np.maximum.accumulate(tgt)
    return MongeMap(src, tgt)


def apply_map(monge_map: MongeMap, xs) -> np.ndarray:
    """Elementwise evaluation of ``monge_map``; shape and order are preserved."""
    x = np.asarray(xs, dtype=float)
    if x.size == 0:
        return x.copy()
    return _interp(x, monge_map.source_knots, monge_map.target_knots)


def _step_cdf(dist: EmpiricalDistribution, x: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(dist.values, x, side="right")
    cum = np.concatenate([[0.0], dist.cum])
    return cum[idx]


def ks_distance(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """Kolmogorov-Smirnov distance between the right-continuous step CDFs.

    The supremum is attained at a support point of either distribution.
    """
    grid = np.union1d(p.values, q.values)
    return float(np.max(np.abs(_step_cdf(p, grid) - _step_cdf(q, grid))))
