import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsm.distributions import (
    EmpiricalDistribution,
    MongeMap,
    apply_map,
    build_empirical,
    build_monge_map,
    build_target_mixture,
    cdf,
    identity_map,
    ks_distance,
    quantile,
)
from tsm.errors import DegenerateDistribution, InvalidProbability, InvalidWeight


# Loop-based reference implementation of the midpoint-interpolated CDF, in
# exact rational arithmetic, used as the oracle for the numpy version.
def ref_cdf(samples, x):
    xs = sorted(set(samples))
    n = len(samples)
    probs = []
    before = Fraction(0)
    for v in xs:
        w = Fraction(samples.count(v), n)
        probs.append(before + w / 2)
        before += w
    x = Fraction(x)
    if x <= xs[0]:
        return probs[0]
    if x >= xs[-1]:
        return probs[-1]
    for i in range(len(xs) - 1):
        lo, hi = Fraction(xs[i]), Fraction(xs[i + 1])
        if lo <= x <= hi:
            return probs[i] + (probs[i + 1] - probs[i]) * (x - lo) / (hi - lo)


def ref_quantile(samples, p):
    xs = sorted(set(samples))
    probs = [ref_cdf(samples, v) for v in xs]
    p = Fraction(p)
    if p <= probs[0]:
        return Fraction(xs[0])
    if p >= probs[-1]:
        return Fraction(xs[-1])
    for i in range(len(xs) - 1):
        if probs[i] <= p <= probs[i + 1]:
            lo, hi = Fraction(xs[i]), Fraction(xs[i + 1])
            return lo + (hi - lo) * (p - probs[i]) / (probs[i + 1] - probs[i])


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=False)
samples_st = st.lists(finite, min_size=2, max_size=60).filter(lambda v: len(set(v)) >= 2)


class TestBuildEmpirical:
    def test_uniform(self):
        d = build_empirical([1, 2, 3])
        np.testing.assert_array_equal(d.values, [1, 2, 3])
        np.testing.assert_allclose(d.weights, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_duplicates_merge(self):
        d = build_empirical([2, 1, 2])
        np.testing.assert_array_equal(d.values, [1, 2])
        np.testing.assert_allclose(d.weights, [1 / 3, 2 / 3], rtol=0, atol=1e-15)

    def test_single_point_rejected(self):
        with pytest.raises(DegenerateDistribution):
            build_empirical([5, 5, 5])

    def test_empty_rejected(self):
        with pytest.raises(DegenerateDistribution):
            build_empirical([])

    @pytest.mark.parametrize("w", [[1, 0, 1], [1, -1, 1]])
    def test_nonpositive_weight(self, w):
        with pytest.raises(InvalidWeight):
            build_empirical([1, 2, 3], w)

    def test_weight_length_mismatch(self):
        with pytest.raises(InvalidWeight):
            build_empirical([1, 2, 3], [1, 1])

    def test_weights_normalized(self):
        d = build_empirical([3, 1, 2], [2, 1, 1])
        np.testing.assert_allclose(d.weights, [0.25, 0.25, 0.5])

    def test_immutable(self):
        d = build_empirical([1, 2, 3])
        with pytest.raises(ValueError):
            d.values[0] = 7.0

    def test_caller_array_untouched(self):
        x = np.array([1.0, 2.0, 3.0])
        EmpiricalDistribution(x, np.full(3, 1 / 3))
        x[0] = 0.0  # still writable

    @given(samples_st, st.lists(st.floats(0.01, 100), min_size=60, max_size=60))
    def test_invariants(self, samples, raw_w):
        d = build_empirical(samples, raw_w[: len(samples)])
        assert np.all(np.diff(d.values) > 0)
        assert np.all(d.weights > 0)
        assert abs(d.weights.sum() - 1) <= 1e-12


class TestCdf:
    def test_examples(self):
        d = build_empirical([1, 2, 3])
        assert cdf(d, 2) == pytest.approx(0.5, abs=1e-15)
        assert cdf(d, 1.5) == pytest.approx(1 / 3, abs=1e-15)
        assert cdf(d, -10) == pytest.approx(1 / 6, abs=1e-15)
        assert cdf(d, 10) == pytest.approx(5 / 6, abs=1e-15)

    def test_uniform_knots(self):
        d = build_empirical(np.arange(10.0))
        np.testing.assert_allclose(cdf(d, np.arange(10.0)), (np.arange(10) + 0.5) / 10)

    def test_weighted_knots(self):
        d = build_empirical([0, 1, 2], [0.5, 0.25, 0.25])
        np.testing.assert_allclose(cdf(d, [0, 1, 2]), [0.25, 0.625, 0.875])

    @settings(max_examples=200)
    @given(samples_st, finite)
    def test_matches_exact_oracle(self, samples, x):
        d = build_empirical(samples)
        assert cdf(d, x) == pytest.approx(float(ref_cdf(samples, x)), abs=1e-12)

    @given(samples_st, finite, finite)
    def test_nondecreasing(self, samples, x, y):
        d = build_empirical(samples)
        lo, hi = sorted([x, y])
        assert cdf(d, lo) <= cdf(d, hi)

    @given(samples_st)
    def test_strictly_increasing_on_support(self, samples):
        d = build_empirical(samples)
        mids = (d.values[1:] + d.values[:-1]) / 2
        grid = np.sort(np.concatenate([d.values, mids]))
        grid = np.unique(grid)
        assert np.all(np.diff(cdf(d, grid)) > 0)


class TestQuantile:
    def test_examples(self):
        assert quantile(build_empirical([1, 2, 3]), 0.5) == pytest.approx(2, abs=1e-15)
        assert quantile(build_empirical([1, 2, 3]), 0.0) == 1
        assert quantile(build_empirical([10, 20, 30]), 1 / 3) == pytest.approx(15, abs=1e-12)
        assert quantile(build_empirical([1, 2, 3]), 1.0) == 3

    @pytest.mark.parametrize("p", [-0.1, 1.1, np.nan])
    def test_out_of_range(self, p):
        with pytest.raises(InvalidProbability):
            quantile(build_empirical([1, 2, 3]), p)

    @settings(max_examples=200)
    @given(samples_st, st.floats(0, 1))
    def test_matches_exact_oracle(self, samples, p):
        d = build_empirical(samples)
        expect = float(ref_quantile(samples, p))
        assert quantile(d, p) == pytest.approx(expect, abs=1e-9, rel=1e-12)

    @settings(max_examples=300)
    @given(samples_st, st.floats(0, 1))
    def test_round_trip(self, samples, t):
        d = build_empirical(samples)
        x = d.values[0] + t * (d.values[-1] - d.values[0])
        scale = max(1.0, abs(d.values).max())
        assert abs(quantile(d, cdf(d, x)) - x) <= 1e-12 * scale


class TestMixture:
    def setup_method(self):
        self.pos = build_empirical([1, 2])
        self.neg = build_empirical([3, 4])

    def test_omega_one_is_pos(self):
        assert build_target_mixture(self.pos, self.neg, 1.0) is self.pos
        assert build_target_mixture(self.pos, None, 1.0) == self.pos

    def test_omega_zero_is_neg(self):
        assert build_target_mixture(self.pos, self.neg, 0.0) is self.neg

    def test_half(self):
        m = build_target_mixture(self.pos, self.neg, 0.5)
        np.testing.assert_array_equal(m.values, [1, 2, 3, 4])
        np.testing.assert_allclose(m.weights, [0.25] * 4)

    def test_overlapping_support_merges(self):
        m = build_target_mixture(build_empirical([1, 2]), build_empirical([2, 3]), 0.2)
        np.testing.assert_array_equal(m.values, [1, 2, 3])
        np.testing.assert_allclose(m.weights, [0.1, 0.5, 0.4])

    def test_missing_component(self):
        with pytest.raises(DegenerateDistribution):
            build_target_mixture(None, self.neg, 1.0)
        with pytest.raises(DegenerateDistribution):
            build_target_mixture(self.pos, None, 0.0)
        with pytest.raises(DegenerateDistribution):
            build_target_mixture(self.pos, None, 0.5)

    def test_invalid_omega(self):
        with pytest.raises(InvalidProbability):
            build_target_mixture(self.pos, self.neg, 1.5)

    @given(samples_st, samples_st, st.floats(0, 1))
    def test_mass(self, p, n, omega):
        m = build_target_mixture(build_empirical(p), build_empirical(n), omega)
        assert abs(m.weights.sum() - 1) <= 1e-12


class TestMongeMap:
    def test_examples(self):
        m = build_monge_map(build_empirical([1, 2, 3]), build_empirical([10, 20, 30]))
        assert m(2) == pytest.approx(20, abs=1e-12)
        assert m(1.5) == pytest.approx(15, abs=1e-12)
        np.testing.assert_allclose(apply_map(m, [3, 1]), [30, 10], atol=1e-12)

    def test_identity_when_equal(self):
        rng = np.random.default_rng(0)
        a = build_empirical(rng.normal(size=200))
        m = build_monge_map(a, a)
        np.testing.assert_allclose(m(a.values), a.values, rtol=0, atol=1e-12)

    def test_clamped_outside_source(self):
        m = build_monge_map(build_empirical([1, 2, 3]), build_empirical([10, 20, 30]))
        assert m(-100) == m(1)
        assert m(100) == m(3)

    def test_exact_at_source_knots(self):
        rng = np.random.default_rng(1)
        m = build_monge_map(build_empirical(rng.random(37)), build_empirical(rng.random(91)))
        np.testing.assert_array_equal(m(m.source_knots), m.target_knots)

    @settings(max_examples=100)
    @given(samples_st, samples_st, st.floats(0, 1))
    def test_equals_composition_everywhere(self, sa, sb, t):
        # the map is the exact composition quantile_b(cdf_a(x)), not only at knots
        a, b = build_empirical(sa), build_empirical(sb)
        m = build_monge_map(a, b)
        x = a.values[0] + t * (a.values[-1] - a.values[0])
        expect = float(ref_quantile(sb, ref_cdf(sa, x)))
        scale = max(1.0, abs(b.values).max())
        assert m(x) == pytest.approx(expect, abs=1e-9 * scale)

    @settings(max_examples=100)
    @given(samples_st, samples_st)
    def test_pushforward_at_support(self, sa, sb):
        a, b = build_empirical(sa), build_empirical(sb)
        m = build_monge_map(a, b)
        inside = (a.knot_probs >= b.knot_probs[0]) & (a.knot_probs <= b.knot_probs[-1])
        got = cdf(b, m(a.values[inside]))
        np.testing.assert_allclose(got, a.knot_probs[inside], rtol=0, atol=1e-12)

    @given(samples_st, samples_st, st.lists(finite, max_size=30))
    def test_monotone(self, sa, sb, xs):
        m = build_monge_map(build_empirical(sa), build_empirical(sb))
        xs = np.sort(np.asarray(xs, dtype=float))
        assert np.all(np.diff(apply_map(m, xs)) >= 0)

    def test_apply_map_contract(self):
        ident = identity_map()
        np.testing.assert_array_equal(apply_map(ident, [0.1, 0.9]), [0.1, 0.9])
        assert apply_map(ident, []).size == 0
        m = build_monge_map(build_empirical([1, 2, 3]), build_empirical([10, 20, 30]))
        assert apply_map(m, np.empty(0)).shape == (0,)
        xs = np.array([[2.0, 1.0], [3.0, 1.5]])
        assert apply_map(m, xs).shape == (2, 2)

    def test_ks_pushforward_random(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, mm = rng.integers(50, 500, size=2)
            sa = rng.gamma(2.0, size=n)
            sb = rng.beta(2, 5, size=mm)
            a, b = build_empirical(sa), build_empirical(sb)
            pushed = build_empirical(apply_map(build_monge_map(a, b), sa))
            assert ks_distance(pushed, b) <= 2 / min(n, mm)

    @settings(max_examples=300)
    @given(
        st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9]) | st.floats(0, 1), min_size=2, max_size=60),
        st.lists(st.sampled_from([0.2, 0.3, 0.7]) | st.floats(-1, 2), min_size=2, max_size=60),
        st.data(),
    )
    def test_ks_pushforward_with_atoms(self, sa, sb, data):
        # with ties or weights the atoms are heavier than 1/n; the KS gap is
        # then bounded by half the two heaviest atoms
        if len(set(sa)) < 2 or len(set(sb)) < 2:
            return
        wa = data.draw(st.lists(st.floats(0.01, 1), min_size=len(sa), max_size=len(sa)))
        a, b = build_empirical(sa, wa), build_empirical(sb)
        pushed = build_empirical(build_monge_map(a, b)(a.values), a.weights)
        bound = (a.weights.max() + b.weights.max()) / 2
        assert ks_distance(pushed, b) <= bound + 1e-12

    def test_knot_validation(self):
        with pytest.raises(ValueError):
            MongeMap([0, 1], [1, 0])
        with pytest.raises(ValueError):
            MongeMap([0], [0])

    def test_json_round_trip(self):
        m = build_monge_map(build_empirical([0.1, 0.4, 0.35]), build_empirical([0.2, 0.9]))
        d = json.loads(json.dumps(m.to_dict()))
        assert set(d) == {"source_knots", "target_knots"}
        assert MongeMap.from_dict(d) == m


def test_ks_distance_oracle():
    # step CDFs of {0, 1} and {0, 0, 1}: 1/2 vs 2/3 at 0
    assert ks_distance(build_empirical([0, 1]), build_empirical([0, 0, 1])) == pytest.approx(1 / 6)
    assert ks_distance(build_empirical([0, 1]), build_empirical([2, 3])) == 1.0


def test_map_hits_last_target_knot_exactly():
    # 0 + 1 * (0.2 - (-0.42)) rounds below 0.2; the map must not split b's atom
    a = build_empirical([0.0, 0.5, 0.0, 0.0], [1.0, 0.5, 0.25, 0.125])
    b = build_empirical([0.2, 0.2, 0.2, -1.0])
    m = build_monge_map(a, b)
    assert m(0.5) == 0.2
    assert quantile(b, b.knot_probs[-1]) == 0.2
