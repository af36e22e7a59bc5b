import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probeanon.collision_math import (
    BucketConfig,
    DomainError,
    Method,
    _occupied_set,
    _occupied_sorted,
    approx_exponential,
    approx_linear,
    approx_series,
    brute_force_expected_collisions,
    delta_lower_bound,
    exact_collision_rate,
    exact_collision_rate_fraction,
    min_buckets,
    monte_carlo_rate,
    relative_remainder_r1,
    remainder_bound,
    series_partial_sum,
)

# Values below were computed with mpmath at 60 digits from the closed form,
# or by exhaustive enumeration, before the estimators existed.
RATE_1000_1024 = 0.361457969210085412324
RATE_OPERATING_POINT = 2.71050516016272817447e-13  # n = 1e7, m = 2**64
EXP_FORM_ALPHA_1 = 0.367879441171442321596  # e^-1
DELTA_N2_ALPHA1 = -0.463657224987104167909


def ref_rate(n, m, dps=60):
    with mpmath.workdps(dps):
        n_, m_ = mpmath.mpf(n), mpmath.mpf(m)
        return 1 + (m_ / n_) * mpmath.expm1(n_ * mpmath.log1p(-1 / m_))


def ref_exp_form(alpha, dps=200):
    with mpmath.workdps(dps):
        a = mpmath.mpf(alpha.numerator) / alpha.denominator
        return 1 + mpmath.expm1(-a) / a


def mpq(fr):
    return mpmath.mpf(fr.numerator) / fr.denominator


def brute_force_by_hand(n, m):
    """Second enumeration: decode each assignment from the base-m digits of an index."""
    total = 0
    for idx in range(m**n):
        occupied = set()
        for _ in range(n):
            idx, bucket = divmod(idx, m)
            occupied.add(bucket)
        total += n - len(occupied)
    return Fraction(total, m**n * n)


class TestBucketConfig:
    def test_alpha_is_derived(self):
        cfg = BucketConfig(3, 12)
        assert cfg.alpha == 0.25
        assert cfg.alpha_exact == Fraction(1, 4)

    @pytest.mark.parametrize("n,m", [(0, 4), (4, 0), (-1, 2), (2.0, 4), (True, 4)])
    def test_rejects_bad_inputs(self, n, m):
        with pytest.raises(DomainError):
            BucketConfig(n, m)

    def test_accepts_numpy_ints(self):
        cfg = BucketConfig(np.int64(5), np.uint64(10))
        assert type(cfg.n) is int and cfg.alpha == 0.5


class TestExactCollisionRate:
    def test_single_insert_never_collides(self):
        assert exact_collision_rate(BucketConfig(1, 2**64)).value == 0.0

    def test_two_into_two(self):
        est = exact_collision_rate(BucketConfig(2, 2))
        assert est.value == pytest.approx(0.25, abs=1e-15)
        assert est.method is Method.EXACT
        assert est.delta_lo == 0 and est.remainder_abs == 0

    def test_1000_into_1024(self):
        assert exact_collision_rate(BucketConfig(1000, 1024)).value == pytest.approx(
            RATE_1000_1024, rel=1e-14
        )

    def test_operating_point(self):
        value = exact_collision_rate(BucketConfig(10**7, 2**64)).value
        assert abs(math.log10(value) + 12.5) <= 0.1
        assert value == pytest.approx(RATE_OPERATING_POINT, rel=1e-13)

    def test_single_bucket(self):
        assert exact_collision_rate(BucketConfig(4, 1)).value == pytest.approx(0.75)

    @pytest.mark.parametrize("n", [2, 3, 10, 1000, 10**5, 10**7, 10**9])
    @pytest.mark.parametrize("m", [2, 3, 7, 1024, 10**6, 2**32, 2**53, 2**64, 2**90])
    def test_relative_accuracy_against_mpmath(self, n, m):
        ref = ref_rate(n, m)
        value = exact_collision_rate(BucketConfig(n, m)).value
        assert abs(value - ref) <= 4e-15 * ref

    def test_fraction_closed_form(self):
        assert exact_collision_rate_fraction(BucketConfig(3, 2)) == Fraction(5, 12)


class TestBruteForce:
    @pytest.mark.parametrize(
        "n,m,expected",
        [(2, 2, Fraction(1, 4)), (3, 2, Fraction(5, 12)), (1, 5, Fraction(0))],
    )
    def test_examples(self, n, m, expected):
        assert brute_force_expected_collisions(BucketConfig(n, m)) == expected

    @pytest.mark.parametrize("n", range(1, 5))
    @pytest.mark.parametrize("m", range(1, 6))
    def test_matches_independent_enumeration(self, n, m):
        cfg = BucketConfig(n, m)
        assert brute_force_expected_collisions(cfg) == brute_force_by_hand(n, m)

    def test_guard(self):
        with pytest.raises(DomainError):
            brute_force_expected_collisions(BucketConfig(9, 10))

    def test_equals_closed_form_small_grid(self):
        for n in range(1, 7):
            for m in range(1, 9):
                cfg = BucketConfig(n, m)
                bf = brute_force_expected_collisions(cfg)
                assert bf == exact_collision_rate_fraction(cfg)
                assert abs(exact_collision_rate(cfg).value - float(bf)) <= 1e-12


class TestApproximations:
    def test_exponential_alpha_one(self):
        est = approx_exponential(BucketConfig(2, 2))
        assert est.value == pytest.approx(EXP_FORM_ALPHA_1, rel=1e-15)
        assert est.remainder_abs == 0
        assert est.method is Method.EXPONENTIAL

    def test_exponential_small_alpha_limit(self):
        value = approx_exponential(BucketConfig(2, 2 * 10**15)).value
        assert 0 < value < 1e-15

    def test_exponential_operating_point_within_r1(self):
        cfg = BucketConfig(10**7, 2**64)
        a = cfg.alpha
        assert abs(approx_exponential(cfg).value - a / 2) <= a**2 / 6

    def test_series_two_terms(self):
        # 1/4 - 1/24 = 5/24
        assert series_partial_sum(Fraction(1, 2), 3) == Fraction(5, 24)
        assert approx_series(BucketConfig(2, 4), 3).value == pytest.approx(5 / 24, rel=1e-15)

    @pytest.mark.parametrize("m", [2, 4, 1000, 2**40])
    def test_series_k2_is_linear(self, m):
        cfg = BucketConfig(2, m)
        assert approx_series(cfg, 2).value == cfg.alpha / 2

    def test_series_operating_point_matches_exponential(self):
        cfg = BucketConfig(10**7, 2**64)
        s, e = approx_series(cfg, 8), approx_exponential(cfg)
        assert s.remainder_abs == pytest.approx(cfg.alpha**8 / math.factorial(9))
        # Float evaluation can differ by rounding; the remainder is far below it.
        assert abs(s.value - e.value) <= s.remainder_abs + 4 * np.spacing(e.value)

    def test_linear_operating_point(self):
        est = approx_linear(BucketConfig(10**7, 2**64))
        assert est.value == pytest.approx(2.710505431213761e-13, rel=1e-15)
        assert math.log10(est.value) == pytest.approx(-12.567, abs=1e-3)

    def test_linear_small_alpha_relative_error(self):
        cfg = BucketConfig(1000, 10**6)
        est = approx_linear(cfg)
        assert est.value == pytest.approx(5e-4)
        exact = float(ref_exp_form(Fraction(1, 1000)))
        assert abs(est.value - exact) / est.value <= 1e-3 / 3

    def test_linear_alpha_one(self):
        est = approx_linear(BucketConfig(2, 2))
        assert est.value == 0.5
        assert est.remainder_abs == pytest.approx(1 / 6)
        assert est.method is Method.LINEAR

    @pytest.mark.parametrize("fn", [approx_exponential, approx_linear, lambda c: approx_series(c, 4)])
    @pytest.mark.parametrize("n,m", [(1, 4), (5, 4)])
    def test_domain(self, fn, n, m):
        with pytest.raises(DomainError):
            fn(BucketConfig(n, m))

    def test_series_order_domain(self):
        with pytest.raises(DomainError):
            approx_series(BucketConfig(2, 4), 1)

    def test_series_kernel_preserves_type(self):
        assert isinstance(series_partial_sum(Fraction(1, 3), 6), Fraction)
        assert isinstance(series_partial_sum(mpmath.mpf("0.3"), 6), mpmath.mpf)


class TestBounds:
    def test_delta_n2_alpha1(self):
        assert delta_lower_bound(BucketConfig(2, 2)) == pytest.approx(DELTA_N2_ALPHA1, abs=1e-12)

    def test_delta_operating_point(self):
        d = delta_lower_bound(BucketConfig(10**7, 2**64))
        assert -5e-20 <= d <= 0
        assert abs(d) <= 0.8031 / 2**64

    def test_delta_vanishes_with_alpha(self):
        assert abs(delta_lower_bound(BucketConfig(10, 10**18))) < 1e-18

    def test_remainder_examples(self):
        assert remainder_bound(Fraction(1), 2) == Fraction(1, 6)
        assert remainder_bound(Fraction(1, 2), 5) == Fraction(1, 23040)
        a = 1e-3
        assert remainder_bound(a, 2) / (a / 2) <= a / 3 * (1 + 1e-15)

    @pytest.mark.parametrize("alpha,expected", [(1e-3, 1e-3 / 3), (1.0, 1 / 3), (0.3, 0.1)])
    def test_relative_r1(self, alpha, expected):
        assert relative_remainder_r1(alpha) == pytest.approx(expected)

    @pytest.mark.parametrize("alpha", [0, -0.1, 1.5])
    def test_bound_domains(self, alpha):
        with pytest.raises(DomainError):
            remainder_bound(alpha, 3)
        with pytest.raises(DomainError):
            relative_remainder_r1(alpha)


class TestMinBuckets:
    def test_operating_sizing(self):
        assert min_buckets(10**7, 1e-9) == 2**53

    def test_boundary_checked_by_certified_estimate(self):
        def certified(m):
            est = approx_series(BucketConfig(10**7, m), 8)
            return est.value + est.remainder_abs + abs(est.delta_lo)

        assert certified(2**52) > 1e-9 >= certified(2**53)
        assert certified(2**64) <= 1e-9

    def test_single_insert(self):
        assert min_buckets(1, 1e-9) == 1

    def test_loose_target_hits_alpha_one_floor(self):
        assert min_buckets(1000, 0.9) == 1024

    @pytest.mark.parametrize("target", [0.0, 1.0, -1e-3])
    def test_rejects_bad_target(self, target):
        with pytest.raises(DomainError):
            min_buckets(10, target)


class TestMonteCarlo:
    def test_two_into_two(self):
        mean, se = monte_carlo_rate(BucketConfig(2, 2), 10**5, 42)
        assert abs(mean - 0.25) <= 3 * se

    def test_1000_into_1024(self):
        mean, se = monte_carlo_rate(BucketConfig(1000, 1024), 1000, 42)
        assert abs(mean - RATE_1000_1024) <= 3 * se

    def test_single_insert(self):
        assert monte_carlo_rate(BucketConfig(1, 8), 10, 3) == (0.0, 0.0)

    def test_deterministic(self):
        cfg = BucketConfig(50, 2**64)
        assert monte_carlo_rate(cfg, 200, 9) == monte_carlo_rate(cfg, 200, 9)

    def test_occupancy_strategies_agree(self):
        cfg = BucketConfig(40, 64)
        assert monte_carlo_rate(cfg, 300, 5, occupancy="set") == monte_carlo_rate(
            cfg, 300, 5, occupancy="sorted"
        )
        draws = np.random.default_rng(0).integers(0, 2**64, size=(50, 30), dtype=np.uint64)
        draws[:, 1] = draws[:, 0]
        assert np.array_equal(_occupied_set(draws), _occupied_sorted(draws))

    def test_budget(self):
        with pytest.raises(DomainError):
            monte_carlo_rate(BucketConfig(10**4, 2**20), 10**5, 0, budget=10**8)


# --- invariants ------------------------------------------------------------

ALPHAS = [Fraction(1, 10**6), Fraction(1, 10**4), Fraction(1, 100), Fraction(1, 10), Fraction(1, 2), Fraction(1)]


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 10**7), m_over_n=st.floats(1.0, 1e12))
def test_sandwich(n, m_over_n):
    m = max(n, int(n * m_over_n))
    cfg = BucketConfig(n, m)
    approx = approx_exponential(cfg)
    exact = exact_collision_rate(cfg).value
    assert approx.value + approx.delta_lo <= exact <= approx.value + 1e-15


@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("K", range(2, 13))
def test_series_convergence_exact_arithmetic(alpha, K):
    ref = ref_exp_form(alpha)
    with mpmath.workdps(200):
        err = abs(mpq(series_partial_sum(alpha, K)) - ref)
        assert err <= mpq(remainder_bound(alpha, K))


@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("K", range(2, 12))
def test_alternating_bracketing(alpha, K):
    ref = ref_exp_form(alpha)
    with mpmath.workdps(200):
        lo, hi = sorted(
            mpq(s)
            for s in (series_partial_sum(alpha, K), series_partial_sum(alpha, K + 1))
        )
        assert lo <= ref <= hi


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 5000), m=st.integers(1, 2**40))
def test_monotonicity(n, m):
    base = exact_collision_rate(BucketConfig(n, m)).value
    assert exact_collision_rate(BucketConfig(n + 1, m)).value >= base
    assert exact_collision_rate(BucketConfig(n, m + 1)).value <= base


@settings(max_examples=300, deadline=None)
@given(n=st.integers(1, 10**9), m=st.integers(1, 2**70))
def test_range(n, m):
    cfg = BucketConfig(n, m)
    assert 0 <= exact_collision_rate(cfg).value < 1
    if 2 <= n <= m:
        for est in (approx_exponential(cfg), approx_series(cfg), approx_linear(cfg)):
            assert 0 <= est.value < 1


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 10**7), m_over_n=st.floats(1.0, 1e10), K=st.integers(2, 12))
def test_rate_estimate_interval_contains_truth(n, m_over_n, K):
    m = max(n, int(n * m_over_n))
    cfg = BucketConfig(n, m)
    est = approx_series(cfg, K)
    truth = exact_collision_rate(cfg).value
    slack = 4 * np.spacing(max(truth, est.value))
    assert est.lower - slack <= truth <= est.upper + slack


@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("n", [2, 3, 10, 1000, 10**7])
def test_power_bracket_inequality(alpha, n):
    """exp(-a)(1 - a^2 sqrt(c/(n^2-a^2))) <= (1 - a/n)^n <= exp(-a)."""
    with mpmath.workdps(80):
        a = mpmath.mpf(alpha.numerator) / alpha.denominator
        mid = (1 - a / n) ** n
        upper = mpmath.exp(-a)
        factor = a**2 * mpmath.sqrt((mpmath.pi**2 / 6 - 1) / (n**2 - a**2))
        assert upper * (1 - factor) <= mid <= upper
