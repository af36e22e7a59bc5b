"""Self-check suites behind ``probeanon verify``.

References are independent of the estimators: exhaustive enumeration,
exact rationals, mpmath at high precision, and Monte Carlo.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import mpmath

from . import collision_math as cm

ALPHA_GRID = (Fraction(1, 10**6), Fraction(1, 10**4), Fraction(1, 100), Fraction(1, 10), Fraction(1, 2), Fraction(1))
N_GRID = (2, 10, 10**3, 10**7)
ORDERS = range(2, 13)
FLOAT_SLACK = 1e-15


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def reference_rate(n: int, m: int, dps: int = 60) -> mpmath.mpf:
    """Closed form at ``dps`` significant digits."""
    with mpmath.workdps(dps):
        n_, m_ = mpmath.mpf(n), mpmath.mpf(m)
        return 1 + (m_ / n_) * mpmath.expm1(n_ * mpmath.log1p(-1 / m_))


def reference_exp_form(alpha: Fraction, dps: int = 200) -> mpmath.mpf:
    """1 - (1 - e^-alpha)/alpha at ``dps`` digits."""
    with mpmath.workdps(dps):
        a = mpmath.mpf(alpha.numerator) / alpha.denominator
        return 1 + mpmath.expm1(-a) / a


def grid_configs():
    for alpha in ALPHA_GRID:
        for n in N_GRID:
            m = n / alpha
            if m.denominator == 1:
                yield alpha, cm.BucketConfig(n, int(m))


def suite_brute_force(max_n: int = 6, max_m: int = 8) -> SuiteResult:
    res = SuiteResult("brute-force equivalence")
    for n in range(1, max_n + 1):
        for m in range(1, max_m + 1):
            cfg = cm.BucketConfig(n, m)
            enumerated = cm.brute_force_expected_collisions(cfg)
            res.cases += 1
            if enumerated != cm.exact_collision_rate_fraction(cfg):
                res.failures.append(f"n={n} m={m}: enumeration {enumerated} != closed form")
            elif abs(cm.exact_collision_rate(cfg).value - float(enumerated)) > 1e-12:
                res.failures.append(f"n={n} m={m}: float closed form off by > 1e-12")
    return res


def suite_sandwich() -> SuiteResult:
    res = SuiteResult("delta sandwich")
    for alpha, cfg in grid_configs():
        approx = cm.approx_exponential(cfg)
        exact_ref = float(reference_rate(cfg.n, cfg.m))
        exact_lib = cm.exact_collision_rate(cfg).value
        for label, exact in (("reference", exact_ref), ("library", exact_lib)):
            diff = exact - approx.value
            res.cases += 1
            if not approx.delta_lo - FLOAT_SLACK <= diff <= FLOAT_SLACK:
                res.failures.append(
                    f"alpha={float(alpha):g} n={cfg.n}: {label} exact - exponential = {diff:.3e} "
                    f"outside [{approx.delta_lo:.3e}, 0]"
                )
    return res


def suite_remainder(series: Callable = cm.series_partial_sum) -> SuiteResult:
    res = SuiteResult("series remainder")
    for alpha in ALPHA_GRID:
        ref = reference_exp_form(alpha)
        with mpmath.workdps(200):
            for K in ORDERS:
                partial = series(alpha, K)
                bound = cm.remainder_bound(alpha, K)
                err = abs(mpmath.mpf(partial.numerator) / partial.denominator - ref)
                res.cases += 1
                if err > mpmath.mpf(bound.numerator) / bound.denominator:
                    res.failures.append(f"alpha={float(alpha):g} K={K}: |R| = {mpmath.nstr(err, 5)} > bound")
        a = float(alpha)
        res.cases += 1
        rel = abs(a / 2 - float(ref)) / (a / 2)
        if rel > cm.relative_remainder_r1(a):
            res.failures.append(f"alpha={a:g}: linear relative error {rel:.3e} > alpha/3")
    return res


def suite_monte_carlo(seed: int = 0) -> SuiteResult:
    res = SuiteResult("monte carlo")
    for n, m, trials in ((2, 2, 100_000), (1000, 1024, 1000)):
        cfg = cm.BucketConfig(n, m)
        mean, se = cm.monte_carlo_rate(cfg, trials, seed)
        exact = cm.exact_collision_rate(cfg).value
        res.cases += 1
        if abs(mean - exact) > 3 * se:
            res.failures.append(f"n={n} m={m}: mean {mean:.6f} vs exact {exact:.6f} (se {se:.2e})")
    return res


def faulty_series(alpha, K):
    """Series with a corrupted k=2 coefficient, for harness self-tests."""
    return cm.series_partial_sum(alpha, K) + alpha**2 / 100


def run_all(seed: int = 0, inject_fault: bool = False) -> list[SuiteResult]:
    series = faulty_series if inject_fault else cm.series_partial_sum
    suites = [
        suite_brute_force,
        suite_sandwich,
        lambda: suite_remainder(series),
        lambda: suite_monte_carlo(seed),
    ]
    results = []
    for suite in suites:
        start = time.perf_counter()
        result = suite()
        result.seconds = time.perf_counter() - start
        results.append(result)
    return results


def print_report(results: list[SuiteResult], out=None) -> None:
    out = out or sys.stdout
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<24} {r.cases:4d} cases  {r.seconds:6.2f}s", file=out)
        for failure in r.failures[:20]:
            print(f"      {failure}", file=out)
