"""Collision rate of n uniform inserts into m buckets.

The collision rate is E[Y]/n, where Y = n - (number of occupied buckets).
Besides the closed form this module offers three load-factor
approximations with certified error bounds, and two independent oracles
(exhaustive rational enumeration and Monte Carlo) used for verification.

The series kernels (`series_partial_sum`, `remainder_bound`) are generic
over the numeric type: pass a `fractions.Fraction` or an `mpmath.mpf` to
evaluate them exactly or at high precision.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "DEFAULT_ORDER",
    "BucketConfig",
    "DomainError",
    "Method",
    "RateEstimate",
    "approx_exponential",
    "approx_linear",
    "approx_series",
    "brute_force_expected_collisions",
    "certified_rate",
    "delta_lower_bound",
    "estimate",
    "exact_collision_rate",
    "exact_collision_rate_fraction",
    "min_buckets",
    "monte_carlo_rate",
    "relative_remainder_r1",
    "remainder_bound",
    "series_partial_sum",
]

DEFAULT_ORDER = 8
ENUMERATION_LIMIT = 10**8
MONTE_CARLO_BUDGET = 10**8

# zeta(2) - 1
_ZETA2_MINUS_ONE = math.pi**2 / 6 - 1

# 1/(k+1)! for k = 1..20, used by the Horner evaluation of the exponential form.
_INV_FACT = [1.0 / math.factorial(k + 1) for k in range(1, 21)]


class DomainError(ValueError):
    """Raised when inputs fall outside an estimator's hypotheses."""


class Method(enum.Enum):
    EXACT = "exact"
    EXPONENTIAL = "exponential"
    SERIES = "series"
    LINEAR = "linear"


@dataclass(frozen=True)
class BucketConfig:
    """n inserts into m buckets; the load factor is derived, never stored."""

    n: int
    m: int

    def __post_init__(self):
        for name in ("n", "m"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise DomainError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise DomainError(f"{name} must be >= 1, got {value}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))

    @property
    def alpha(self) -> float:
        return self.n / self.m

    @property
    def alpha_exact(self) -> Fraction:
        return Fraction(self.n, self.m)


@dataclass(frozen=True)
class RateEstimate:
    """A collision-rate value with its certified error terms.

    The true rate lies in ``[value - |delta_lo| - remainder_abs,
    value + remainder_abs]``.
    """

    value: float
    delta_lo: float
    remainder_abs: float
    method: Method
    order: int | None = None

    @property
    def lower(self) -> float:
        return self.value - abs(self.delta_lo) - self.remainder_abs

    @property
    def upper(self) -> float:
        return self.value + self.remainder_abs

    @property
    def label(self) -> str:
        if self.method is Method.SERIES:
            return f"series(K={self.order})"
        return self.method.value


def _check_domain(cfg: BucketConfig) -> None:
    if cfg.n < 2:
        raise DomainError(f"approximations require n >= 2, got n={cfg.n}")
    if cfg.n > cfg.m:
        raise DomainError(f"approximations require alpha <= 1, got alpha={cfg.alpha:g}")


def _check_alpha(alpha) -> None:
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")


def _check_order(K: int) -> None:
    if isinstance(K, bool) or not isinstance(K, int) or K < 2:
        raise DomainError(f"series order K must be an integer >= 2, got {K!r}")


def _exp_deficit(x: float) -> float:
    """1 - (1 - exp(-x))/x for 0 < x, without cancellation."""
    if x > 0.5:
        return 1.0 + math.expm1(-x) / x
    # Converged alternating series in Horner form; 1/21! is far below
    # double precision relative to the leading x/2 for x <= 0.5.
    acc = 0.0
    for coef in reversed(_INV_FACT):
        acc = coef - x * acc
    return x * acc


def _log_scale_excess(m: int) -> float:
    """-m*log(1 - 1/m) - 1 = sum_{k>=2} m^{-(k-1)}/k, for m >= 2."""
    x = 1.0 / m
    total = 0.0
    power = 1.0
    for k in range(2, 400):
        power *= x
        term = power / k
        total += term
        if term <= 1e-18 * total:
            break
    return total


# ---------------------------------------------------------------------------
# Closed form and oracles
# ---------------------------------------------------------------------------


def exact_collision_rate(cfg: BucketConfig) -> RateEstimate:
    """Closed-form collision rate 1 - (m/n)(1 - ((m-1)/m)^n).

    Evaluated as 1 + (m/n) expm1(n log1p(-1/m)). When the exponent is small
    that expression still cancels against the leading 1, so the small-load
    branch rewrites it as (1 + c) h(y) - c, with y = -n log1p(-1/m),
    c = -m log1p(-1/m) - 1 and h(y) = 1 - (1 - e^-y)/y, each summed
    without cancellation. The result carries full relative precision down
    to m = 2**64 and beyond.
    """
    n, m = cfg.n, cfg.m
    if n == 1:
        value = 0.0
    elif m == 1:
        value = (n - 1) / n
    else:
        y = -n * math.log1p(-1.0 / m)
        if y > 0.5:
            value = 1.0 + (m / n) * math.expm1(-y)
        else:
            c = _log_scale_excess(m)
            value = (1.0 + c) * _exp_deficit(y) - c
    return RateEstimate(value, 0.0, 0.0, Method.EXACT)


def exact_collision_rate_fraction(cfg: BucketConfig) -> Fraction:
    """The closed form in exact rational arithmetic."""
    n, m = cfg.n, cfg.m
    return 1 - Fraction(m, n) * (1 - Fraction(m - 1, m) ** n)


def brute_force_expected_collisions(
    cfg: BucketConfig, limit: int = ENUMERATION_LIMIT
) -> Fraction:
    """Mean collision rate over all m**n equiprobable assignments.

    Does not use the closed form: every assignment of inserts to buckets is
    enumerated and its collisions (n minus occupied buckets) are counted.
    """
    n, m = cfg.n, cfg.m
    if m**n > limit:
        raise DomainError(f"m**n = {m}**{n} exceeds the enumeration limit {limit}")
    total = 0
    for assignment in itertools.product(range(m), repeat=n):
        total += n - len(set(assignment))
    return Fraction(total, m**n * n)


# ---------------------------------------------------------------------------
# Load-factor approximations
# ---------------------------------------------------------------------------


def series_partial_sum(alpha, K: int):
    """sum_{k=1}^{K-1} (-1)^(k+1) alpha^k / (k+1)!, built by term recurrence.

    Preserves the numeric type of ``alpha``.
    """
    _check_order(K)
    term = alpha / 2
    total = term
    for k in range(1, K - 1):
        term = term * (-alpha) / (k + 2)
        total = total + term
    return total


def remainder_bound(alpha, K: int):
    """Bound alpha^K/(K+1)! on the series truncation error |R_{K-1}(alpha)|."""
    _check_alpha(alpha)
    _check_order(K)
    bound = alpha / 2
    for j in range(2, K + 1):
        bound = bound * alpha / (j + 1)
    return bound


def relative_remainder_r1(alpha):
    """Certified bound alpha/3 on |R_1(alpha)| / (alpha/2)."""
    _check_alpha(alpha)
    return alpha / 3


def delta_lower_bound(cfg: BucketConfig) -> float:
    """Lower bound -sqrt(alpha^2/(n^2 - alpha^2) (pi^2/6 - 1)) on delta(alpha, n)."""
    if cfg.n <= cfg.alpha or cfg.n < 2:
        raise DomainError(f"delta bound requires n >= 2 and n > alpha (n={cfg.n})")
    _check_alpha(cfg.alpha)
    alpha, n = cfg.alpha, float(cfg.n)
    return -alpha * math.sqrt(_ZETA2_MINUS_ONE / ((n - alpha) * (n + alpha)))


def approx_exponential(cfg: BucketConfig) -> RateEstimate:
    _check_domain(cfg)
    return RateEstimate(
        _exp_deficit(cfg.alpha), delta_lower_bound(cfg), 0.0, Method.EXPONENTIAL
    )


def approx_series(cfg: BucketConfig, K: int = DEFAULT_ORDER) -> RateEstimate:
    _check_domain(cfg)
    _check_order(K)
    alpha = cfg.alpha
    return RateEstimate(
        series_partial_sum(alpha, K),
        delta_lower_bound(cfg),
        remainder_bound(alpha, K),
        Method.SERIES,
        K,
    )


def approx_linear(cfg: BucketConfig) -> RateEstimate:
    _check_domain(cfg)
    alpha = cfg.alpha
    return RateEstimate(
        alpha / 2, delta_lower_bound(cfg), remainder_bound(alpha, 2), Method.LINEAR
    )


def estimate(cfg: BucketConfig, method: Method | str, K: int = DEFAULT_ORDER) -> RateEstimate:
    """Dispatch to the estimator named by ``method``."""
    method = Method(method)
    if method is Method.EXACT:
        return exact_collision_rate(cfg)
    if method is Method.EXPONENTIAL:
        return approx_exponential(cfg)
    if method is Method.SERIES:
        return approx_series(cfg, K)
    return approx_linear(cfg)


def certified_rate(cfg: BucketConfig, K: int = DEFAULT_ORDER) -> float:
    """Upper end of the certified interval, padded by the full |delta| bound."""
    est = approx_series(cfg, K)
    return est.value + est.remainder_abs + abs(est.delta_lo)


# ---------------------------------------------------------------------------
# Sizing
# ---------------------------------------------------------------------------


def min_buckets(n: int, target_rate: float, K: int = DEFAULT_ORDER) -> int:
    """Smallest power-of-two m whose certified collision rate is <= target_rate."""
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if not 0 < target_rate < 1:
        raise DomainError(f"target rate must lie in (0, 1), got {target_rate}")
    if n == 1:
        return 1
    floor_exp = (n - 1).bit_length()  # smallest m = 2**e with alpha <= 1
    # alpha <= target_rate gives alpha/2 + alpha^2 terms + |delta| < target_rate.
    hi_exp = max(floor_exp, math.ceil(math.log2(n / target_rate)) + 1)
    if hi_exp > 1000:
        raise DomainError(f"target rate {target_rate} needs more than 2**1000 buckets")
    if certified_rate(BucketConfig(n, 2**hi_exp), K) > target_rate:
        raise DomainError(f"target rate {target_rate} is not attainable for n={n}")
    e = hi_exp
    while e > floor_exp and certified_rate(BucketConfig(n, 2 ** (e - 1)), K) <= target_rate:
        e -= 1
    return 2**e


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------


def _occupied_sorted(draws: np.ndarray) -> np.ndarray:
    ordered = np.sort(draws, axis=1)
    return 1 + np.count_nonzero(np.diff(ordered, axis=1), axis=1)


def _occupied_set(draws: np.ndarray) -> np.ndarray:
    return np.array([len(set(row.tolist())) for row in draws], dtype=np.int64)


def monte_carlo_rate(
    cfg: BucketConfig,
    trials: int,
    seed: int,
    *,
    occupancy: str = "auto",
    budget: int = MONTE_CARLO_BUDGET,
) -> tuple[float, float]:
    """Empirical mean collision rate and its standard error.

    Each trial draws n bucket indices uniformly from [0, m) and counts
    n - occupied. ``occupancy`` picks the distinct-count strategy: "sorted"
    (vectorised sort + diff), "set" (hash set per trial) or "auto".
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if cfg.n * trials > budget:
        raise DomainError(f"n*trials = {cfg.n * trials} exceeds budget {budget}")
    if cfg.m > 2**64:
        raise DomainError("Monte Carlo supports m <= 2**64")
    if occupancy == "auto":
        occupancy = "set" if cfg.n * trials <= 4096 else "sorted"
    count = {"sorted": _occupied_sorted, "set": _occupied_set}[occupancy]

    rng = np.random.default_rng(seed)
    chunk = max(1, min(trials, 2_000_000 // cfg.n))
    rates = np.empty(trials, dtype=np.float64)
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        draws = rng.integers(0, cfg.m, size=(size, cfg.n), dtype=np.uint64)
        rates[done : done + size] = (cfg.n - count(draws)) / cfg.n
        done += size

    mean = float(rates.mean())
    if trials == 1:
        return mean, 0.0
    return mean, float(rates.std(ddof=1) / math.sqrt(trials))
