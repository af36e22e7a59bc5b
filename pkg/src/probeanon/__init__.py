"""Collision-rate estimates and peppered MAC-address anonymization for probe-request counting."""

from .collision_math import (
    BucketConfig,
    DomainError,
    Method,
    RateEstimate,
    approx_exponential,
    approx_linear,
    approx_series,
    brute_force_expected_collisions,
    delta_lower_bound,
    exact_collision_rate,
    min_buckets,
    monte_carlo_rate,
    relative_remainder_r1,
    remainder_bound,
)

__version__ = "0.1.0"
