"""Collision-rate level sets over (n, m), written as ``n,m,log10_rate`` CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .collision_math import DEFAULT_ORDER, BucketConfig, approx_series


@dataclass
class LevelSetGrid:
    n_axis: list[int]
    m_axis: list[int]
    values: np.ndarray  # shape (len(n_axis), len(m_axis)); NaN where alpha > 1

    def __eq__(self, other):
        if not isinstance(other, LevelSetGrid):
            return NotImplemented
        return (
            self.n_axis == other.n_axis
            and self.m_axis == other.m_axis
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def log_spaced_ints(lo: float, hi: float, points: int) -> list[int]:
    raw = np.logspace(math.log10(lo), math.log10(hi), points)
    return sorted({int(round(x)) for x in raw})


def compute_levelset(
    n_min: float = 1e2,
    n_max: float = 1e8,
    n_points: int = 50,
    m_exp_min: int = 10,
    m_exp_max: int = 64,
    K: int = DEFAULT_ORDER,
) -> LevelSetGrid:
    n_axis = log_spaced_ints(n_min, n_max, n_points)
    m_axis = [2**e for e in range(m_exp_min, m_exp_max + 1)]
    values = np.full((len(n_axis), len(m_axis)), np.nan)
    for i, n in enumerate(n_axis):
        for j, m in enumerate(m_axis):
            if 2 <= n <= m:
                values[i, j] = math.log10(approx_series(BucketConfig(n, m), K).value)
    return LevelSetGrid(n_axis, m_axis, values)


def write_csv(grid: LevelSetGrid, path: str | Path) -> None:
    """Out-of-domain cells get an empty ``log10_rate`` field."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "m", "log10_rate"])
        for i, n in enumerate(grid.n_axis):
            for j, m in enumerate(grid.m_axis):
                v = grid.values[i, j]
                writer.writerow([n, m, "" if math.isnan(v) else repr(float(v))])


def read_csv(path: str | Path) -> LevelSetGrid:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["n", "m", "log10_rate"]:
            raise ValueError("not a level-set CSV")
        for n, m, v in reader:
            rows.append((int(n), int(m), float(v) if v else math.nan))
    n_axis = sorted({r[0] for r in rows})
    m_axis = sorted({r[1] for r in rows})
    n_pos = {n: i for i, n in enumerate(n_axis)}
    m_pos = {m: j for j, m in enumerate(m_axis)}
    values = np.full((len(n_axis), len(m_axis)), np.nan)
    for n, m, v in rows:
        values[n_pos[n], m_pos[m]] = v
    return LevelSetGrid(n_axis, m_axis, values)
