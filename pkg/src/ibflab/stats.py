"""Small statistics helpers shared by the suites."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import kolmogorov


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sided Kolmogorov-Smirnov statistic and asymptotic p-value.

    The p-value uses the limiting distribution with the usual small-sample
    correction ``sqrt(ne) + 0.12 + 0.11 / sqrt(ne)``.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    allv = np.concatenate([a, b])
    fa = np.searchsorted(a, allv, side="right") / a.size
    fb = np.searchsorted(b, allv, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    ne = a.size * b.size / (a.size + b.size)
    sq = math.sqrt(ne)
    p = float(kolmogorov((sq + 0.12 + 0.11 / sq) * d)) if d > 0 else 1.0
    return d, min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class Moments:
    """Mergeable running summary (count, mean, M2, min, max)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    lo: float = math.inf
    hi: float = -math.inf

    @classmethod
    def of(cls, xs: Iterable[float]) -> "Moments":
        x = np.asarray(list(xs), dtype=float)
        if x.size == 0:
            return cls()
        m = float(x.mean())
        return cls(int(x.size), m, float(np.sum((x - m) ** 2)), float(x.min()), float(x.max()))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = (self.n * self.mean + other.n * other.mean) / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Moments(n, mean, m2, min(self.lo, other.lo), max(self.hi, other.hi))

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else math.nan


def merge_all(parts: Sequence[Moments]) -> Moments:
    out = Moments()
    for p in parts:
        out = out.merge(p)
    return out


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def within_combined_se(means: Sequence[float], ses: Sequence[float], k: float) -> tuple[bool, float]:
    """All pairwise differences within ``k`` combined standard errors.

    Returns the verdict and the worst ratio ``|m_i - m_j| / hypot(se_i, se_j)``.
    """
    worst = 0.0
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            c = math.hypot(ses[i], ses[j])
            diff = abs(means[i] - means[j])
            r = diff / c if c > 0 else (0.0 if diff == 0 else math.inf)
            worst = max(worst, r)
    return worst <= k, worst
