"""Confidence bands shared by the Monte Carlo checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
from statsmodels.stats.proportion import proportion_confint


@dataclass(frozen=True)
class EstimateWithBand:
    """A sample estimate with a symmetric normal band or a Wilson interval."""

    value: float
    half_width: float
    n: int
    level: float
    lower: float
    upper: float
    method: str = "normal"

    def covers(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    def as_dict(self) -> dict:
        return {"value": self.value, "half_width": self.half_width, "n": self.n, "level": self.level,
                "lower": self.lower, "upper": self.upper, "method": self.method}


def z_value(level: float) -> float:
    return float(norm.ppf(0.5 + level / 2))


def mean_band(samples, level: float = 0.99) -> EstimateWithBand:
    """Sample mean with half width ``z * sd / sqrt(N)`` (``ddof=1``)."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples for a band")
    mean = float(x.mean())
    hw = z_value(level) * float(x.std(ddof=1)) / np.sqrt(n)
    return EstimateWithBand(mean, hw, n, level, mean - hw, mean + hw)


def wilson_band(successes: int, n: int, level: float = 0.99) -> EstimateWithBand:
    lo, hi = proportion_confint(int(successes), int(n), alpha=1 - level, method="wilson")
    p = successes / n
    return EstimateWithBand(float(p), float(max(p - lo, hi - p)), int(n), level, float(lo), float(hi), "wilson")
