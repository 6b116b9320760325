"""Batch summaries, exact merging and efficiency diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping

import numpy as np

Z95 = 1.96


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    variance: float
    elapsed: float = 0.0
    minimum: float = math.nan
    maximum: float = math.nan

    @property
    def ci95_halfwidth(self) -> float:
        return Z95 * math.sqrt(self.variance / self.n)

    @property
    def ci_lo(self) -> float:
        return self.mean - self.ci95_halfwidth

    @property
    def ci_hi(self) -> float:
        return self.mean + self.ci95_halfwidth

    @property
    def cv(self) -> float:
        if self.mean == 0:
            return 0.0 if self.variance == 0 else math.inf
        return math.sqrt(self.variance) / abs(self.mean)

    @property
    def second_moment(self) -> float:
        return self.variance * (self.n - 1) / self.n + self.mean ** 2

    @property
    def m2(self) -> float:
        """Sum of squared deviations from the mean."""
        return self.variance * (self.n - 1)

    def overlaps(self, other: "SummaryStats") -> bool:
        return self.ci_lo <= other.ci_hi and other.ci_lo <= self.ci_hi


def summarize(samples: Iterable[float], elapsed: float = 0.0) -> SummaryStats:
    x = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples,
                   dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    mean = math.fsum(x) / n
    d = x - mean
    # compensated two-pass variance
    var = (math.fsum(d * d) - math.fsum(d) ** 2 / n) / (n - 1)
    return SummaryStats(n, mean, max(var, 0.0), elapsed, float(x.min()), float(x.max()))


def merge(a: SummaryStats, b: SummaryStats) -> SummaryStats:
    """Combine two disjoint batches exactly (pairwise update of mean and M2)."""
    n = a.n + b.n
    delta = b.mean - a.mean
    mean = a.mean + delta * b.n / n
    m2 = a.m2 + b.m2 + delta * delta * a.n * b.n / n
    return SummaryStats(n, mean, m2 / (n - 1), a.elapsed + b.elapsed,
                        min(a.minimum, b.minimum), max(a.maximum, b.maximum))


def bernoulli_summary(hits: int, n: int, elapsed: float = 0.0) -> SummaryStats:
    if n < 2:
        raise ValueError("need at least two samples")
    p = hits / n
    return SummaryStats(n, p, p * (1 - p) * n / (n - 1), elapsed,
                        0.0 if hits < n else 1.0, 1.0 if hits else 0.0)


@dataclass(frozen=True)
class EfficiencyRow:
    x_log10: float
    mean: float
    cv: float
    second_moment_ratio: float
    asymptote_ratio: float


@dataclass(frozen=True)
class EfficiencyReport:
    rows: List[EfficiencyRow]
    spread: float
    flagged: bool
    threshold: float = 4.0

    def format(self) -> str:
        lines = ["x_log10,mean,cv,second_moment_ratio,mean_over_asymptote"]
        for r in self.rows:
            lines.append(f"{r.x_log10:g},{r.mean:.6e},{r.cv:.4f},"
                         f"{r.second_moment_ratio:.4f},{r.asymptote_ratio:.4f}")
        lines.append(f"# spread={self.spread:.3f} flagged={self.flagged}")
        return "\n".join(lines)


def efficiency_report(summaries: Mapping[float, SummaryStats],
                      asymptotes: Mapping[float, float],
                      threshold: float = 4.0) -> EfficiencyReport:
    """Second moment over squared mean, and mean over asymptote, per x."""
    if len(summaries) < 2:
        raise ValueError("need at least two values of x")
    rows = []
    for xl in sorted(summaries):
        s = summaries[xl]
        ratio = s.second_moment / s.mean ** 2 if s.mean else math.inf
        asy = asymptotes.get(xl, math.nan)
        rows.append(EfficiencyRow(xl, s.mean, s.cv, ratio, s.mean / asy if asy else math.nan))
    r = [row.second_moment_ratio for row in rows]
    spread = max(r) / min(r)
    return EfficiencyReport(rows, spread, bool(spread > threshold), threshold)


def cv_spread(stats: Dict[float, SummaryStats]) -> float:
    cvs = [s.cv for s in stats.values()]
    return max(cvs) / min(cvs)
