"""Real-versus-synthetic distribution comparison.

Per feature: median / mean / sample SD, empirical CDFs, Gaussian KDE
curves on a shared grid, and the two-sample Kolmogorov-Smirnov statistic.
A pooled row (all features flattened) accompanies the per-feature summary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import format_float
from .exceptions import InputError

KDE_GRID_POINTS = 512
KDE_GRID_PAD = 3.0
BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class SummaryStats:
    median: float
    mean: float
    sd: float | None  # None for a single value


def _values(values, min_len=1) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if len(arr) < min_len:
        raise InputError(f"need at least {min_len} values, got {len(arr)}")
    if not np.isfinite(arr).all():
        raise InputError("values contain NaN or Inf")
    return arr


def summary_stats(values) -> SummaryStats:
    x = _values(values)
    sd = float(np.std(x, ddof=1)) if len(x) >= 2 else None
    return SummaryStats(median=float(np.median(x)), mean=float(np.mean(x)), sd=sd)


def ecdf(values) -> list[tuple[float, float]]:
    """``(v, P(X <= v))`` at each distinct value, ascending; the last probability is 1."""
    x = _values(values)
    uniq, counts = np.unique(x, return_counts=True)
    cum = np.cumsum(counts)
    return [(float(v), float(c) / len(x)) for v, c in zip(uniq, cum)]


def silverman_bandwidth(values) -> float:
    x = _values(values, min_len=2)
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    if iqr > 0 and sd > 0:
        spread = min(sd, iqr / 1.34)
    else:
        spread = sd
    if spread <= 0:
        return BANDWIDTH_FLOOR
    return max(0.9 * spread * len(x) ** (-0.2), BANDWIDTH_FLOOR)


def kde(values, grid, bandwidth="auto") -> np.ndarray:
    """Gaussian kernel density of ``values`` evaluated at ``grid``."""
    x = _values(values, min_len=2)
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if bandwidth == "auto" or bandwidth is None:
        h = silverman_bandwidth(x)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise InputError(f"bandwidth must be positive, got {bandwidth}")
    u = (grid[:, None] - x[None, :]) / h
    phi = np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    return phi.sum(axis=1) / (len(x) * h)


def ks_statistic(a, b) -> float:
    """Largest vertical gap between the two empirical CDFs."""
    a = np.sort(_values(a))
    b = np.sort(_values(b))
    support = np.union1d(a, b)
    fa = np.searchsorted(a, support, side="right") / len(a)
    fb = np.searchsorted(b, support, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


@dataclass
class FeatureComparison:
    name: str
    real_stats: SummaryStats
    synthetic_stats: SummaryStats
    ecdf_real: list
    ecdf_synthetic: list
    kde_grid: np.ndarray
    kde_real: np.ndarray
    kde_synthetic: np.ndarray
    ks: float
    bandwidth_real: float
    bandwidth_synthetic: float


@dataclass
class DistributionReport:
    features: list[FeatureComparison]
    pooled_real: SummaryStats
    pooled_synthetic: SummaryStats
    n_real: int
    n_synthetic: int
    extra: dict = field(default_factory=dict)

    @property
    def ks_per_feature(self) -> list[float]:
        return [f.ks for f in self.features]

    def summary_table(self) -> list[dict]:
        """Median / mean / SD rows for real and synthetic data, per feature and pooled."""
        rows = []
        for name, real, synth in [(f.name, f.real_stats, f.synthetic_stats) for f in self.features] + [
            ("all_features", self.pooled_real, self.pooled_synthetic)
        ]:
            for source, stats in (("real", real), ("synthetic", synth)):
                rows.append({"feature": name, "source": source, "median": stats.median, "mean": stats.mean, "sd": stats.sd})
        return rows

    def to_dict(self) -> dict:
        return {
            **self.extra,
            "n_real": self.n_real,
            "n_synthetic": self.n_synthetic,
            "summary": self.summary_table(),
            "ks_per_feature": {f.name: f.ks for f in self.features},
            "bandwidths": {f.name: {"real": f.bandwidth_real, "synthetic": f.bandwidth_synthetic} for f in self.features},
            "ecdf": {
                f.name: {"real": [list(p) for p in f.ecdf_real], "synthetic": [list(p) for p in f.ecdf_synthetic]}
                for f in self.features
            },
            "kde": {
                f.name: {"grid": f.kde_grid.tolist(), "real": f.kde_real.tolist(), "synthetic": f.kde_synthetic.tolist()}
                for f in self.features
            },
        }

    def ecdf_csv(self, index: int) -> str:
        f = self.features[index]
        lines = ["source,value,probability"]
        for source, points in (("real", f.ecdf_real), ("synthetic", f.ecdf_synthetic)):
            lines += [f"{source},{format_float(v)},{format_float(p)}" for v, p in points]
        return "\n".join(lines) + "\n"

    def kde_csv(self, index: int) -> str:
        f = self.features[index]
        lines = ["grid,density_real,density_synthetic"]
        lines += [
            f"{format_float(g)},{format_float(r)},{format_float(s)}"
            for g, r, s in zip(f.kde_grid, f.kde_real, f.kde_synthetic)
        ]
        return "\n".join(lines) + "\n"


def compare(real, synthetic, feature_names=None) -> DistributionReport:
    real = np.asarray(real, dtype=np.float64)
    synthetic = np.asarray(synthetic, dtype=np.float64)
    if real.ndim != 2 or synthetic.ndim != 2:
        raise InputError("compare expects two feature matrices")
    if real.shape[1] != synthetic.shape[1]:
        raise InputError(f"feature counts differ: {real.shape[1]} real vs {synthetic.shape[1]} synthetic")
    if len(real) < 2 or len(synthetic) < 2:
        raise InputError("each side needs at least 2 rows")
    if feature_names is None:
        feature_names = [f"x{i}" for i in range(real.shape[1])]
    features = []
    for j, name in enumerate(feature_names):
        r, s = real[:, j], synthetic[:, j]
        h_r, h_s = silverman_bandwidth(r), silverman_bandwidth(s)
        pad = KDE_GRID_PAD * max(h_r, h_s)
        lo = min(r.min(), s.min()) - pad
        hi = max(r.max(), s.max()) + pad
        grid = np.linspace(lo, hi, KDE_GRID_POINTS)
        features.append(
            FeatureComparison(
                name=name,
                real_stats=summary_stats(r),
                synthetic_stats=summary_stats(s),
                ecdf_real=ecdf(r),
                ecdf_synthetic=ecdf(s),
                kde_grid=grid,
                kde_real=kde(r, grid, h_r),
                kde_synthetic=kde(s, grid, h_s),
                ks=ks_statistic(r, s),
                bandwidth_real=h_r,
                bandwidth_synthetic=h_s,
            )
        )
    return DistributionReport(
        features=features,
        pooled_real=summary_stats(real.reshape(-1)),
        pooled_synthetic=summary_stats(synthetic.reshape(-1)),
        n_real=len(real),
        n_synthetic=len(synthetic),
    )
