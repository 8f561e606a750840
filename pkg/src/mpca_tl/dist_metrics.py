"""Histogram distances used to audit source/target similarity.

All histograms share uniform bins over a common value range (by default
200 bins on [-1, 1]). Logarithms are natural. EMD is measured in bins;
multiply by ``bin_width`` for value units.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

DEFAULT_BINS = 200
DEFAULT_RANGE = (-1.0, 1.0)
DEFAULT_EPS = 1e-12


@dataclass(frozen=True)
class Histogram:
    probs: np.ndarray
    range: tuple[float, float] = DEFAULT_RANGE
    smoothing_epsilon: float = DEFAULT_EPS

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a nonempty 1-d sequence")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probs must be finite and nonnegative")
        total = p.sum()
        if total <= 0:
            raise ValueError("probs must have positive mass")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "range", (float(self.range[0]), float(self.range[1])))

    @property
    def n_bins(self) -> int:
        return self.probs.size

    @property
    def bin_width(self) -> float:
        return (self.range[1] - self.range[0]) / self.n_bins

    def smoothed(self) -> np.ndarray:
        p = self.probs + self.smoothing_epsilon
        return p / p.sum()


def build_histogram(values, n_bins: int = DEFAULT_BINS, range: tuple[float, float] = DEFAULT_RANGE,
                    smoothing_epsilon: float = DEFAULT_EPS) -> Histogram:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot build a histogram from no values")
    lo, hi = float(range[0]), float(range[1])
    if not lo < hi:
        raise ValueError(f"invalid range ({lo}, {hi})")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    idx = np.floor((x - lo) / (hi - lo) * n_bins)
    idx = np.clip(idx, 0, n_bins - 1).astype(np.intp)
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    return Histogram(counts / x.size, (lo, hi), smoothing_epsilon)


def _check_pair(a: Histogram, b: Histogram):
    if a.n_bins != b.n_bins or a.range != b.range:
        raise ValueError(
            f"binning mismatch: {a.n_bins} bins on {a.range} vs {b.n_bins} bins on {b.range}"
        )


def _kl_raw(p: np.ndarray, q: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kl(ht: Histogram, hs: Histogram) -> float:
    """D_KL(ht || hs) on epsilon-smoothed probabilities."""
    _check_pair(ht, hs)
    return _kl_raw(ht.smoothed(), hs.smoothed())


def kl_sym(ht: Histogram, hs: Histogram) -> float:
    return 0.5 * (kl(ht, hs) + kl(hs, ht))


def jsd(ht: Histogram, hs: Histogram) -> float:
    _check_pair(ht, hs)
    p, q = ht.probs, hs.probs
    m = 0.5 * (p + q)
    return 0.5 * _kl_raw(p, m) + 0.5 * _kl_raw(q, m)


def chi2(ht: Histogram, hs: Histogram) -> float:
    _check_pair(ht, hs)
    p, q = ht.probs, hs.probs
    den = p + q
    nz = den > 0
    return float(np.sum((p[nz] - q[nz]) ** 2 / den[nz]))


def bhattacharyya(ht: Histogram, hs: Histogram) -> float:
    """-ln of the overlap coefficient; ``math.inf`` when supports are disjoint."""
    _check_pair(ht, hs)
    bc = float(np.sum(np.sqrt(ht.probs * hs.probs)))
    if bc <= 0:
        return math.inf
    return max(0.0, -math.log(bc))


def emd(ht: Histogram, hs: Histogram) -> float:
    _check_pair(ht, hs)
    return float(np.abs(np.cumsum(ht.probs - hs.probs)).sum())


@dataclass(frozen=True)
class MetricsReport:
    kl_t_s: float
    kl_s_t: float
    kl_sym: float
    jsd: float
    chi2: float
    bhattacharyya: float
    emd: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def compare(ht: Histogram, hs: Histogram) -> MetricsReport:
    return MetricsReport(
        kl_t_s=kl(ht, hs),
        kl_s_t=kl(hs, ht),
        kl_sym=kl_sym(ht, hs),
        jsd=jsd(ht, hs),
        chi2=chi2(ht, hs),
        bhattacharyya=bhattacharyya(ht, hs),
        emd=emd(ht, hs),
    )


def compute_all(source_values, target_values, n_bins: int = DEFAULT_BINS) -> MetricsReport:
    """Histogram both samples over [-1, 1] and compute every distance.

    KL is reported in the target-given-source direction, D_KL(H_T || H_S),
    with the reverse direction alongside.
    """
    hs = build_histogram(source_values, n_bins)
    ht = build_histogram(target_values, n_bins)
    return compare(ht, hs)
