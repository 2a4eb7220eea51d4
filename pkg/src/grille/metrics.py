"""Divergence-based channel-security measures and the detection-error statistic.

All divergences use base-2 logarithms so the Jensen-Shannon divergence is
bounded by [0, 1] exactly.  Distribution comparison over images is done on
feature-space histograms; densities over raw pixels are out of reach, and
reports label the histogram estimator as the approximation it is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

_NORM_TOL = 1e-9


@dataclass(eq=False)
class Histogram:
    """Discrete distribution over shared bins or category labels."""

    probs: np.ndarray
    edges: np.ndarray | None = None
    labels: tuple | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        if p.size == 0:
            raise InvalidArgumentError("histogram needs at least one bin")
        if (p < 0).any():
            raise InvalidArgumentError("histogram probabilities must be non-negative")
        if abs(p.sum() - 1.0) > _NORM_TOL:
            raise InvalidArgumentError(f"histogram must sum to 1, got {p.sum()!r}")
        self.probs = p
        if self.edges is not None:
            self.edges = np.asarray(self.edges, dtype=np.float64).ravel()
            if self.edges.size != p.size + 1:
                raise InvalidArgumentError("edges must have len(probs) + 1 entries")

    @classmethod
    def from_samples(cls, samples, edges) -> "Histogram":
        edges = np.asarray(edges, dtype=np.float64)
        counts, _ = np.histogram(np.asarray(samples, dtype=np.float64), bins=edges)
        total = counts.sum()
        if total == 0:
            raise InvalidArgumentError("no samples fall inside the bin edges")
        return cls(counts / total, edges=edges)

    @classmethod
    def from_counts(cls, counts, labels=None) -> "Histogram":
        counts = np.asarray(counts, dtype=np.float64)
        if counts.sum() <= 0:
            raise InvalidArgumentError("counts must be positive")
        return cls(counts / counts.sum(), labels=labels)


def _check_same_binning(p: Histogram, q: Histogram):
    if p.probs.size != q.probs.size:
        raise InvalidArgumentError("histograms have different bin counts")
    if (p.edges is None) != (q.edges is None):
        raise InvalidArgumentError("histograms mix edge-based and label-based binning")
    if p.edges is not None and not np.array_equal(p.edges, q.edges):
        raise InvalidArgumentError("histogram bin edges differ")
    if p.labels is not None and q.labels is not None and p.labels != q.labels:
        raise InvalidArgumentError("histogram labels differ")


def kl_divergence(p: Histogram, q: Histogram) -> float:
    """Sum p log2(p/q); returns +inf when p has mass where q has none."""
    _check_same_binning(p, q)
    pv, qv = p.probs, q.probs
    support = pv > 0
    if (qv[support] == 0).any():
        return math.inf
    return float(np.sum(pv[support] * np.log2(pv[support] / qv[support])))


def js_divergence(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence, base 2: always finite, symmetric, in [0, 1]."""
    _check_same_binning(p, q)
    m = Histogram(0.5 * (p.probs + q.probs), edges=p.edges, labels=p.labels)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


def epsilon_secure(p: Histogram, q: Histogram, eps: float) -> bool:
    """Whether the channel satisfies the divergence bound JS(p, q) <= eps."""
    if eps < 0:
        raise InvalidArgumentError("eps must be non-negative")
    return js_divergence(p, q) <= eps


@dataclass
class DetectionReport:
    """Detector operating point minimizing (P_FA + P_MD)/2 under equal priors."""

    p_fa: float
    p_md: float
    p_e: float
    payload: float = 0.0
    bpi: int = 0
    iterations: int = 0
    threshold: float | None = None
    pe_stderr: float | None = None

    def __post_init__(self):
        for name in ("p_fa", "p_md", "p_e"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {v}")
        if abs(self.p_e - 0.5 * (self.p_fa + self.p_md)) > 1e-9:
            raise InvalidArgumentError("p_e must equal (p_fa + p_md) / 2")


def detection_error(scores_cover, scores_stego) -> DetectionReport:
    """Sweep all thresholds over the pooled scores and return the best point.

    Convention: a score above the threshold is declared stego.  The sweep
    therefore only depends on the score ordering, so any strictly
    increasing transform of all scores leaves the result unchanged.
    """
    cover = np.asarray(scores_cover, dtype=np.float64).ravel()
    stego = np.asarray(scores_stego, dtype=np.float64).ravel()
    if cover.size == 0 or stego.size == 0:
        raise InvalidArgumentError("both score sequences must be non-empty")
    if not (np.isfinite(cover).all() and np.isfinite(stego).all()):
        raise InvalidArgumentError("scores must be finite")

    pooled = np.unique(np.concatenate([cover, stego]))
    # thresholds: just below the smallest score, then at each pooled value
    candidates = np.concatenate([[pooled[0] - 1.0], pooled])
    p_fa = (cover[None, :] > candidates[:, None]).mean(axis=1)
    p_md = (stego[None, :] <= candidates[:, None]).mean(axis=1)
    p_e = 0.5 * (p_fa + p_md)
    best = int(np.argmin(p_e))
    return DetectionReport(
        p_fa=float(p_fa[best]),
        p_md=float(p_md[best]),
        p_e=float(p_e[best]),
        threshold=float(candidates[best]),
    )
