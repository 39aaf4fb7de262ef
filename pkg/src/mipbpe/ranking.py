"""Rank statistics and the cost-aware BPE objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedCorrelation(ValueError):
    """Spearman correlation is undefined (constant input)."""


def ranks(values) -> np.ndarray:
    """Fractional ranks starting at 1; tied values share their mean position."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("ranks needs a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("ranks needs finite values")
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    # run boundaries of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, sorted_x[1:] != sorted_x[:-1]])
    ends = np.r_[starts[1:], x.size]
    avg = (starts + ends + 1) / 2.0
    out = np.empty(x.size)
    out[order] = np.repeat(avg, ends - starts)
    return out


def spearman(a, b) -> float:
    """Spearman rank correlation: Pearson correlation of the fractional ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman needs two 1-D vectors of equal length")
    if a.size < 2:
        raise ValueError("spearman needs at least 2 observations")
    ra = ranks(a) - (a.size + 1) / 2.0
    rb = ranks(b) - (b.size + 1) / 2.0
    sa = np.dot(ra, ra)
    sb = np.dot(rb, rb)
    if sa == 0 or sb == 0:
        raise UndefinedCorrelation("spearman is undefined for a constant vector")
    r = float(np.dot(ra, rb) / np.sqrt(sa * sb))
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class ObjectiveParams:
    """``lam`` weights the cost term; ``literal_sign`` adds it instead of subtracting."""

    lam: float = 0.5
    cost_normalizer: float = 1.0
    literal_sign: bool = False

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if not self.cost_normalizer > 0:
            raise ValueError("cost_normalizer must be positive")


def objective(r_s: float, mean_cost: float, params: ObjectiveParams) -> float:
    """Default: ``r_s - lam * mean_cost / cost_normalizer`` (cheaper is better).

    With ``literal_sign`` the cost term is added, as the bare formula reads.
    """
    if mean_cost < 0:
        raise ValueError("mean_cost must be >= 0")
    term = params.lam * mean_cost / params.cost_normalizer
    return r_s + term if params.literal_sign else r_s - term
