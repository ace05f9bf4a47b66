"""Reconstruction metrics against a ground-truth table: SRMSE, SSI and cell coverage."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


@dataclass
class SampleSummary:
    """Per-cell mean and sorted sample values of N retained samples."""

    mean: np.ndarray
    sorted_samples: Optional[np.ndarray]  # (N, I, J) sorted along axis 0
    n: int

    @classmethod
    def from_samples(cls, samples, keep_sorted: bool = True) -> "SampleSummary":
        s = np.asarray(samples, dtype=np.float64)
        if s.ndim == 2:
            s = s[None]
        if s.shape[0] < 1:
            raise ValueError("need at least one sample")
        mean = s.mean(axis=0)
        if not np.all(np.isfinite(mean)):
            raise ValueError("sample means are not finite")
        return cls(mean, np.sort(s, axis=0) if keep_sorted else None, s.shape[0])

    @classmethod
    def pooled(cls, groups: Iterable) -> "SampleSummary":
        """Pool samples across ensemble members."""
        return cls.from_samples(np.concatenate([np.asarray(g, dtype=np.float64) for g in groups]))


def _mean(summary) -> np.ndarray:
    return summary.mean if isinstance(summary, SampleSummary) else np.asarray(summary, dtype=np.float64)


def _truth(T_star) -> np.ndarray:
    return np.asarray(getattr(T_star, "cells", T_star), dtype=np.float64)


def srmse(summary, T_star) -> float:
    """RMS cell error divided by the mean cell value of the estimate."""
    m, t = _mean(summary), _truth(T_star)
    if m.shape != t.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {t.shape}")
    norm = m.sum() / m.size
    if norm == 0:
        raise ValueError("mean cell value of the estimate is zero")
    return float(math.sqrt(((m - t) ** 2).sum() / m.size) / norm)


def ssi(summary, T_star) -> float:
    """Sorensen similarity; cells where both are zero count as perfect agreement."""
    m, t = _mean(summary), _truth(T_star)
    if m.shape != t.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {t.shape}")
    denom = m + t
    with np.errstate(invalid="ignore", divide="ignore"):
        per_cell = np.where(denom > 0, 2 * np.minimum(m, t) / denom, 1.0)
    return float(per_cell.mean())


def hpd_bounds(sorted_samples: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Shortest window of the sorted samples holding ceil(q N / 100) values, per cell.

    Ties go to the lowest window.
    """
    n = sorted_samples.shape[0]
    k = min(n, max(1, math.ceil(q * n / 100 - 1e-12)))
    widths = sorted_samples[k - 1:] - sorted_samples[:n - k + 1]
    start = np.argmin(widths, axis=0)
    lower = np.take_along_axis(sorted_samples, start[None], axis=0)[0]
    upper = np.take_along_axis(sorted_samples, (start + k - 1)[None], axis=0)[0]
    return lower, upper


def central_bounds(sorted_samples: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    a = (1 - q / 100) / 2
    return (np.quantile(sorted_samples, a, axis=0, method="inverted_cdf"),
            np.quantile(sorted_samples, 1 - a, axis=0, method="inverted_cdf"))


def coverage_probability(summary: SampleSummary, T_star, q: float = 99, central: bool = False) -> float:
    """Fraction of cells whose true value lies in the q% high-probability interval."""
    if summary.sorted_samples is None:
        raise ValueError("summary was built without sorted samples")
    if summary.n < 2:
        raise ValueError("coverage needs at least two samples")
    if not 0 < q <= 100:
        raise ValueError("q must be a percentage in (0, 100]")
    t = _truth(T_star)
    lo, hi = (central_bounds if central else hpd_bounds)(summary.sorted_samples, q)
    return float(((lo <= t) & (t <= hi)).mean())


def metric_report(summary: SampleSummary, T_star, q: float = 99) -> dict[str, float]:
    out = {"srmse": srmse(summary, T_star), "ssi": ssi(summary, T_star)}
    if summary.sorted_samples is not None and summary.n >= 2:
        out[f"cp{q:g}"] = coverage_probability(summary, T_star, q)
    return out
