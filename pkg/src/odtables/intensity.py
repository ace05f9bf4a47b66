"""Spatial interaction intensities (maximum-entropy gravity models).

All normalisations run in log space with max subtraction, so exploratory
parameter values with ``alpha * x - beta * c`` far outside exp range are safe.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import CostMatrix, IntensityMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SIMParams:
    alpha: float
    beta: float
    origin_offsets: Optional[np.ndarray] = None
    max_value: Optional[float] = None  # support clipping, None means unclipped

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("alpha and beta must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.origin_offsets is not None:
            o = np.array(self.origin_offsets, dtype=np.float64)
            if not np.all(np.isfinite(o)):
                raise ValueError("origin offsets must be finite")
            object.__setattr__(self, "origin_offsets", o)

    def clipped(self) -> "SIMParams":
        if self.max_value is None:
            return self
        return SIMParams(min(self.alpha, self.max_value), min(self.beta, self.max_value),
                         self.origin_offsets, self.max_value)


@dataclass(frozen=True)
class HWParams:
    epsilon: float = 1.0
    kappa: float = 1.0
    delta: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def _cost(C) -> np.ndarray:
    return C.values if isinstance(C, CostMatrix) else np.asarray(C, dtype=np.float64)


def utility(x: np.ndarray, alpha: float, beta: float, cost: np.ndarray,
            origin_offsets: Optional[np.ndarray] = None) -> np.ndarray:
    u = alpha * np.asarray(x, dtype=np.float64)[None, :] - beta * cost
    if origin_offsets is not None:
        u = u + origin_offsets[:, None]
    return u


def log_intensity_total(x, alpha, beta, cost, lambda_total, origin_offsets=None) -> np.ndarray:
    u = utility(x, alpha, beta, cost, origin_offsets)
    return np.log(lambda_total) + u - logsumexp(u)


def log_intensity_singly(x, alpha, beta, cost, row_totals) -> np.ndarray:
    u = utility(x, alpha, beta, cost)
    return np.log(row_totals)[:, None] + u - logsumexp(u, axis=1, keepdims=True)


_TINY = np.finfo(np.float64).tiny


def _positive(log_values: np.ndarray) -> IntensityMatrix:
    # entries that underflow are held at the smallest normal float so the
    # matrix stays strictly positive
    return IntensityMatrix(np.maximum(np.exp(log_values), _TINY))


def intensity_total(x, params: SIMParams, C, lambda_total: float) -> IntensityMatrix:
    """Totally constrained intensity: Lam_ij proportional to exp(o_i + alpha x_j - beta c_ij)."""
    if not lambda_total > 0:
        raise ValueError("lambda_total must be positive")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("log attraction x must be finite")
    p = params.clipped()
    return _positive(log_intensity_total(x, p.alpha, p.beta, _cost(C), lambda_total, p.origin_offsets))


def intensity_singly(x, params: SIMParams, C, row_totals) -> IntensityMatrix:
    """Production-constrained intensity: each row split by exp(alpha x_j - beta c_ij)."""
    row_totals = np.asarray(row_totals, dtype=np.float64)
    if (row_totals <= 0).any():
        raise ValueError("row totals must be positive")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("log attraction x must be finite")
    p = params.clipped()
    return _positive(log_intensity_singly(x, p.alpha, p.beta, _cost(C), row_totals))


@dataclass
class IPFResult:
    log_values: np.ndarray
    converged: bool
    residual: float
    iterations: int

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)


def _safe_log(v):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(v, dtype=np.float64))


def ipf_log(log_seed: np.ndarray, row_targets, col_targets, tol: float = 1e-8,
            max_iter: int = 1000) -> IPFResult:
    """Iterative proportional fitting of ``exp(log_seed)`` to the target margins.

    Seed entries may be ``-inf`` (structural zeros). The residual is the largest
    margin error relative to the grand total.
    """
    log_seed = np.asarray(log_seed, dtype=np.float64)
    rows = np.asarray(row_targets, dtype=np.float64)
    cols = np.asarray(col_targets, dtype=np.float64)
    log_rows, log_cols = _safe_log(rows), _safe_log(cols)
    scale = max(rows.sum(), 1e-300)
    a = np.zeros(rows.shape)
    b = np.zeros(cols.shape)
    residual = np.inf
    it = 0
    with np.errstate(invalid="ignore", divide="ignore"):
        for it in range(1, max_iter + 1):
            lse = logsumexp(log_seed + b[None, :], axis=1)
            a = np.where(rows > 0, log_rows - lse, -np.inf)
            lse = logsumexp(log_seed + a[:, None], axis=0)
            b = np.where(cols > 0, log_cols - lse, -np.inf)
            fitted = np.exp(log_seed + a[:, None] + b[None, :])
            fitted = np.nan_to_num(fitted, nan=0.0, posinf=np.inf)
            residual = max(np.abs(fitted.sum(axis=1) - rows).max(),
                           np.abs(fitted.sum(axis=0) - cols).max()) / scale
            if residual < tol:
                break
    log_values = log_seed + a[:, None] + b[None, :]
    log_values = np.where(np.isnan(log_values), -np.inf, log_values)
    return IPFResult(log_values, bool(residual < tol), float(residual), it)


def intensity_doubly_ipf(x, params: SIMParams, C, row_totals, col_totals,
                         tol: float = 1e-8, max_iter: int = 1000) -> tuple[IntensityMatrix, IPFResult]:
    """Doubly constrained intensity fitted by IPF on the seed exp(alpha x_j - beta c_ij).

    Non-convergence is reported through the returned result (and a warning),
    not raised.
    """
    rows = np.asarray(row_totals, dtype=np.float64)
    cols = np.asarray(col_totals, dtype=np.float64)
    if (rows <= 0).any() or (cols <= 0).any():
        raise ValueError("margin targets must be positive")
    if abs(rows.sum() - cols.sum()) > 1e-9 * max(rows.sum(), cols.sum()):
        raise ValueError(f"row targets sum to {rows.sum()} but column targets sum to {cols.sum()}")
    p = params.clipped()
    seed = utility(np.asarray(x, dtype=np.float64), p.alpha, p.beta, _cost(C))
    res = ipf_log(seed, rows, cols, tol=tol, max_iter=max_iter)
    if not res.converged:
        warnings.warn(f"IPF stopped after {res.iterations} iterations with residual {res.residual:.3e}",
                      RuntimeWarning, stacklevel=2)
    return IntensityMatrix(res.values), res


def compute_kappa(lambda_total: float, delta: float, x) -> float:
    """Job competition parameter (Lam_++ + delta J) / sum_j exp(x_j)."""
    x = np.asarray(x, dtype=np.float64)
    return float((lambda_total + delta * x.size) / np.exp(logsumexp(x)))


def odds_ratios(lam: IntensityMatrix) -> np.ndarray:
    return np.exp(lam.log_odds_ratio())


class IntensityModel:
    """Totally or singly constrained intensity as a function of (x, alpha, beta).

    ``jvp`` propagates tangents of x with respect to (alpha, beta) and adds the
    direct dependence on alpha and beta, returning ``(lam, dlam)`` with
    ``dlam`` of shape ``(2, I, J)``.
    """

    def __init__(self, kind: str, cost, lambda_total: Optional[float] = None,
                 row_totals=None, origin_offsets=None):
        if kind not in ("total", "singly"):
            raise ValueError(f"unknown intensity model {kind!r}")
        self.kind = kind
        self.cost = _cost(cost)
        self.origin_offsets = None if origin_offsets is None else np.asarray(origin_offsets, dtype=np.float64)
        if kind == "total":
            if lambda_total is None or not lambda_total > 0:
                raise ValueError("totally constrained model needs a positive lambda_total")
            self.lambda_total = float(lambda_total)
            self.row_totals = None
        else:
            if row_totals is None:
                raise ValueError("singly constrained model needs row totals")
            self.row_totals = np.asarray(row_totals, dtype=np.float64)
            if (self.row_totals <= 0).any():
                raise ValueError("row totals must be positive")
            self.lambda_total = float(self.row_totals.sum())
            if self.origin_offsets is not None:
                raise ValueError("origin offsets are only supported by the totally constrained model")

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape

    def log_intensity(self, x, alpha: float, beta: float) -> np.ndarray:
        if self.kind == "total":
            return log_intensity_total(x, alpha, beta, self.cost, self.lambda_total, self.origin_offsets)
        return log_intensity_singly(x, alpha, beta, self.cost, self.row_totals)

    def __call__(self, x, alpha: float, beta: float) -> np.ndarray:
        return np.exp(self.log_intensity(x, alpha, beta))

    def jvp(self, x, dx, alpha: float, beta: float, dtheta=(1.0, 1.0)):
        """Log intensity and its derivative along each of the two parameter directions.

        Returns ``(log_lam, dlog_lam)``. ``dtheta`` scales the direct
        dependence on (alpha, beta); a zero entry freezes that parameter (used
        for support clipping).
        """
        log_lam = self.log_intensity(x, alpha, beta)
        du = alpha * np.asarray(dx)[:, None, :] * np.ones((1,) + self.cost.shape)
        du[0] += dtheta[0] * np.asarray(x)[None, :]
        du[1] -= dtheta[1] * self.cost
        if self.kind == "total":
            p = np.exp(log_lam - np.log(self.lambda_total))
            mean = np.einsum("ij,kij->k", p, du)[:, None, None]
        else:
            p = np.exp(log_lam - np.log(self.row_totals)[:, None])
            mean = np.einsum("ij,kij->ki", p, du)[:, :, None]
        return log_lam, du - mean
