"""Euler-Maruyama integration of the Harris-Wilson destination dynamics.

The state is the log attraction ``x = log z``. In these coordinates the
Stratonovich system has additive noise::

    dx_j = epsilon (Lam_+j - kappa exp(x_j) + delta) dt + sigma dB_j

so positivity of ``z`` holds by construction. Each step draws exactly J
standard normals, in destination order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .intensity import HWParams


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.001
    tau: int = 1
    seed: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.dt <= 1):
            raise ValueError(f"dt must lie in (0, 1], got {self.dt}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau}")


def hw_drift(x, col_margins, hw: HWParams) -> np.ndarray:
    """Per-destination drift epsilon (Lam_+j - kappa e^{x_j} + delta)."""
    x = np.asarray(x, dtype=np.float64)
    return hw.epsilon * (np.asarray(col_margins, dtype=np.float64) - hw.kappa * np.exp(x) + hw.delta)


def draw_noise(rng: np.random.Generator, tau: int, J: int) -> np.ndarray:
    return rng.standard_normal((tau, J))


def _col_sums(lam) -> np.ndarray:
    values = getattr(lam, "values", lam)
    return np.asarray(values).sum(axis=0)


def hw_solve(x0, hw: HWParams, intensity_fn: Callable, cfg: SolverConfig,
             rng: Optional[np.random.Generator] = None,
             noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Advance ``x0`` by ``cfg.tau`` Euler-Maruyama steps.

    ``intensity_fn`` maps a log-attraction vector to an intensity matrix and is
    re-evaluated every step. ``noise`` (shape ``(tau, J)``) overrides the draws
    from ``rng``; with ``sigma == 0`` no random numbers are consumed.
    """
    x = np.array(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise SolverError("initial state is not finite")
    J = x.size
    if hw.sigma > 0 and noise is None:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        noise = draw_noise(rng, cfg.tau, J)
    sqdt = np.sqrt(cfg.dt)
    for t in range(cfg.tau):
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + hw_drift(x, _col_sums(intensity_fn(x)), hw) * cfg.dt
            if hw.sigma > 0:
                x = x + hw.sigma * sqdt * noise[t]
        if not np.all(np.isfinite(x)):
            raise SolverError(f"state became non-finite at step {t + 1}")
    return x


def hw_solve_tangent(x0, hw: HWParams, intensity_jvp: Callable, cfg: SolverConfig,
                     noise: Optional[np.ndarray] = None, x0_tangent: Optional[np.ndarray] = None):
    """Same trajectory as :func:`hw_solve` with forward-mode tangents.

    ``intensity_jvp(x, dx)`` returns ``(log_lam, dlog_lam)`` where ``dx`` has
    shape ``(K, J)`` and ``dlog_lam`` shape ``(K, I, J)`` for K parameter
    directions.
    Returns ``(x, dx)``.
    """
    x = np.array(x0, dtype=np.float64)
    J = x.size
    if x0_tangent is None:
        raise ValueError("x0_tangent is required (zeros when x0 does not depend on the parameters)")
    dx = np.array(x0_tangent, dtype=np.float64)
    sqdt = np.sqrt(cfg.dt)
    for t in range(cfg.tau):
        log_lam, dlog_lam = intensity_jvp(x, dx)
        lam = np.exp(log_lam)
        with np.errstate(over="ignore", invalid="ignore"):
            ez = np.exp(x)
            drift = hw.epsilon * (lam.sum(axis=0) - hw.kappa * ez + hw.delta)
            ddrift = hw.epsilon * ((lam[None] * dlog_lam).sum(axis=1) - hw.kappa * ez[None, :] * dx)
            x = x + drift * cfg.dt
            dx = dx + ddrift * cfg.dt
            if hw.sigma > 0:
                x = x + hw.sigma * sqdt * noise[t]
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(dx)):
            raise SolverError(f"state became non-finite at step {t + 1}")
    return x, dx


def solve_to_equilibrium(x0, hw: HWParams, intensity_fn: Callable, dt: float = 0.01,
                         tol: float = 1e-10, max_steps: int = 1_000_000) -> np.ndarray:
    """Deterministic iteration until the sup-norm of the drift drops below ``tol``."""
    if hw.sigma != 0:
        raise ValueError("equilibrium iteration needs sigma == 0")
    x = np.array(x0, dtype=np.float64)
    cfg = SolverConfig(dt=dt, tau=1)
    for _ in range(max_steps):
        d = hw_drift(x, _col_sums(intensity_fn(x)), hw)
        if np.abs(d).max() < tol:
            return x
        x = hw_solve(x, hw, intensity_fn, cfg)
    raise SolverError(f"drift did not fall below {tol} within {max_steps} steps")
