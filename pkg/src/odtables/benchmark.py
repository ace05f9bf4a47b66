"""Per-iteration timing of the intensity-learning and table-sampling steps against IJ."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import stats

from .calibration import LossConfig, Pipeline, nn_init, adam_step, AdamState
from .core import ConstraintSet, ObservedData, random_fixed_cells
from .harris_wilson import SolverConfig
from .intensity import HWParams, IntensityModel, compute_kappa
from .sampler import TableSampler
from .synthetic import generate_synthetic


@dataclass
class Timing:
    I: int
    J: int
    table_seconds: float  # median per iteration
    intensity_seconds: float

    @property
    def cells(self) -> int:
        return self.I * self.J


@dataclass
class Fit:
    slope: float
    intercept: float
    r2: float


def bench_size(I: int, J: int, N: int = 20, A: int = 1_000_000, fixed_fraction: float = 0.5,
               seed: int = 0, rows: bool = True, cols: bool = True) -> Timing:
    """Median wall time of N iterations of each step for one table size.

    The ground truth table itself serves as the chain's starting point, so the
    timed loop excludes table initialisation.
    """
    rng = np.random.default_rng(seed)
    lam, truth = generate_synthetic(I, J, A, rng)
    cells = random_fixed_cells(truth, fixed_fraction, rng) if fixed_fraction else ()
    t = truth.cells
    c = ConstraintSet(total=None if (rows or cols) else truth.total,
                      row_sums=t.sum(axis=1) if rows else None,
                      col_sums=t.sum(axis=0) if cols else None, fixed_cells=cells)
    sampler = TableSampler(c, (I, J), rng, initial=truth)
    log_lam = np.log(lam.values)

    cost = rng.random((I, J))
    y = rng.normal(0.0, 0.1, J)
    model = IntensityModel("total", cost, lambda_total=float(A))
    hw = HWParams(kappa=compute_kappa(A, 0.0, y), sigma=0.0)
    pipe = Pipeline(model, hw, SolverConfig(), LossConfig(scheme="joint"), ObservedData(y))
    W = nn_init(rng, J, 20)
    adam = AdamState.zeros(W.size)

    table_t, lam_t = [], []
    T_prev = truth.cells
    for _ in range(N):
        s = time.perf_counter()
        res = pipe.run(W, None, T_prev)
        W, adam = adam_step(W, res.grad, adam)
        lam_t.append(time.perf_counter() - s)
        s = time.perf_counter()
        T_prev = sampler.step(log_lam=log_lam)
        table_t.append(time.perf_counter() - s)
    return Timing(I, J, float(np.median(table_t)), float(np.median(lam_t)))


def benchmark(sizes: Iterable[tuple[int, int]], N: int = 20, **kwargs) -> list[Timing]:
    return [bench_size(I, J, N, **kwargs) for I, J in sizes]


def linear_fit(timings: list[Timing], which: str = "table") -> Optional[Fit]:
    if len(timings) < 2:
        return None
    x = np.array([t.cells for t in timings], dtype=np.float64)
    y = np.array([getattr(t, f"{which}_seconds") for t in timings])
    r = stats.linregress(x, y)
    return Fit(float(r.slope), float(r.intercept), float(r.rvalue ** 2))


def write_timings(path, timings: list[Timing]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["I", "J", "cells", "table_seconds", "intensity_seconds"])
        for t in timings:
            w.writerow([t.I, t.J, t.cells, repr(t.table_seconds), repr(t.intensity_seconds)])
        for which in ("table", "intensity"):
            fit = linear_fit(timings, which)
            if fit is not None:
                w.writerow([f"# {which} fit", "slope", repr(fit.slope), "r2", repr(fit.r2)])
