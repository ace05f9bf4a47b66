"""Gibbs sampler on a two-margin fiber driven by a Markov basis.

Each step picks a move ``f`` uniformly, finds the integer interval of ``eta``
keeping ``T + eta f`` non-negative, and draws ``eta`` from the target's exact
conditional along that line. Row and column sums are untouched, so only the
cells of ``f`` enter the conditional.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from ..core import ConstraintSet, ContingencyTable, IntensityMatrix, is_admissible
from .basis import MarkovBasis


class ChainInvariantError(RuntimeError):
    pass


class ChainState:
    """Mutable state of one chain: current table, basis, stream and counters."""

    def __init__(self, table: ContingencyTable, basis: MarkovBasis, rng: np.random.Generator,
                 constraints: Optional[ConstraintSet] = None, Lam=None):
        if constraints is not None and not is_admissible(table, constraints):
            raise ChainInvariantError("initial table is not admissible")
        self.cells = np.array(table.cells, dtype=np.int64)
        self.basis = basis
        self.rng = rng
        self.constraints = constraints
        self.step = 0
        self.degenerate = 0
        self.log_odds: Optional[np.ndarray] = None
        self._buf = None
        if Lam is not None:
            self.set_intensity(Lam)

    def set_intensity(self, Lam=None, log_lam=None) -> None:
        """Recompute the log odds ratios for a new intensity (O(IJ)).

        ``log_lam`` may be given instead of ``Lam`` when entries underflow.
        """
        if log_lam is None:
            lam = np.asarray(getattr(Lam, "values", Lam), dtype=np.float64)
            self.log_odds = (np.log(lam) + np.log(lam.sum())
                             - np.log(lam.sum(axis=1))[:, None] - np.log(lam.sum(axis=0))[None, :])
        else:
            log_lam = np.asarray(log_lam, dtype=np.float64)
            if self._buf is None or self._buf[0].shape != log_lam.shape:
                self._buf = (np.empty_like(log_lam), np.empty_like(log_lam))
            self.log_odds = log_odds_from_log(log_lam, *self._buf)

    @property
    def table(self) -> ContingencyTable:
        return ContingencyTable(self.cells)


def log_odds_from_log(log_lam: np.ndarray, out: Optional[np.ndarray] = None,
                      work: Optional[np.ndarray] = None) -> np.ndarray:
    """log omega from log Lam with one exp pass; ``out`` and ``work`` are optional buffers."""
    if out is None:
        out = np.empty_like(log_lam)
    if work is None:
        work = np.empty_like(log_lam)
    m = log_lam.max()
    np.subtract(log_lam, m, out=work)
    np.exp(work, out=work)
    rows, cols = work.sum(axis=1), work.sum(axis=0)
    if rows.all():
        log_rows = np.log(rows) + m
    else:  # a whole row underflowed after the shift
        log_rows = logsumexp(log_lam, axis=1)
    if cols.all():
        log_cols = np.log(cols) + m
    else:
        log_cols = logsumexp(log_lam, axis=0)
    np.add(log_lam, np.log(rows.sum()) + m, out=out)
    out -= log_rows[:, None]
    out -= log_cols[None, :]
    return out


def eta_support(values: np.ndarray, coefs: np.ndarray) -> tuple[int, int]:
    """Smallest and largest eta with values + eta * coefs >= 0."""
    # moves have at most 8 cells, where plain Python beats small-array numpy
    lo = hi = None
    for v, c in zip(values.tolist(), coefs.tolist()):
        if c > 0:
            b = -(v // c)
            lo = b if lo is None or b > lo else lo
        elif c < 0:
            b = v // -c
            hi = b if hi is None or b < hi else hi
    if lo is None or hi is None:
        raise ChainInvariantError("move must have both positive and negative entries")
    return lo, hi


def line_log_weights(values: np.ndarray, coefs: np.ndarray, log_odds: np.ndarray, etas: np.ndarray):
    """Log target mass of T + eta f for each eta, up to a constant."""
    moved = values[:, None] + coefs[:, None] * etas[None, :]
    return (-gammaln(moved + 1.0) + (coefs * log_odds)[:, None] * etas[None, :]).sum(axis=0)


def gibbs_mb_step(state: ChainState, Lam=None) -> ChainState:
    """Advance the chain by one Gibbs move (in place) and return it.

    Passing ``Lam`` refreshes the odds ratios first. Random numbers consumed:
    one move draw from the basis, then one uniform when the eta interval has
    more than one point.
    """
    if Lam is not None:
        state.set_intensity(Lam)
    if state.log_odds is None:
        raise ChainInvariantError("chain has no intensity")
    rows, cols, coefs = state.basis.sample(state.rng)
    values = state.cells[rows, cols]
    lo, hi = eta_support(values, coefs)
    if lo > 0 or hi < 0:
        raise ChainInvariantError("eta = 0 is not feasible; current table is negative")
    state.step += 1
    if lo == hi:
        state.degenerate += 1
        return state
    etas = np.arange(lo, hi + 1)
    logw = line_log_weights(values, coefs, state.log_odds[rows, cols], etas)
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    k = int(np.searchsorted(cdf, state.rng.random() * cdf[-1], side="right"))
    eta = int(etas[min(k, etas.size - 1)])
    if eta:
        state.cells[rows, cols] += eta * coefs  # move cells are distinct
    return state


def run_chain(state: ChainState, n_steps: int, Lam=None, check: bool = False):
    """Yield a copy of the table after every step."""
    if Lam is not None:
        state.set_intensity(Lam)
    for _ in range(n_steps):
        gibbs_mb_step(state)
        if check and state.constraints is not None and not is_admissible(state.table, state.constraints):
            raise ChainInvariantError(f"chain left the fiber at step {state.step}")
        yield state.cells.copy()
