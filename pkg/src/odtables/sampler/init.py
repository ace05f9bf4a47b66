"""Admissible starting tables.

Fixed cells are planted first. The remaining mass is fitted to the residual
margins by IPF on the intensity, floored, and the rounding deficit is repaired
greedily (largest fractional part first), falling back to augmenting paths
when the greedy pass gets stuck.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

import numpy as np

from ..core import (ConstraintError, ConstraintSet, ContingencyTable, is_admissible,
                    validate_constraints)
from ..intensity import ipf_log


def _largest_remainder(weights: np.ndarray, n: int) -> np.ndarray:
    """Integer allocation of ``n`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if n == 0:
        return np.zeros(w.shape, dtype=np.int64)
    if w.sum() <= 0:
        raise ConstraintError("no free cells to allocate remaining mass")
    target = n * w / w.sum()
    base = np.floor(target).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        order = np.argsort(-(target - base), kind="stable")
        base[order[:short]] += 1
    return base


def _augment(T, free, row_def, col_def) -> bool:
    """Route one unit from a row with deficit to a column with deficit.

    Alternates increments on free cells and decrements on positive free cells.
    """
    I, J = T.shape
    starts = np.flatnonzero(row_def > 0)
    prev_col = np.full(J, -1)   # row that reached each column
    prev_row = np.full(I, -1)   # column that reached each row
    seen_r = np.zeros(I, dtype=bool)
    seen_c = np.zeros(J, dtype=bool)
    queue = deque()
    for i in starts:
        seen_r[i] = True
        queue.append(i)
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(free[i] & ~seen_c):
            seen_c[j] = True
            prev_col[j] = i
            if col_def[j] > 0:
                # unwind
                jj = j
                while True:
                    ii = prev_col[jj]
                    T[ii, jj] += 1
                    if prev_row[ii] < 0:
                        row_def[ii] -= 1
                        col_def[j] -= 1
                        return True
                    jprev = prev_row[ii]
                    T[ii, jprev] -= 1
                    jj = jprev
            for i2 in np.flatnonzero(free[:, j] & (T[:, j] > 0) & ~seen_r):
                seen_r[i2] = True
                prev_row[i2] = j
                queue.append(i2)
    return False


def _doubly(lam, fixed, free, rows, cols) -> np.ndarray:
    I, J = lam.shape
    r = rows - fixed.sum(axis=1)
    c = cols - fixed.sum(axis=0)
    if (r < 0).any() or (c < 0).any():
        raise ConstraintError("fixed cells exceed the margins")
    with np.errstate(divide="ignore"):
        seed = np.where(free, np.log(lam), -np.inf)
    fit = ipf_log(seed, r, c, tol=1e-10, max_iter=5000).values
    fit = np.where(free, np.nan_to_num(fit), 0.0)
    T = np.floor(fit).astype(np.int64)
    # floor may still overshoot when IPF has not converged
    T = np.minimum(T, np.minimum(r[:, None], c[None, :]))
    row_def = r - T.sum(axis=1)
    col_def = c - T.sum(axis=0)
    while (row_def < 0).any() or (col_def < 0).any():
        i = int(np.argmin(row_def)) if row_def.min() < 0 else None
        if i is not None:
            j = int(np.argmax(T[i]))
        else:
            j = int(np.argmin(col_def))
            i = int(np.argmax(T[:, j]))
        T[i, j] -= 1
        row_def[i] += 1
        col_def[j] += 1
    frac = np.where(free, fit - np.floor(fit), -1.0)
    order = np.argsort(-frac, axis=None, kind="stable")
    for k in order:
        if row_def.sum() == 0:
            break
        i, j = divmod(int(k), J)
        if not free[i, j]:
            break
        add = min(row_def[i], col_def[j])
        if add > 0:
            T[i, j] += add
            row_def[i] -= add
            col_def[j] -= add
    while row_def.sum() > 0:
        if not _augment(T, free, row_def, col_def):
            raise ConstraintError("constraint system is infeasible")
    return T


def _symmetric(lam, fixed, free, rows) -> np.ndarray:
    n = lam.shape[0]
    sym = np.sqrt(lam * lam.T)
    r = rows - fixed.sum(axis=1)
    if (r < 0).any():
        raise ConstraintError("fixed cells exceed the margins")
    with np.errstate(divide="ignore"):
        seed = np.where(free, np.log(sym), -np.inf)
    fit = np.nan_to_num(ipf_log(seed, r, r, tol=1e-10, max_iter=5000).values)
    fit = np.where(free, 0.5 * (fit + fit.T), 0.0)
    T = np.floor(fit).astype(np.int64)
    T = np.triu(T) + np.triu(T, 1).T
    deficit = r - T.sum(axis=1)
    # remove overshoot symmetrically
    while (deficit < 0).any():
        i = int(np.argmin(deficit))
        j = int(np.argmax(T[i]))
        T[i, j] -= 1
        if i != j:
            T[j, i] -= 1
            deficit[j] += 1
        deficit[i] += 1
    iu, ju = np.triu_indices(n, 1)
    frac = fit[iu, ju] - np.floor(fit[iu, ju])
    for k in np.argsort(-frac, kind="stable"):
        i, j = iu[k], ju[k]
        if free[i, j] and deficit[i] > 0 and deficit[j] > 0:
            add = min(deficit[i], deficit[j])
            T[i, j] += add
            T[j, i] += add
            deficit[i] -= add
            deficit[j] -= add
    for i in np.flatnonzero(deficit):
        if not free[i, i]:
            raise ConstraintError("could not complete a symmetric table: diagonal cell is fixed")
        T[i, i] += deficit[i]
    return T


def init_table(constraints: ConstraintSet, Lam=None, shape: Optional[tuple[int, int]] = None) -> ContingencyTable:
    """An admissible integer table close to the intensity's fitted margins.

    ``Lam=None`` uses a uniform seed (the maximum-entropy starting point).
    """
    c = constraints
    if Lam is not None:
        lam = np.asarray(getattr(Lam, "values", Lam), dtype=np.float64)
        shape = lam.shape
    elif shape is None:
        if c.row_sums is None or c.col_sums is None:
            raise ConstraintError("shape or intensity is required")
        shape = (len(c.row_sums), len(c.col_sums))
    I, J = shape
    if Lam is None:
        lam = np.ones((I, J))
    validate_constraints(c, I, J)
    fixed = c.fixed_values((I, J))
    free = ~c.fixed_mask((I, J))
    if c.symmetric:
        T = _symmetric(lam, fixed, free, c.row_sums)
    elif c.has_both_margins:
        T = _doubly(lam, fixed, free, c.row_sums, c.col_sums)
    elif c.row_sums is not None or c.col_sums is not None:
        by_rows = c.row_sums is not None
        m = lam if by_rows else lam.T
        f, fr = (free, fixed) if by_rows else (free.T, fixed.T)
        targets = (c.row_sums if by_rows else c.col_sums) - fr.sum(axis=1)
        if (targets < 0).any():
            raise ConstraintError("fixed cells exceed the margins")
        T = np.stack([_largest_remainder(np.where(f[k], m[k], 0.0), int(targets[k]))
                      for k in range(m.shape[0])])
        if not by_rows:
            T = T.T
    elif c.total is not None:
        remaining = c.total - int(fixed.sum())
        if remaining < 0:
            raise ConstraintError("fixed cells exceed the total")
        T = _largest_remainder(np.where(free, lam, 0.0).ravel(), remaining).reshape(I, J)
    else:
        T = np.where(free, np.rint(lam), 0).astype(np.int64)
    T = np.where(free, T, fixed)
    table = ContingencyTable(T)
    if not is_admissible(table, c):
        raise ConstraintError("could not construct an admissible table")
    return table
