"""Exhaustive enumeration of small fibers, used as a test oracle."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import ConstraintError, ConstraintSet, ContingencyTable, validate_constraints


class FiberTooLarge(RuntimeError):
    pass


def _infer_shape(c: ConstraintSet, shape) -> tuple[int, int]:
    if shape is not None:
        return tuple(shape)
    if c.row_sums is None or c.col_sums is None:
        raise ConstraintError("shape must be given unless both margins are present")
    return len(c.row_sums), len(c.col_sums)


def enumerate_fiber(constraints: ConstraintSet, max_size: int = 100_000,
                    shape: Optional[tuple[int, int]] = None) -> list[ContingencyTable]:
    """Every admissible table, in row-major lexicographic order.

    Cells are filled row by row; each free cell ranges up to the smallest
    remaining row, column or grand total. Raises :class:`FiberTooLarge` once
    more than ``max_size`` tables have been produced.
    """
    c = constraints
    I, J = _infer_shape(c, shape)
    validate_constraints(c, I, J)
    total = c.implied_total()
    if c.row_sums is None and total is None:
        raise ConstraintError("fiber is infinite without row sums or a total")

    fixed = {(i, j): v for i, j, v in c.fixed_cells}
    rows_left = None if c.row_sums is None else c.row_sums.astype(np.int64).copy()
    cols_left = None if c.col_sums is None else c.col_sums.astype(np.int64).copy()
    total_left = [total]
    # last free cell of each row, where a row sum forces the value
    last_free = {}
    for i in range(I):
        free_j = [j for j in range(J) if (i, j) not in fixed]
        last_free[i] = free_j[-1] if free_j else None

    table = np.zeros((I, J), dtype=np.int64)
    out: list[ContingencyTable] = []

    def bound() -> int:
        return total_left[0] if total_left[0] is not None else np.iinfo(np.int64).max

    def place(i, j, v) -> bool:
        if v < 0 or v > bound():
            return False
        if rows_left is not None and v > rows_left[i]:
            return False
        if cols_left is not None and v > cols_left[j]:
            return False
        table[i, j] = v
        if rows_left is not None:
            rows_left[i] -= v
        if cols_left is not None:
            cols_left[j] -= v
        if total_left[0] is not None:
            total_left[0] -= v
        return True

    def unplace(i, j):
        v = table[i, j]
        if rows_left is not None:
            rows_left[i] += v
        if cols_left is not None:
            cols_left[j] += v
        if total_left[0] is not None:
            total_left[0] += v
        table[i, j] = 0

    def row_closed(i) -> bool:
        return rows_left is None or rows_left[i] == 0

    def finished() -> bool:
        if cols_left is not None and cols_left.any():
            return False
        if total_left[0] is not None and total_left[0] != 0:
            return False
        return True

    def recurse(k: int):
        if k == I * J:
            if finished():
                if len(out) >= max_size:
                    raise FiberTooLarge(f"fiber has more than {max_size} tables")
                out.append(ContingencyTable(table.copy()))
            return
        i, j = divmod(k, J)
        if c.symmetric and j < i:
            choices = [int(table[j, i])]
        elif (i, j) in fixed:
            choices = [fixed[(i, j)]]
        elif rows_left is not None and last_free[i] == j:
            choices = [int(rows_left[i])]
        else:
            hi = bound()
            if rows_left is not None:
                hi = min(hi, int(rows_left[i]))
            if cols_left is not None:
                hi = min(hi, int(cols_left[j]))
            choices = range(hi + 1)
        for v in choices:
            if place(i, j, v):
                if j < J - 1 or row_closed(i):
                    recurse(k + 1)
                unplace(i, j)

    recurse(0)
    return out


def fiber_index(tables: list[ContingencyTable]) -> dict[bytes, int]:
    """Map from a table's raw bytes to its position in ``tables``."""
    return {t.cells.tobytes(): k for k, t in enumerate(tables)}
