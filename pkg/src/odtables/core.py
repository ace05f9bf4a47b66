"""Domain types for origin-destination tables and their constraints.

Cell indices are 0-based everywhere inside the package. File formats and CLI
output use 1-based indices; conversion happens in :mod:`odtables.io`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


class ConstraintError(ValueError):
    """Raised for inconsistent or unsupported constraint sets."""


class Tractability(enum.Enum):
    TRACTABLE = "tractable"
    INTRACTABLE = "intractable"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContingencyTable:
    """I x J table of non-negative integer trip counts."""

    cells: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.cells)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or not np.array_equal(raw, np.round(raw)):
                raise ValueError("table cells must be integers")
        cells = np.array(raw, dtype=np.int64, copy=True)
        if cells.ndim != 2 or 0 in cells.shape:
            raise ValueError(f"table must be a non-empty 2-d array, got shape {cells.shape}")
        if (cells < 0).any():
            raise ValueError("table cells must be non-negative")
        object.__setattr__(self, "cells", _frozen(cells))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    @property
    def row_sums(self) -> np.ndarray:
        return self.cells.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.cells.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.cells.sum())

    def __eq__(self, other):
        if not isinstance(other, ContingencyTable):
            return NotImplemented
        return np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.cells.shape, self.cells.tobytes()))


@dataclass(frozen=True)
class IntensityMatrix:
    """I x J matrix of strictly positive expected trip counts."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or 0 in values.shape:
            raise ValueError(f"intensity must be a non-empty 2-d array, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or (values <= 0).any():
            raise ValueError("intensity entries must be finite and strictly positive")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.values.sum(axis=0)

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def log_odds_ratio(self) -> np.ndarray:
        """log of Lam_ij Lam_++ / (Lam_i+ Lam_+j)."""
        logv = np.log(self.values)
        return (logv + np.log(self.total)
                - np.log(self.row_sums)[:, None] - np.log(self.col_sums)[None, :])


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ValueError("cost matrix must be 2-d")
        if not np.all(np.isfinite(values)) or (values < 0).any():
            raise ValueError("cost entries must be finite and non-negative")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _int_vector(values, name: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ConstraintError(f"{name} must be a 1-d vector")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ConstraintError(f"{name} must contain integers")
    arr = arr.astype(np.int64)
    if (arr < 0).any():
        raise ConstraintError(f"{name} must be non-negative")
    return _frozen(arr)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Fixed summary statistics a sampled table must reproduce.

    An empty set means unconstrained (independent Poisson) sampling.
    ``fixed_cells`` holds ``(i, j, value)`` triples with 0-based indices.
    """

    total: Optional[int] = None
    row_sums: Optional[np.ndarray] = None
    col_sums: Optional[np.ndarray] = None
    fixed_cells: tuple = ()
    symmetric: bool = False

    def __post_init__(self):
        if self.total is not None:
            if int(self.total) != self.total or self.total < 0:
                raise ConstraintError("total must be a non-negative integer")
            object.__setattr__(self, "total", int(self.total))
        object.__setattr__(self, "row_sums", _int_vector(self.row_sums, "row_sums"))
        object.__setattr__(self, "col_sums", _int_vector(self.col_sums, "col_sums"))
        cells = []
        seen = set()
        for item in self.fixed_cells:
            i, j, v = (int(x) for x in item)
            if (i, j) in seen:
                raise ConstraintError(f"duplicate fixed cell ({i}, {j})")
            if v < 0:
                raise ConstraintError(f"fixed cell ({i}, {j}) has negative value {v}")
            seen.add((i, j))
            cells.append((i, j, v))
        object.__setattr__(self, "fixed_cells", tuple(sorted(cells)))
        object.__setattr__(self, "symmetric", bool(self.symmetric))
        if self.symmetric:
            # a symmetric table has equal row and column sums
            if self.col_sums is None and self.row_sums is not None:
                object.__setattr__(self, "col_sums", self.row_sums)
            elif self.row_sums is None and self.col_sums is not None:
                object.__setattr__(self, "row_sums", self.col_sums)

    @classmethod
    def from_table(cls, table: ContingencyTable, *, total=True, rows=True, cols=True,
                   cells: Iterable[tuple[int, int]] = (), symmetric=False) -> "ConstraintSet":
        """Constraints that ``table`` satisfies by construction."""
        t = table.cells
        return cls(
            total=table.total if total else None,
            row_sums=t.sum(axis=1) if rows else None,
            col_sums=t.sum(axis=0) if cols else None,
            fixed_cells=tuple((i, j, int(t[i, j])) for i, j in cells),
            symmetric=symmetric,
        )

    @property
    def is_empty(self) -> bool:
        return (self.total is None and self.row_sums is None and self.col_sums is None
                and not self.fixed_cells and not self.symmetric)

    @property
    def has_both_margins(self) -> bool:
        return self.row_sums is not None and self.col_sums is not None

    def implied_total(self) -> Optional[int]:
        if self.total is not None:
            return self.total
        if self.row_sums is not None:
            return int(self.row_sums.sum())
        if self.col_sums is not None:
            return int(self.col_sums.sum())
        return None

    def fixed_mask(self, shape: tuple[int, int]) -> np.ndarray:
        mask = np.zeros(shape, dtype=bool)
        for i, j, _ in self.fixed_cells:
            mask[i, j] = True
        return mask

    def fixed_values(self, shape: tuple[int, int]) -> np.ndarray:
        vals = np.zeros(shape, dtype=np.int64)
        for i, j, v in self.fixed_cells:
            vals[i, j] = v
        return vals

    def __eq__(self, other):
        if not isinstance(other, ConstraintSet):
            return NotImplemented
        same = lambda a, b: (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b))
        return (self.total == other.total and same(self.row_sums, other.row_sums)
                and same(self.col_sums, other.col_sums)
                and self.fixed_cells == other.fixed_cells and self.symmetric == other.symmetric)

    __hash__ = None

    def tag(self) -> str:
        parts = []
        if self.total is not None:
            parts.append("total")
        if self.row_sums is not None:
            parts.append("rows")
        if self.col_sums is not None:
            parts.append("cols")
        if self.fixed_cells:
            parts.append(f"cells{len(self.fixed_cells)}")
        if self.symmetric:
            parts.append("sym")
        return "+".join(parts) or "none"


@dataclass(frozen=True)
class ObservedData:
    """Observations available to the calibration loss."""

    y: Optional[np.ndarray] = None
    dist_origin: Optional[np.ndarray] = None
    ground_truth: Optional[ContingencyTable] = None

    def __post_init__(self):
        for name in ("y", "dist_origin"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(np.array(v, dtype=np.float64)))

    def check_shape(self, I: int, J: int) -> None:
        if self.y is not None and self.y.shape != (J,):
            raise ValueError(f"y has length {self.y.shape}, expected {J}")
        if self.dist_origin is not None and self.dist_origin.shape != (I,):
            raise ValueError(f"dist_origin has length {self.dist_origin.shape}, expected {I}")
        if self.ground_truth is not None and self.ground_truth.shape != (I, J):
            raise ValueError(f"ground truth has shape {self.ground_truth.shape}, expected {(I, J)}")


def summary_statistics(table: ContingencyTable) -> tuple[np.ndarray, np.ndarray, int]:
    """Row sums, column sums and grand total, in exact integer arithmetic."""
    t = table.cells
    return t.sum(axis=1), t.sum(axis=0), int(t.sum())


def validate_constraints(constraints: ConstraintSet, I: int, J: int) -> Tractability:
    """Check consistency and classify the sampling route.

    At most one margin family (plus total and fixed cells) admits direct
    sampling; both margins, or a symmetry requirement, need the Markov chain.
    """
    c = constraints
    if c.row_sums is not None and c.row_sums.shape != (I,):
        raise ConstraintError(f"row_sums has length {len(c.row_sums)}, expected {I}")
    if c.col_sums is not None and c.col_sums.shape != (J,):
        raise ConstraintError(f"col_sums has length {len(c.col_sums)}, expected {J}")
    if c.has_both_margins and c.row_sums.sum() != c.col_sums.sum():
        raise ConstraintError(
            f"row sums total {int(c.row_sums.sum())} but column sums total {int(c.col_sums.sum())}")
    if c.total is not None:
        for name, m in (("row_sums", c.row_sums), ("col_sums", c.col_sums)):
            if m is not None and m.sum() != c.total:
                raise ConstraintError(f"{name} total {int(m.sum())} differs from total {c.total}")
    if c.symmetric:
        if I != J:
            raise ConstraintError(f"symmetric constraint needs a square table, got {I}x{J}")
        if c.row_sums is None and c.col_sums is None:
            raise ConstraintError("symmetric constraint needs row or column sums")
        if c.has_both_margins and not np.array_equal(c.row_sums, c.col_sums):
            raise ConstraintError("symmetric constraint needs equal row and column sums")
    fixed = np.zeros((I, J), dtype=np.int64)
    for i, j, v in c.fixed_cells:
        if not (0 <= i < I and 0 <= j < J):
            raise ConstraintError(f"fixed cell ({i}, {j}) outside a {I}x{J} table")
        fixed[i, j] = v
    if c.symmetric:
        mask = c.fixed_mask((I, J))
        if not np.array_equal(mask, mask.T) or not np.array_equal(fixed, fixed.T):
            raise ConstraintError("symmetric constraint needs fixed cells mirrored across the diagonal")
    if c.row_sums is not None and (fixed.sum(axis=1) > c.row_sums).any():
        raise ConstraintError("fixed cells exceed a row sum")
    if c.col_sums is not None and (fixed.sum(axis=0) > c.col_sums).any():
        raise ConstraintError("fixed cells exceed a column sum")
    total = c.implied_total()
    if total is not None and fixed.sum() > total:
        raise ConstraintError("fixed cells exceed the table total")

    if c.has_both_margins or c.symmetric:
        return Tractability.INTRACTABLE
    return Tractability.TRACTABLE


def is_admissible(table: ContingencyTable, constraints: ConstraintSet) -> bool:
    """True iff every declared statistic of ``table`` matches exactly."""
    I, J = table.shape
    c = constraints
    if c.row_sums is not None and c.row_sums.shape != (I,):
        raise ValueError(f"row_sums length {len(c.row_sums)} does not match table rows {I}")
    if c.col_sums is not None and c.col_sums.shape != (J,):
        raise ValueError(f"col_sums length {len(c.col_sums)} does not match table cols {J}")
    t = table.cells
    if c.total is not None and int(t.sum()) != c.total:
        return False
    if c.row_sums is not None and not np.array_equal(t.sum(axis=1), c.row_sums):
        return False
    if c.col_sums is not None and not np.array_equal(t.sum(axis=0), c.col_sums):
        return False
    for i, j, v in c.fixed_cells:
        if not (0 <= i < I and 0 <= j < J):
            raise ValueError(f"fixed cell ({i}, {j}) outside a {I}x{J} table")
        if t[i, j] != v:
            return False
    if c.symmetric and (I != J or not np.array_equal(t, t.T)):
        return False
    return True


def margins_as_constraints(table: ContingencyTable) -> ConstraintSet:
    rows, cols, total = summary_statistics(table)
    return ConstraintSet(total=total, row_sums=rows, col_sums=cols)


def random_fixed_cells(table: ContingencyTable, fraction: float,
                       rng: np.random.Generator) -> tuple:
    """Pick ``fraction`` of the cells uniformly at random and pin them to their values."""
    I, J = table.shape
    n = int(round(fraction * I * J))
    flat = np.sort(rng.choice(I * J, size=n, replace=False))
    return tuple((int(k // J), int(k % J), int(table.cells.flat[k])) for k in flat)


__all__: Sequence[str] = [
    "ConstraintError", "Tractability", "ContingencyTable", "IntensityMatrix", "CostMatrix",
    "ConstraintSet", "ObservedData", "summary_statistics", "validate_constraints",
    "is_admissible", "margins_as_constraints", "random_fixed_cells",
]
