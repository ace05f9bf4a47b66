"""Direct samplers for tractable constraint sets.

One logical draw consumes, in order: nothing for fixed cells, then either one
Poisson array over the free cells (no margins), one multinomial over the free
cells (total only), or one multinomial per row / column (row or column sums).
Batched draws consume the same stream as repeated single draws.
"""

from __future__ import annotations

import numpy as np

from ..core import (ConstraintError, ConstraintSet, ContingencyTable, Tractability,
                    validate_constraints)


def _lam(Lam) -> np.ndarray:
    return np.asarray(getattr(Lam, "values", Lam), dtype=np.float64)


def sample_unconstrained(Lam, rng: np.random.Generator) -> ContingencyTable:
    """Independent Poisson(Lam_ij) cells."""
    return ContingencyTable(rng.poisson(_lam(Lam)))


class ClosedFormSampler:
    """Precomputed allocation probabilities for one (intensity, constraints) pair."""

    def __init__(self, Lam, constraints: ConstraintSet):
        lam = _lam(Lam)
        I, J = lam.shape
        if validate_constraints(constraints, I, J) is not Tractability.TRACTABLE:
            raise ConstraintError("closed-form sampling needs a tractable constraint set")
        c = constraints
        self.shape = (I, J)
        self.fixed = c.fixed_values((I, J))
        self.free = ~c.fixed_mask((I, J))
        free_lam = np.where(self.free, lam, 0.0)
        self.lam = free_lam

        if c.row_sums is not None:
            self.mode = "rows"
            self._setup_axis(free_lam, c.row_sums - self.fixed.sum(axis=1), "row")
        elif c.col_sums is not None:
            self.mode = "cols"
            self._setup_axis(free_lam.T, c.col_sums - self.fixed.sum(axis=0), "column")
        elif c.total is not None:
            self.mode = "total"
            remaining = c.total - int(self.fixed.sum())
            if remaining < 0:
                raise ConstraintError("fixed cells exceed the table total")
            mass = free_lam.sum()
            if mass == 0 and remaining > 0:
                raise ConstraintError("no free cells left to carry the remaining total")
            self.n = remaining
            self.p = (free_lam / mass).ravel() if mass > 0 else np.full(I * J, 1.0 / (I * J))
        else:
            self.mode = "poisson"

    def _setup_axis(self, free_lam: np.ndarray, remaining: np.ndarray, name: str):
        if (remaining < 0).any():
            raise ConstraintError(f"fixed cells exceed a {name} sum")
        mass = free_lam.sum(axis=1)
        if ((mass == 0) & (remaining > 0)).any():
            raise ConstraintError(f"a {name} has remaining mass but no free cells")
        safe = np.where(mass[:, None] > 0, free_lam / np.where(mass > 0, mass, 1.0)[:, None],
                        1.0 / free_lam.shape[1])
        self.n = remaining
        self.p = safe

    def draw_array(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Raw draws, shape ``(I, J)`` or ``(size, I, J)``."""
        I, J = self.shape
        lead = () if size is None else (size,)
        if self.mode == "poisson":
            free = rng.poisson(self.lam, size=lead + (I, J))
        elif self.mode == "total":
            free = rng.multinomial(self.n, self.p, size=lead).reshape(lead + (I, J))
        elif self.mode == "rows":
            free = rng.multinomial(self.n, self.p, size=lead + (I,))
        else:
            free = np.swapaxes(rng.multinomial(self.n, self.p, size=lead + (J,)), -1, -2)
        return np.where(self.free, free, self.fixed).astype(np.int64)

    def draw(self, rng: np.random.Generator) -> ContingencyTable:
        return ContingencyTable(self.draw_array(rng))


def sample_closed_form(Lam, constraints: ConstraintSet, rng: np.random.Generator) -> ContingencyTable:
    """One draw from the table distribution given a tractable constraint set.

    Fixed cells are subtracted from the margins they belong to and the
    remaining mass is allocated over the free cells with renormalised
    intensities.
    """
    return ClosedFormSampler(Lam, constraints).draw(rng)
