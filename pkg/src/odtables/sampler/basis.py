"""Markov bases for two-way tables with fixed margins.

The basis consists of the 2x2 corner moves ``+1`` at (i1, j1), (i2, j2) and
``-1`` at (i1, j2), (i2, j1). Moves touching a fixed cell are dropped. In
symmetric mode each move is mirrored across the diagonal, ``f + f^T`` (or ``f``
itself when already symmetric), and duplicates are removed.

For large tables the basis is never materialised: :meth:`MarkovBasis.sample`
draws a uniform member by rejection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import ConstraintSet


@dataclass(frozen=True)
class MarkovBasisMove:
    """Integer move ``f``; the chain applies ``T + eta * f``."""

    rows: tuple
    cols: tuple
    coefs: tuple

    @classmethod
    def corner(cls, i1: int, i2: int, j1: int, j2: int) -> "MarkovBasisMove":
        if i1 == i2 or j1 == j2:
            raise ValueError("corner move needs distinct rows and distinct columns")
        return cls((i1, i2, i1, i2), (j1, j2, j2, j1), (1, 1, -1, -1))

    def dense(self, shape: tuple[int, int]) -> np.ndarray:
        f = np.zeros(shape, dtype=np.int64)
        np.add.at(f, (np.array(self.rows), np.array(self.cols)), np.array(self.coefs))
        return f

    @classmethod
    def from_dense(cls, f: np.ndarray) -> "MarkovBasisMove":
        r, c = np.nonzero(f)
        return cls(tuple(int(a) for a in r), tuple(int(b) for b in c),
                   tuple(int(v) for v in f[r, c]))

    def arrays(self):
        return np.array(self.rows), np.array(self.cols), np.array(self.coefs, dtype=np.int64)


def _symmetrised(i1, i2, j1, j2, n) -> Optional[np.ndarray]:
    f = np.zeros((n, n), dtype=np.int64)
    f[i1, j1] += 1
    f[i2, j2] += 1
    f[i1, j2] -= 1
    f[i2, j1] -= 1
    if np.array_equal(f, f.T):
        return f
    g = f + f.T
    if not g.any():
        return None
    return g


def _canonical(f: np.ndarray) -> bytes:
    # f and -f span the same line of tables
    nz = f[np.nonzero(f)]
    if nz.size and nz[0] < 0:
        f = -f
    return f.tobytes()


def build_markov_basis(I: int, J: int, constraints: ConstraintSet = ConstraintSet()) -> list[MarkovBasisMove]:
    """All admissible corner moves, in lexicographic (i1, i2, j1, j2) order."""
    fixed = constraints.fixed_mask((I, J))
    moves = []
    if constraints.symmetric:
        if I != J:
            raise ValueError("symmetric basis needs a square table")
        seen = set()
        for i1 in range(I):
            for i2 in range(i1 + 1, I):
                for j1 in range(J):
                    for j2 in range(j1 + 1, J):
                        f = _symmetrised(i1, i2, j1, j2, I)
                        if f is None or (fixed & (f != 0)).any():
                            continue
                        key = _canonical(f)
                        if key not in seen:
                            seen.add(key)
                            moves.append(MarkovBasisMove.from_dense(f))
        return moves
    for i1 in range(I):
        for i2 in range(i1 + 1, I):
            for j1 in range(J):
                for j2 in range(j1 + 1, J):
                    if fixed[i1, j1] or fixed[i2, j2] or fixed[i1, j2] or fixed[i2, j1]:
                        continue
                    moves.append(MarkovBasisMove.corner(i1, i2, j1, j2))
    return moves


_CORNER = np.array([1, 1, -1, -1], dtype=np.int64)
_CORNER.flags.writeable = False


class MarkovBasis:
    """Uniform sampler over the admissible moves of an I x J fiber.

    With ``materialise=None`` the basis is materialised only when small
    (or symmetric); otherwise moves are drawn by rejection in batches of
    ``batch`` candidates. Each rejection round consumes one
    ``rng.random`` call of shape ``(batch, 4)``; a materialised basis
    consumes one ``rng.integers`` call per move.
    """

    def __init__(self, I: int, J: int, constraints: ConstraintSet = ConstraintSet(),
                 materialise: Optional[bool] = None, batch: int = 64):
        self.I, self.J = I, J
        self.fixed = constraints.fixed_mask((I, J))
        self.symmetric = constraints.symmetric
        self.batch = batch
        self._bounds = np.array([I, I - 1, J, J - 1])
        free = (~self.fixed).astype(np.float64)
        # pairs of rows sharing k free columns contribute k choose 2 moves
        shared = free @ free.T
        np.fill_diagonal(shared, 0)
        self._corner_count = int(np.round((shared * (shared - 1) / 2).sum() / 2))
        if materialise is None:
            materialise = self.symmetric or I * J <= 400
        self.moves: Optional[list[MarkovBasisMove]] = None
        self._arrays = None
        if materialise or self.symmetric:
            self.moves = build_markov_basis(I, J, constraints)
            self._arrays = [m.arrays() for m in self.moves]

    def __len__(self) -> int:
        return len(self.moves) if self.moves is not None else self._corner_count

    def sample(self, rng: np.random.Generator):
        """(rows, cols, coefs) arrays of one uniformly chosen move."""
        if len(self) == 0:
            raise ValueError("Markov basis is empty")
        if self._arrays is not None:
            return self._arrays[int(rng.integers(len(self._arrays)))]
        I, J, fixed = self.I, self.J, self.fixed
        hi = self._bounds
        while True:
            # floor(u * bound) with u ~ U[0, 1); the clamp guards float rounding
            cand = np.minimum((rng.random((self.batch, 4)) * hi).astype(np.int64), hi - 1)
            i1, i2, j1, j2 = cand.T
            i2 = i2 + (i2 >= i1)
            j2 = j2 + (j2 >= j1)
            ok = ~(fixed[i1, j1] | fixed[i2, j2] | fixed[i1, j2] | fixed[i2, j1])
            k = int(ok.argmax())
            if ok[k]:
                a, b, c, d = int(i1[k]), int(i2[k]), int(j1[k]), int(j2[k])
                return np.array([a, b, a, b]), np.array([c, d, d, c]), _CORNER
