"""Per-iteration table update: closed-form draw or Gibbs Markov-basis moves."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import ConstraintSet, ContingencyTable, Tractability, validate_constraints
from .basis import MarkovBasis
from .closed_form import ClosedFormSampler
from .gibbs import ChainState, gibbs_mb_step
from .init import init_table


class TableSampler:
    """Draws T^(n) given the current intensity.

    Tractable constraint sets are sampled directly and independently of the
    previous table. Intractable sets run ``moves_per_step`` Gibbs moves from
    the previous table.
    """

    def __init__(self, constraints: ConstraintSet, shape: tuple[int, int], rng: np.random.Generator,
                 initial: Optional[ContingencyTable] = None, moves_per_step: int = 1,
                 init_intensity=None):
        I, J = shape
        self.constraints = constraints
        self.shape = shape
        self.rng = rng
        self.kind = validate_constraints(constraints, I, J)
        self.moves_per_step = int(moves_per_step)
        if self.moves_per_step < 1:
            raise ValueError("moves_per_step must be at least 1")
        self.chain: Optional[ChainState] = None
        if self.kind is Tractability.INTRACTABLE:
            if initial is None:
                initial = init_table(constraints, init_intensity, shape=shape)
            self.chain = ChainState(initial, MarkovBasis(I, J, constraints), rng, constraints)
            self.current = self.chain.cells
        else:
            if initial is None:
                initial = init_table(constraints, init_intensity, shape=shape)
            self.current = np.array(initial.cells)

    @property
    def tractable(self) -> bool:
        return self.kind is Tractability.TRACTABLE

    def step(self, Lam=None, log_lam=None, copy: bool = True) -> np.ndarray:
        """New table as an int64 array.

        Either ``Lam`` or its logarithm ``log_lam`` must be given. With
        ``copy=False`` the chain's own buffer is returned; it changes on the
        next step.
        """
        if self.chain is None:
            if log_lam is not None:
                Lam = np.exp(log_lam - log_lam.max())
            self.current = ClosedFormSampler(Lam, self.constraints).draw_array(self.rng)
            return self.current.copy()
        self.chain.set_intensity(Lam, log_lam)
        for _ in range(self.moves_per_step):
            gibbs_mb_step(self.chain)
        return self.chain.cells.copy() if copy else self.chain.cells

    @property
    def table(self) -> ContingencyTable:
        return ContingencyTable(self.current if self.chain is None else self.chain.cells)
