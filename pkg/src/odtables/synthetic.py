"""Synthetic ground truth: random-intensity tables and SIM-generated problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContingencyTable, IntensityMatrix
from .intensity import log_intensity_total


def generate_synthetic(I: int, J: int, A: int, seed=None) -> tuple[IntensityMatrix, ContingencyTable]:
    """Uniform(0, 1] intensity rescaled to total A, then one Multinomial(A, Lam/A) table."""
    if A < 1 or int(A) != A:
        raise ValueError("A must be a positive integer")
    if I < 1 or J < 1:
        raise ValueError("I and J must be positive")
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random((I, J))  # (0, 1]
    lam = u * (A / u.sum())
    p = (u / u.sum()).ravel()
    cells = rng.multinomial(int(A), p).reshape(I, J)
    return IntensityMatrix(lam), ContingencyTable(cells)


@dataclass(frozen=True)
class SyntheticProblem:
    """Ground truth drawn from a totally constrained SIM at its Harris-Wilson equilibrium."""

    cost: np.ndarray
    y: np.ndarray  # equilibrium log attraction
    lam: np.ndarray
    table: ContingencyTable
    alpha: float
    beta: float
    kappa: float
    delta: float

    @property
    def dist_origin(self) -> np.ndarray:
        return (self.table.cells * self.cost).sum(axis=1)


def equilibrium_attraction(cost, alpha: float, beta: float, A: float, kappa: float,
                           delta: float = 0.0, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Zero-drift log attraction: kappa e^{x_j} = Lam_+j(x) + delta.

    Solved by the fixed-point iteration x <- log((Lam_+j(x) + delta) / kappa),
    a contraction in the sup norm when alpha < 1.
    """
    if not 0 <= alpha < 1:
        raise ValueError("fixed-point iteration needs 0 <= alpha < 1")
    J = cost.shape[1]
    x = np.full(J, np.log((A / J + delta) / kappa))
    for _ in range(max_iter):
        col = np.exp(log_intensity_total(x, alpha, beta, cost, A)).sum(axis=0)
        nxt = np.log((col + delta) / kappa)
        if np.abs(nxt - x).max() < tol:
            return nxt
        x = nxt
    raise RuntimeError("equilibrium iteration did not converge")


def generate_sim_problem(I: int, J: int, A: int, alpha: float = 0.8, beta: float = 2.0,
                         delta: float = 0.0, seed=None) -> SyntheticProblem:
    """Origins and destinations scattered in the unit square, Euclidean costs.

    kappa = (A + delta J) / J, so the equilibrium attraction has
    sum_j e^{x_j} = J and y is centred near 0.
    """
    rng = np.random.default_rng(seed)
    origins = rng.random((I, 2))
    dests = rng.random((J, 2))
    cost = np.linalg.norm(origins[:, None, :] - dests[None, :, :], axis=2)
    kappa = (A + delta * J) / J
    y = equilibrium_attraction(cost, alpha, beta, A, kappa, delta)
    lam = np.exp(log_intensity_total(y, alpha, beta, cost, A))
    cells = rng.multinomial(int(A), (lam / lam.sum()).ravel()).reshape(I, J)
    return SyntheticProblem(cost, y, lam, ContingencyTable(cells), alpha, beta, kappa, delta)
