"""Fisher's non-central multivariate hypergeometric mass on a two-margin fiber."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, logsumexp

from ..core import ConstraintError, ConstraintSet, ContingencyTable, IntensityMatrix, is_admissible


def log_factorial(n):
    return gammaln(np.asarray(n, dtype=np.float64) + 1.0)


def fisher_log_pmf(T: ContingencyTable, Lam, constraints: ConstraintSet) -> float:
    """Unnormalised log mass of ``T`` with odds ratios Lam_ij Lam_++ / (Lam_i+ Lam_+j)."""
    if not constraints.has_both_margins:
        raise ConstraintError("Fisher's hypergeometric mass needs both row and column sums")
    if not is_admissible(T, constraints):
        raise ConstraintError("table is not admissible for the constraint set")
    lam = Lam if isinstance(Lam, IntensityMatrix) else IntensityMatrix(Lam)
    t = T.cells
    return float(log_factorial(constraints.row_sums).sum()
                 + log_factorial(constraints.col_sums).sum()
                 - log_factorial(t.sum())
                 - log_factorial(t).sum()
                 + (t * lam.log_odds_ratio()).sum())


def fisher_normalised(tables, Lam, constraints: ConstraintSet) -> np.ndarray:
    """Probabilities over an explicit list of fiber tables (log-sum-exp normalised)."""
    logp = np.array([fisher_log_pmf(t, Lam, constraints) for t in tables])
    return np.exp(logp - logsumexp(logp))
