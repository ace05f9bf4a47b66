"""Neural calibration of spatial interaction models with constrained OD-table sampling."""

from .calibration import (AdamState, CalibrationError, LossConfig, LossTerms, NetworkWeights, Pipeline,
                          Scheme, adam_step, load_weights, loss_eval, loss_grad, nn_backward,
                          nn_forward, nn_init, save_weights)
from .core import (ConstraintError, ConstraintSet, ContingencyTable, CostMatrix, IntensityMatrix,
                   ObservedData, Tractability, is_admissible, margins_as_constraints,
                   summary_statistics, validate_constraints)
from .harris_wilson import SolverConfig, SolverError, hw_drift, hw_solve, solve_to_equilibrium
from .intensity import (HWParams, IntensityModel, SIMParams, compute_kappa, intensity_doubly_ipf,
                        intensity_singly, intensity_total)
from .metrics import SampleSummary, coverage_probability, srmse, ssi
from .synthetic import generate_sim_problem, generate_synthetic

__version__ = "0.1.0"
