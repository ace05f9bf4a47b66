from .basis import MarkovBasis, MarkovBasisMove, build_markov_basis
from .closed_form import ClosedFormSampler, sample_closed_form, sample_unconstrained
from .fiber import FiberTooLarge, enumerate_fiber, fiber_index
from .fisher import fisher_log_pmf, fisher_normalised, log_factorial
from .gibbs import ChainInvariantError, ChainState, eta_support, gibbs_mb_step, run_chain
from .init import init_table
from .table_sampler import TableSampler

__all__ = [
    "MarkovBasis", "MarkovBasisMove", "build_markov_basis", "ClosedFormSampler",
    "sample_closed_form", "sample_unconstrained", "FiberTooLarge", "enumerate_fiber",
    "fiber_index", "fisher_log_pmf", "fisher_normalised", "log_factorial",
    "ChainInvariantError", "ChainState", "eta_support", "gibbs_mb_step", "run_chain",
    "init_table", "TableSampler",
]
