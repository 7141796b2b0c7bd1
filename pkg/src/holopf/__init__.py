"""Multi-dimensional holomorphic embedding power flow.

Solves the power-flow equations once, offline, as explicit multivariate power
series in a handful of loading scales; any operating point inside the
convergence region is then obtained by evaluating polynomials.
"""
from .germ import GermError, GermSolution, compute_germ
from .helm1d import helm_solve
from .mdhem import (
    LimitLoopError, MDHEMArtifact, MDHEMError, ScaleAssignment, check_q_limits,
    estimate_resources, evaluate_artifact, run, solve_with_limits,
)
from .network import CaseError, NetworkCase, build_ybus, bundled_case, load_case
from .nr_oracle import Divergence, NRConfig, PFSolution, nr_grid_compare, nr_solve

__version__ = "0.1.0"

__all__ = [
    "CaseError", "Divergence", "GermError", "GermSolution", "LimitLoopError", "MDHEMArtifact",
    "MDHEMError", "NRConfig", "NetworkCase", "PFSolution", "ScaleAssignment", "build_ybus",
    "bundled_case", "check_q_limits", "compute_germ", "estimate_resources", "evaluate_artifact",
    "helm_solve", "load_case", "nr_grid_compare", "nr_solve", "run", "solve_with_limits",
]
