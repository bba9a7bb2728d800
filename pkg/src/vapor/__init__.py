"""Variational approximation of the posterior probability of state-action optimality
for exploration in finite-horizon tabular MDPs."""

__version__ = "0.1.0"

from .mdp import (  # noqa: E402
    LayeredMdp,
    ValueTables,
    backward_induction,
    check_flow,
    occupancy_from_policy,
    policy_from_occupancy,
    policy_value,
    validate_mdp,
)
from .solver import SolverOptions, VaporProblem, dual_value, solve_frank_wolfe, vapor_objective  # noqa: E402

__all__ = [
    "LayeredMdp",
    "ValueTables",
    "backward_induction",
    "check_flow",
    "occupancy_from_policy",
    "policy_from_occupancy",
    "policy_value",
    "validate_mdp",
    "SolverOptions",
    "VaporProblem",
    "dual_value",
    "solve_frank_wolfe",
    "vapor_objective",
]
