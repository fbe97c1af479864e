"""Margin-constrained bag-of-paths transport on weighted directed graphs.

Both path models are available: regular paths, which may revisit their end
node, and hitting paths, which stop on first arrival.
"""
from .distances import (
    DistanceMatrix,
    GroupSpec,
    free_energy_distance_matrix,
    group_dissimilarity,
    surprisal_distance,
)
from .errors import *  # noqa: F401,F403
from .exact import (
    ExactFlowSolution,
    brute_force_fundamental,
    exact_coupling,
    exact_flow,
    shortest_path_costs,
)
from .graph import (
    MarginPair,
    ReferenceChain,
    WeightedDigraph,
    build_graph,
    delta_margins,
    make_lattice,
    make_random_graph,
    reference_transitions,
    validate_margins,
)
from .hitting import HittingKernel, HittingSolution, solve_hitting
from .killing import KillingProfile, killing_profile
from .regular import RegularSolution, solve_regular

__all__ = [
    "DistanceMatrix", "ExactFlowSolution", "GroupSpec", "HittingKernel", "HittingSolution",
    "KillingProfile", "MarginPair", "ReferenceChain", "RegularSolution", "WeightedDigraph",
    "brute_force_fundamental", "build_graph", "delta_margins", "exact_coupling", "exact_flow",
    "free_energy_distance_matrix", "group_dissimilarity", "killing_profile", "make_lattice",
    "make_random_graph", "reference_transitions", "shortest_path_costs", "solve_hitting",
    "solve_regular", "surprisal_distance", "validate_margins",
]
