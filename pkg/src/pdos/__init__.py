"""Optimal stopping with a sampled history: exact oracles, finite LPs, limit thresholds and simulation."""

__version__ = "0.1.0"

from .core import (
    Dependent,
    Independent,
    Instance,
    ThresholdSchedule,
    dp_optimal,
    local_rank_prob,
    negbin_le,
    opt_dist_dependent,
    opt_dist_independent,
)
from .finite_lp import StoppingRuleMatrix, build_known_values_lp, build_sdlp, extract_policy
from .simplex import LpModel, solve_lp

__all__ = [
    "Dependent",
    "Independent",
    "Instance",
    "LpModel",
    "StoppingRuleMatrix",
    "ThresholdSchedule",
    "build_known_values_lp",
    "build_sdlp",
    "dp_optimal",
    "extract_policy",
    "local_rank_prob",
    "negbin_le",
    "opt_dist_dependent",
    "opt_dist_independent",
    "solve_lp",
]
