"""Indirect optimization of impulsive space interception problems.

A library for solving one- and two-impulse interception problems with
time-window, velocity-impulse box, and terminal-position box constraints.
The problems are posed as multipoint boundary value problems (two-body
state and costate dynamics plus slackness-variable augmentations) and
solved with a built-in collocation solver with unknown parameters.
"""

from impulseopt.dynamics import GravityModel, CartesianState, Costate
from impulseopt.scenarios import Scenario, ConstraintSet, load_initial_data
from impulseopt.bcs import Variant, build_bvp, dof_balance, solve_variant
from impulseopt.mpbvp import SegmentedBVP, Solution, SolverOptions, solve
from impulseopt.diagnostics import SolutionReport, verify, cost, primer_history

__all__ = [
    "GravityModel",
    "CartesianState",
    "Costate",
    "Scenario",
    "ConstraintSet",
    "load_initial_data",
    "Variant",
    "build_bvp",
    "dof_balance",
    "solve_variant",
    "SegmentedBVP",
    "Solution",
    "SolverOptions",
    "solve",
    "SolutionReport",
    "verify",
    "cost",
    "primer_history",
]
