"""Explicit-state MDP solvers with hierarchical adaptive refinement."""

from .engine import SharpConfig, SolveReport, SpreadMode, sharp_solve
from .flat import Method, SolverConfig, value_iteration
from .generators import ArenaSpec, WarehouseSpec, generate_arenas, generate_warehouse
from .hierarchy import PartitionStrategy, StateFeatures
from .mdp import INFINITY, Mdp, ModelError, Objective, ObjectiveKind, parse_model, serialize_model
from .oracle import enumerate_policies, evaluate_policy

__all__ = [
    "INFINITY", "ArenaSpec", "Mdp", "Method", "ModelError", "Objective", "ObjectiveKind",
    "PartitionStrategy", "SharpConfig", "SolveReport", "SolverConfig", "SpreadMode", "StateFeatures",
    "WarehouseSpec", "enumerate_policies", "evaluate_policy", "generate_arenas", "generate_warehouse",
    "parse_model", "serialize_model", "sharp_solve", "value_iteration",
]
