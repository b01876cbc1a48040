"""Cooperative decision making and trajectory planning for automated vehicles on waypoint graphs."""
from .geometry import CriticalEdgePair, Footprint, find_critical_pairs
from .graph import WaypointGraph, extend_with_start, extract_subgraph
from .milp import MILPSolution, brute_force_milp, solve_milp
from .model import DecisionProblem, MILPParams, ModelIR, VehicleTask, VelocityRegions, assemble

__version__ = "0.1.0"

__all__ = [
    "CriticalEdgePair", "DecisionProblem", "Footprint", "MILPParams", "MILPSolution",
    "ModelIR", "VehicleTask", "VelocityRegions", "WaypointGraph", "assemble",
    "brute_force_milp", "extend_with_start", "extract_subgraph", "find_critical_pairs",
    "solve_milp",
]
