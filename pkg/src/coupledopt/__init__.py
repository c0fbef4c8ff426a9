"""Distributed primal-dual dynamics for constraint-coupled optimization."""

from .dynamics import ALGORITHMS, AgentState, NeighborMsg, Params
from .graph import Graph, build_complete, build_cycle, build_directed_exponential, build_random_undirected, spectral_info
from .integrator import RunConfig, Trajectory, run, run_with_retry
from .oracle import solve
from .problem import ProblemInstance, generate_case

__version__ = "0.1.0"
