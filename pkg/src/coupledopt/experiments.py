"""Per-case defaults shared by the CLI, the scripts and the acceptance suite."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .dynamics import Params
from .graph import Graph, directed_topologies, spectral_info, undirected_topologies
from .problem import ProblemInstance, curvature_constants, generate_case
from .tuner import params_thm2, params_thm4, params_thm6, verify_conditions

log = logging.getLogger(__name__)

CASE_DELTA = {1: 0.01, 2: 0.005, 3: 0.001, 4: 0.001}
CASE_HORIZON = {1: 50_000, 2: 200_000, 3: 100_000, 4: 100_000}
CASE_THEOREM = {1: None, 2: 2, 3: 6, 4: 4}
CASE_ALGORITHMS = {
    1: ("proj-idea", "proj-edea"),
    2: ("idea", "edea", "unaug-idea"),
    3: ("proj-idea", "proj-edea", "unaug-proj-idea"),
    4: ("idea", "edea", "unaug-idea"),
}


def case_topologies(case_id: int, seed: int = 0) -> list[Graph]:
    n = 50 if case_id in (1, 2) else 20
    return undirected_topologies(n, seed) if case_id in (1, 2) else directed_topologies(n)


def theorem_constants(inst: ProblemInstance) -> dict:
    cc = curvature_constants(inst)
    return {
        "mu": cc["mu"],
        "l": cc["l"],
        "sigma": cc["sigma_max_blocks"],
        "eta2": spectral_info(inst.graph).eta2_hat,
    }


def tuned_params(theorem: Optional[int], consts: dict, phi: float = 1.0) -> dict:
    if theorem is None:
        return {"phi": 1.0, "alpha": 1.0, "beta": 1.0}
    if theorem == 2:
        return params_thm2(consts["mu"], consts["l"], consts["sigma"])
    if theorem in (3, 6):
        return params_thm6(consts["mu"], consts["sigma"], consts["eta2"], phi)
    return params_thm4(consts["mu"], consts["l"], consts["eta2"], phi)


def case_params(case_id: int, inst: ProblemInstance, delta: Optional[float] = None) -> Params:
    """Theorem-compliant parameters for a case instance (alpha = beta = 1 for Case 1)."""
    th = CASE_THEOREM[case_id]
    consts = theorem_constants(inst)
    p = tuned_params(th, consts)
    if th is not None:
        chk = verify_conditions(th, p, consts)
        if not chk["ok"]:
            log.warning("tuned parameters fail theorem %d: %s", th, chk["margins"])
    return Params(alpha=p["alpha"], beta=p["beta"], gamma=1.0, phi=p["phi"],
                  delta=CASE_DELTA[case_id] if delta is None else delta)


def case_instances(case_id: int, seed: int = 0) -> list[ProblemInstance]:
    """The case instance (one coefficient draw) placed on each of the case's four topologies."""
    base = generate_case(case_id, seed)
    return [base.with_graph(g) for g in case_topologies(case_id, seed)]


def gap_mode(inst: ProblemInstance) -> str:
    return "strongly_convex" if inst.strongly_convex else "convex"


def log_decades(iters, gaps) -> np.ndarray:
    """Per-decade slope of log10(gap) vs iteration over the last half of a run."""
    iters = np.asarray(iters, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    half = iters >= iters[-1] / 2
    x, y = iters[half], np.log10(np.maximum(gaps[half], 1e-300))
    return np.polyfit(x, y, 1)
