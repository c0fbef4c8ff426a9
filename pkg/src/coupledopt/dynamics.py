"""Vector fields of the primal-dual dynamics.

Two forms are provided for every distributed algorithm:

* per-agent fields (``*_agent_rhs``) that see only the agent's own state,
  its own :class:`~coupledopt.problem.LocalProblem`, the messages of its
  in-neighbors and the incident weights;
* stacked network fields (:func:`network_rhs`) that evaluate all agents at
  once with the Laplacian, used by the fast simulation engine.

Both compute the same arithmetic; the tests check that they agree.

Variable names: ``lam`` is the local multiplier, ``z`` the implicit-tracking
corrector, ``r`` the explicit tracker of the EDEA family and ``w`` the
pre-projection primal of the projected variants.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .problem import LocalProblem, ProblemInstance, grad_local, project_box

ALGORITHMS = (
    "apgd",
    "idea",
    "proj-idea",
    "unaug-idea",
    "unaug-proj-idea",
    "edea",
    "proj-edea",
)
PROJECTED = {"proj-idea", "unaug-proj-idea", "proj-edea"}
EDEA_FAMILY = {"edea", "proj-edea"}
IDEA_FAMILY = {"idea", "proj-idea", "unaug-idea", "unaug-proj-idea"}


class ProtocolError(RuntimeError):
    """An agent was handed a message set that does not match its in-neighbors."""


@dataclass(frozen=True)
class Params:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    phi: float = 1.0
    delta: float = 0.01
    # coefficient on L lam in the EDEA multiplier update; None keeps the printed 1
    beta_lambda: Optional[float] = None

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "phi", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def with_(self, **kw) -> "Params":
        return replace(self, **kw)


@dataclass
class AgentState:
    x: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    w: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None

    def copy(self) -> "AgentState":
        return AgentState(
            self.x.copy(), self.lam.copy(), self.z.copy(),
            None if self.w is None else self.w.copy(),
            None if self.r is None else self.r.copy(),
        )


@dataclass(frozen=True)
class NeighborMsg:
    sender: int
    lam: np.ndarray
    r: Optional[np.ndarray] = None


def _check_inbox(inbox: Sequence[NeighborMsg], weights: Mapping[int, float], need_r: bool):
    senders = [m.sender for m in inbox]
    if len(set(senders)) != len(senders) or set(senders) != set(weights):
        missing = sorted(set(weights) - set(senders))
        extra = sorted(set(senders) - set(weights))
        raise ProtocolError(f"inbox mismatch: missing {missing}, unexpected {extra}")
    if need_r and any(m.r is None for m in inbox):
        raise ProtocolError("EDEA-family messages must carry r")


def _laplacian_term(own: np.ndarray, inbox, weights, field: str) -> np.ndarray:
    """sum_j a_ij (own - v_j), accumulated in sender order."""
    acc = np.zeros_like(own)
    for m in sorted(inbox, key=lambda m: m.sender):
        acc += weights[m.sender] * (own - getattr(m, field))
    return acc


def apgd_rhs(x, lam, inst: ProblemInstance, alpha: float):
    """Centralized augmented primal-dual field (needs the full coupling)."""
    res = inst.A @ x - inst.b
    dx = -alpha * (inst.gradient(x) + inst.A.T @ lam) - inst.A.T @ res
    return dx, res


def idea_agent_rhs(s: AgentState, lp: LocalProblem, inbox, weights, prm: Params):
    _check_inbox(inbox, weights, need_r=False)
    m = lp.A @ s.x - lp.b - s.z
    ell = _laplacian_term(s.lam, inbox, weights, "lam")
    dx = -prm.alpha * (grad_local(lp, s.x) + lp.A.T @ s.lam) - lp.A.T @ m
    return dx, m - prm.beta * ell, prm.alpha * prm.beta * ell


def unaug_idea_agent_rhs(s: AgentState, lp: LocalProblem, inbox, weights, prm: Params):
    _check_inbox(inbox, weights, need_r=False)
    m = lp.A @ s.x - lp.b - s.z
    ell = _laplacian_term(s.lam, inbox, weights, "lam")
    dx = -prm.alpha * (grad_local(lp, s.x) + lp.A.T @ s.lam)
    return dx, m - prm.beta * ell, prm.alpha * prm.beta * ell


def proj_idea_agent_rhs(s: AgentState, lp: LocalProblem, inbox, weights, prm: Params, augmented: bool = True):
    _check_inbox(inbox, weights, need_r=False)
    x = project_box(lp.box, s.w)
    m = lp.A @ x - lp.b - s.z
    ell = _laplacian_term(s.lam, inbox, weights, "lam")
    dw = -prm.alpha * (s.w - x + grad_local(lp, x) + lp.A.T @ s.lam)
    if augmented:
        dw = dw - lp.A.T @ m
    return dw, m - prm.beta * ell, prm.alpha * prm.beta * ell, x


def unaug_proj_idea_agent_rhs(s, lp, inbox, weights, prm):
    return proj_idea_agent_rhs(s, lp, inbox, weights, prm, augmented=False)


def _edea_tail(s: AgentState, lp: LocalProblem, x, inbox, weights, prm: Params):
    ell = _laplacian_term(s.lam, inbox, weights, "lam")
    rho = _laplacian_term(s.r, inbox, weights, "r")
    beta_lam = 1.0 if prm.beta_lambda is None else prm.beta_lambda
    dlam = s.r - beta_lam * ell
    dr = -prm.gamma * (s.r - (lp.A @ x - lp.b)) - s.z - prm.beta * rho
    dz = prm.gamma * prm.beta * rho
    return dlam, dr, dz


def edea_agent_rhs(s: AgentState, lp: LocalProblem, inbox, weights, prm: Params):
    _check_inbox(inbox, weights, need_r=True)
    dx = -prm.alpha * (grad_local(lp, s.x) + lp.A.T @ s.lam) - lp.A.T @ s.r
    dlam, dr, dz = _edea_tail(s, lp, s.x, inbox, weights, prm)
    return dx, dlam, dr, dz


def proj_edea_agent_rhs(s: AgentState, lp: LocalProblem, inbox, weights, prm: Params):
    _check_inbox(inbox, weights, need_r=True)
    x = project_box(lp.box, s.w)
    dw = -prm.alpha * (s.w - x + grad_local(lp, x) + lp.A.T @ s.lam) - lp.A.T @ s.r
    dlam, dr, dz = _edea_tail(s, lp, x, inbox, weights, prm)
    return dw, dlam, dr, dz, x


def implicit_tracking_rhs(
    x_i: np.ndarray,
    z_i: np.ndarray,
    grad_h: Callable[[np.ndarray], np.ndarray],
    inbox: Sequence[NeighborMsg],
    weights: Mapping[int, float],
    gamma: float,
    beta: float,
):
    """Consensus optimization with an integral corrector; messages carry x_j in ``lam``."""
    _check_inbox(inbox, weights, need_r=False)
    lx = _laplacian_term(x_i, inbox, weights, "lam")
    return -gamma * grad_h(x_i) - z_i - beta * lx, gamma * beta * lx


AGENT_RHS = {
    "idea": idea_agent_rhs,
    "unaug-idea": unaug_idea_agent_rhs,
    "proj-idea": proj_idea_agent_rhs,
    "unaug-proj-idea": unaug_proj_idea_agent_rhs,
    "edea": edea_agent_rhs,
    "proj-edea": proj_edea_agent_rhs,
}


def agent_derivatives(alg: str, s: AgentState, lp: LocalProblem, inbox, weights, prm: Params) -> dict:
    """Run the per-agent field for ``alg`` and label the outputs by variable."""
    out = AGENT_RHS[alg](s, lp, inbox, weights, prm)
    if alg in ("idea", "unaug-idea"):
        return {"x": out[0], "lam": out[1], "z": out[2]}
    if alg in ("proj-idea", "unaug-proj-idea"):
        return {"w": out[0], "lam": out[1], "z": out[2]}
    if alg == "edea":
        return {"x": out[0], "lam": out[1], "r": out[2], "z": out[3]}
    return {"w": out[0], "lam": out[1], "r": out[2], "z": out[3]}


# ------------------------------------------------------------ stacked form

def network_rhs(alg: str, inst: ProblemInstance, lap: np.ndarray, prm: Params,
                w: np.ndarray, lam: np.ndarray, z=None, r=None) -> dict:
    """All-agent field. ``w`` is the primal (pre-projection for projected
    variants), ``lam``, ``z``, ``r`` have shape (n, p); APGD takes ``lam`` of
    shape (p,) and ignores the rest.
    """
    if alg == "apgd":
        dx, dlam = apgd_rhs(w, lam, inst, prm.alpha)
        return {"w": dx, "lam": dlam}
    projected = alg in PROJECTED
    x = inst.project(w) if projected else w
    Ab = inst.A_blockdiag
    ax = (Ab @ x).reshape(lam.shape) - inst.b_split
    g = inst.gradient(x) + Ab.T @ lam.ravel()
    if projected:
        g = g + (w - x)
    if alg in EDEA_FAMILY:
        ell = lap @ lam
        rho = lap @ r
        beta_lam = 1.0 if prm.beta_lambda is None else prm.beta_lambda
        return {
            "w": -prm.alpha * g - Ab.T @ r.ravel(),
            "lam": r - beta_lam * ell,
            "r": -prm.gamma * (r - ax) - z - prm.beta * rho,
            "z": prm.gamma * prm.beta * rho,
        }
    m = ax - z
    ell = lap @ lam
    dw = -prm.alpha * g
    if not alg.startswith("unaug"):
        dw = dw - Ab.T @ m.ravel()
    return {"w": dw, "lam": m - prm.beta * ell, "z": prm.alpha * prm.beta * ell}


def equilibrium(alg: str, inst: ProblemInstance, x_star, lam_star, prm: Params) -> dict:
    """Equilibrium state built from a primal-dual solution.

    Multipliers are consensual; the corrector holds each agent's share of the
    constraint (scaled by gamma for the EDEA family, whose tracker is zero).
    """
    x_star = np.asarray(x_star, dtype=float)
    lam_star = np.asarray(lam_star, dtype=float)
    if alg == "apgd":
        return {"w": x_star.copy(), "lam": lam_star.copy()}
    lam = np.tile(lam_star, (inst.n, 1))
    share = (inst.A_blockdiag @ x_star).reshape(inst.n, inst.p) - inst.b_split
    w = x_star.copy()
    if alg in PROJECTED:
        w = x_star - inst.gradient(x_star) - inst.A.T @ lam_star
    if alg in EDEA_FAMILY:
        return {"w": w, "lam": lam, "z": prm.gamma * share, "r": np.zeros_like(lam)}
    return {"w": w, "lam": lam, "z": share}
