"""Centralized reference solutions, independent of the distributed code path."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import ProblemInstance, curvature_constants, instance_to_dict

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


@dataclass
class OracleSolution:
    x: np.ndarray
    lam: np.ndarray
    f: float
    achieved_tol: float
    converged: bool = True
    method: str = ""


def check_kkt(inst: ProblemInstance, x, lam, tol: float = 1e-6) -> dict:
    """Projection fixed-point residual ``||x - P(x - grad f(x) - A' lam)||`` and ``||Ax - b||``.

    ``lam`` may be one multiplier of shape (p,) or per-agent multipliers of
    shape (n, p), in which case agent i's block uses ``lam[i]``.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        dual = inst.A.T @ lam
    else:
        dual = inst.A_blockdiag.T @ lam.ravel()
    step = x - inst.gradient(x) - dual
    stat = float(np.linalg.norm(x - inst.project(step)))
    feas = float(np.linalg.norm(inst.A @ x - inst.b))
    return {"stationarity": stat, "feasibility": feas, "ok": bool(stat <= tol and feas <= tol)}


def kkt_solve_quadratic(inst: ProblemInstance) -> OracleSolution:
    if not inst.strongly_convex:
        raise OracleError("dense KKT solve needs quadratic costs")
    if not inst.unconstrained:
        raise OracleError("dense KKT solve needs X_i = R^d_i")
    d, p = inst.d, inst.p
    K = np.zeros((d + p, d + p))
    K[:d, :d] = np.diag(2.0 * inst.quad)
    K[:d, d:] = inst.A.T
    K[d:, :d] = inst.A
    if np.linalg.matrix_rank(K) < d + p:
        raise OracleError("KKT matrix is singular (A is rank deficient)")
    sol = np.linalg.solve(K, np.concatenate([-inst.c, inst.b]))
    x, lam = sol[:d], sol[d:]
    kkt = check_kkt(inst, x, lam)
    return OracleSolution(x, lam, inst.objective(x), max(kkt["stationarity"], kkt["feasibility"]),
                          method="kkt")


def _polish(inst: ProblemInstance, w: np.ndarray):
    """Solve the equality-constrained KKT system on the active set read off ``w``."""
    at_lo = w < inst.lower
    at_hi = w > inst.upper
    free = ~(at_lo | at_hi)
    x = np.where(at_lo, inst.lower, np.where(at_hi, inst.upper, 0.0))
    A_f = inst.A[:, free]
    nf, p = int(free.sum()), inst.p
    K = np.zeros((nf + p, nf + p))
    K[:nf, :nf] = np.diag(2.0 * inst.quad[free])
    K[:nf, nf:] = A_f.T
    K[nf:, :nf] = A_f
    rhs = np.concatenate([-inst.c[free], inst.b - inst.A[:, ~free] @ x[~free]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x[free] = sol[:nf]
    return x, sol[nf:]


def reference_solve_projected(
    inst: ProblemInstance,
    tol: float = 1e-10,
    alpha: float = 1.0,
    delta: Optional[float] = None,
    max_iters: int = 2_000_000,
    check_every: int = 200,
) -> OracleSolution:
    """Euler-integrate the centralized projected primal-dual flow

        w' = -alpha (w - x + grad f(x) + A' lam) - A' (A x - b),  lam' = A x - b,  x = P(w)

    until the KKT residual is below ``tol``. Once the residual is small the
    active set is read off ``w`` and the reduced KKT system is solved
    directly; that point is accepted only if it passes :func:`check_kkt`.
    The default step is ``1 / (alpha (1 + l) + ||A||^2)``; it is halved on divergence.
    """
    cc = curvature_constants(inst)
    if delta is None:
        delta = 1.0 / (alpha * (1.0 + cc["l"]) + cc["sigma_max_A"] ** 2)
    A, b = inst.A, inst.b
    for attempt in range(8):
        w = np.zeros(inst.d)
        lam = np.zeros(inst.p)
        x = inst.project(w)
        best = (np.inf, x, lam)
        diverged = False
        for k in range(1, max_iters + 1):
            res = A @ x - b
            w = w - delta * (alpha * (w - x + inst.gradient(x) + A.T @ lam) + A.T @ res)
            lam = lam + delta * res
            x = inst.project(w)
            if k % check_every:
                continue
            if not np.all(np.isfinite(w)):
                diverged = True
                break
            kkt = check_kkt(inst, x, lam)
            err = max(kkt["stationarity"], kkt["feasibility"])
            if err < best[0]:
                best = (err, x.copy(), lam.copy())
            if err <= tol:
                break
            if err < 1e-3:
                xp, lp = _polish(inst, w)
                kp = check_kkt(inst, xp, lp)
                errp = max(kp["stationarity"], kp["feasibility"])
                if errp <= tol:
                    best = (errp, xp, lp)
                    break
        if not diverged:
            err, x, lam = best
            ok = err <= tol
            if not ok:
                log.warning("reference solve stopped at residual %.3e > tol %.1e", err, tol)
            return OracleSolution(x, lam, inst.objective(x), float(err), ok, method="projected-flow")
        delta /= 2.0
        log.info("reference solve diverged; retrying with delta=%g", delta)
    raise OracleError("reference solve diverged at every step size tried")


def solve(inst: ProblemInstance, tol: float = 1e-10, cache_dir: Optional[str] = None) -> OracleSolution:
    """Best available oracle: dense KKT when it applies, the projected flow otherwise.

    With ``cache_dir`` the result is stored as JSON keyed by a hash of the instance.
    """
    path = None
    if cache_dir:
        key = hashlib.sha256(json.dumps(instance_to_dict(inst), sort_keys=True).encode()).hexdigest()[:20]
        path = os.path.join(cache_dir, f"oracle_{key}_{tol:g}.json")
        if os.path.exists(path):
            with open(path) as fh:
                doc = json.load(fh)
            return OracleSolution(np.array(doc["x"]), np.array(doc["lam"]), doc["f"],
                                  doc["achieved_tol"], doc["converged"], doc["method"])
    sol = None
    if inst.strongly_convex and inst.unconstrained:
        try:
            sol = kkt_solve_quadratic(inst)
        except OracleError:
            log.info("dense KKT solve unavailable; falling back to the projected flow")
    if sol is None:
        sol = reference_solve_projected(inst, tol)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        with open(path, "w") as fh:
            json.dump({"x": sol.x.tolist(), "lam": sol.lam.tolist(), "f": sol.f,
                       "achieved_tol": sol.achieved_tol, "converged": sol.converged,
                       "method": sol.method}, fh)
    return sol
