"""Parameter choices that satisfy the sufficient convergence conditions.

Notation: ``mu`` and ``l`` are the strong convexity and smoothness constants,
``sigma`` is the largest singular value over the blocks A_i and ``eta2`` is
the algebraic connectivity of the symmetrized Laplacian.
"""

from __future__ import annotations

import math

EPS_THM2 = 1e-6
EPS = 1e-9
THEOREMS = (2, 3, 4, 6)


class TunerError(ValueError):
    pass


def _require(cond: bool, msg: str):
    if not cond:
        raise TunerError(msg)


def thm2_phi_bound(l: float, sigma: float) -> float:
    return max(l / 2.0 - 1.0, 2.0 * sigma**2)


def thm2_alpha_bound(mu: float, l: float, sigma: float, phi: float) -> float:
    return max(1.0, (phi * sigma**2 / mu + l / 2.0) / (phi + 1.0 - l / 2.0))


def thm3_alpha_bound(mu: float, sigma: float, phi: float) -> float:
    return (phi**2 + 3.0 * phi + 3.0) * sigma**2 / ((phi + 1.0) * mu)


def thm3_beta_bound(alpha: float, eta2: float, phi: float) -> float:
    return (phi + 1.0) ** 2 * alpha / (phi * eta2)


def thm4_alpha_bound(mu: float, l: float, phi: float) -> float:
    return max(0.5, ((phi**2 + 3.0 * phi + 3.0) + l**2 + 1.5 - mu) / ((phi + 1.0) * mu))


def thm4_beta_bound(alpha: float, eta2: float, phi: float) -> float:
    return (2.0 * (phi + 1.0) ** 2 * alpha**2 + 1.0) / (2.0 * phi * alpha * eta2)


def params_thm2(mu: float, l: float, sigma_max_blocks: float, margin: float = 1.0) -> dict:
    """Undirected graphs with full-row-rank A; any beta > 0 works, so beta = 1."""
    _require(mu > 0, "strong convexity constant mu must be positive")
    _require(l >= mu, "need l >= mu")
    _require(margin >= 1, "margin must be >= 1")
    phi = margin * thm2_phi_bound(l, sigma_max_blocks) + EPS_THM2
    alpha = margin * thm2_alpha_bound(mu, l, sigma_max_blocks, phi) + EPS_THM2
    return {"phi": phi, "alpha": alpha, "beta": 1.0}


def params_thm3(mu: float, sigma_max_blocks: float, eta2_hat: float, phi: float = 1.0) -> dict:
    """Weight-balanced digraphs, strongly convex costs, no box constraints."""
    _require(mu > 0, "strong convexity constant mu must be positive")
    _require(eta2_hat > 0, "eta2 of the symmetrized Laplacian must be positive (graph disconnected?)")
    _require(phi > 0, "phi must be positive")
    alpha = thm3_alpha_bound(mu, sigma_max_blocks, phi) + EPS
    beta = thm3_beta_bound(alpha, eta2_hat, phi) + EPS
    return {"phi": phi, "alpha": alpha, "beta": beta}


def params_thm4(mu: float, l: float, eta2_hat: float, phi: float = 1.0) -> dict:
    """Weight-balanced digraphs with A_i = I."""
    _require(mu > 0, "strong convexity constant mu must be positive")
    _require(eta2_hat > 0, "eta2 of the symmetrized Laplacian must be positive (graph disconnected?)")
    _require(phi > 0, "phi must be positive")
    alpha = thm4_alpha_bound(mu, l, phi) + EPS
    beta = thm4_beta_bound(alpha, eta2_hat, phi) + EPS
    return {"phi": phi, "alpha": alpha, "beta": beta}


def params_thm6(mu: float, sigma_max_blocks: float, eta2_hat: float, phi: float = 1.0) -> dict:
    """Box-constrained counterpart of :func:`params_thm3`; the bounds are the same."""
    return params_thm3(mu, sigma_max_blocks, eta2_hat, phi)


def verify_conditions(theorem: int, params: dict, constants: dict) -> dict:
    """Evaluate every inequality of ``theorem``; margins are LHS - RHS.

    ``constants`` needs ``mu``, ``l``, ``sigma`` (max block singular value)
    and, for 3/4/6, ``eta2``. Strict inequalities (theorem 2) need a
    positive margin, the others a nonnegative one.
    """
    mu, l = constants.get("mu", 0.0), constants.get("l", 0.0)
    sigma, eta2 = constants.get("sigma", 0.0), constants.get("eta2", 0.0)
    phi, alpha, beta = params["phi"], params["alpha"], params["beta"]
    if theorem not in THEOREMS:
        raise TunerError(f"theorem must be one of {THEOREMS}")
    if mu <= 0:
        margins = {"mu": mu}
        return {"ok": False, "margins": margins}
    if theorem == 2:
        margins = {
            "phi": phi - thm2_phi_bound(l, sigma),
            "alpha": alpha - thm2_alpha_bound(mu, l, sigma, phi) if phi + 1 - l / 2 > 0 else -math.inf,
            "beta": beta,
        }
        ok = all(m > 0 for m in margins.values())
        return {"ok": ok, "margins": margins}
    if eta2 <= 0:
        return {"ok": False, "margins": {"eta2": eta2}}
    if theorem in (3, 6):
        margins = {
            "alpha": alpha - thm3_alpha_bound(mu, sigma, phi),
            "beta": beta - thm3_beta_bound(alpha, eta2, phi),
        }
    else:
        margins = {
            "alpha": alpha - thm4_alpha_bound(mu, l, phi),
            "beta": beta - thm4_beta_bound(alpha, eta2, phi),
        }
    margins["phi"] = phi
    return {"ok": all(m >= 0 for m in margins.values()) and phi > 0, "margins": margins}
