"""Euler discretization, synchronous simulation rounds and run metrics.

Two engines produce the same iterates:

* ``"network"`` evaluates the stacked field with the Laplacian (fast);
* ``"agent"`` runs every agent separately on its own data and the messages
  delivered by :mod:`coupledopt.netsim`, optionally logging a transcript for
  the locality audit.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import (
    EDEA_FAMILY,
    IDEA_FAMILY,
    PROJECTED,
    AgentState,
    NeighborMsg,
    Params,
    agent_derivatives,
    equilibrium,
    network_rhs,
)
from .graph import check_topology
from .netsim import Transcript, comm_cost, exchange_round
from .problem import ProblemInstance, project_box

log = logging.getLogger(__name__)

CSV_COLUMNS = ["iter", "relative_gap", "consensus_error", "violation", "z_sum", "lyapunov", "msgs_scalars"]
STOP_METRICS = ("relative_gap", "consensus_error", "violation")

# divergence detector: field norm vs. its running minimum
GROWTH_FACTOR = 1e3
NOISE_FLOOR = 1e-6
STATE_LIMIT = 1e12
# a start this close to the optimum makes the relative gap meaningless
DEGENERATE_GAP = 1e-9


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, reason: str, delta: Optional[float] = None):
        self.iteration = iteration
        self.reason = reason
        self.delta = delta
        super().__init__(f"diverged at iteration {iteration}: {reason}")


class GapError(ValueError):
    """Relative gap is undefined because x(0) is already optimal."""


@dataclass
class RunConfig:
    algorithm: str
    params: Params = field(default_factory=Params)
    max_iters: int = 10_000
    record_every: int = 100
    seed: int = 0
    init_low: float = -1.0
    init_high: float = 1.0
    # explicit start, keyed like dynamics.equilibrium (w, lam, z, r); overrides the sampler
    init_state: Optional[dict] = None
    stop_metric: Optional[str] = None
    stop_tol: float = 0.0
    gap_mode: Optional[str] = None  # None picks from the instance
    engine: str = "network"
    track_lyapunov: bool = False
    check_every: int = 100

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.stop_metric is not None and self.stop_metric not in STOP_METRICS:
            raise ValueError(f"stop_metric must be one of {STOP_METRICS}")
        if self.gap_mode not in (None, "convex", "strongly_convex"):
            raise ValueError("gap_mode must be 'convex' or 'strongly_convex'")
        if self.engine not in ("network", "agent"):
            raise ValueError("engine must be 'network' or 'agent'")
        if self.init_state is not None and "z" in self.init_state:
            zs = np.asarray(self.init_state["z"]).sum(axis=0)
            if np.linalg.norm(zs) > 1e-10:
                raise ValueError("initial correctors must satisfy sum_i z_i(0) = 0")


@dataclass
class Trajectory:
    algorithm: str
    delta: float
    iters: list = field(default_factory=list)
    relative_gap: list = field(default_factory=list)
    consensus_error: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    z_sum: list = field(default_factory=list)
    lyapunov: list = field(default_factory=list)
    msgs_scalars: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    final_state: Optional[dict] = None
    retries: list = field(default_factory=list)

    def append(self, k, gap, cons, viol, zs, lyap, msgs, wall):
        self.iters.append(k)
        self.relative_gap.append(gap)
        self.consensus_error.append(cons)
        self.violation.append(viol)
        self.z_sum.append(zs)
        self.lyapunov.append(lyap)
        self.msgs_scalars.append(msgs)
        self.wall_time.append(wall)

    def as_arrays(self) -> dict:
        return {c: np.asarray(getattr(self, "iters" if c == "iter" else c), dtype=float) for c in CSV_COLUMNS}

    def iters_to(self, tol: float, metric: str = "relative_gap") -> Optional[int]:
        for k, v in zip(self.iters, getattr(self, metric)):
            if v <= tol:
                return k
        return None

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        cols = list(CSV_COLUMNS) + (["stop_reason"] if self.stop_reason else [])
        wr.writerow(cols)
        last = len(self.iters) - 1
        for idx, k in enumerate(self.iters):
            row = [k] + [repr(float(getattr(self, c)[idx])) for c in CSV_COLUMNS[1:6]] + [self.msgs_scalars[idx]]
            if self.stop_reason:
                row.append(self.stop_reason if idx == last else "")
            wr.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ----------------------------------------------------------------- metrics

def relative_gap(x_k, x_0, oracle, mode: str, inst: ProblemInstance) -> float:
    """``|f(x_k)-f*|/|f(x_0)-f*|`` (convex) or ``||x_k-x*||/||x_0-x*||`` (strongly convex).

    ``oracle`` is anything with ``x`` and ``f`` attributes, or a dict with keys ``x*``/``f*``.
    """
    x_star, f_star = _oracle_xf(oracle)
    if mode == "convex":
        num = abs(inst.objective(x_k) - f_star)
        den = abs(inst.objective(x_0) - f_star)
    elif mode == "strongly_convex":
        num = float(np.linalg.norm(np.asarray(x_k) - x_star))
        den = float(np.linalg.norm(np.asarray(x_0) - x_star))
    else:
        raise ValueError(f"unknown gap mode {mode!r}")
    if den == 0.0:
        raise GapError("relative gap undefined: x(0) is optimal")
    return num / den


def _oracle_xf(oracle):
    if isinstance(oracle, dict):
        return np.asarray(oracle["x*"], dtype=float), float(oracle["f*"])
    return np.asarray(oracle.x, dtype=float), float(oracle.f)


def consensus_error(lambdas) -> float:
    lam = np.atleast_2d(np.asarray(lambdas, dtype=float))
    return float(np.max(np.linalg.norm(lam - lam.mean(axis=0), axis=1)))


def lyapunov_phi(state: dict, eq: dict, phi: float, alpha: float, inst: ProblemInstance) -> float:
    """Lyapunov candidate of the projected IDEA flow.

    ``state`` and ``eq`` hold ``w`` (or ``x``), ``lam`` and ``z`` in stacked
    form; ``eq`` additionally holds the primal optimum ``x``.
    """
    w = np.asarray(state["w"] if "w" in state else state["x"], dtype=float)
    x_star = np.asarray(eq["x"], dtype=float)
    dl = np.asarray(state["lam"]) - np.asarray(eq["lam"])
    dz = np.asarray(state["z"]) - np.asarray(eq["z"])
    psi = np.sum((w - x_star) ** 2) - np.sum((w - inst.project(w)) ** 2)
    mix = alpha * dl + dz
    return float(0.5 * (phi + 1.0) * psi + 0.5 * phi * alpha * np.sum(dl**2) + np.sum(mix**2) / (2.0 * alpha))


def explicit_tracking_residual(inst: ProblemInstance, x, r) -> float:
    """``max_i ||r_i - ((1/n) sum_j A_j x_j - b/n)||``."""
    target = (inst.A @ x - inst.b) / inst.n
    return float(np.max(np.linalg.norm(np.asarray(r) - target, axis=1)))


# ------------------------------------------------------------ euler step

def euler_step(states: Sequence[AgentState], derivs: Sequence[dict], delta: float,
               boxes=None, iteration: int = 0) -> list[AgentState]:
    """Advance every variable by ``delta`` times its derivative.

    ``derivs[i]`` is keyed by variable name (``x`` or ``w``, ``lam``, ``z``,
    ``r``). When a ``w`` derivative is present, ``x`` is recomputed as the
    projection of the new ``w`` onto ``boxes[i]``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    out = []
    for i, (s, d) in enumerate(zip(states, derivs)):
        ns = s.copy()
        for name, dv in d.items():
            setattr(ns, name, getattr(ns, name) + delta * dv)
        if "w" in d:
            ns.x = project_box(boxes[i], ns.w) if boxes is not None else ns.w.copy()
        for name in ("x", "w", "lam", "z", "r"):
            v = getattr(ns, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise DivergenceError(iteration, f"non-finite {name} at agent {i}", delta)
        out.append(ns)
    return out


# ----------------------------------------------------------------- state

def initial_state(inst: ProblemInstance, cfg: RunConfig) -> dict:
    alg = cfg.algorithm
    if cfg.init_state is not None:
        st = {k: np.array(v, dtype=float) for k, v in cfg.init_state.items()}
    else:
        rng = np.random.default_rng(cfg.seed)
        st = {"w": rng.uniform(cfg.init_low, cfg.init_high, inst.d)}
        if alg == "apgd":
            st["lam"] = np.zeros(inst.p)
        else:
            st["lam"] = np.zeros((inst.n, inst.p))
            st["z"] = np.zeros((inst.n, inst.p))
    if alg != "apgd":
        st.setdefault("z", np.zeros((inst.n, inst.p)))
        if alg in EDEA_FAMILY:
            st.setdefault("r", np.zeros((inst.n, inst.p)))
    return st


def primal(inst: ProblemInstance, alg: str, st: dict) -> np.ndarray:
    return inst.project(st["w"]) if alg in PROJECTED else st["w"]


def to_agent_states(inst: ProblemInstance, alg: str, st: dict) -> list[AgentState]:
    x = primal(inst, alg, st)
    out = []
    for i in range(inst.n):
        wi = inst.block(st["w"], i).copy()
        out.append(AgentState(
            x=inst.block(x, i).copy(),
            lam=st["lam"][i].copy(),
            z=st["z"][i].copy(),
            w=wi if alg in PROJECTED else None,
            r=st["r"][i].copy() if alg in EDEA_FAMILY else None,
        ))
    return out


def from_agent_states(alg: str, states: Sequence[AgentState]) -> dict:
    st = {
        "w": np.concatenate([s.w if alg in PROJECTED else s.x for s in states]),
        "lam": np.stack([s.lam for s in states]),
        "z": np.stack([s.z for s in states]),
    }
    if alg in EDEA_FAMILY:
        st["r"] = np.stack([s.r for s in states])
    return st


# ------------------------------------------------------------------- run

class _Monitor:
    """Flags divergence: non-finite values, runaway state, or sustained field growth."""

    def __init__(self):
        self.f0 = None
        self.fmin = None

    def check(self, k: int, st: dict, der: dict, delta: float):
        fn = math.sqrt(sum(float(np.sum(v * v)) for v in der.values()))
        sn = max(float(np.max(np.abs(v))) for v in st.values())
        if not (math.isfinite(fn) and math.isfinite(sn)):
            raise DivergenceError(k, "non-finite state", delta)
        if sn > STATE_LIMIT:
            raise DivergenceError(k, f"state magnitude {sn:.3e}", delta)
        if self.f0 is None:
            self.f0 = self.fmin = fn
            return
        self.fmin = min(self.fmin, fn)
        ref = max(self.fmin, 1e-9 * self.f0)
        if fn > GROWTH_FACTOR * ref and fn > NOISE_FLOOR * self.f0:
            raise DivergenceError(k, f"field norm grew from {self.fmin:.3e} to {fn:.3e}", delta)


def _equilibrium_for(inst, cfg, oracle):
    # the monitored function is the one of the augmented IDEA flows
    if oracle is None or cfg.algorithm not in ("idea", "proj-idea"):
        return None
    eq = equilibrium(cfg.algorithm, inst, oracle.x, oracle.lam, cfg.params)
    eq["x"] = np.asarray(oracle.x, dtype=float)
    return eq


def run(inst: ProblemInstance, cfg: RunConfig, oracle=None, transcript: Optional[Transcript] = None,
        exchange: Callable = exchange_round, on_record: Optional[Callable] = None) -> Trajectory:
    """Simulate ``cfg.algorithm`` for ``cfg.max_iters`` synchronous rounds.

    Each round the agents broadcast their messages, the network delivers them,
    every agent evaluates its field and takes an Euler step, and metrics are
    recorded every ``cfg.record_every`` rounds (and at the last one).
    ``oracle`` supplies ``x``, ``lam`` and ``f`` for the gap and Lyapunov
    columns; without it those columns are NaN. ``on_record(k, state)`` is
    called at every recorded iterate with the stacked state.
    """
    alg, prm = cfg.algorithm, cfg.params
    if alg != "apgd":
        topo = check_topology(inst.graph)
        if not (topo["connected_or_strongly_connected"] and topo["weight_balanced"]):
            log.warning("graph %s is not strongly connected and weight-balanced", inst.graph.name)
        if any(not inst.graph.in_neighbors(i) for i in range(inst.n)):
            raise ValueError("every agent needs at least one in-neighbor")
    if cfg.engine == "agent" and alg == "apgd":
        raise ValueError("APGD is centralized; use the network engine")

    mode = cfg.gap_mode or ("strongly_convex" if inst.strongly_convex else "convex")
    per_round = 0 if alg == "apgd" else comm_cost(alg, inst.graph, inst.p).scalars_sent_per_round
    lap = inst.graph.laplacian()
    eq = _equilibrium_for(inst, cfg, oracle) if cfg.track_lyapunov else None

    st = initial_state(inst, cfg)
    x0 = primal(inst, alg, st)
    gap_den = None
    if oracle is not None:
        x_star, f_star = _oracle_xf(oracle)
        if mode == "convex":
            gap_den = abs(inst.objective(x0) - f_star)
        else:
            gap_den = float(np.linalg.norm(x0 - x_star))
        scale = abs(f_star) if mode == "convex" else float(np.linalg.norm(x_star))
        if gap_den <= DEGENERATE_GAP * max(1.0, scale):
            log.info("x(0) is optimal to round-off; reporting the absolute gap")
            gap_den = 1.0

    traj = Trajectory(alg, prm.delta)
    t0 = time.perf_counter()

    def record(k):
        x = primal(inst, alg, st)
        if oracle is None:
            gap = math.nan
        elif mode == "convex":
            gap = abs(inst.objective(x) - f_star) / gap_den
        else:
            gap = float(np.linalg.norm(x - x_star)) / gap_den
        viol = float(np.linalg.norm(inst.A @ x - inst.b))
        if alg == "apgd":
            cons, zs = 0.0, 0.0
        else:
            cons = consensus_error(st["lam"])
            zs = float(np.linalg.norm(st["z"].sum(axis=0)))
        lyap = lyapunov_phi(st, eq, prm.phi, prm.alpha, inst) if eq is not None else math.nan
        traj.append(k, gap, cons, viol, zs, lyap, k * per_round, time.perf_counter() - t0)
        if on_record is not None:
            on_record(k, st)
        if cfg.stop_metric is not None:
            val = {"relative_gap": gap, "consensus_error": cons, "violation": viol}[cfg.stop_metric]
            if val <= cfg.stop_tol:
                return f"{cfg.stop_metric}<={cfg.stop_tol:g}"
        return None

    monitor = _Monitor()
    reason = record(0)
    states = to_agent_states(inst, alg, st) if cfg.engine == "agent" else None
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is reported by the monitor
        while reason is None and k < cfg.max_iters:
            k += 1
            if cfg.engine == "network":
                der = network_rhs(alg, inst, lap, prm, st["w"], st["lam"], st.get("z"), st.get("r"))
                st = {name: st[name] + prm.delta * der[name] for name in st}
            else:
                states, der_list = _agent_round(inst, alg, prm, states, k, transcript, exchange)
                states = euler_step(states, der_list, prm.delta, [lp.box for lp in inst.locals], k)
                st = from_agent_states(alg, states)
                der = {"f": np.concatenate([np.concatenate([v.ravel() for v in d.values()]) for d in der_list])}
            rec = k % cfg.record_every == 0 or k == cfg.max_iters
            if rec or k == 1 or k % cfg.check_every == 0:
                monitor.check(k, st, der, prm.delta)
            if rec:
                reason = record(k)
    traj.stop_reason = reason
    traj.final_state = st
    return traj


def _agent_round(inst, alg, prm, states, rnd, transcript, exchange):
    """One synchronous round of the per-agent engine: broadcast, deliver, evaluate."""
    edea = alg in EDEA_FAMILY
    outboxes = [NeighborMsg(i, s.lam.copy(), s.r.copy() if edea else None) for i, s in enumerate(states)]
    inboxes = exchange(inst.graph, outboxes)
    if transcript is not None:
        transcript.deliver(rnd, inboxes, inst.p)
    ders = []
    for i, (s, lp) in enumerate(zip(states, inst.locals)):
        weights = {j: float(inst.graph.weights[i, j]) for j in inst.graph.in_neighbors(i)}
        if transcript is not None:
            for kind in ("own_state", "own_problem", "b_share", "params"):
                transcript.read(rnd, i, kind, i)
            for m in inboxes[i]:
                transcript.read(rnd, i, "msg", m.sender, msg_round=rnd, payload="lam+r" if edea else "lam")
        ders.append(agent_derivatives(alg, s, lp, inboxes[i], weights, prm))
    return states, ders


def run_with_retry(inst: ProblemInstance, cfg: RunConfig, oracle=None, max_halvings: int = 6, **kw) -> Trajectory:
    """:func:`run`, halving the step size after each divergence (each retry logged)."""
    tried = []
    for _ in range(max_halvings + 1):
        try:
            traj = run(inst, cfg, oracle, **kw)
            traj.retries = tried
            return traj
        except DivergenceError as err:
            tried.append((cfg.params.delta, err.iteration, err.reason))
            new = cfg.params.delta / 2.0
            log.warning("%s diverged at iteration %d with delta=%g (%s); retrying with delta=%g",
                        cfg.algorithm, err.iteration, cfg.params.delta, err.reason, new)
            cfg = replace(cfg, params=cfg.params.with_(delta=new))
    raise DivergenceError(tried[-1][1], f"still diverging after {max_halvings} halvings", cfg.params.delta)


# ------------------------------------------------- implicit tracking demo

@dataclass(frozen=True)
class ConsensusQuadratic:
    """``h_i(x) = 0.5 x' Q_i x + q_i' x`` on a shared decision variable."""

    Q: np.ndarray  # (n, m, m)
    q: np.ndarray  # (n, m)

    @classmethod
    def random(cls, n: int, m: int, seed: int) -> "ConsensusQuadratic":
        rng = np.random.default_rng(seed)
        B = rng.uniform(-1.0, 1.0, (n, m, m))
        Q = np.einsum("nij,nkj->nik", B, B) + np.eye(m)
        return cls(Q, rng.uniform(-1.0, 1.0, (n, m)))

    def grads(self, X) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.Q, X) + self.q

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.Q.sum(axis=0), -self.q.sum(axis=0))


def run_implicit_tracking(prob: ConsensusQuadratic, graph, gamma: float, beta: float, delta: float,
                          iters: int, seed: int = 0):
    """Euler-integrate ``x' = -gamma grad h - z - beta L x``, ``z' = gamma beta L x`` with z(0) = 0."""
    lap = graph.laplacian()
    n, m = prob.q.shape
    X = np.random.default_rng(seed).uniform(-1.0, 1.0, (n, m))
    Z = np.zeros((n, m))
    for k in range(iters):
        LX = lap @ X
        dX = -gamma * prob.grads(X) - Z - beta * LX
        Z = Z + delta * gamma * beta * LX
        X = X + delta * dX
        if not np.all(np.isfinite(X)):
            raise DivergenceError(k + 1, "non-finite x", delta)
    return X, Z


def implicit_tracking_residual(prob: ConsensusQuadratic, X, Z, gamma: float) -> float:
    """``max_i ||gamma grad h_i(x_i) + z_i - (gamma/n) sum_j grad h_j(x_j)||``."""
    G = prob.grads(X)
    return float(np.max(np.linalg.norm(gamma * G + Z - gamma * G.mean(axis=0), axis=1)))
