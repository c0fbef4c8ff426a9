"""Local costs, box sets, constraint blocks and the four experiment cases.

A problem instance is

    min  sum_i f_i(x_i)   s.t.  sum_i A_i x_i = b,   x_i in X_i,

where each ``f_i`` is linear ``c.x`` or diagonal quadratic ``x' diag(a) x + c.x``
and each ``X_i`` is a (possibly unbounded) box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np

from .graph import Graph, build_cycle, from_edgelist, to_edgelist

RANK_RETRIES = 100
INF_PROB = 0.3


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class BoxSet:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ProblemError("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi) or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ProblemError("box needs lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def whole_space(cls, dim: int) -> "BoxSet":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def is_whole_space(self) -> bool:
        return bool(np.all(np.isneginf(self.lower)) and np.all(np.isposinf(self.upper)))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


@dataclass(frozen=True)
class LinearCost:
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))


@dataclass(frozen=True)
class QuadraticDiagonalCost:
    """``f(x) = sum_k a_k x_k**2 + c.x`` with every ``a_k > 0``."""

    a: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if a.shape != c.shape:
            raise ProblemError("a and c must have equal shape")
        if np.any(a <= 0):
            raise ProblemError("quadratic cost needs a positive definite diagonal")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)


Cost = Union[LinearCost, QuadraticDiagonalCost]


@dataclass(frozen=True)
class LocalProblem:
    cost: Cost
    A: np.ndarray
    b: np.ndarray
    box: BoxSet

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.size:
            raise ProblemError(f"A_i has {A.shape[0]} rows but b_i has {b.size} entries")
        if A.shape[1] != self.cost.c.size or self.box.dim != A.shape[1]:
            raise ProblemError("cost, A_i and box dimensions disagree")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def mu(self) -> float:
        if isinstance(self.cost, QuadraticDiagonalCost):
            return 2.0 * float(self.cost.a.min())
        return 0.0

    @property
    def smoothness(self) -> float:
        if isinstance(self.cost, QuadraticDiagonalCost):
            return 2.0 * float(self.cost.a.max())
        return 0.0

    @property
    def sigma_max(self) -> float:
        return float(np.linalg.norm(self.A, 2))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if isinstance(self.cost, QuadraticDiagonalCost):
            return float(np.dot(self.cost.a * x, x) + np.dot(self.cost.c, x))
        return float(np.dot(self.cost.c, x))


def grad_local(lp: LocalProblem, x_i) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=float)
    if isinstance(lp.cost, QuadraticDiagonalCost):
        return 2.0 * lp.cost.a * x_i + lp.cost.c
    return lp.cost.c.copy()


def project_box(box: BoxSet, y) -> np.ndarray:
    return np.minimum(np.maximum(np.asarray(y, dtype=float), box.lower), box.upper)


@dataclass(frozen=True)
class ProblemInstance:
    locals: tuple
    graph: Graph
    b: np.ndarray
    case_id: Optional[int] = None
    seed: Optional[int] = None
    interior_point: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "locals", tuple(self.locals))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "b", b)
        if len(self.locals) != self.graph.n:
            raise ProblemError(f"{len(self.locals)} local problems for {self.graph.n} agents")
        if any(lp.A.shape[0] != b.size for lp in self.locals):
            raise ProblemError("every A_i must have p rows")
        split_sum = np.sum([lp.b for lp in self.locals], axis=0)
        if np.max(np.abs(split_sum - b)) > 1e-12 * max(1.0, np.max(np.abs(b))):
            raise ProblemError("local shares b_i must sum to b")

    @property
    def n(self) -> int:
        return len(self.locals)

    @property
    def p(self) -> int:
        return self.b.size

    @cached_property
    def dims(self) -> np.ndarray:
        return np.array([lp.dim for lp in self.locals])

    @property
    def d(self) -> int:
        return int(self.dims.sum())

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    def block(self, x, i: int) -> np.ndarray:
        return np.asarray(x)[self.offsets[i]:self.offsets[i + 1]]

    def split(self, x) -> list:
        return [self.block(x, i) for i in range(self.n)]

    @cached_property
    def A(self) -> np.ndarray:
        """Assembled ``[A_1, ..., A_n]`` of shape (p, d)."""
        return np.hstack([lp.A for lp in self.locals])

    @cached_property
    def A_blockdiag(self) -> np.ndarray:
        """``diag(A_1, ..., A_n)`` of shape (n p, d)."""
        out = np.zeros((self.n * self.p, self.d))
        for i, lp in enumerate(self.locals):
            out[i * self.p:(i + 1) * self.p, self.offsets[i]:self.offsets[i + 1]] = lp.A
        return out

    @cached_property
    def b_split(self) -> np.ndarray:
        return np.stack([lp.b for lp in self.locals])

    @cached_property
    def quad(self) -> np.ndarray:
        """Stacked diagonal curvature ``a`` (zero for linear agents)."""
        return np.concatenate([
            lp.cost.a if isinstance(lp.cost, QuadraticDiagonalCost) else np.zeros(lp.dim)
            for lp in self.locals
        ])

    @cached_property
    def c(self) -> np.ndarray:
        return np.concatenate([lp.cost.c for lp in self.locals])

    @cached_property
    def lower(self) -> np.ndarray:
        return np.concatenate([lp.box.lower for lp in self.locals])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.concatenate([lp.box.upper for lp in self.locals])

    @property
    def unconstrained(self) -> bool:
        return all(lp.box.is_whole_space for lp in self.locals)

    @property
    def strongly_convex(self) -> bool:
        return all(isinstance(lp.cost, QuadraticDiagonalCost) for lp in self.locals)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.dot(self.quad * x, x) + np.dot(self.c, x))

    def gradient(self, x) -> np.ndarray:
        return 2.0 * self.quad * x + self.c

    def project(self, y) -> np.ndarray:
        return np.minimum(np.maximum(y, self.lower), self.upper)

    def with_graph(self, graph: Graph) -> "ProblemInstance":
        return ProblemInstance(self.locals, graph, self.b, self.case_id, self.seed, self.interior_point)


def curvature_constants(inst: ProblemInstance) -> dict:
    return {
        "mu": min(lp.mu for lp in inst.locals),
        "l": max(lp.smoothness for lp in inst.locals),
        "sigma_max_A": float(np.linalg.norm(inst.A, 2)),
        "sigma_max_blocks": max(lp.sigma_max for lp in inst.locals),
    }


def constraint_residual(inst: ProblemInstance, x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.d,):
        raise ProblemError(f"x must have shape ({inst.d},), got {x.shape}")
    v = inst.A @ x - inst.b
    return {"vector": v, "norm": float(np.linalg.norm(v))}


# ---------------------------------------------------------------- generators

CASE_SHAPES = {1: (50, 10), 2: (50, 10), 3: (20, 4), 4: (20, 2)}


def _random_box(rng: np.random.Generator, dim: int) -> BoxSet:
    """Bounds on [-5, 0] and [0, 5], each side infinite with probability 0.3.

    A coordinate never loses both sides: if both come up infinite the lower
    bound is kept, so every linear cost has a bounded, well-posed optimum.
    """
    lo = rng.uniform(-5.0, 0.0, dim)
    hi = rng.uniform(0.0, 5.0, dim)
    lo_inf = rng.random(dim) < INF_PROB
    hi_inf = rng.random(dim) < INF_PROB
    lo[lo_inf & ~hi_inf] = -np.inf
    hi[hi_inf] = np.inf
    return BoxSet(lo, hi)


def _interior_point(rng: np.random.Generator, box: BoxSet) -> np.ndarray:
    lo = np.where(np.isfinite(box.lower), box.lower, -5.0)
    hi = np.where(np.isfinite(box.upper), box.upper, 5.0)
    return lo + (hi - lo) * rng.uniform(0.1, 0.9, lo.size)


def _bounded_lp_costs(rng, boxes, A_blocks, p):
    """Linear costs whose LP is bounded below on every generated box.

    Reduced costs ``g = c + A_i' lam`` are drawn sign-compatible with each
    coordinate's recession direction (magnitude at least 0.5 on one-sided
    boxes), so ``lam`` is dual feasible.
    """
    lam = rng.uniform(-1.0, 1.0, p)
    costs = []
    for box, Ai in zip(boxes, A_blocks):
        g = rng.uniform(-5.0, 5.0, box.dim)
        mag = rng.uniform(0.5, 5.0, box.dim)
        g = np.where(np.isposinf(box.upper), mag, g)
        g = np.where(np.isneginf(box.lower), -mag, g)
        costs.append(LinearCost(g - Ai.T @ lam))
    return costs


def generate_case(case_id: int, seed: int = 0, graph: Optional[Graph] = None) -> ProblemInstance:
    """Build experiment case 1-4 deterministically from ``seed``.

    The default graph is the (directed) cycle of the case; pass ``graph`` to
    place the same data on another topology.
    """
    if case_id not in CASE_SHAPES:
        raise ProblemError(f"case_id must be 1..4, got {case_id}")
    n, p = CASE_SHAPES[case_id]
    dim = 2
    rng = np.random.default_rng([case_id, seed])

    if case_id == 4:
        A_blocks = [np.eye(p) for _ in range(n)]
    else:
        for _ in range(RANK_RETRIES):
            A_blocks = [rng.uniform(-1.0, 1.0, (p, dim)) for _ in range(n)]
            if np.linalg.matrix_rank(np.hstack(A_blocks)) == p:
                break
        else:
            raise ProblemError("could not draw a full-row-rank A")

    if case_id in (1, 3):
        boxes = [_random_box(rng, dim) for _ in range(n)]
    else:
        boxes = [BoxSet.whole_space(dim) for _ in range(n)]

    if case_id == 1:
        costs = _bounded_lp_costs(rng, boxes, A_blocks, p)
    else:
        costs = [QuadraticDiagonalCost(rng.uniform(0.5, 2.0, dim), rng.uniform(-5.0, 5.0, dim))
                 for _ in range(n)]

    xhat = np.concatenate([_interior_point(rng, bx) for bx in boxes])
    b = np.hstack(A_blocks) @ xhat
    locals_ = [LocalProblem(costs[i], A_blocks[i], b / n, boxes[i]) for i in range(n)]
    # b/n summed n times may differ from b in the last bit; take the sum as b
    b_exact = np.sum([lp.b for lp in locals_], axis=0)
    if graph is None:
        graph = build_cycle(n, directed=case_id in (3, 4))
    if graph.n != n:
        raise ProblemError(f"case {case_id} needs a graph on {n} agents")
    return ProblemInstance(locals_, graph, b_exact, case_id, seed, xhat)


# ------------------------------------------------------------- serialization

def _enc(v):
    return [None if not np.isfinite(t) else float(t) for t in np.asarray(v, dtype=float)]


def _dec(v, fill):
    return np.array([fill if t is None else t for t in v], dtype=float)


def instance_to_dict(inst: ProblemInstance) -> dict:
    costs = []
    for lp in inst.locals:
        if isinstance(lp.cost, QuadraticDiagonalCost):
            costs.append({"kind": "quadratic_diagonal", "a": _enc(lp.cost.a), "c": _enc(lp.cost.c)})
        else:
            costs.append({"kind": "linear", "c": _enc(lp.cost.c)})
    return {
        "n": inst.n,
        "p": inst.p,
        "d": [int(k) for k in inst.dims],
        "costs": costs,
        "A_blocks": [lp.A.tolist() for lp in inst.locals],
        "b": inst.b.tolist(),
        "b_split": inst.b_split.tolist(),
        "boxes": [{"lower": _enc(lp.box.lower), "upper": _enc(lp.box.upper)} for lp in inst.locals],
        "graph_ref": {"name": inst.graph.name, "edgelist": to_edgelist(inst.graph)},
        "seed": inst.seed,
        "case_id": inst.case_id,
    }


def instance_from_dict(doc: dict) -> ProblemInstance:
    n = int(doc["n"])
    b = np.asarray(doc["b"], dtype=float)
    split = np.asarray(doc.get("b_split") or [list(b / n)] * n, dtype=float)
    locals_ = []
    for i in range(n):
        cd = doc["costs"][i]
        if cd["kind"] == "linear":
            cost = LinearCost(np.asarray(cd["c"], dtype=float))
        elif cd["kind"] == "quadratic_diagonal":
            cost = QuadraticDiagonalCost(np.asarray(cd["a"], dtype=float), np.asarray(cd["c"], dtype=float))
        else:
            raise ProblemError(f"costs[{i}].kind: unknown cost kind {cd['kind']!r}")
        bx = doc["boxes"][i]
        box = BoxSet(_dec(bx["lower"], -np.inf), _dec(bx["upper"], np.inf))
        locals_.append(LocalProblem(cost, np.asarray(doc["A_blocks"][i], dtype=float), split[i], box))
    gref = doc["graph_ref"]
    graph = from_edgelist(gref["edgelist"], name=gref.get("name", ""))
    return ProblemInstance(locals_, graph, np.sum(split, axis=0), doc.get("case_id"), doc.get("seed"))


def save_instance(inst: ProblemInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1)


def load_instance(path) -> ProblemInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
