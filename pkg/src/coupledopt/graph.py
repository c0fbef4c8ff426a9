"""Communication topologies and their Laplacian spectra.

Convention: ``weights[i, j] > 0`` means agent ``i`` receives from agent ``j``.
The Laplacian is ``L = D_out - A`` with ``D_out = diag(A @ 1)``; self-loops
cancel and are dropped before it is formed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

MAX_CONNECT_RETRIES = 1000


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    n: int
    weights: np.ndarray
    directed: bool
    name: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.n, self.n):
            raise GraphError(f"weights must be {self.n}x{self.n}, got {w.shape}")
        if np.any(w < 0):
            raise GraphError("weights must be nonnegative")
        if not self.directed and not np.array_equal(w, w.T):
            raise GraphError("undirected graph needs symmetric weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def in_neighbors(self, i: int) -> list[int]:
        """Agents that ``i`` receives from, excluding itself, in id order."""
        return [j for j in np.flatnonzero(self.weights[i]) if j != i]

    def out_neighbors(self, j: int) -> list[int]:
        return [i for i in np.flatnonzero(self.weights[:, j]) if i != j]

    def edges(self) -> list[tuple[int, int, float]]:
        """Directed edges ``(receiver, sender, weight)`` without self-loops."""
        rows, cols = np.nonzero(self.weights)
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(rows, cols) if i != j]

    @property
    def num_directed_edges(self) -> int:
        return len(self.edges())

    def laplacian(self) -> np.ndarray:
        a = self.weights.copy()
        np.fill_diagonal(a, 0.0)
        return np.diag(a.sum(axis=1)) - a

    def in_degrees(self) -> np.ndarray:
        a = self.weights.copy()
        np.fill_diagonal(a, 0.0)
        return a.sum(axis=0)

    def out_degrees(self) -> np.ndarray:
        a = self.weights.copy()
        np.fill_diagonal(a, 0.0)
        return a.sum(axis=1)


@dataclass(frozen=True)
class SpectralInfo:
    laplacian: np.ndarray
    hat_laplacian: np.ndarray
    eta2_hat: float
    lambda_max_hat: float


def build_cycle(n: int, directed: bool = False) -> Graph:
    """Unit-weight ring. The directed ring passes information i -> i+1."""
    if n < 3:
        raise GraphError("cycle needs n >= 3")
    w = np.zeros((n, n))
    for i in range(n):
        w[(i + 1) % n, i] = 1.0
        if not directed:
            w[i, (i + 1) % n] = 1.0
    return Graph(n, w, directed, name=("directed_cycle" if directed else "cycle"))


def build_complete(n: int) -> Graph:
    w = np.ones((n, n)) - np.eye(n)
    return Graph(n, w, False, name="complete")


def _sample_er(n: int, p_conn: float, rng: np.random.Generator) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p_conn, k=1)
    w = (upper | upper.T).astype(float)
    return w


def build_random_undirected(n: int, p_conn: float, seed: int) -> Graph:
    """Erdos-Renyi sample with unit weights, resampled until connected.

    Attempt ``k`` uses seed ``seed + k``; at most ``MAX_CONNECT_RETRIES`` tries.
    """
    if not 0.0 < p_conn <= 1.0:
        raise GraphError("p_conn must lie in (0, 1]")
    for k in range(MAX_CONNECT_RETRIES):
        rng = np.random.default_rng(seed + k)
        w = _sample_er(n, p_conn, rng)
        g = Graph(n, w, False, name=f"random_p{p_conn:g}")
        if _reachable(g.weights.T, 0).all():
            return g
    raise GraphError(f"no connected sample for n={n}, p={p_conn} in {MAX_CONNECT_RETRIES} tries")


def build_directed_exponential(n: int, e: int) -> Graph:
    """Node i sends to (i + 2**j) mod n for j = 0..e-1.

    The offsets ``2**j mod n`` must be nonzero and pairwise distinct, so
    e = 6 is accepted for n = 20 (offset 32 wraps to 12).
    """
    offsets = [pow(2, j, n) for j in range(e)] if e >= 1 else []
    if e < 1 or 0 in offsets or len(set(offsets)) != e:
        raise GraphError(f"offsets 2**j mod n must be nonzero and distinct (n={n}, e={e})")
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(e):
            w[(i + 2**j) % n, i] = 1.0
    return Graph(n, w, True, name=f"exponential_e{e}")


def _reachable(adj: np.ndarray, src: int) -> np.ndarray:
    """BFS over ``adj[u, v] > 0`` meaning an arc u -> v."""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[src] = True
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[u]):
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen


def spectral_info(g: Graph) -> SpectralInfo:
    if g.n < 1:
        raise GraphError("empty graph")
    lap = g.laplacian()
    hat = 0.5 * (lap + lap.T)
    eig = np.linalg.eigvalsh(hat)
    eta2 = float(eig[1]) if g.n > 1 else 0.0
    return SpectralInfo(lap, hat, eta2, float(eig[-1]))


def check_topology(g: Graph) -> dict:
    """Strong connectivity (forward and reverse BFS from node 0) and weight balance."""
    # information flows sender j -> receiver i when weights[i, j] > 0
    flow = g.weights.T
    forward = _reachable(flow, 0)
    backward = _reachable(flow.T, 0)
    connected = bool(forward.all() and backward.all())
    imbalance = np.max(np.abs(g.in_degrees() - g.out_degrees())) if g.n else 0.0
    return {
        "connected_or_strongly_connected": connected,
        "weight_balanced": bool(imbalance <= 1e-12),
    }


def to_edgelist(g: Graph) -> str:
    """Header ``n directed`` then one ``i j weight`` line per edge (i receives from j).

    Undirected graphs list each edge once with ``i < j``.
    """
    lines = [f"{g.n} {int(g.directed)}"]
    for i, j, wt in g.edges():
        if g.directed or i < j:
            lines.append(f"{i} {j} {wt!r}")
    return "\n".join(lines) + "\n"


def from_edgelist(text: str, name: str = "") -> Graph:
    rows = [ln.split() for ln in text.strip().splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise GraphError("edge list needs a 'n directed' header line")
    n, directed = int(rows[0][0]), bool(int(rows[0][1]))
    w = np.zeros((n, n))
    for r in rows[1:]:
        if len(r) != 3:
            raise GraphError(f"bad edge line: {' '.join(r)}")
        i, j, wt = int(r[0]), int(r[1]), float(r[2])
        w[i, j] = wt
        if not directed:
            w[j, i] = wt
    return Graph(n, w, directed, name=name)


def undirected_topologies(n: int, seed: int) -> list[Graph]:
    """The undirected comparison set: cycle and random graphs with p = 0.05, 0.1, 0.3."""
    return [build_cycle(n)] + [build_random_undirected(n, p, seed) for p in (0.05, 0.1, 0.3)]


def directed_topologies(n: int) -> list[Graph]:
    """The digraph comparison set: directed cycle and exponential graphs with e = 2, 4, 6."""
    return [build_cycle(n, directed=True)] + [build_directed_exponential(n, e) for e in (2, 4, 6)]
