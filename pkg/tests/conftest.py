import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from coupledopt.graph import Graph, build_complete, build_cycle
from coupledopt.problem import BoxSet, LinearCost, LocalProblem, ProblemInstance, QuadraticDiagonalCost

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_instance(costs, As, bs, graph, boxes=None):
    """Small hand-built instance; ``bs`` are the local shares b_i."""
    locs = []
    for i, (c, A, b) in enumerate(zip(costs, As, bs)):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        box = boxes[i] if boxes is not None else BoxSet.whole_space(A.shape[1])
        locs.append(LocalProblem(c, A, np.atleast_1d(np.asarray(b, dtype=float)), box))
    return ProblemInstance(locs, graph, np.sum([lp.b for lp in locs], axis=0))


def random_quadratic_instance(n, p, d, seed, graph=None, boxes=False):
    rng = np.random.default_rng(seed)
    graph = graph or build_cycle(n)
    costs = [QuadraticDiagonalCost(rng.uniform(0.5, 2.0, d), rng.uniform(-2, 2, d)) for _ in range(n)]
    As = [rng.uniform(-1, 1, (p, d)) for _ in range(n)]
    xhat = rng.uniform(-0.5, 0.5, n * d)
    b = sum(A @ xhat[i * d:(i + 1) * d] for i, A in enumerate(As))
    bx = None
    if boxes:
        bx = [BoxSet(rng.uniform(-1.5, -0.6, d), rng.uniform(0.6, 1.5, d)) for _ in range(n)]
    return make_instance(costs, As, [b / n] * n, graph, bx)


@pytest.fixture
def two_agent_quadratic():
    """f_i = x_i^2, A = [1 1], b = 2 on the complete graph with two agents."""
    return make_instance(
        [QuadraticDiagonalCost([1.0], [0.0])] * 2, [[[1.0]], [[1.0]]], [[1.0], [1.0]], build_complete(2)
    )


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
