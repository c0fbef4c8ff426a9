"""Local convergence rate of projected IDEA on the Case-1 instances.

Near the optimum the active set is fixed, so the projected flow is linear.
This script builds that Jacobian for each undirected topology, reports the
slowest nonzero decay rate and converts it into the number of Euler steps
needed to shrink an error by 1e4 at the experiment step size. The
centralized projected flow is analysed the same way for comparison.

    python3 scripts/case1_rate_analysis.py [--seed N] [--alpha A] [--beta B]
"""

import argparse

import numpy as np

from coupledopt.dynamics import Params, equilibrium
from coupledopt.experiments import CASE_DELTA, case_instances
from coupledopt.oracle import solve


def free_mask(inst, w):
    return ((w >= inst.lower) & (w <= inst.upper)).astype(float)


def distributed_jacobian(inst, sol, alpha, beta):
    eq = equilibrium("proj-idea", inst, sol.x, sol.lam, Params(alpha=alpha, beta=beta))
    D = np.diag(free_mask(inst, eq["w"]))
    Ab = inst.A_blockdiag
    Lk = np.kron(inst.graph.laplacian(), np.eye(inst.p))
    Q = np.diag(2.0 * inst.quad)
    d, m = inst.d, inst.n * inst.p
    J = np.zeros((d + 2 * m, d + 2 * m))
    J[:d, :d] = -alpha * (np.eye(d) - D + Q @ D) - Ab.T @ Ab @ D
    J[:d, d:d + m] = -alpha * Ab.T
    J[:d, d + m:] = Ab.T
    J[d:d + m, :d] = Ab @ D
    J[d:d + m, d:d + m] = -beta * Lk
    J[d:d + m, d + m:] = -np.eye(m)
    J[d + m:, d:d + m] = alpha * beta * Lk
    return J


def central_jacobian(inst, sol, alpha):
    w = sol.x - inst.gradient(sol.x) - inst.A.T @ sol.lam
    D = np.diag(free_mask(inst, w))
    A, d, p = inst.A, inst.d, inst.p
    Q = np.diag(2.0 * inst.quad)
    J = np.zeros((d + p, d + p))
    J[:d, :d] = -alpha * (np.eye(d) - D + Q @ D) - A.T @ A @ D
    J[:d, d:] = -alpha * A.T
    J[d:, :d] = A @ D
    return J


def slowest_rate(J, tol=1e-9):
    re = np.linalg.eigvals(J).real
    if np.any(re > tol):
        return -float(re.max())
    moving = re[re < -tol]
    return float(-moving.max()) if moving.size else 0.0


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--beta", type=float, default=1.0)
    args = ap.parse_args()
    delta = CASE_DELTA[1]
    insts = case_instances(1, args.seed)
    sol = solve(insts[0])
    rc = slowest_rate(central_jacobian(insts[0], sol, args.alpha))
    print(f"centralized flow: slowest rate {rc:.3e}, steps for 1e4 reduction {np.log(1e4) / (rc * delta):.3g}")
    for inst in insts:
        r = slowest_rate(distributed_jacobian(inst, sol, args.alpha, args.beta))
        steps = np.log(1e4) / (r * delta) if r > 0 else np.inf
        print(f"{inst.graph.name:<14} slowest rate {r:.3e}, steps for 1e4 reduction {steps:.3g}")


if __name__ == "__main__":
    main()
