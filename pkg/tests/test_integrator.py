import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from coupledopt.dynamics import AgentState, Params, equilibrium
from coupledopt.experiments import case_params
from coupledopt.graph import build_complete, build_cycle, build_directed_exponential
from coupledopt.integrator import (
    CSV_COLUMNS,
    ConsensusQuadratic,
    DivergenceError,
    GapError,
    RunConfig,
    consensus_error,
    euler_step,
    explicit_tracking_residual,
    implicit_tracking_residual,
    lyapunov_phi,
    relative_gap,
    run,
    run_implicit_tracking,
    run_with_retry,
)
from coupledopt.oracle import solve
from coupledopt.problem import BoxSet, generate_case

from conftest import random_quadratic_instance


def _s(x, lam=0.0, z=0.0):
    return AgentState(np.atleast_1d(np.float64(x)), np.atleast_1d(np.float64(lam)), np.atleast_1d(np.float64(z)))


def test_euler_zero_field():
    s = [_s(1.5, 2.0, -1.0)]
    out = euler_step(s, [{"x": np.zeros(1), "lam": np.zeros(1), "z": np.zeros(1)}], 0.3)
    assert out[0].x[0] == 1.5 and out[0].lam[0] == 2.0 and out[0].z[0] == -1.0


def test_euler_scalar_decay():
    s = [_s(1.0)]
    out = euler_step(s, [{"x": -s[0].x}], 0.1)
    assert out[0].x[0] == pytest.approx(0.9, abs=1e-15)


def test_euler_projects_w():
    s = [AgentState(np.zeros(2), np.zeros(1), np.zeros(1), w=np.zeros(2))]
    out = euler_step(s, [{"w": np.array([5.0, -5.0])}], 1.0, boxes=[BoxSet([-1, -1], [1, 1])])
    assert np.array_equal(out[0].w, [5.0, -5.0]) and np.array_equal(out[0].x, [1.0, -1.0])


def test_euler_non_finite():
    with pytest.raises(DivergenceError) as err:
        euler_step([_s(1.0)], [{"x": np.array([np.inf])}], 0.1, iteration=17)
    assert err.value.iteration == 17 and "17" in str(err.value)


def test_euler_requires_positive_delta():
    with pytest.raises(ValueError):
        euler_step([_s(1.0)], [{"x": np.zeros(1)}], 0.0)


def test_discrete_idea_step_by_hand(two_agent_quadratic):
    """One Euler step of IDEA on f_i = x_i^2, A_i = 1, b_i = 1, complete graph."""
    inst = two_agent_quadratic
    a, b, d = 1.5, 2.0, 0.1
    prm = Params(alpha=a, beta=b, delta=d)
    init = {"w": np.array([0.3, -0.7]), "lam": np.array([[0.2], [-0.4]]), "z": np.array([[0.5], [-0.5]])}
    tr = run(inst, RunConfig("idea", prm, max_iters=1, record_every=1, init_state=init, engine="agent"))
    x, lam, z = [0.3, -0.7], [0.2, -0.4], [0.5, -0.5]
    exp_x, exp_l, exp_z = [], [], []
    for i, j in ((0, 1), (1, 0)):
        m = x[i] - 1.0 - z[i]
        ell = lam[i] - lam[j]
        exp_x.append(x[i] + d * (-a * (2 * x[i] + lam[i]) - m))
        exp_l.append(lam[i] + d * (m - b * ell))
        exp_z.append(z[i] + d * a * b * ell)
    st_ = tr.final_state
    assert np.max(np.abs(st_["w"] - exp_x)) <= 1e-15
    assert np.max(np.abs(st_["lam"].ravel() - exp_l)) <= 1e-15
    assert np.max(np.abs(st_["z"].ravel() - exp_z)) <= 1e-15


def test_relative_gap_examples():
    inst = generate_case(2, 0)
    sol = solve(inst)
    x0 = np.ones(inst.d)
    assert relative_gap(sol.x, x0, sol, "strongly_convex", inst) == 0.0
    assert relative_gap(x0, x0, sol, "strongly_convex", inst) == 1.0
    assert relative_gap(x0, x0, {"x*": sol.x, "f*": sol.f}, "convex", inst) == 1.0
    with pytest.raises(GapError):
        relative_gap(x0, sol.x, sol, "strongly_convex", inst)


def test_relative_gap_convex_halfway():
    inst = generate_case(1, 0)
    sol = solve(inst)
    x0 = inst.interior_point
    # f is linear, so the midpoint has the midpoint value
    xm = 0.5 * (x0 + sol.x)
    assert relative_gap(xm, x0, sol, "convex", inst) == pytest.approx(0.5, abs=1e-9)


def test_consensus_error_examples():
    assert consensus_error(np.ones((4, 3))) == 0.0
    assert consensus_error([[1.0], [0.0]]) == 0.5
    lam = np.random.default_rng(0).normal(size=(7, 3))
    brute = max(np.linalg.norm(l - lam.mean(axis=0)) for l in lam)
    assert consensus_error(lam) == pytest.approx(brute, rel=1e-14)


def _eq_state(inst, sol, prm, alg="proj-idea"):
    eq = equilibrium(alg, inst, sol.x, sol.lam, prm)
    return eq, {"x": sol.x, "lam": eq["lam"], "z": eq["z"]}


def test_lyapunov_zero_at_equilibrium():
    inst = random_quadratic_instance(5, 2, 2, 1, boxes=True)
    sol = solve(inst, tol=1e-12)
    prm = Params(alpha=2.0, phi=1.5)
    state, eq = _eq_state(inst, sol, prm)
    assert abs(lyapunov_phi(state, eq, prm.phi, prm.alpha, inst)) < 1e-18


@given(st.integers(0, 10_000), st.floats(0.1, 5), st.floats(0.1, 5))
def test_lyapunov_lower_bound(seed, phi, alpha):
    inst = random_quadratic_instance(4, 2, 2, 3, boxes=True)
    sol = solve(inst, tol=1e-10)
    _, eq = _eq_state(inst, sol, Params())
    rng = np.random.default_rng(seed)
    state = {"w": rng.normal(0, 3, inst.d), "lam": rng.normal(size=(4, 2)), "z": rng.normal(size=(4, 2))}
    v = lyapunov_phi(state, eq, phi, alpha, inst)
    assert v >= 0.5 * (phi + 1) * np.sum((inst.project(state["w"]) - sol.x) ** 2) - 1e-9


def test_lyapunov_unconstrained_reduces():
    inst = random_quadratic_instance(4, 2, 2, 3)
    sol = solve(inst)
    _, eq = _eq_state(inst, sol, Params(), "idea")
    rng = np.random.default_rng(0)
    w = rng.normal(size=inst.d)
    state = {"w": w, "lam": eq["lam"], "z": eq["z"]}
    assert lyapunov_phi(state, eq, 2.0, 1.0, inst) == pytest.approx(1.5 * np.sum((w - sol.x) ** 2), rel=1e-12)


def test_lyapunov_nonincreasing_short_run():
    inst = generate_case(3, 0).with_graph(build_directed_exponential(20, 2))
    sol = solve(inst)
    prm = case_params(3, inst, delta=1e-4)
    tr = run(inst, RunConfig("proj-idea", prm, max_iters=2000, record_every=1, track_lyapunov=True), sol)
    v = np.asarray(tr.lyapunov)
    assert np.all(np.diff(v) <= 1e-8)
    assert v[-1] < v[0]


@pytest.mark.parametrize("alg", ["idea", "proj-idea", "unaug-idea", "unaug-proj-idea", "edea", "proj-edea"])
def test_fixed_point_run(alg):
    boxes = "proj" in alg
    inst = random_quadratic_instance(5, 2, 2, 2, graph=build_directed_exponential(5, 2), boxes=boxes)
    sol = solve(inst, tol=1e-12)
    prm = Params(alpha=2.0, beta=3.0, delta=0.01)
    eq = equilibrium(alg, inst, sol.x, sol.lam, prm)
    tr = run(inst, RunConfig(alg, prm, max_iters=10_000, record_every=500, init_state=eq), sol)
    assert max(tr.relative_gap) <= 1e-9
    assert max(tr.consensus_error) <= 1e-8 and max(tr.violation) <= 1e-8


def test_case2_converges_with_tuned_params():
    inst = generate_case(2, 0)
    sol = solve(inst)
    prm = case_params(2, inst)
    cfg = RunConfig("idea", prm, max_iters=200_000, record_every=1000, stop_metric="relative_gap", stop_tol=1e-4)
    tr = run(inst, cfg, sol)
    assert tr.relative_gap[-1] <= 1e-4 and tr.stop_reason
    gaps = np.asarray(tr.relative_gap)
    assert np.all(np.diff(gaps[::5]) < 0)
    assert max(tr.z_sum) <= 1e-10


def test_deterministic_and_engines_agree():
    inst = random_quadratic_instance(5, 2, 2, 4, graph=build_directed_exponential(5, 2), boxes=True)
    sol = solve(inst)
    for alg in ("proj-idea", "proj-edea"):
        cfg = RunConfig(alg, Params(alpha=2.0, beta=2.0, delta=0.01), max_iters=60, record_every=7, seed=3)
        a, b = run(inst, cfg, sol), run(inst, cfg, sol)
        assert a.to_csv() == b.to_csv()
        c = run(inst, RunConfig(alg, cfg.params, max_iters=60, record_every=7, seed=3, engine="agent"), sol)
        for k in a.final_state:
            assert np.allclose(a.final_state[k], c.final_state[k], rtol=0, atol=1e-12)
        assert a.msgs_scalars == c.msgs_scalars


@pytest.mark.parametrize("iters,every", [(100, 10), (101, 10), (7, 3), (1, 5)])
def test_csv_rows(iters, every):
    inst = random_quadratic_instance(4, 2, 2, 0)
    tr = run(inst, RunConfig("idea", Params(delta=0.01), max_iters=iters, record_every=every), solve(inst))
    lines = tr.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) - 1 == math.ceil(iters / every) + 1


def test_csv_stop_reason_column(tmp_path):
    inst = random_quadratic_instance(4, 2, 2, 0, graph=build_complete(4))
    cfg = RunConfig("idea", Params(alpha=2, beta=2, delta=0.02), max_iters=100_000, record_every=10,
                    stop_metric="relative_gap", stop_tol=1e-2)
    tr = run(inst, cfg, solve(inst))
    text = tr.to_csv(tmp_path / "t.csv")
    rows = text.splitlines()
    assert rows[0].endswith(",stop_reason")
    assert rows[-1].endswith("relative_gap<=0.01") and rows[1].endswith(",")
    assert (tmp_path / "t.csv").read_text() == text


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig("idea", max_iters=0)
    with pytest.raises(ValueError):
        RunConfig("idea", init_state={"w": [0.0], "z": [[1.0], [0.0]]})
    with pytest.raises(ValueError):
        RunConfig("idea", stop_metric="speed")


def test_divergence_detected_and_retried(caplog):
    inst = random_quadratic_instance(4, 2, 2, 0, graph=build_complete(4))
    prm = Params(alpha=5.0, beta=5.0, delta=0.5)
    with pytest.raises(DivergenceError) as err:
        run(inst, RunConfig("idea", prm, max_iters=5000))
    assert err.value.iteration >= 1
    with caplog.at_level("WARNING"):
        tr = run_with_retry(inst, RunConfig("idea", prm, max_iters=5000, record_every=100), solve(inst))
    assert tr.retries and tr.delta < 0.5
    assert "retrying" in caplog.text
    assert tr.relative_gap[-1] < 1e-3


def test_apgd_centralized_run():
    inst = generate_case(2, 0)
    sol = solve(inst)
    tr = run(inst, RunConfig("apgd", Params(alpha=2.0, delta=0.01), max_iters=20_000, record_every=1000), sol)
    assert tr.relative_gap[-1] < 1e-6 and tr.msgs_scalars[-1] == 0


def test_explicit_tracking_at_edea_convergence():
    inst = random_quadratic_instance(6, 2, 2, 5, graph=build_directed_exponential(6, 2))
    sol = solve(inst)
    tr = run(inst, RunConfig("edea", Params(alpha=2, beta=2, delta=0.01), max_iters=40_000, record_every=1000), sol)
    x = tr.final_state["w"]
    assert explicit_tracking_residual(inst, x, tr.final_state["r"]) <= 1e-6


def test_implicit_tracking_converges():
    prob = ConsensusQuadratic.random(8, 3, seed=1)
    X, Z = run_implicit_tracking(prob, build_cycle(8), gamma=0.5, beta=2.0, delta=0.01, iters=40_000)
    assert implicit_tracking_residual(prob, X, Z, 0.5) <= 1e-6
    assert np.max(np.abs(X - prob.minimizer())) <= 1e-6
    assert np.linalg.norm(Z.sum(axis=0)) <= 1e-10
