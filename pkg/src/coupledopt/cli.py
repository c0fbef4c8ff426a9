"""Command line entry point.

    coupledopt run-case <id> [--algorithms a,b] [--seed N] [--delta X] [--max-iters N] [--out DIR]
    coupledopt run-config <file>
    coupledopt tune <case id | config file> --theorem {2,3,4,6}

Exit codes: 0 success, 1 usage, 2 validation, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

import jsonschema
import numpy as np

from . import experiments as ex
from .dynamics import ALGORITHMS, Params
from .graph import (
    GraphError,
    build_complete,
    build_cycle,
    build_directed_exponential,
    build_random_undirected,
    check_topology,
    from_edgelist,
)
from .integrator import DivergenceError, RunConfig, run_with_retry
from .oracle import solve
from .problem import ProblemError, ProblemInstance, generate_case, load_instance
from .tuner import TunerError, verify_conditions

log = logging.getLogger("coupledopt")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_DIVERGENCE = 0, 1, 2, 3

_POS = {"type": "number", "exclusiveMinimum": 0}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "case_id": {"type": "integer", "minimum": 1, "maximum": 4},
        "instance": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["cycle", "directed_cycle", "complete", "random", "exponential", "edgelist"]},
                "n": {"type": "integer", "minimum": 1},
                "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "e": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "path": {"type": "string"},
            },
        },
        "algorithm": {
            "oneOf": [
                {"enum": list(ALGORITHMS)},
                {"type": "array", "minItems": 1, "items": {"enum": list(ALGORITHMS)}},
            ]
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": _POS, "beta": _POS, "gamma": _POS, "phi": _POS, "delta": _POS, "beta_lambda": _POS,
                "theorem": {"enum": [2, 3, 4, 6]},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iters": {"type": "integer", "minimum": 1},
                "record_every": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "stop_metric": {"enum": ["relative_gap", "consensus_error", "violation"]},
                "stop_tol": {"type": "number", "minimum": 0},
                "out": {"type": "string"},
            },
        },
    },
    "required": ["algorithm"],
    "oneOf": [{"required": ["case_id"]}, {"required": ["instance"]}],
}


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_VALIDATION):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="coupledopt", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    rc = sub.add_parser("run-case", help="run an experiment case over its four topologies")
    rc.add_argument("case_id", type=int)
    rc.add_argument("--algorithms", default=None, help="comma separated, e.g. idea,edea")
    rc.add_argument("--seed", type=int, default=0)
    rc.add_argument("--delta", type=float, default=None)
    rc.add_argument("--max-iters", type=int, default=None)
    rc.add_argument("--record-every", type=int, default=100)
    rc.add_argument("--out", default="results")

    cf = sub.add_parser("run-config", help="run a JSON configuration document")
    cf.add_argument("path")

    tu = sub.add_parser("tune", help="print theorem-compliant parameters and margins")
    tu.add_argument("target", help="case id 1-4 or a config document")
    tu.add_argument("--theorem", type=int, choices=[2, 3, 4, 6], required=True)
    tu.add_argument("--phi", type=float, default=1.0)
    return ap


# ---------------------------------------------------------------- helpers

def _parse_algorithms(text: Optional[str], case_id: int) -> list[str]:
    if text is None:
        return list(ex.CASE_ALGORITHMS[case_id])
    algs = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in algs if a not in ALGORITHMS]
    if bad or not algs:
        raise CliError(f"unknown algorithm tag(s) {bad}; choose from {', '.join(ALGORITHMS)}")
    return algs


def csv_name(case_id: Optional[int], topology: str, alg: str) -> str:
    prefix = f"case{case_id}" if case_id else "custom"
    return f"{prefix}_{topology}_{alg}.csv"


def _run_one(inst, alg, prm, max_iters, record_every, seed, oracle, stop_metric=None, stop_tol=0.0):
    cfg = RunConfig(alg, prm, max_iters=max_iters, record_every=record_every, seed=seed,
                    stop_metric=stop_metric, stop_tol=stop_tol)
    return run_with_retry(inst, cfg, oracle)


def _summary_lines(rows) -> list[str]:
    head = f"{'topology':<16} {'algorithm':<16} {'delta':>9} {'final_gap':>11} {'violation':>11} {'iters_to_1e-3':>14} {'cum_scalars':>13}"
    out = [head]
    for r in rows:
        it = "-" if r["iters_to_1e-3"] is None else str(r["iters_to_1e-3"])
        out.append(f"{r['topology']:<16} {r['algorithm']:<16} {r['delta']:>9.3g} {r['final_gap']:>11.3e} "
                   f"{r['violation']:>11.3e} {it:>14} {r['cum_scalars']:>13d}")
    return out


def _execute(jobs, out_dir, case_id, max_iters, record_every, seed, stop_metric=None, stop_tol=0.0) -> int:
    """Run (instance, algorithm, params) jobs, write one CSV each plus ``summary.txt``."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    oracles = {}
    for inst, alg, prm in jobs:
        key = id(inst)
        if key not in oracles:
            oracles[key] = solve(inst)
            if not oracles[key].converged:
                log.warning("oracle for %s only reached %.2e", inst.graph.name, oracles[key].achieved_tol)
        try:
            traj = _run_one(inst, alg, prm, max_iters, record_every, seed, oracles[key], stop_metric, stop_tol)
        except DivergenceError as err:
            print(f"error: {alg} on {inst.graph.name}: {err}", file=sys.stderr)
            return EXIT_DIVERGENCE
        for delta, it, why in traj.retries:
            print(f"retry: {alg} on {inst.graph.name} diverged at {it} with delta={delta:g} ({why})")
        traj.to_csv(os.path.join(out_dir, csv_name(case_id, inst.graph.name, alg)))
        rows.append({
            "topology": inst.graph.name, "algorithm": alg, "delta": traj.delta,
            "final_gap": traj.relative_gap[-1], "violation": traj.violation[-1],
            "iters_to_1e-3": traj.iters_to(1e-3), "cum_scalars": int(traj.msgs_scalars[-1]),
        })
        log.info("%s on %s: gap %.3e", alg, inst.graph.name, traj.relative_gap[-1])
    lines = _summary_lines(rows)
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------- commands

def cmd_run_case(args) -> int:
    if args.case_id not in (1, 2, 3, 4):
        raise CliError(f"case id must be 1-4, got {args.case_id}", EXIT_USAGE)
    algs = _parse_algorithms(args.algorithms, args.case_id)
    if args.max_iters is not None and args.max_iters < 1:
        raise CliError("--max-iters must be >= 1", EXIT_USAGE)
    if args.delta is not None and not args.delta > 0:
        raise CliError("--delta must be positive", EXIT_USAGE)
    jobs = []
    for inst in ex.case_instances(args.case_id, args.seed):
        prm = ex.case_params(args.case_id, inst, args.delta)
        jobs.extend((inst, alg, prm) for alg in algs)
    max_iters = args.max_iters or ex.CASE_HORIZON[args.case_id]
    return _execute(jobs, args.out, args.case_id, max_iters, args.record_every, args.seed)


def _graph_from_config(spec: dict, n: int, seed: int, base_dir: str):
    kind = spec["kind"]
    n = spec.get("n", n)
    if kind == "cycle":
        return build_cycle(n)
    if kind == "directed_cycle":
        return build_cycle(n, directed=True)
    if kind == "complete":
        return build_complete(n)
    if kind == "random":
        if "p" not in spec:
            raise CliError("graph.p: required for random graphs")
        return build_random_undirected(n, spec["p"], spec.get("seed", seed))
    if kind == "exponential":
        if "e" not in spec:
            raise CliError("graph.e: required for exponential graphs")
        return build_directed_exponential(n, spec["e"])
    if "path" not in spec:
        raise CliError("graph.path: required for edgelist graphs")
    with open(os.path.join(base_dir, spec["path"])) as fh:
        return from_edgelist(fh.read(), name=os.path.splitext(os.path.basename(spec["path"]))[0])


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise CliError(f"cannot read config: {err}", EXIT_USAGE)
    except json.JSONDecodeError as err:
        raise CliError(f"config is not valid JSON: {err}")
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{'.'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
        raise CliError("invalid config:\n  " + "\n  ".join(msgs))
    return doc


def resolve_config(doc: dict, base_dir: str = "."):
    """Turn a validated config document into ``(jobs, case_id, theorem, run options)``."""
    seed = doc.get("seed", 0)
    case_id = doc.get("case_id")
    try:
        if case_id is not None:
            inst = generate_case(case_id, seed)
        else:
            inst = load_instance(os.path.join(base_dir, doc["instance"]))
        if "graph" in doc:
            inst = inst.with_graph(_graph_from_config(doc["graph"], inst.n, seed, base_dir))
    except (GraphError, ProblemError, OSError) as err:
        raise CliError(f"instance/graph: {err}")
    p = dict(doc.get("params", {}))
    theorem = p.pop("theorem", ex.CASE_THEOREM.get(case_id) if case_id else None)
    consts = ex.theorem_constants(inst)
    base = {}
    if theorem is not None and consts["mu"] > 0:
        try:
            base = ex.tuned_params(theorem, consts, p.get("phi", 1.0))
        except TunerError as err:
            raise CliError(f"params.theorem: {err}")
    merged = {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "phi": 1.0,
              "delta": ex.CASE_DELTA.get(case_id, 0.001), **base, **p}
    prm = Params(**{k: merged[k] for k in ("alpha", "beta", "gamma", "phi", "delta")},
                 beta_lambda=merged.get("beta_lambda"))
    if theorem is not None:
        chk = verify_conditions(theorem, {"phi": prm.phi, "alpha": prm.alpha, "beta": prm.beta}, consts)
        if not chk["ok"]:
            neg = {k: v for k, v in chk["margins"].items() if v < 0 or (theorem == 2 and v <= 0)}
            print(f"warning: parameters do not satisfy theorem {theorem} bounds; margins {neg}", file=sys.stderr)
    algs = doc["algorithm"] if isinstance(doc["algorithm"], list) else [doc["algorithm"]]
    r = doc.get("run", {})
    opts = {
        "max_iters": r.get("max_iters", ex.CASE_HORIZON.get(case_id, 10_000)),
        "record_every": r.get("record_every", 100),
        "seed": r.get("seed", seed),
        "stop_metric": r.get("stop_metric"),
        "stop_tol": r.get("stop_tol", 0.0),
        "out": r.get("out", "results"),
    }
    return [(inst, a, prm) for a in algs], case_id, opts


def cmd_run_config(args) -> int:
    doc = load_config(args.path)
    jobs, case_id, opts = resolve_config(doc, os.path.dirname(os.path.abspath(args.path)))
    return _execute(jobs, opts["out"], case_id, opts["max_iters"], opts["record_every"], opts["seed"],
                    opts["stop_metric"], opts["stop_tol"])


def _tune_instance(target: str) -> tuple[ProblemInstance, Optional[int]]:
    if target.isdigit():
        cid = int(target)
        if cid not in (1, 2, 3, 4):
            raise CliError(f"case id must be 1-4, got {cid}", EXIT_USAGE)
        return generate_case(cid, 0), cid
    doc = load_config(target)
    jobs, cid, _ = resolve_config(doc, os.path.dirname(os.path.abspath(target)))
    return jobs[0][0], cid


def check_hypotheses(inst: ProblemInstance, theorem: int) -> list[str]:
    """Reasons why ``theorem`` does not apply to ``inst`` (empty when it does)."""
    why = []
    consts = ex.theorem_constants(inst)
    if consts["mu"] <= 0:
        why.append("costs are not strongly convex (mu = 0)")
    topo = check_topology(inst.graph)
    if not topo["connected_or_strongly_connected"]:
        why.append("graph is not (strongly) connected")
    if theorem == 2:
        if inst.graph.directed:
            why.append("requires an undirected graph")
        if np.linalg.matrix_rank(inst.A) < inst.p:
            why.append("A does not have full row rank")
        if not inst.unconstrained:
            why.append("requires X_i = R^d_i")
    else:
        if not topo["weight_balanced"]:
            why.append("graph is not weight-balanced")
    if theorem in (3, 4) and not inst.unconstrained:
        why.append("requires X_i = R^d_i (use theorem 6 for boxes)")
    if theorem == 4 and not all(lp.A.shape[0] == lp.A.shape[1] and np.array_equal(lp.A, np.eye(lp.A.shape[0]))
                                for lp in inst.locals):
        why.append("requires A_i = I for every agent")
    return why


def cmd_tune(args) -> int:
    inst, cid = _tune_instance(args.target)
    consts = ex.theorem_constants(inst)
    print(f"instance: case {cid if cid else 'custom'}, graph {inst.graph.name}, n={inst.n}, p={inst.p}")
    print(f"mu = {consts['mu']:.6g}  l = {consts['l']:.6g}  sigma = {consts['sigma']:.6g}  eta2_hat = {consts['eta2']:.6g}")
    why = check_hypotheses(inst, args.theorem)
    if why:
        raise CliError(f"theorem {args.theorem} hypotheses unmet: " + "; ".join(why))
    if args.theorem == 4:
        print("A_i = I detected for every agent")
    prm = ex.tuned_params(args.theorem, consts, args.phi)
    delta = ex.CASE_DELTA.get(cid, 0.001)
    print(f"recommended: phi = {prm['phi']:.6g}  alpha = {prm['alpha']:.6g}  beta = {prm['beta']:.6g}  delta = {delta:g}")
    chk = verify_conditions(args.theorem, prm, consts)
    for k, v in chk["margins"].items():
        print(f"margin[{k}] = {v:.6g}")
    print("ok" if chk["ok"] else "NOT ok")
    return EXIT_OK if chk["ok"] else EXIT_VALIDATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run-case": cmd_run_case, "run-config": cmd_run_config, "tune": cmd_tune}[args.command]
    try:
        return handler(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
