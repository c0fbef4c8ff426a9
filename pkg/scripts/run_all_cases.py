"""Run every experiment case on all of its topologies and print a summary.

Each case writes one CSV per (topology, algorithm) pair under ``--out``
together with a summary.txt, exactly as ``coupledopt run-case`` does.

    python3 scripts/run_all_cases.py [--cases 1,2,3,4] [--seed 0] [--out results] [--quick]

``--quick`` cuts every horizon to 2000 steps for a smoke run.
"""

import argparse
import sys
from pathlib import Path

from coupledopt import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--cases", default="1,2,3,4")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    worst = 0
    for c in args.cases.split(","):
        out = Path(args.out) / f"case{c}"
        cmd = ["run-case", c, "--seed", str(args.seed), "--out", str(out)]
        if args.quick:
            cmd += ["--max-iters", "2000", "--record-every", "100"]
        print(f"== case {c} -> {out}", flush=True)
        worst = max(worst, cli.main(cmd))
    return worst


if __name__ == "__main__":
    sys.exit(main())
