"""Command-line runner: ``python3 -m infbond run <config> [--seed] [--paths] [--out] [--experiment]``.

Exit codes: 0 all declared assertions pass, 1 an assertion failed, 2 the
config could not be parsed or validated, 3 the output directory is not writable.
"""

from __future__ import annotations

import argparse
import os
import sys

from .scenarios import ScenarioError, emit_report, load_scenario, run_experiments


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="infbond", description="Run bond-market scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario config (path or bundled name)")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--paths", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory (default: out/<scenario>)")
    run.add_argument("--experiment", default=None, help="run only the experiment with this name or type")
    args = ap.parse_args(argv)

    try:
        sc = load_scenario(args.config)
        if args.seed is not None and args.seed < 0 or args.paths is not None and args.paths < 1:
            raise ScenarioError("arguments", "seed must be >= 0 and paths >= 1")
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or f"out/{sc.name}"
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        print(f"error: cannot write reports to {out}: {exc.strerror}", file=sys.stderr)
        return 3
    outcomes = run_experiments(sc, args.seed, args.paths, args.experiment)
    seed = sc.seed if args.seed is None else args.seed
    paths = sc.paths if args.paths is None else args.paths
    try:
        summary = emit_report(outcomes, out, sc.name, seed, paths)
    except OSError as exc:
        print(f"error: cannot write reports to {out}: {exc.strerror}", file=sys.stderr)
        return 3
    for e in summary["experiments"]:
        print(f"{'PASS' if e['passed'] else 'FAIL'}  {e['name']} ({e['type']})")
    failed = [e["name"] for e in summary["experiments"] if not e["passed"]]
    if failed:
        print(f"assertion failure in experiment(s): {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
