"""Command-line entry point for scenario solving and experiment sweeps.

Exit codes: 0 success, 2 infeasible scenario, 3 solver non-convergence
(reports are still written in both failure modes when possible).
"""

from __future__ import annotations

import argparse
import sys

from .errors import ChargePlanError
from .harness import ExperimentSpec, run_experiment
from .planner import PlannerSettings
from .reports import emit_reports

_EXIT_INFEASIBLE = 2
_EXIT_NO_CONVERGENCE = 3


def _add_common(parser):
    parser.add_argument("--scenario", required=True, help="scenario JSON file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="planner RNG seed")
    parser.add_argument(
        "--jobs", type=int, default=1, help="max concurrent sweep points"
    )
    parser.add_argument(
        "--k-routes", type=int, default=10, dest="k_routes",
        help="routes enumerated per O-D pair",
    )


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _failure_sets(text):
    sets = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            sets.append(tuple(int(v) for v in chunk.split(",")))
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a node list: {chunk!r}")
    return tuple(sets)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chargeplan",
        description="EV charging-station placement and pricing under driver equilibrium",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the joint planner and both baselines")
    _add_common(p)

    p = sub.add_parser("equilibrium", help="solve the background road equilibrium")
    _add_common(p)

    p = sub.add_parser("sweep-budget", help="sweep the charger budget")
    _add_common(p)
    p.add_argument(
        "--budgets", type=_float_list, required=True,
        help="comma-separated ascending budget grid, e.g. 50,100,169,200",
    )

    p = sub.add_parser("sensitivity", help="sweep service rate or EV penetration")
    _add_common(p)
    p.add_argument("--param", choices=("mu", "alpha"), required=True)
    p.add_argument(
        "--grid", type=_float_list, required=True,
        help="comma-separated ascending sweep values",
    )

    p = sub.add_parser("resilience", help="evaluate station-failure scenarios")
    _add_common(p)
    p.add_argument(
        "--fail", type=_failure_sets, required=True,
        help="semicolon-separated failure sets of comma-separated node ids, "
        "e.g. '13;11,12'",
    )

    p = sub.add_parser("generalise", help="iterative candidate-subset search")
    _add_common(p)
    p.add_argument(
        "--subset-size", type=int, default=8, dest="subset_size",
        help="candidate nodes considered per iteration",
    )
    return parser


def _spec_from_args(args):
    kind = args.command
    grid = ()
    failure_sets = ()
    subset_size = 8
    if kind == "sweep-budget":
        grid = args.budgets
    elif kind == "sensitivity":
        kind = f"sensitivity-{args.param}"
        grid = args.grid
    elif kind == "resilience":
        failure_sets = args.fail
    elif kind == "generalise":
        subset_size = args.subset_size
    return ExperimentSpec(
        scenario=args.scenario,
        kind=kind,
        grid=grid,
        failure_sets=failure_sets,
        out_dir=args.out,
        seed=args.seed,
        jobs=args.jobs,
        k_routes=args.k_routes,
        subset_size=subset_size,
        settings=PlannerSettings(seed=args.seed),
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = _spec_from_args(args)
        outcome = run_experiment(spec)
        emit_reports(outcome, args.out)
    except ChargePlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INFEASIBLE
    for row in outcome.rows:
        status = "ok" if row.feasible else "infeasible"
        print(
            f"{row.experiment} {row.param}={row.value:g} {row.planner}: "
            f"theta={row.theta:.2f} chargers={row.total_chargers:g} [{status}]"
        )
    if outcome.exit_code == _EXIT_NO_CONVERGENCE:
        print("warning: at least one solve did not certify convergence", file=sys.stderr)
    elif outcome.exit_code == _EXIT_INFEASIBLE:
        print("error: scenario infeasible", file=sys.stderr)
    print(f"reports written to {args.out}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
