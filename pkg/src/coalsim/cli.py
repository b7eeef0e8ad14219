"""Batch command line: validate scenarios, run simulations, dry-run plans.

Exit codes: 0 success, 1 runtime failure or infeasible plan, 2 invalid
input, 3 I/O error.  The CLI is a thin shell over library operations.
"""

from __future__ import annotations

import argparse
import json
import sys

from .engine import SimulationError, run
from .federation import FederationError, federate
from .resources import format_quantity
from .scenario import Scenario, ScenarioError, load_scenario

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_IO = 3


def _load(path: str):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)
    from .scenario import parse_scenario

    try:
        return parse_scenario(text)
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def cmd_validate(args) -> int:
    _load(args.scenario)
    print("OK")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    try:
        result = run(scenario, args.seed)
    except SimulationError as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report_text = json.dumps(result.report, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(report_text)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as handle:
            handle.write("\n".join(result.log) + ("\n" if result.log else ""))
    admissions = result.report["admissions"]
    print(f"seed {result.report['seed']}  scenario {result.report['scenario_digest'][:12]}")
    print(
        "admissions: "
        f"attempted={admissions['attempted']} committed={admissions['committed']} "
        f"aborted={admissions['aborted']} rejected_gc={admissions['rejected_gc']}"
    )
    for mission_id, entry in sorted(result.report["missions"].items()):
        line = f"mission {mission_id}: {entry['status']}"
        metrics = entry.get("metrics")
        if metrics:
            means = [
                s["mean_ms"] for s in metrics["staleness"].values() if s["mean_ms"] is not None
            ]
            if means:
                line += f"  mean staleness {sum(means) / len(means):.1f} ms"
            line += f"  drops {metrics['dropped_updates']}"
        print(line)
    if result.report["fairness"]:
        last = result.report["fairness"][-1]
        rates = " ".join(f"{fid}={rate}" for fid, rate in sorted(last["rates"].items()))
        print(f"fairness @t={last['t']} {last['slice']}: {rates}")
    return EXIT_OK


def cmd_plan(args) -> int:
    scenario = _load(args.scenario)
    if args.mission not in scenario.missions:
        print(f"error: unknown mission {args.mission}", file=sys.stderr)
        return EXIT_INVALID
    from .slicing import SlicingPlane

    plane = SlicingPlane(scenario.topology)
    registries = [scenario.registries[p] for p in sorted(scenario.registries)]
    try:
        plan = federate(
            registries,
            scenario.topology,
            plane.free_map(),
            scenario.missions[args.mission],
            scenario.policy,
            scenario.dictionary,
            plane.residual_map(),
            exact_max_models=scenario.config.exact_placement_max_models,
            exact_max_nodes=scenario.config.exact_placement_max_nodes,
        )
    except FederationError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"mission {args.mission} ({plan.mode})")
    print(f"cost {format_quantity(plan.total_cost)}")
    for capability, model_id in sorted(plan.selected.items()):
        print(f"select {capability} -> {model_id} @ {plan.placement[model_id]}")
    for idx in sorted(plan.routes):
        path = ">".join(plan.routes[idx])
        print(f"route {idx}: {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="coalsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="schema and referential checks only")
    p_validate.add_argument("scenario")
    p_validate.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run a scenario to END")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", help="write the JSON run report here")
    p_run.add_argument("--log", help="write the event log here")
    p_run.set_defaults(func=cmd_run)

    p_plan = sub.add_parser("plan", help="dry-run federation for one mission at t=0")
    p_plan.add_argument("scenario")
    p_plan.add_argument("--mission", required=True)
    p_plan.set_defaults(func=cmd_plan)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
