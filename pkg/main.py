"""Command line entry point: provision, compare-embedding and check."""
import argparse
import logging
import sys
from typing import List, Optional

import pandas as pd
from tabulate import tabulate

from analysis import print_report, run_embedding_comparison, run_experiment
from milp_core import MilpError
from provisioning import Variant
from radio_model import precompute_rate_tables
from scenario_loader import ScenarioError, load_scenario, load_solution
from solution_check import verify_solution, violations_by_family

try:
    from backend.settings import LOG_LEVEL
except ImportError:
    from .backend.settings import LOG_LEVEL

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INPUT = 2


def parse_counts(text: str) -> List[int]:
    """'2,4,6' or 'a..b' (every other integer from a to b, so 2..10 gives 2,4,6,8,10) or 'a..b:step'."""
    try:
        if ".." in text:
            bounds, _, step = text.partition(":")
            lo, hi = (int(x) for x in bounds.split(".."))
            return list(range(lo, hi + 1, int(step) if step else 2))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"cannot parse SFC counts {text!r}") from e


def parse_variants(text: str) -> List[Variant]:
    try:
        return [Variant.parse(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def solver_flags(p):
        p.add_argument("--backend", help="pulp solver name, e.g. PULP_CBC_CMD or HiGHS")
        p.add_argument("--time-limit", type=float, help="seconds per solve")
        p.add_argument("--mip-gap", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)

    prov = sub.add_parser("provision", help="run provisioning variants on a scenario")
    prov.add_argument("--scenario", required=True)
    prov.add_argument("--variants", type=parse_variants, help="comma-separated, e.g. JRN,JR-JN")
    prov.add_argument("--lambda", dest="lam", type=float, help="rate discount")
    prov.add_argument("--delta", action="store_true", help="bisect on a demand fraction when infeasible")
    prov.add_argument("--out", help="output directory")
    prov.add_argument("--write-models", dest="model_dir", help="also write every subproblem as an LP file here")
    solver_flags(prov)

    emb = sub.add_parser("compare-embedding", help="provision-then-embed against direct embedding")
    emb.add_argument("--scenario", required=True)
    emb.add_argument("--slice", dest="slice_id")
    emb.add_argument("--sfc-counts", type=parse_counts)
    emb.add_argument("--out")
    solver_flags(emb)

    check = sub.add_parser("check", help="verify a saved solution against its scenario")
    check.add_argument("--solution", required=True)
    check.add_argument("--scenario", required=True)
    check.add_argument("--tol", type=float, default=1e-6)
    return parser


def _solver_overrides(args) -> dict:
    return {"backend": args.backend, "time_limit": args.time_limit, "mip_gap": args.mip_gap,
            "seed": args.seed, "threads": args.threads, "model_dir": getattr(args, "model_dir", None)}


def cmd_provision(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.delta:
        scenario.delta_scaling = True
    settings = scenario.solver_settings(**_solver_overrides(args))
    print(f"Loaded {scenario.name}: {len(scenario.infra.nodes)} nodes, {len(scenario.slices)} slices "
          f"(solver {settings.backend})")
    report = run_experiment(scenario, args.variants, args.lam, args.out, settings)
    print_report(report)
    return EXIT_OK


def cmd_compare_embedding(args) -> int:
    scenario = load_scenario(args.scenario)
    settings = scenario.solver_settings(**_solver_overrides(args))
    df = run_embedding_comparison(scenario, args.slice_id, args.sfc_counts, args.out, settings)
    shown = df.copy()
    shown["cost"] = shown["cost"].apply(lambda x: "-" if pd.isna(x) else f"{x:,.2f}")
    shown["time_s"] = shown["time_s"].apply(lambda x: "-" if pd.isna(x) else f"{x:.2f}")
    print(tabulate(shown, headers="keys", tablefmt="psql", showindex=False))
    return EXIT_OK


def cmd_check(args) -> int:
    scenario = load_scenario(args.scenario)
    sol = load_solution(args.solution)
    known = {s.id for s in scenario.slices}
    if set(sol.slice_order) != known:
        raise ScenarioError(f"solution covers slices {sorted(sol.slice_order)} but the scenario has {sorted(known)}")
    slices = scenario.slices
    if sol.delta < 1:
        slices = [s.scaled(sol.delta) for s in slices]
        print(f"Checking against demands scaled by delta={sol.delta:.6f}")
    rates = precompute_rate_tables(scenario.infra, slices, scenario.radio)
    found = verify_solution(scenario.infra, slices, sol, args.tol, rates)
    if not found:
        print(f"✅ {sol.variant.value} solution satisfies every constraint family (tol {args.tol:g})")
        return EXIT_OK
    counts = pd.DataFrame(sorted(violations_by_family(found).items()), columns=["family", "violations"])
    print(tabulate(counts, headers="keys", tablefmt="psql", showindex=False))
    worst = max(found, key=lambda v: v.amount)
    print(f"⚠️ worst: {worst.family} at {worst.where} by {worst.amount:.3g}")
    return EXIT_VIOLATIONS


COMMANDS = {"provision": cmd_provision, "compare-embedding": cmd_compare_embedding, "check": cmd_check}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, MilpError, ValueError) as e:
        print(f"ERROR: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
