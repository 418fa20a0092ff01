import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from tabulate import tabulate

from core_model import InfrastructureGraph, SliceSpec
from embedding import run_comparison
from provisioning import (
    SHARE_FLOOR, ProvisioningInfeasible, ProvisioningSolution, ScenarioDims, Variant, carp, count_problem_size,
    delta_scaling,
)
from radio_model import precompute_rate_tables
from scenario_loader import Scenario, save_solution

try:
    from backend.settings import SolverSettings
except ImportError:
    from .backend.settings import SolverSettings

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "variant", "status", "delta", "c_rr", "c_wr", "c_tot", "rb_utilization",
    "used_nodes", "node_utilization", "used_links", "link_utilization", "problems", "variables",
]
CSV_FLOAT_FORMAT = "%.12g"


def used_nodes(sol: ProvisioningSolution) -> set:
    return {i for (_, i), flag in sol.radio.used.items() if flag} | \
        {i for (_, i), flag in sol.wired.used.items() if flag}


def used_links(sol: ProvisioningSolution) -> set:
    share: Dict[tuple, float] = {}
    for (_, i, j, _, _), value in sol.wired.phi_link.items():
        share[i, j] = share.get((i, j), 0.0) + value
    return {key for key, value in share.items() if value > SHARE_FLOOR}


def rb_utilization(infra: InfrastructureGraph, sol: ProvisioningSolution) -> float:
    """Provisioned resource blocks over all resource blocks of the infrastructure."""
    capacity = sum(i.rb_capacity for i in infra.rrh_nodes)
    if capacity <= 0:
        return 0.0
    return sum(i.rb_capacity * sol.radio.rrh_share(i.id) for i in infra.rrh_nodes) / capacity


def compute_metrics(infra: InfrastructureGraph, sol: ProvisioningSolution) -> dict:
    nodes, links = used_nodes(sol), used_links(sol)
    return {
        "variant": sol.variant.value,
        "status": sol.status.value,
        "delta": sol.delta,
        "c_rr": sol.costs.radio,
        "c_wr": sol.costs.wired,
        "c_tot": sol.costs.total,
        "rb_utilization": rb_utilization(infra, sol),
        "used_nodes": len(nodes),
        "node_utilization": len(nodes) / len(infra.nodes) if infra.nodes else 0.0,
        "used_links": len(links),
        "link_utilization": len(links) / len(infra.links) if infra.links else 0.0,
        "problems": len(sol.records),
        "variables": ";".join(str(v) for v in sol.problem_sizes),
    }


def failed_metrics(variant: Variant, error: ProvisioningInfeasible) -> dict:
    row = {col: math.nan for col in METRIC_COLUMNS}
    where = f"{error.stage}" + (f":{error.slice_id}" if error.slice_id else "")
    row.update({"variant": variant.value, "status": f"{error.status.value}@{where}", "problems": 0, "variables": ""})
    return row


def emit_rb_breakdown(solutions: Sequence[ProvisioningSolution], infra: InfrastructureGraph,
                      slices: Sequence[SliceSpec]) -> pd.DataFrame:
    """Long table of provisioned resource blocks per (variant, RRH, slice)."""
    rows = []
    for sol in solutions:
        for node in infra.rrh_nodes:
            for s in slices:
                up = node.rb_capacity * sum(v for (sid, i, _), v in sol.radio.eta_up.items()
                                            if sid == s.id and i == node.id)
                down = node.rb_capacity * sum(v for (sid, i, _), v in sol.radio.eta_down.items()
                                              if sid == s.id and i == node.id)
                rows.append({
                    "variant": sol.variant.value, "rrh": node.id, "slice": s.id,
                    "rb_up": up, "rb_down": down, "rb_total": up + down,
                    "share": sol.radio.slice_share(s.id, node.id),
                })
    return pd.DataFrame(rows, columns=["variant", "rrh", "slice", "rb_up", "rb_down", "rb_total", "share"])


def problems_frame(solutions: Sequence[ProvisioningSolution], infra: InfrastructureGraph,
                   slices: Sequence[SliceSpec]) -> pd.DataFrame:
    """Per-problem records next to the predicted sizes."""
    dims = ScenarioDims.of(infra, slices)
    rows = []
    for sol in solutions:
        sizes = count_problem_size(sol.variant, dims)
        for k, r in enumerate(sol.records):
            rows.append({
                "variant": sol.variant.value, "stage": r.stage, "slices": ",".join(r.slices), "status": r.status.value,
                "variables": r.variables,
                "predicted": sizes.variables[k] if k < sizes.count else math.nan,
                "table_formula": sizes.table_formula[k] if k < sizes.count else math.nan,
                "constraints": r.constraints, "objective": r.objective,
            })
    return pd.DataFrame(rows, columns=["variant", "stage", "slices", "status", "variables", "predicted",
                                       "table_formula", "constraints", "objective"])


def timings_frame(solutions: Sequence[ProvisioningSolution]) -> pd.DataFrame:
    rows = [{"variant": sol.variant.value, "stage": r.stage, "slices": ",".join(r.slices), "time_s": r.solve_time}
            for sol in solutions for r in sol.records]
    return pd.DataFrame(rows, columns=["variant", "stage", "slices", "time_s"])


@dataclass
class ExperimentReport:
    metrics: pd.DataFrame
    rb_breakdown: pd.DataFrame
    problems: pd.DataFrame
    timings: pd.DataFrame
    solutions: Dict[str, ProvisioningSolution] = field(default_factory=dict)
    failures: Dict[str, ProvisioningInfeasible] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)


def write_frame(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def run_experiment(scenario: Scenario, variants: Optional[Sequence[Variant]] = None, lam: Optional[float] = None,
                   out_dir=None, settings: Optional[SolverSettings] = None) -> ExperimentReport:
    """
    Run every requested variant on the scenario and collect metrics.

    Infeasible variants are recorded with their status and the run continues.
    Output files (when out_dir is given, or the scenario's output_dir) are
    metrics.csv, rb_breakdown.csv, problems.csv, timings.csv and one
    solution_<variant>.json per solved variant. Only timings.csv depends on
    wall-clock time.
    """
    variants = list(variants or scenario.variants)
    lam = scenario.rate_discount if lam is None else lam
    settings = settings or scenario.solver_settings()
    rates = precompute_rate_tables(scenario.infra, scenario.slices, scenario.radio)

    rows, solutions, failures = [], {}, {}
    for variant in variants:
        print(f"Solving {variant.value} on {scenario.name}...")
        try:
            if scenario.delta_scaling:
                _, sol = delta_scaling(scenario.infra, scenario.slices, variant, lam, rates=rates, settings=settings)
            else:
                sol = carp(scenario.infra, scenario.slices, variant, lam, rates, settings=settings)
        except ProvisioningInfeasible as e:
            print(f"⚠️ {variant.value} infeasible: {e}")
            failures[variant.value] = e
            rows.append(failed_metrics(variant, e))
            continue
        solutions[variant.value] = sol
        rows.append(compute_metrics(scenario.infra, sol))

    solved = list(solutions.values())
    report = ExperimentReport(
        metrics=pd.DataFrame(rows, columns=METRIC_COLUMNS),
        rb_breakdown=emit_rb_breakdown(solved, scenario.infra, scenario.slices),
        problems=problems_frame(solved, scenario.infra, scenario.slices),
        timings=timings_frame(solved),
        solutions=solutions,
        failures=failures,
    )

    out = Path(out_dir) if out_dir is not None else scenario.output_dir
    report.files += [
        write_frame(report.metrics, out / "metrics.csv"),
        write_frame(report.rb_breakdown, out / "rb_breakdown.csv"),
        write_frame(report.problems, out / "problems.csv"),
        write_frame(report.timings, out / "timings.csv"),
    ]
    for name, sol in solutions.items():
        report.files.append(save_solution(sol, out / f"solution_{name}.json", scenario.name))
    logger.info("wrote %d files to %s", len(report.files), out)
    return report


def run_embedding_comparison(scenario: Scenario, slice_id: Optional[str] = None,
                             sfc_counts: Optional[Sequence[int]] = None, out_dir=None,
                             settings: Optional[SolverSettings] = None) -> pd.DataFrame:
    section = scenario.document.embedding
    slice_id = slice_id or (section.slice if section else scenario.slices[0].id)
    counts = list(sfc_counts or (section.sfc_counts if section else [2, 4, 6, 8, 10]))
    variant = Variant.parse(section.variant) if section else Variant.JR_JN
    per_srd = section.instances_per_srd if section else 10
    matches = [s for s in scenario.slices if s.id == slice_id]
    if not matches:
        raise ValueError(f"unknown slice {slice_id!r}")
    settings = settings or scenario.solver_settings()
    rates = precompute_rate_tables(scenario.infra, matches, scenario.radio)
    df = run_comparison(scenario.infra, matches[0], counts, variant, instances_per_srd=per_srd, rates=rates,
                        settings=settings)
    out = Path(out_dir) if out_dir is not None else scenario.output_dir
    write_frame(df, out / "embedding_comparison.csv")
    return df


def print_report(report: ExperimentReport):
    print("\n" + "=" * 50)
    print("PROVISIONING SUMMARY")
    print("=" * 50)
    summary = report.metrics.copy()
    for col in ("c_rr", "c_wr", "c_tot"):
        summary[col] = summary[col].apply(lambda x: "-" if pd.isna(x) else f"{x:,.2f}")
    for col in ("rb_utilization", "node_utilization", "link_utilization"):
        summary[col] = summary[col].apply(lambda x: "-" if pd.isna(x) else f"{x:.1%}")
    print(tabulate(summary[["variant", "status", "c_rr", "c_wr", "c_tot", "rb_utilization",
                            "node_utilization", "link_utilization"]],
                   headers="keys", tablefmt="psql", showindex=False))

    if not report.timings.empty:
        totals = report.timings.groupby("variant", sort=False)["time_s"].sum().reset_index()
        totals["time_s"] = totals["time_s"].apply(lambda x: f"{x:.2f}s")
        print("\nSolve time per variant")
        print(tabulate(totals, headers="keys", tablefmt="psql", showindex=False))
    for path in report.files:
        print(f"  -> {path}")
