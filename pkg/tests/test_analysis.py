import copy
import json
from pathlib import Path

import pandas as pd
import pytest

from analysis import METRIC_COLUMNS, print_report, run_embedding_comparison, run_experiment
from conftest import TINY_SCENARIO
from provisioning import Variant
from scenario_loader import load_scenario, parse_scenario_text, scenario_from_document
from solution_check import verify_solution


def build(doc):
    return scenario_from_document(parse_scenario_text(json.dumps(doc)))


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    out = tmp_path_factory.mktemp("results")
    return run_experiment(build(TINY_SCENARIO), out_dir=out), out


def test_output_files(report):
    rep, out = report
    names = sorted(p.name for p in rep.files)
    assert names == sorted(["metrics.csv", "rb_breakdown.csv", "problems.csv", "timings.csv",
                            "solution_JRN.json", "solution_JR-JN.json"])
    assert all((out / name).exists() for name in names)


def test_metrics_rows(report):
    rep, out = report
    metrics = pd.read_csv(out / "metrics.csv")
    assert list(metrics.columns) == METRIC_COLUMNS
    assert list(metrics["variant"]) == ["JRN", "JR-JN"]
    assert (metrics["status"] == "optimal").all()
    assert metrics["c_tot"].tolist() == pytest.approx((metrics["c_rr"] + metrics["c_wr"]).tolist(), rel=1e-9)
    by_variant = metrics.set_index("variant")
    # the single joint problem can only do better than the two-step one
    assert by_variant.loc["JRN", "c_tot"] <= by_variant.loc["JR-JN", "c_tot"] + 1e-6
    assert ((metrics["rb_utilization"] > 0) & (metrics["rb_utilization"] <= 1)).all()
    # at least one RRH serves each slice
    assert (metrics["used_nodes"] >= 1).all()


def test_only_timings_carry_wall_clock(report):
    rep, _ = report
    assert "time_s" in rep.timings.columns
    for frame in (rep.metrics, rep.rb_breakdown, rep.problems):
        assert not any("time" in col for col in frame.columns)


def test_problem_sizes_match_prediction(report):
    rep, _ = report
    assert (rep.problems["variables"] == rep.problems["predicted"]).all()
    assert list(rep.problems.groupby("variant", sort=False).size()) == [1, 2]


def test_rb_breakdown_adds_up(report):
    rep, _ = report
    rb = rep.rb_breakdown
    # 2 variants x 2 RRHs x 2 slices
    assert len(rb) == 8
    assert (rb["rb_total"] == rb["rb_up"] + rb["rb_down"]).all()
    for variant, group in rb.groupby("variant"):
        util = rep.metrics.set_index("variant").loc[variant, "rb_utilization"]
        assert group["rb_total"].sum() == pytest.approx(util * 200)


def test_infeasible_variant_is_recorded(tmp_path):
    doc = copy.deepcopy(TINY_SCENARIO)
    doc["slices"][1]["coverage"]["rate_up"] = 5e9
    rep = run_experiment(build(doc), out_dir=tmp_path)
    assert rep.solutions == {}
    assert set(rep.failures) == {"JRN", "JR-JN"}
    assert rep.metrics["status"].str.contains("@").all()
    assert rep.metrics["c_tot"].isna().all()
    assert not list(tmp_path.glob("solution_*.json"))


def test_print_report(report, capsys):
    rep, _ = report
    print_report(rep)
    shown = capsys.readouterr().out
    assert "PROVISIONING SUMMARY" in shown
    assert "JR-JN" in shown
    assert "metrics.csv" in shown


def test_embedding_comparison_file(tmp_path):
    scenario = build(TINY_SCENARIO)
    df = run_embedding_comparison(scenario, "video", [1], out_dir=tmp_path)
    assert len(df) == 4
    assert (tmp_path / "embedding_comparison.csv").exists()
    with pytest.raises(ValueError, match="unknown slice"):
        run_embedding_comparison(scenario, "nope", [1], out_dir=tmp_path)


@pytest.mark.slow
def test_reference_scenario_joint_variant(tmp_path):
    scenario = load_scenario(Path(__file__).resolve().parent.parent / "scenarios" / "reference_k4.json")
    rep = run_experiment(scenario, [Variant.JR_JN], out_dir=tmp_path)
    for sol in rep.solutions.values():
        assert 0 < sol.delta <= 1
        scaled = [s.scaled(sol.delta) for s in scenario.slices] if sol.delta < 1 else scenario.slices
        assert verify_solution(scenario.infra, scaled, sol, tol=1e-5) == []
