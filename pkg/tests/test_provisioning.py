import pytest

from backend.settings import get_solver_settings
from conftest import no_rates, tiny_fat_tree, tiny_slices, wired_slice
from core_model import SrdLink, SrdNode
from milp_core import SolveStatus, brute_force_solve, solve
from provisioning import (
    ProvisioningError, ProvisioningInfeasible, RadioShares, ScenarioDims, Variant, WiredUsage, build_jrn, build_np,
    build_rp, carp, check_rate_discount, count_problem_size, counted_variables, delta_scaling, max_supported_rate,
    radio_step,
)
from radio_model import RadioParams, precompute_rate_tables
from solution_check import verify_solution

SETTINGS = get_solver_settings(time_limit=60, mip_gap=1e-9)


@pytest.fixture(scope="module")
def solved():
    infra, slices = tiny_fat_tree(), tiny_slices()
    rates = precompute_rate_tables(infra, slices, RadioParams())
    return infra, slices, rates, {v: carp(infra, slices, v, 0.0, rates, settings=SETTINGS) for v in Variant}


def maximize(model, *names):
    return model.with_objective(-1 * sum((model.var(n) for n in names), start=0))


# --- Flow conservation instances ---

def test_fork_splits_the_exported_share(fork_case):
    infra, s = fork_case
    model = build_np(infra, [s], RadioShares(), no_rates(), epsilon=1e-3)
    sol = solve(maximize(model, "phi_c__s__i1__v1", "psi__s__i1__v1"), settings=SETTINGS)
    assert sol.status == SolveStatus.OPTIMAL
    # 25 instances of 5/13 CPUs on a 10-CPU node
    assert sol.value("kappa_c__s__i1__v1") == 25
    assert sol.value("phi_c__s__i1__v1") == pytest.approx(25 / 26, abs=1e-6)
    assert sol.value("psi__s__i1__v1") == pytest.approx(5 / 26, abs=1e-6)
    assert sol.value("phi_b__s__i1__i2__v1__v2") == pytest.approx(18 / 26, abs=1e-6)
    assert sol.value("phi_b__s__i1__i2__v1__v3") == pytest.approx(8 / 26, abs=1e-6)


def test_merge_feeds_the_consumer_from_both_producers(merge_case):
    infra, s = merge_case
    model = build_np(infra, [s], RadioShares(), no_rates(), epsilon=1e-3)
    sol = solve(maximize(model, "phi_c__s__i2__v3", "psi__s__i2__v3"), settings=SETTINGS)
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.value("phi_c__s__i1__v1") == pytest.approx(1 / 2, abs=1e-6)
    assert sol.value("phi_c__s__i1__v2") == pytest.approx(2 / 5, abs=1e-6)
    assert sol.value("phi_c__s__i2__v3") == pytest.approx(1.0, abs=1e-6)
    assert sol.value("phi_b__s__i1__i2__v1__v3") == pytest.approx(9 / 15, abs=1e-6)
    assert sol.value("phi_b__s__i1__i2__v2__v3") == pytest.approx(4 / 15, abs=1e-6)


def test_single_node_routes_over_the_loopback(single_node_case):
    infra, s = single_node_case
    model = build_np(infra, [s], RadioShares(), no_rates())
    sol = solve(model, settings=SETTINGS)
    assert sol.value("phi_b__s__i0__i0__v1__v2") == pytest.approx(0.1, abs=1e-6)
    # 2 instances for v1 and 1 for v2 at unit cost 1 per CPU
    assert sol.objective_value == pytest.approx(3.0, abs=1e-6)
    oracle = brute_force_solve(model)
    assert oracle.objective_value == pytest.approx(sol.objective_value, abs=1e-6)


def test_zero_capacity_node_cannot_serve(single_node_case):
    infra, s = single_node_case
    model = build_np(infra, [s], RadioShares(), no_rates())
    assert model.var("phi_s__s__i0__v1").upper == 0.0
    assert model.var("kappa_s__s__i0__v1").upper == 0.0
    assert model.var("psi__s__i0__v1").upper is None


def test_wired_slice_rejects_zero_bandwidth_links():
    s = wired_slice([SrdNode("v1", 1.0, min_compute=1.0), SrdNode("v2", 1.0, min_compute=1.0)],
                    [SrdLink("v1", "v2", 0.0)])
    with pytest.raises(ProvisioningError, match="zero bandwidth"):
        build_np(tiny_fat_tree(), [s], RadioShares(), no_rates())


# --- Builders ---

def test_empty_slice_subset(tiny_infra, tiny_rates):
    with pytest.raises(ProvisioningError, match="empty"):
        build_rp(tiny_infra, [], tiny_rates)
    with pytest.raises(ProvisioningError, match="empty"):
        build_np(tiny_infra, [], RadioShares(), tiny_rates)


def test_np_needs_radio_shares(tiny_infra, tiny_slice_list, tiny_rates):
    with pytest.raises(ProvisioningError, match="radio shares"):
        build_np(tiny_infra, tiny_slice_list, RadioShares(), tiny_rates)


def test_rate_discount_must_keep_costs_non_negative(tiny_infra, tiny_slice_list, tiny_rates):
    check_rate_discount(tiny_infra, tiny_slice_list, tiny_rates, 0.0)
    check_rate_discount(tiny_infra, tiny_slice_list, tiny_rates, 1e-12)
    with pytest.raises(ProvisioningError, match="negative"):
        check_rate_discount(tiny_infra, tiny_slice_list, tiny_rates, 1e-3)
    with pytest.raises(ProvisioningError):
        check_rate_discount(tiny_infra, tiny_slice_list, tiny_rates, -1.0)


def test_radio_model_skips_empty_directions(tiny_infra, tiny_slice_list, tiny_rates):
    model = build_rp(tiny_infra, tiny_slice_list, tiny_rates)
    # the sensors slice has no downlink demand
    assert model.var("eta_d__sensors__rrh0__0").upper == 0.0
    assert model.var("eta_u__sensors__rrh0__0").upper == 1.0
    names = {c.name for c in model.constraints}
    assert "cover_d__sensors__0" not in names
    assert "cover_u__sensors__0" in names
    assert "updown__video__rrh0__0" in names
    assert "updown__sensors__rrh0__0" not in names


def test_negative_residual_is_rejected(tiny_infra, tiny_slice_list, tiny_rates):
    prior = WiredUsage(nodes={("core0", "c"): 1.5})
    radio, _ = radio_step(tiny_infra, tiny_slice_list, tiny_rates, 0.0, True, SETTINGS, Variant.JR_JN, [])
    with pytest.raises(ProvisioningError, match="residual"):
        build_np(tiny_infra, tiny_slice_list, radio, tiny_rates, prior)


# --- Problem sizes ---

@pytest.mark.parametrize("variant, expected", [
    (Variant.SR_SN, [18, 18, 54, 54]),
    (Variant.SR_JN, [18, 18, 108]),
    (Variant.JR_SN, [36, 54, 54]),
    (Variant.JR_JN, [36, 108]),
    (Variant.JRN, [144]),
])
def test_count_problem_size(tiny_infra, tiny_slice_list, variant, expected):
    # 2 RRHs, 4 cells, 7 nodes, 19 links (with loopbacks), 2 SRD nodes and 1 SRD link per slice
    sizes = count_problem_size(variant, ScenarioDims.of(tiny_infra, tiny_slice_list))
    assert list(sizes.variables) == expected
    assert sizes.count == len(expected)


def test_counted_variables_match_the_built_models(tiny_infra, tiny_slice_list, tiny_rates):
    dims = ScenarioDims.of(tiny_infra, tiny_slice_list)
    radio, _ = radio_step(tiny_infra, tiny_slice_list, tiny_rates, 0.0, True, SETTINGS, Variant.JR_JN, [])
    rp = build_rp(tiny_infra, tiny_slice_list[:1], tiny_rates)
    np_ = build_np(tiny_infra, tiny_slice_list[:1], radio, tiny_rates)
    jrn = build_jrn(tiny_infra, tiny_slice_list, tiny_rates)
    sr_sn = count_problem_size(Variant.SR_SN, dims).variables
    assert counted_variables(rp) == sr_sn[0]
    assert counted_variables(np_) == sr_sn[2]
    assert counted_variables(jrn) == count_problem_size(Variant.JRN, dims).variables[0]
    assert len(jrn.variables) > counted_variables(jrn)


def test_reference_formula_drops_node_indicators(tiny_infra, tiny_slice_list):
    sizes = count_problem_size(Variant.SR_SN, ScenarioDims.of(tiny_infra, tiny_slice_list))
    # RP |N_Ir|(1 + Q), NP 2|N_I||N_V| + |E_I||E_V|
    assert list(sizes.table_formula) == [10, 10, 47, 47]


# --- Orchestration ---

@pytest.mark.parametrize("variant", list(Variant))
def test_every_variant_is_feasible_and_verified(solved, variant):
    infra, slices, rates, solutions = solved
    sol = solutions[variant]
    assert sol.status == SolveStatus.OPTIMAL
    assert verify_solution(infra, slices, sol, tol=1e-5, rates=rates) == []
    assert sol.problem_sizes == list(count_problem_size(variant, ScenarioDims.of(infra, slices)).variables)
    assert sol.costs.total == pytest.approx(sum(sol.costs.radio_by_slice.values())
                                            + sum(sol.costs.wired_by_slice.values()))
    assert sol.slice_order == ("video", "sensors")


@pytest.mark.parametrize("variant", [v for v in Variant if v != Variant.JRN])
def test_joint_model_is_never_more_expensive(solved, variant):
    _, _, _, solutions = solved
    assert solutions[Variant.JRN].costs.total <= solutions[variant].costs.total * (1 + 1e-6) + 1e-6


def test_joint_radio_is_never_more_expensive_than_sequential(solved):
    _, _, _, solutions = solved
    assert solutions[Variant.JR_JN].costs.radio <= solutions[Variant.SR_JN].costs.radio * (1 + 1e-6) + 1e-6


def test_shares_are_whole_instances(solved):
    infra, slices, _, solutions = solved
    by_id = {s.id: s for s in slices}
    wired = solutions[Variant.JRN].wired
    assert wired.phi
    for (s, i, v, n), value in wired.phi.items():
        expected = wired.kappa[s, i, v, n] * by_id[s].srd.node(v).min_demand(n) / infra.node(i).capacity(n)
        assert value == expected


def test_radio_node_is_hosted_on_serving_rrhs(solved):
    _, _, _, solutions = solved
    sol = solutions[Variant.JR_JN]
    for s in ("video", "sensors"):
        serving = {i for (sid, i), flag in sol.radio.used.items() if sid == s and flag}
        assert serving
        for i in serving:
            assert sol.wired.served.get((s, i, "vBBU"), 0.0) > 0


def test_sequential_failure_names_the_slice(tiny_infra, tiny_slice_list, tiny_rates):
    video, sensors = tiny_slice_list
    flooded = sensors.with_rate_multiplier(1e4)
    rates = precompute_rate_tables(tiny_infra, [video, flooded], RadioParams())
    with pytest.raises(ProvisioningInfeasible) as excinfo:
        carp(tiny_infra, [video, flooded], Variant.SR_SN, rates=rates, settings=SETTINGS)
    assert excinfo.value.stage == "RP"
    assert excinfo.value.slice_id == "sensors"
    assert excinfo.value.status == SolveStatus.INFEASIBLE
    with pytest.raises(ProvisioningInfeasible) as excinfo:
        carp(tiny_infra, [video, flooded], "JR-JN", rates=rates, settings=SETTINGS)
    assert excinfo.value.slice_id is None


def test_variant_parse():
    assert Variant.parse("jr_jn") == Variant.JR_JN
    assert Variant.parse(" JRN ") == Variant.JRN
    assert Variant.SR_JN.joint_network and not Variant.SR_JN.joint_radio
    with pytest.raises(ProvisioningError):
        Variant.parse("JR-XN")


def test_delta_scaling_keeps_full_demand_when_feasible(tiny_infra, tiny_slice_list, tiny_rates):
    delta, sol = delta_scaling(tiny_infra, tiny_slice_list, Variant.JR_JN, rates=tiny_rates, settings=SETTINGS)
    assert delta == 1.0
    assert sol.delta == 1.0


def test_delta_scaling_bisects_on_overload(tiny_infra, tiny_slice_list):
    video, sensors = tiny_slice_list
    slices = [video, sensors.with_rate_multiplier(200)]
    rates = precompute_rate_tables(tiny_infra, slices, RadioParams())
    with pytest.raises(ProvisioningInfeasible):
        carp(tiny_infra, slices, Variant.JR_JN, rates=rates, settings=SETTINGS)
    delta, sol = delta_scaling(tiny_infra, slices, Variant.JR_JN, tol=1 / 64, rates=rates, settings=SETTINGS)
    assert 1 / 64 <= delta < 1
    assert sol.delta == delta
    scaled = [s.scaled(delta) for s in slices]
    assert verify_solution(tiny_infra, scaled, sol, tol=1e-5, rates=rates) == []
    with pytest.raises(ProvisioningInfeasible):
        carp(tiny_infra, [s.scaled(min(1.0, delta + 1 / 32)) for s in slices], Variant.JR_JN, rates=rates,
             settings=SETTINGS)


def test_delta_scaling_reports_the_floor(tiny_infra, tiny_slice_list, tiny_rates):
    video, _ = tiny_slice_list
    # one instance needs more CPUs than any node has, at every scale
    bulky = wired_slice([SrdNode("v1", 40.0, min_compute=20.0), SrdNode("v2", 1.0, min_compute=1.0)],
                        [SrdLink("v1", "v2", 1.0)], slice_id="bulky")
    slices = [video, bulky]
    rates = precompute_rate_tables(tiny_infra, slices, RadioParams())
    with pytest.raises(ProvisioningInfeasible) as excinfo:
        delta_scaling(tiny_infra, slices, Variant.SR_SN, rates=rates, settings=SETTINGS)
    assert excinfo.value.stage == "delta-floor"
    assert excinfo.value.slice_id == "bulky"
    with pytest.raises(ProvisioningError):
        delta_scaling(tiny_infra, slices, Variant.SR_SN, tol=1.5, rates=rates, settings=SETTINGS)


def test_max_supported_rate_brackets_the_radio_limit(tiny_infra, tiny_slice_list, tiny_rates):
    factor = max_supported_rate(tiny_infra, tiny_slice_list, Variant.JR_JN, rel_tol=1e-2, rates=tiny_rates,
                                settings=SETTINGS)
    assert factor > 1
    scaled = [s.with_rate_multiplier(factor) for s in tiny_slice_list]
    radio_step(tiny_infra, scaled, tiny_rates, 0.0, True, SETTINGS, Variant.JR_JN, [])
    beyond = [s.with_rate_multiplier(factor * 1.03) for s in tiny_slice_list]
    with pytest.raises(ProvisioningInfeasible):
        radio_step(tiny_infra, beyond, tiny_rates, 0.0, True, SETTINGS, Variant.JR_JN, [])
    sequential = max_supported_rate(tiny_infra, tiny_slice_list, Variant.SR_JN, rel_tol=1e-2, rates=tiny_rates,
                                    settings=SETTINGS)
    assert sequential <= factor * 1.03
