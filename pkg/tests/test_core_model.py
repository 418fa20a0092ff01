import networkx as nx
import numpy as np
import pytest

from core_model import (
    DEFAULT_COSTS, CoverageSpec, DensityPatch, InfraLink, InfraNode, InfrastructureGraph, LevelCaps, ModelError,
    NodeKind, Rect, SliceSpec, SrdGraph, SrdLink, SrdNode, aggregate_radio_demand, build_fat_tree, fat_tree_counts,
    partition_area, partition_union, per_cell_demand, validate_scenario,
)

LEVELS = {lvl: LevelCaps(compute=8, storage=8, bandwidth=10, loopback=10) for lvl in ("core", "aggregation", "edge")}


def positions(count):
    return [(10.0 * k, 0.0) for k in range(count)]


def test_partition_exact_tiling():
    cells = partition_area(Rect(0, 0, 180, 206), 90, 103)
    assert len(cells) == 4
    assert [c.index for c in cells] == [0, 1, 2, 3]
    # row-major from the lower-left corner
    assert cells[0].center == (45.0, 51.5)
    assert cells[1].center == (135.0, 51.5)
    assert cells[2].center == (45.0, 154.5)


def test_partition_clips_boundary_cells():
    area = Rect(0, 0, 1430, 4950)
    cells = partition_area(area, 90, 103)
    # ceil(1430/90) * ceil(4950/103) = 16 * 49
    assert len(cells) == 784
    assert sum(c.area for c in cells) == pytest.approx(area.area, rel=1e-9)
    assert cells[15].rect.x1 == 1430
    assert cells[15].rect.width == pytest.approx(1430 - 15 * 90)


def test_partition_small_area_is_one_cell():
    area = Rect(5, 5, 50, 60)
    cells = partition_area(area, 90, 103)
    assert len(cells) == 1
    assert cells[0].rect == area


def test_partition_rejects_bad_input():
    with pytest.raises(ModelError):
        Rect(0, 0, 0, 10)
    with pytest.raises(ModelError):
        partition_area(Rect(0, 0, 10, 10), 0, 5)


def test_partition_union_numbers_cells_consecutively():
    cells = partition_union([Rect(0, 0, 90, 103), Rect(90, 0, 270, 103)], 90, 103)
    assert [c.index for c in cells] == [0, 1, 2]


def test_aggregate_radio_demand_downlink_stadium():
    cov = CoverageSpec.uniform([Rect(0, 0, 270, 309)], 200, rate_up=0.0, rate_down=4e6)
    r_u, r_d = aggregate_radio_demand(cov)
    assert r_u == 0.0
    assert r_d == pytest.approx(800e6)


def test_aggregate_radio_demand_uplink_cameras():
    cov = CoverageSpec.uniform([Rect(0, 0, 500, 50)], 50, rate_up=1e6)
    r_u, r_d = aggregate_radio_demand(cov)
    assert r_u == pytest.approx(50e6)
    assert r_d == 0.0


def test_aggregate_radio_demand_zero_density():
    cov = CoverageSpec.uniform([Rect(0, 0, 100, 100)], 0, rate_up=1e6, rate_down=1e6)
    assert aggregate_radio_demand(cov) == (0.0, 0.0)


def test_per_cell_demand_uniform():
    cov = CoverageSpec.uniform([Rect(0, 0, 180, 206)], 200)
    assert [per_cell_demand(cov, q) for q in range(4)] == pytest.approx([50, 50, 50, 50])


def test_per_cell_demand_single_support():
    area = Rect(0, 0, 180, 206)
    cells = tuple(partition_area(area, 90, 103))
    cov = CoverageSpec((area,), (DensityPatch(cells[3].rect, 0.01),), cells=cells)
    values = [per_cell_demand(cov, q) for q in range(4)]
    assert values[3] == pytest.approx(0.01 * 90 * 103)
    assert values[:3] == [0.0, 0.0, 0.0]


def test_per_cell_demand_matches_monte_carlo():
    area = Rect(0, 0, 300, 200)
    patches = (DensityPatch(Rect(0, 0, 130, 200), 0.002), DensityPatch(Rect(130, 0, 300, 200), 0.0005))
    cov = CoverageSpec((area,), patches, cells=tuple(partition_area(area, 90, 103)))
    rng = np.random.default_rng(7)
    for cell in cov.cells:
        r = cell.rect
        xs = rng.uniform(r.x0, r.x1, 200_000)
        rho = np.where(xs < 130, 0.002, 0.0005)
        estimate = r.area * float(rho.mean())
        assert per_cell_demand(cov, cell.index) == pytest.approx(estimate, rel=1e-2)


def test_per_cell_demand_sums_to_aggregate():
    cov = CoverageSpec.uniform([Rect(-180, -103, 450, 412)], 400, rate_down=0.5e6)
    total = sum(per_cell_demand(cov, q) for q in range(len(cov.cells)))
    assert total * cov.rate_down == pytest.approx(aggregate_radio_demand(cov)[1], rel=1e-9)


def test_per_cell_demand_invalid_index():
    cov = CoverageSpec.uniform([Rect(0, 0, 90, 103)], 1)
    with pytest.raises(ModelError):
        per_cell_demand(cov, 1)


def test_coverage_rejects_overlapping_area():
    with pytest.raises(ModelError):
        CoverageSpec.uniform([Rect(0, 0, 100, 100), Rect(50, 50, 150, 150)], 10)


def test_srd_node_invariants():
    with pytest.raises(ModelError):
        SrdNode("v1", compute_demand=1.0)  # no per-instance minimum
    with pytest.raises(ModelError):
        SrdNode("v1", rate_up_demand=1.0)  # rates only on the radio node
    with pytest.raises(ModelError):
        SrdNode("bad__id")


def test_srd_graph_needs_one_radio_node():
    with pytest.raises(ModelError):
        SrdGraph((SrdNode("a"), SrdNode("b")))
    with pytest.raises(ModelError):
        SrdGraph((SrdNode("a", is_radio_node=True), SrdNode("b", is_radio_node=True)))
    with pytest.raises(ModelError):
        SrdLink("a", "a", 1.0)


def test_srd_ratios():
    g = SrdGraph(
        (SrdNode("v1", is_radio_node=True), SrdNode("v2"), SrdNode("v3")),
        (SrdLink("v1", "v2", 30), SrdLink("v1", "v3", 20)),
    )
    assert g.out_ratio(g.links[0]) == pytest.approx(0.6)
    assert g.in_ratio(g.links[1]) == pytest.approx(1.0)


def test_slice_spec_checks_stored_rates():
    cov = CoverageSpec.uniform([Rect(0, 0, 90, 103)], 10, rate_down=1e6)
    srd = SrdGraph((SrdNode("vBBU", is_radio_node=True, rate_down_demand=5e6),))
    with pytest.raises(ModelError):
        SliceSpec("s1", srd, cov)
    s = SliceSpec.from_coverage("s1", srd, cov)
    assert s.srd.radio_node.rate_down_demand == pytest.approx(10e6)


def test_slice_scaled_keeps_minimum_demands():
    cov = CoverageSpec.uniform([Rect(0, 0, 90, 103)], 10, rate_down=1e6)
    srd = SrdGraph((SrdNode("vBBU", 2.0, min_compute=0.5, is_radio_node=True),))
    s = SliceSpec.from_coverage("s1", srd, cov).scaled(0.5)
    node = s.srd.radio_node
    assert node.compute_demand == pytest.approx(1.0)
    assert node.min_compute == 0.5
    assert node.rate_down_demand == pytest.approx(5e6)


def test_slice_scaled_below_its_minimum_still_builds():
    cov = CoverageSpec.uniform([Rect(0, 0, 90, 103)], 10, rate_down=1e6)
    srd = SrdGraph((SrdNode("vBBU", 2.0, min_compute=0.5, is_radio_node=True),))
    node = SliceSpec.from_coverage("s1", srd, cov).scaled(0.1).srd.radio_node
    # 0.2 CPU demanded, one instance needs 0.5
    assert node.compute_demand == pytest.approx(0.2)
    assert node.min_compute == 0.5


def test_infra_node_invariants():
    with pytest.raises(ModelError):
        InfraNode("c1", NodeKind.CLOUD, rb_capacity=10)
    with pytest.raises(ModelError):
        InfraNode("r1", NodeKind.RRH, rb_capacity=10)
    with pytest.raises(ModelError):
        InfrastructureGraph((InfraNode("c1"),), (InfraLink("c1", "c2", 1.0),))


def test_fat_tree_k4_counts():
    g = build_fat_tree(4, LEVELS, positions(16))
    assert len(g.nodes) == 36
    assert len(g.cloud_nodes) == 20
    assert len(g.rrh_nodes) == 16
    # 48 undirected links, both directions, plus one loopback per node
    assert len(g.links) == 2 * 48 + 36
    assert all(g.loopback(n.id) is not None for n in g.nodes)
    assert fat_tree_counts(4)["directed_links"] == len(g.links)


def test_fat_tree_k2_every_rrh_reachable_from_core():
    g = build_fat_tree(2, LEVELS, positions(2))
    dg = g.to_networkx()
    core = [n.id for n in g.cloud_nodes if n.id.startswith("core")]
    assert core == ["core0"]
    for rrh in g.rrh_nodes:
        assert nx.has_path(dg, "core0", rrh.id)
        assert nx.has_path(dg, rrh.id, "core0")


@pytest.mark.parametrize("k", [2, 4, 6])
def test_fat_tree_leaf_to_leaf_paths(k):
    g = build_fat_tree(k, LEVELS, positions(k ** 3 // 4))
    dg = g.to_networkx()
    rrhs = [n.id for n in g.rrh_nodes]
    assert all(nx.has_path(dg, rrhs[0], other) for other in rrhs[1:])


def test_fat_tree_cost_rows():
    g = build_fat_tree(4, LEVELS, positions(16))
    for n in g.cloud_nodes:
        assert (n.fixed_cost, n.compute_cost, n.storage_cost) == (20, 1, 1)
    for n in g.rrh_nodes:
        assert (n.fixed_cost, n.rb_cost) == (25, 0.05)
    assert DEFAULT_COSTS[NodeKind.RRH].rb == 0.05


def test_fat_tree_errors():
    with pytest.raises(ModelError):
        build_fat_tree(3, LEVELS, positions(6))
    with pytest.raises(ModelError):
        build_fat_tree(4, LEVELS, positions(15))


def test_validate_scenario_requires_rrh_for_radio_demand():
    cov = CoverageSpec.uniform([Rect(0, 0, 90, 103)], 10, rate_down=1e6)
    s = SliceSpec.from_coverage("s1", SrdGraph((SrdNode("vBBU", is_radio_node=True),)), cov)
    infra = InfrastructureGraph((InfraNode("c1", compute_capacity=1),))
    with pytest.raises(ModelError, match="RRH"):
        validate_scenario(infra, [s])


def test_validate_scenario_minimum_above_aggregate():
    cov = CoverageSpec.uniform([Rect(0, 0, 90, 103)], 0)
    srd = SrdGraph((SrdNode("vBBU", 1.0, min_compute=2.0, is_radio_node=True),))
    s = SliceSpec.from_coverage("s1", srd, cov)
    with pytest.raises(ModelError, match="minimum"):
        validate_scenario(InfrastructureGraph(), [s])


def test_validate_scenario_warns_about_isolated_rrh(capsys):
    cov = CoverageSpec.uniform([Rect(0, 0, 90, 103)], 10, rate_down=1e6)
    srd = SrdGraph((SrdNode("vGW"), SrdNode("vBBU", is_radio_node=True)), (SrdLink("vGW", "vBBU", 1.0),))
    s = SliceSpec.from_coverage("s1", srd, cov)
    infra = InfrastructureGraph((InfraNode("c1", compute_capacity=4),
                                 InfraNode("r1", NodeKind.RRH, rb_capacity=10, position=(45.0, 51.5))))
    validate_scenario(infra, [s])
    assert "⚠️ RRH r1 has no path" in capsys.readouterr().out
