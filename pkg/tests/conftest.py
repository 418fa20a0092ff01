import pytest

from backend.cache import clear_all_caches
from backend.settings import get_solver_settings
from core_model import (
    CoverageSpec, InfraLink, InfraNode, InfrastructureGraph, LevelCaps, NodeKind, Rect, RrhCaps, SliceSpec,
    SrdGraph, SrdLink, SrdNode, build_fat_tree,
)
from radio_model import RadioParams, RateTables, precompute_rate_tables

AREA = Rect(0.0, 0.0, 180.0, 206.0)
RRH_POSITIONS = [(45.0, 51.5), (135.0, 154.5)]


@pytest.fixture(autouse=True)
def fresh_caches():
    clear_all_caches()
    yield
    clear_all_caches()


def radio_only_node(node_id="vr"):
    return SrdNode(node_id, is_radio_node=True)


def silent_coverage():
    # no users, so the radio node demands nothing
    return CoverageSpec.uniform([Rect(0.0, 0.0, 90.0, 103.0)], 0.0)


def wired_slice(nodes, links, slice_id="s"):
    """Slice whose SRD graph is nodes + links plus a radio node with zero rates."""
    srd = SrdGraph(tuple(nodes) + (radio_only_node(),), tuple(links))
    return SliceSpec.from_coverage(slice_id, srd, silent_coverage())


def cloud(node_id, compute, compute_cost=1.0, fixed_cost=0.0):
    return InfraNode(node_id, NodeKind.CLOUD, compute, 0.0, fixed_cost=fixed_cost, compute_cost=compute_cost)


def no_rates():
    return RateTables(())


@pytest.fixture
def fork_case():
    # v1 feeds v2 (30) and v3 (20); i1 can only export over a 5 Gbps link
    s = wired_slice(
        [SrdNode("v1", 50.0, min_compute=5.0 / 13.0), SrdNode("v2", 30.0, min_compute=1.0),
         SrdNode("v3", 20.0, min_compute=1.0)],
        [SrdLink("v1", "v2", 30.0), SrdLink("v1", "v3", 20.0)],
    )
    infra = InfrastructureGraph(
        (cloud("i1", 10.0), cloud("i2", 1000.0)),
        (InfraLink("i1", "i2", 5.0, 1.0), InfraLink("i2", "i2", 1000.0, 0.0)),
    )
    return infra, s


@pytest.fixture
def merge_case():
    # v1 (3) and v2 (2) both feed v3; component A is i1 -> i2, component B absorbs the rest
    s = wired_slice(
        [SrdNode("v1", 5.0, min_compute=1.0), SrdNode("v2", 6.0, min_compute=0.6),
         SrdNode("v3", 10.0, min_compute=1.0)],
        [SrdLink("v1", "v3", 3.0), SrdLink("v2", "v3", 2.0)],
    )
    infra = InfrastructureGraph(
        (cloud("i1", 6.0), cloud("i2", 10.0), cloud("i3", 100.0), cloud("i4", 100.0)),
        (InfraLink("i1", "i2", 3.0, 1.0), InfraLink("i3", "i4", 100.0, 1.0)),
    )
    return infra, s


@pytest.fixture
def single_node_case():
    s = wired_slice(
        [SrdNode("v1", 2.0, min_compute=1.0), SrdNode("v2", 1.0, min_compute=1.0)],
        [SrdLink("v1", "v2", 1.0)],
    )
    infra = InfrastructureGraph((cloud("i0", 10.0),), (InfraLink("i0", "i0", 10.0, 0.0),))
    return infra, s


def tiny_fat_tree():
    level = LevelCaps(compute=16.0, storage=16.0, bandwidth=10.0, loopback=10.0)
    rrh = RrhCaps(rb_capacity=100.0, compute=8.0, storage=4.0, loopback=10.0)
    return build_fat_tree(2, {"core": level, "aggregation": level, "edge": level}, RRH_POSITIONS, rrh)


def tiny_slices():
    video = SliceSpec.from_coverage(
        "video",
        SrdGraph(
            (SrdNode("vGW", 4.0, 2.0, 1.0, 0.5), SrdNode("vBBU", 2.0, min_compute=0.5, is_radio_node=True)),
            (SrdLink("vGW", "vBBU", 1.0),),
        ),
        CoverageSpec.uniform([AREA], 20, rate_up=0.1e6, rate_down=1e6),
    )
    sensors = SliceSpec.from_coverage(
        "sensors",
        SrdGraph(
            (SrdNode("vBBU", 1.0, min_compute=0.5, is_radio_node=True), SrdNode("vGW", 2.0, min_compute=1.0)),
            (SrdLink("vBBU", "vGW", 0.5),),
        ),
        CoverageSpec.uniform([AREA], 40, rate_up=0.5e6),
    )
    return [video, sensors]


@pytest.fixture
def tiny_infra():
    return tiny_fat_tree()


@pytest.fixture
def tiny_slice_list():
    return tiny_slices()


@pytest.fixture
def tiny_rates(tiny_infra, tiny_slice_list):
    return precompute_rate_tables(tiny_infra, tiny_slice_list, RadioParams())


@pytest.fixture
def settings():
    return get_solver_settings(time_limit=60, mip_gap=1e-9)


TINY_SCENARIO = {
    "name": "tiny",
    "infrastructure": {
        "fat_tree": {
            "k": 2,
            "levels": {
                "core": {"compute": 16, "storage": 16, "bandwidth": 10, "loopback": 10},
                "aggregation": {"compute": 16, "storage": 16, "bandwidth": 10, "loopback": 10},
                "edge": {"compute": 16, "storage": 16, "bandwidth": 10, "loopback": 10},
            },
            "rrh": {"rb_capacity": 100, "compute": 8, "storage": 4, "loopback": 10},
            "rrh_positions": [[45.0, 51.5], [135.0, 154.5]],
        }
    },
    "slices": [
        {
            "id": "video",
            "nodes": [
                {"id": "vGW", "compute": 4, "storage": 2, "min_compute": 1, "min_storage": 0.5},
                {"id": "vBBU", "compute": 2, "min_compute": 0.5, "radio": True},
            ],
            "links": [{"src": "vGW", "dst": "vBBU", "bandwidth": 1}],
            "coverage": {"area": [{"x0": 0, "y0": 0, "x1": 180, "y1": 206}], "users": 20,
                         "rate_up": 100000, "rate_down": 1000000},
        },
        {
            "id": "sensors",
            "nodes": [
                {"id": "vBBU", "compute": 1, "min_compute": 0.5, "radio": True},
                {"id": "vGW", "compute": 2, "min_compute": 1},
            ],
            "links": [{"src": "vBBU", "dst": "vGW", "bandwidth": 0.5}],
            "coverage": {"area": [{"x0": 0, "y0": 0, "x1": 180, "y1": 206}], "users": 40,
                         "rate_up": 500000},
        },
    ],
    "variants": ["JRN", "JR-JN"],
    "solver": {"time_limit": 60, "mip_gap": 1e-9},
}
