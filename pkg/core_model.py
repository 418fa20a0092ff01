"""
Domain types for the infrastructure network, slice demands and coverage geometry.

Coordinates are meters in a planar frame attached to the scenario area.
Capacities follow the usual units: CPUs, GBytes, Gbps and resource blocks.
"""
import logging
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

# Ids end up inside solver variable names, where "__" separates fields
ID_PATTERN = re.compile(r"^[A-Za-z0-9]+(?:_[A-Za-z0-9]+)*$")

AREA_TOLERANCE = 1e-6
DEMAND_TOLERANCE = 1e-9

RESOURCES = ("c", "s")


class ModelError(ValueError):
    pass


def check_id(value, what="id"):
    if not isinstance(value, str) or not ID_PATTERN.match(value):
        raise ModelError(f"invalid {what} {value!r}: use letters, digits and single underscores")
    return value


def _non_negative(value, what):
    if value is None or value < 0 or math.isnan(value):
        raise ModelError(f"{what} must be >= 0, got {value}")


# --- Geometry ---

@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ModelError(f"degenerate rectangle ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    @property
    def corners(self):
        return ((self.x0, self.y0), (self.x1, self.y0), (self.x1, self.y1), (self.x0, self.y1))

    def overlap_area(self, other: "Rect") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        if w <= 0 or h <= 0:
            return 0.0
        return w * h

    def contains(self, x, y):
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


def _coverage_counts(groups: Sequence[Sequence[Rect]]):
    """Count, per elementary box of the shared coordinate grid, how many rectangles of each group cover it."""
    xs = np.unique([v for rects in groups for r in rects for v in (r.x0, r.x1)])
    ys = np.unique([v for rects in groups for r in rects for v in (r.y0, r.y1)])
    box_area = np.outer(np.diff(xs), np.diff(ys))
    counts = []
    for rects in groups:
        grid = np.zeros(box_area.shape, dtype=int)
        for r in rects:
            i0, i1 = np.searchsorted(xs, [r.x0, r.x1])
            j0, j1 = np.searchsorted(ys, [r.y0, r.y1])
            grid[i0:i1, j0:j1] += 1
        counts.append(grid)
    return box_area, counts


def union_is_disjoint(rects: Sequence[Rect]) -> bool:
    if len(rects) < 2:
        return True
    box_area, (grid,) = _coverage_counts([rects])
    slack = AREA_TOLERANCE * float(box_area.sum())
    return float(box_area[grid > 1].sum()) <= slack


@dataclass(frozen=True)
class Cell:
    index: int
    rect: Rect

    @property
    def center(self):
        return self.rect.center

    @property
    def area(self):
        return self.rect.area


def partition_area(area: Rect, cell_w: float, cell_h: float, first_index: int = 0) -> List[Cell]:
    """Grid cells of cell_w x cell_h clipped to the area, row-major from the lower-left corner."""
    if cell_w <= 0 or cell_h <= 0:
        raise ModelError(f"cell size must be positive, got {cell_w} x {cell_h}")
    n_cols = max(1, math.ceil(round(area.width / cell_w, 9)))
    n_rows = max(1, math.ceil(round(area.height / cell_h, 9)))
    cells = []
    for row in range(n_rows):
        y0 = area.y0 + row * cell_h
        y1 = area.y1 if row == n_rows - 1 else min(area.y1, y0 + cell_h)
        for col in range(n_cols):
            x0 = area.x0 + col * cell_w
            x1 = area.x1 if col == n_cols - 1 else min(area.x1, x0 + cell_w)
            cells.append(Cell(first_index + len(cells), Rect(x0, y0, x1, y1)))
    return cells


def partition_union(rects: Sequence[Rect], cell_w: float, cell_h: float) -> List[Cell]:
    cells: List[Cell] = []
    for rect in rects:
        cells.extend(partition_area(rect, cell_w, cell_h, first_index=len(cells)))
    return cells


# --- Coverage ---

@dataclass(frozen=True)
class DensityPatch:
    rect: Rect
    density: float  # users per square meter

    def __post_init__(self):
        _non_negative(self.density, "density")


@dataclass(frozen=True)
class CoverageSpec:
    area: Tuple[Rect, ...]
    density: Tuple[DensityPatch, ...] = ()
    rate_up: float = 0.0  # bps per user
    rate_down: float = 0.0
    cells: Tuple[Cell, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "area", tuple(self.area))
        object.__setattr__(self, "density", tuple(self.density))
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.area:
            raise ModelError("coverage area is empty")
        _non_negative(self.rate_up, "rate_up")
        _non_negative(self.rate_down, "rate_down")
        if not union_is_disjoint(self.area):
            raise ModelError("coverage area rectangles overlap")
        if not union_is_disjoint([p.rect for p in self.density]):
            raise ModelError("density patches overlap")
        if not self.cells:
            raise ModelError("coverage has no cells")
        if [c.index for c in self.cells] != list(range(len(self.cells))):
            raise ModelError("cell indices must be 0..Q-1 in order")
        self._check_partition()

    def _check_partition(self):
        box_area, (cell_grid, area_grid) = _coverage_counts([[c.rect for c in self.cells], list(self.area)])
        slack = AREA_TOLERANCE * self.total_area
        if float(box_area[cell_grid > 1].sum()) > slack:
            raise ModelError("cells are not pairwise disjoint")
        mismatch = (cell_grid > 0) != (area_grid > 0)
        if float(box_area[mismatch].sum()) > slack:
            raise ModelError("cells do not tile the coverage area")

    @classmethod
    def uniform(cls, area: Iterable[Rect], users: float, rate_up=0.0, rate_down=0.0,
                cell_w=90.0, cell_h=103.0) -> "CoverageSpec":
        """Coverage with `users` spread evenly over the area, partitioned into grid cells."""
        rects = tuple(area)
        _non_negative(users, "users")
        total = sum(r.area for r in rects)
        patches = tuple(DensityPatch(r, users / total) for r in rects)
        return cls(rects, patches, rate_up, rate_down, tuple(partition_union(rects, cell_w, cell_h)))

    @property
    def total_area(self):
        return sum(r.area for r in self.area)

    def users_in(self, region: Rect) -> float:
        """Exact integral of the piecewise-constant density over a rectangle."""
        return sum(p.density * p.rect.overlap_area(region) for p in self.density)

    @cached_property
    def total_users(self) -> float:
        return sum(self.users_in(r) for r in self.area)

    def scaled(self, rate_factor: float) -> "CoverageSpec":
        return replace(self, rate_up=self.rate_up * rate_factor, rate_down=self.rate_down * rate_factor)


def aggregate_radio_demand(coverage: CoverageSpec) -> Tuple[float, float]:
    """(r_u, r_d) in bps: per-user rate times the number of users in the area."""
    users = coverage.total_users
    return coverage.rate_up * users, coverage.rate_down * users


def per_cell_demand(coverage: CoverageSpec, q: int) -> float:
    if not isinstance(q, (int, np.integer)) or not 0 <= q < len(coverage.cells):
        raise ModelError(f"cell index {q} out of range (Q={len(coverage.cells)})")
    return coverage.users_in(coverage.cells[q].rect)


# --- Slice resource demand ---

@dataclass(frozen=True)
class SrdNode:
    id: str
    compute_demand: float = 0.0
    storage_demand: float = 0.0
    min_compute: float = 0.0
    min_storage: float = 0.0
    is_radio_node: bool = False
    rate_up_demand: Optional[float] = None
    rate_down_demand: Optional[float] = None

    def __post_init__(self):
        check_id(self.id, "SRD node id")
        for name in ("compute_demand", "storage_demand", "min_compute", "min_storage"):
            _non_negative(getattr(self, name), f"{self.id}.{name}")
        if self.compute_demand > 0 and self.min_compute <= 0:
            raise ModelError(f"{self.id}: min_compute must be > 0 when compute is demanded")
        if self.storage_demand > 0 and self.min_storage <= 0:
            raise ModelError(f"{self.id}: min_storage must be > 0 when storage is demanded")
        has_rates = self.rate_up_demand is not None or self.rate_down_demand is not None
        if has_rates and not self.is_radio_node:
            raise ModelError(f"{self.id}: only the radio node carries rate demands")
        if self.is_radio_node:
            object.__setattr__(self, "rate_up_demand", float(self.rate_up_demand or 0.0))
            object.__setattr__(self, "rate_down_demand", float(self.rate_down_demand or 0.0))
            _non_negative(self.rate_up_demand, f"{self.id}.rate_up_demand")
            _non_negative(self.rate_down_demand, f"{self.id}.rate_down_demand")

    @property
    def radio_demand(self) -> float:
        if not self.is_radio_node:
            return 0.0
        return self.rate_up_demand + self.rate_down_demand

    def demand(self, n: str) -> float:
        return self.compute_demand if n == "c" else self.storage_demand

    def min_demand(self, n: str) -> float:
        return self.min_compute if n == "c" else self.min_storage


@dataclass(frozen=True)
class SrdLink:
    src: str
    dst: str
    bandwidth_demand: float = 0.0

    def __post_init__(self):
        if self.src == self.dst:
            raise ModelError(f"SRD self-loop on {self.src}")
        _non_negative(self.bandwidth_demand, f"{self.src}->{self.dst} bandwidth")

    @property
    def key(self):
        return (self.src, self.dst)


@dataclass(frozen=True)
class SrdGraph:
    nodes: Tuple[SrdNode, ...]
    links: Tuple[SrdLink, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate SRD node ids")
        for link in self.links:
            if link.src not in ids or link.dst not in ids:
                raise ModelError(f"SRD link {link.src}->{link.dst} references an unknown node")
        if len({l.key for l in self.links}) != len(self.links):
            raise ModelError("duplicate SRD links")
        radios = [n for n in self.nodes if n.is_radio_node]
        if len(radios) != 1:
            raise ModelError(f"an SRD graph needs exactly one radio node, found {len(radios)}")

    @cached_property
    def _by_id(self) -> Dict[str, SrdNode]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id) -> SrdNode:
        return self._by_id[node_id]

    @property
    def radio_node(self) -> SrdNode:
        return next(n for n in self.nodes if n.is_radio_node)

    def out_links(self, node_id) -> List[SrdLink]:
        return [l for l in self.links if l.src == node_id]

    def in_links(self, node_id) -> List[SrdLink]:
        return [l for l in self.links if l.dst == node_id]

    def out_ratio(self, link: SrdLink) -> Optional[float]:
        total = sum(l.bandwidth_demand for l in self.out_links(link.src))
        return link.bandwidth_demand / total if total > 0 else None

    def in_ratio(self, link: SrdLink) -> Optional[float]:
        total = sum(l.bandwidth_demand for l in self.in_links(link.dst))
        return link.bandwidth_demand / total if total > 0 else None

    def with_radio_demand(self, rate_up: float, rate_down: float) -> "SrdGraph":
        nodes = tuple(
            replace(n, rate_up_demand=rate_up, rate_down_demand=rate_down) if n.is_radio_node else n
            for n in self.nodes
        )
        return SrdGraph(nodes, self.links)


@dataclass(frozen=True)
class SliceSpec:
    id: str
    srd: SrdGraph
    coverage: CoverageSpec

    def __post_init__(self):
        check_id(self.id, "slice id")
        r_u, r_d = aggregate_radio_demand(self.coverage)
        radio = self.srd.radio_node
        for stored, expected, label in ((radio.rate_up_demand, r_u, "r_u"), (radio.rate_down_demand, r_d, "r_d")):
            if not math.isclose(stored, expected, rel_tol=DEMAND_TOLERANCE, abs_tol=1e-12):
                raise ModelError(
                    f"slice {self.id}: stored {label}={stored} differs from coverage aggregate {expected}"
                )

    @classmethod
    def from_coverage(cls, slice_id: str, srd: SrdGraph, coverage: CoverageSpec) -> "SliceSpec":
        """Build a slice whose radio node demand is derived from its coverage."""
        r_u, r_d = aggregate_radio_demand(coverage)
        return cls(slice_id, srd.with_radio_demand(r_u, r_d), coverage)

    @property
    def cells(self):
        return self.coverage.cells

    def scaled(self, delta: float) -> "SliceSpec":
        """Every demand multiplied by delta; the per-instance minima stay unchanged."""
        if delta <= 0:
            raise ModelError(f"scaling factor must be positive, got {delta}")
        nodes = tuple(
            replace(n, compute_demand=n.compute_demand * delta, storage_demand=n.storage_demand * delta)
            for n in self.srd.nodes
        )
        links = tuple(replace(l, bandwidth_demand=l.bandwidth_demand * delta) for l in self.srd.links)
        return SliceSpec.from_coverage(self.id, SrdGraph(nodes, links), self.coverage.scaled(delta))

    def with_rate_multiplier(self, factor: float) -> "SliceSpec":
        """Per-user rates multiplied by factor; wired demands unchanged."""
        return SliceSpec.from_coverage(self.id, self.srd, self.coverage.scaled(factor))


# --- Infrastructure ---

class NodeKind(str, Enum):
    CLOUD = "cloud"
    RRH = "rrh"


@dataclass(frozen=True)
class InfraNode:
    id: str
    kind: NodeKind = NodeKind.CLOUD
    compute_capacity: float = 0.0
    storage_capacity: float = 0.0
    rb_capacity: float = 0.0
    position: Optional[Tuple[float, float]] = None
    fixed_cost: float = 0.0
    compute_cost: float = 0.0
    storage_cost: float = 0.0
    rb_cost: float = 0.0

    def __post_init__(self):
        check_id(self.id, "infrastructure node id")
        object.__setattr__(self, "kind", NodeKind(self.kind))
        for name in ("compute_capacity", "storage_capacity", "rb_capacity",
                     "fixed_cost", "compute_cost", "storage_cost", "rb_cost"):
            _non_negative(getattr(self, name), f"{self.id}.{name}")
        if self.rb_capacity > 0 and self.kind != NodeKind.RRH:
            raise ModelError(f"{self.id}: only RRH nodes provide resource blocks")
        if self.kind == NodeKind.RRH:
            if self.position is None:
                raise ModelError(f"{self.id}: RRH nodes need a position")
            object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))

    @property
    def is_rrh(self):
        return self.kind == NodeKind.RRH

    def capacity(self, n: str) -> float:
        return self.compute_capacity if n == "c" else self.storage_capacity

    def unit_cost(self, n: str) -> float:
        return self.compute_cost if n == "c" else self.storage_cost


@dataclass(frozen=True)
class InfraLink:
    src: str
    dst: str
    bandwidth: float = 0.0
    unit_cost: float = 0.0

    def __post_init__(self):
        _non_negative(self.bandwidth, f"{self.src}->{self.dst} bandwidth")
        _non_negative(self.unit_cost, f"{self.src}->{self.dst} unit_cost")

    @property
    def is_loopback(self):
        return self.src == self.dst

    @property
    def key(self):
        return (self.src, self.dst)


@dataclass(frozen=True)
class InfrastructureGraph:
    nodes: Tuple[InfraNode, ...] = ()
    links: Tuple[InfraLink, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate infrastructure node ids")
        known = set(ids)
        for link in self.links:
            if link.src not in known or link.dst not in known:
                raise ModelError(f"link {link.src}->{link.dst} references an unknown node")
        if len({l.key for l in self.links}) != len(self.links):
            raise ModelError("duplicate infrastructure links")

    @cached_property
    def _by_id(self) -> Dict[str, InfraNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def _links_by_key(self) -> Dict[Tuple[str, str], InfraLink]:
        return {l.key: l for l in self.links}

    def node(self, node_id) -> InfraNode:
        return self._by_id[node_id]

    def has_node(self, node_id) -> bool:
        return node_id in self._by_id

    def link(self, src, dst) -> Optional[InfraLink]:
        return self._links_by_key.get((src, dst))

    def loopback(self, node_id) -> Optional[InfraLink]:
        return self.link(node_id, node_id)

    @property
    def rrh_nodes(self) -> List[InfraNode]:
        return [n for n in self.nodes if n.is_rrh]

    @property
    def cloud_nodes(self) -> List[InfraNode]:
        return [n for n in self.nodes if not n.is_rrh]

    @property
    def external_links(self) -> List[InfraLink]:
        return [l for l in self.links if not l.is_loopback]

    @cached_property
    def _adjacency(self):
        out_map = {n.id: [] for n in self.nodes}
        in_map = {n.id: [] for n in self.nodes}
        for l in self.links:
            if not l.is_loopback:
                out_map[l.src].append(l)
                in_map[l.dst].append(l)
        return out_map, in_map

    def out_links(self, node_id) -> List[InfraLink]:
        """External links leaving node_id (loopback excluded)."""
        return self._adjacency[0][node_id]

    def in_links(self, node_id) -> List[InfraLink]:
        return self._adjacency[1][node_id]

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for n in self.nodes:
            g.add_node(n.id, kind=n.kind.value)
        for l in self.links:
            g.add_edge(l.src, l.dst, bandwidth=l.bandwidth, unit_cost=l.unit_cost)
        return g


@dataclass(frozen=True)
class LevelCaps:
    """Per-level node capacities; bandwidth applies to the links towards the level below."""
    compute: float = 0.0
    storage: float = 0.0
    bandwidth: float = 0.0
    loopback: float = 0.0
    link_cost: float = 1.0
    loopback_cost: float = 0.0


@dataclass(frozen=True)
class RrhCaps:
    rb_capacity: float = 100.0
    compute: float = 0.0
    storage: float = 0.0
    loopback: float = 0.0
    loopback_cost: float = 0.0


@dataclass(frozen=True)
class CostRow:
    fixed: float = 0.0
    compute: float = 1.0
    storage: float = 1.0
    rb: float = 0.0


# Infrastructure cost table
DEFAULT_COSTS = {
    NodeKind.CLOUD: CostRow(fixed=20.0, compute=1.0, storage=1.0, rb=0.0),
    NodeKind.RRH: CostRow(fixed=25.0, compute=1.0, storage=1.0, rb=0.05),
}

FAT_TREE_LEVELS = ("core", "aggregation", "edge")


def fat_tree_counts(k: int) -> Dict[str, int]:
    half = k // 2
    undirected = 3 * k ** 3 // 4
    nodes = half * half + 2 * k * half + k ** 3 // 4
    return {
        "core": half * half,
        "aggregation": k * half,
        "edge": k * half,
        "rrh": k ** 3 // 4,
        "nodes": nodes,
        "undirected_links": undirected,
        "directed_links": 2 * undirected + nodes,
    }


def build_fat_tree(
    k: int,
    level_caps: Dict[str, LevelCaps],
    rrh_positions: Sequence[Tuple[float, float]],
    rrh_caps: RrhCaps = RrhCaps(),
    cost_table: Optional[Dict[NodeKind, CostRow]] = None,
) -> InfrastructureGraph:
    """k-ary fat tree: cloud core/aggregation/edge layers, RRH leaves, both link directions and a loopback per node."""
    if not isinstance(k, int) or k < 2 or k % 2:
        raise ModelError(f"fat-tree arity must be an even integer >= 2, got {k}")
    counts = fat_tree_counts(k)
    if len(rrh_positions) != counts["rrh"]:
        raise ModelError(f"k={k} fat tree has {counts['rrh']} leaves but {len(rrh_positions)} RRH positions were given")
    missing = [lvl for lvl in FAT_TREE_LEVELS if lvl not in level_caps]
    if missing:
        raise ModelError(f"missing level capacities: {missing}")
    costs = {**DEFAULT_COSTS, **(cost_table or {})}
    cloud, rrh = costs[NodeKind.CLOUD], costs[NodeKind.RRH]
    half = k // 2

    nodes: List[InfraNode] = []
    links: List[InfraLink] = []

    def add_cloud(node_id, caps: LevelCaps):
        nodes.append(InfraNode(node_id, NodeKind.CLOUD, caps.compute, caps.storage,
                               fixed_cost=cloud.fixed, compute_cost=cloud.compute, storage_cost=cloud.storage))
        links.append(InfraLink(node_id, node_id, caps.loopback, caps.loopback_cost))

    def connect(upper, lower, caps: LevelCaps):
        links.append(InfraLink(upper, lower, caps.bandwidth, caps.link_cost))
        links.append(InfraLink(lower, upper, caps.bandwidth, caps.link_cost))

    core_caps, agg_caps, edge_caps = (level_caps[lvl] for lvl in FAT_TREE_LEVELS)
    for c in range(half * half):
        add_cloud(f"core{c}", core_caps)
    leaf = 0
    for p in range(k):
        for j in range(half):
            add_cloud(f"agg{p}_{j}", agg_caps)
            for c in range(j * half, (j + 1) * half):
                connect(f"core{c}", f"agg{p}_{j}", core_caps)
        for j in range(half):
            edge = f"edge{p}_{j}"
            add_cloud(edge, edge_caps)
            for a in range(half):
                connect(f"agg{p}_{a}", edge, agg_caps)
            for _ in range(half):
                node_id = f"rrh{leaf}"
                nodes.append(InfraNode(node_id, NodeKind.RRH, rrh_caps.compute, rrh_caps.storage,
                                       rrh_caps.rb_capacity, tuple(rrh_positions[leaf]),
                                       rrh.fixed, rrh.compute, rrh.storage, rrh.rb))
                links.append(InfraLink(node_id, node_id, rrh_caps.loopback, rrh_caps.loopback_cost))
                connect(edge, node_id, edge_caps)
                leaf += 1

    graph = InfrastructureGraph(tuple(nodes), tuple(links))
    logger.debug("fat tree k=%d: %d nodes, %d links", k, len(graph.nodes), len(graph.links))
    return graph


def validate_scenario(infra: InfrastructureGraph, slices: Sequence[SliceSpec]) -> None:
    """Cross-checks between slices and infrastructure; raises ModelError naming the broken invariant."""
    ids = [s.id for s in slices]
    if len(set(ids)) != len(ids):
        raise ModelError("slice ids must be unique")
    for s in slices:
        for node in s.srd.nodes:
            for n in RESOURCES:
                if node.min_demand(n) > node.demand(n) + 1e-12:
                    raise ModelError(
                        f"slice {s.id}, node {node.id}: minimum {n} demand exceeds the aggregate demand"
                    )
    if any(s.srd.radio_node.radio_demand > 0 for s in slices) and not infra.rrh_nodes:
        raise ModelError("at least one RRH is required when a slice has radio demand")
    if infra.cloud_nodes and any(s.srd.links for s in slices):
        g = infra.to_networkx()
        clouds = {n.id for n in infra.cloud_nodes}
        for rrh in infra.rrh_nodes:
            if not clouds & nx.descendants(g, rrh.id) and not clouds & nx.ancestors(g, rrh.id):
                print(f"⚠️ RRH {rrh.id} has no path to any cloud node; its slices must fit on the RRH itself")
