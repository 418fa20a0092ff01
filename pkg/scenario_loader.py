import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import ValidationError

from core_model import (
    DEFAULT_COSTS, FAT_TREE_LEVELS, CostRow, CoverageSpec, DensityPatch, InfraLink, InfraNode, InfrastructureGraph,
    LevelCaps, NodeKind, Rect, RrhCaps, SliceSpec, SrdGraph, SrdLink, SrdNode, build_fat_tree,
    partition_union, validate_scenario,
)
from milp_core import SolveStatus
from provisioning import Costs, ProblemRecord, ProvisioningSolution, RadioShares, Variant, WiredShares
from radio_model import RadioParams

try:
    from backend.models import (
        CostsEntry, CoverageModel, EtaEntry, InfrastructureModel, LinkShareEntry, PhiEntry, RecordEntry,
        ScenarioDocument, ServedEntry, SliceEntry, SolutionDocument, UsedEntry,
    )
    from backend.settings import OUTPUT_DIR, SolverSettings, get_solver_settings
except ImportError:
    from .backend.models import (
        CostsEntry, CoverageModel, EtaEntry, InfrastructureModel, LinkShareEntry, PhiEntry, RecordEntry,
        ScenarioDocument, ServedEntry, SliceEntry, SolutionDocument, UsedEntry,
    )
    from .backend.settings import OUTPUT_DIR, SolverSettings, get_solver_settings

logger = logging.getLogger(__name__)

# Equirectangular projection, meters per degree
METERS_PER_DEG_LON = 111320.0  # at the equator, scaled by cos(latitude)
METERS_PER_DEG_LAT = 110540.0


class ScenarioError(ValueError):
    pass


# --- Presets ---

@dataclass(frozen=True)
class SlicePreset:
    nodes: Tuple[Tuple[str, float, float, float, float], ...]  # id, r_c, min r_c, r_s, min r_s
    links: Tuple[Tuple[str, str, float], ...]  # Gbps
    radio_node: str
    area: str
    users: float
    rate_up: float  # bps per user
    rate_down: float


SLICE_PRESETS: Dict[str, SlicePreset] = {
    # HD video streaming in the stadium, downlink
    "slice1": SlicePreset(
        nodes=(("vVOC", 1.35, 0.14, 3.75, 0.38), ("vGW", 0.23, 0.02, 0.13, 0.01), ("vBBU", 1.00, 0.10, 0.13, 0.01)),
        links=(("vVOC", "vGW", 1.0), ("vGW", "vBBU", 1.0)),
        radio_node="vBBU", area="stadium", users=200, rate_up=0.0, rate_down=4e6,
    ),
    # SD video streaming over the district, downlink
    "slice2": SlicePreset(
        nodes=(("vVOC", 1.08, 0.11, 1.88, 0.19), ("vGW", 0.18, 0.02, 0.06, 0.01), ("vBBU", 4.00, 0.40, 0.06, 0.01)),
        links=(("vVOC", "vGW", 0.5), ("vGW", "vBBU", 0.5)),
        radio_node="vBBU", area="district", users=400, rate_up=0.0, rate_down=0.5e6,
    ),
    # Video surveillance and traffic monitoring along the highway, uplink
    "slice3": SlicePreset(
        nodes=(("vIDPS", 0.535, 0.054, 0.006, 0.001), ("vVOC", 0.270, 0.027, 0.188, 0.019),
               ("vTM", 0.665, 0.067, 0.006, 0.001), ("vGW", 0.045, 0.005, 0.006, 0.001),
               ("vBBU", 0.200, 0.020, 0.006, 0.001)),
        links=(("vIDPS", "vVOC", 0.05), ("vVOC", "vTM", 0.05), ("vTM", "vGW", 0.05), ("vGW", "vBBU", 0.05)),
        radio_node="vBBU", area="highway", users=50, rate_up=1e6, rate_down=0.0,
    ),
}

AREA_PRESETS: Dict[str, Tuple[Rect, ...]] = {
    "stadium": (Rect(0.0, 0.0, 270.0, 309.0),),
    "district": (Rect(-180.0, -103.0, 450.0, 412.0),),
    "highway": (Rect(-400.0, 330.0, 500.0, 380.0), Rect(500.0, -200.0, 550.0, 380.0)),
}

# Number of slices of type 1, 2, 3 for the reference scenario sizes
TYPE_COUNTS = {4: (2, 1, 1), 6: (2, 2, 2), 8: (4, 1, 3)}


def slice_type_counts(total: int) -> Tuple[int, int, int]:
    if not isinstance(total, int) or total <= 0:
        raise ScenarioError(f"number of slices must be a positive integer, got {total}")
    if total in TYPE_COUNTS:
        return TYPE_COUNTS[total]
    counts = [0, 0, 0]
    for k in range(total):
        counts[k % 3] += 1
    return tuple(counts)


def preset_srd(name: str) -> SrdGraph:
    preset = SLICE_PRESETS[name]
    nodes = tuple(SrdNode(v, compute_demand=rc, storage_demand=rs, min_compute=mc, min_storage=ms,
                          is_radio_node=(v == preset.radio_node))
                  for v, rc, mc, rs, ms in preset.nodes)
    return SrdGraph(nodes, tuple(SrdLink(a, b, bw) for a, b, bw in preset.links))


def preset_slice(name: str, slice_id: Optional[str] = None) -> SliceSpec:
    """A slice built entirely from the preset catalog."""
    preset = SLICE_PRESETS[name]
    coverage = CoverageSpec.uniform(AREA_PRESETS[preset.area], preset.users, preset.rate_up, preset.rate_down)
    return SliceSpec.from_coverage(slice_id or name, preset_srd(name), coverage)


# --- RRH coordinates ---

def project(lat: float, lon: float, origin: Tuple[float, float]) -> Tuple[float, float]:
    """Equirectangular projection of (lat, lon) degrees to meters east/north of origin."""
    lat0, lon0 = origin
    x = METERS_PER_DEG_LON * math.cos(math.radians(lat0)) * (lon - lon0)
    y = METERS_PER_DEG_LAT * (lat - lat0)
    return x, y


def ingest_rrh_csv(path, origin: Tuple[float, float]) -> List[Tuple[float, float]]:
    """RRH positions from a two-column (lat, lon) CSV, in file order. A row with no number in it is a header."""
    try:
        df = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        print(f"⚠️ RRH file {path} is empty")
        return []
    except FileNotFoundError as e:
        raise ScenarioError(f"RRH file not found: {path}") from e
    if df.shape[1] != 2:
        raise ScenarioError(f"{path}: expected two columns (lat, lon), found {df.shape[1]}")
    values = df.apply(pd.to_numeric, errors="coerce")
    if values.iloc[0].isna().all():
        values = values.iloc[1:]
    bad = values.index[values.isna().any(axis=1)]
    if len(bad):
        raise ScenarioError(f"{path}: malformed row {int(bad[0]) + 1}: {df.iloc[bad[0]].tolist()}")
    if values.empty:
        print(f"⚠️ RRH file {path} has no coordinates")
        return []
    return [project(lat, lon, origin) for lat, lon in values.itertuples(index=False)]


# --- Scenario assembly ---

@dataclass
class Scenario:
    name: str
    infra: InfrastructureGraph
    slices: List[SliceSpec]
    radio: RadioParams
    variants: List[Variant]
    rate_discount: float
    delta_scaling: bool
    document: ScenarioDocument
    output_dir: Path

    def solver_settings(self, **cli) -> SolverSettings:
        """Scenario values win over CLI flags, which win over the environment."""
        base = get_solver_settings(**cli)
        return base.merged(**self.document.solver.model_dump())


def _coverage(model: Optional[CoverageModel], preset: Optional[SlicePreset], where: str) -> CoverageSpec:
    model = model or CoverageModel()
    if model.area:
        area = tuple(Rect(r.x0, r.y0, r.x1, r.y1) for r in model.area)
    elif model.area_preset or preset:
        key = model.area_preset or preset.area
        if key not in AREA_PRESETS:
            raise ScenarioError(f"{where}.coverage.area_preset: unknown area {key!r}")
        area = AREA_PRESETS[key]
    else:
        raise ScenarioError(f"{where}.coverage: no area given")
    rate_up = model.rate_up if model.rate_up is not None else (preset.rate_up if preset else 0.0)
    rate_down = model.rate_down if model.rate_down is not None else (preset.rate_down if preset else 0.0)
    if model.density:
        patches = tuple(DensityPatch(Rect(p.rect.x0, p.rect.y0, p.rect.x1, p.rect.y1), p.density)
                        for p in model.density)
        return CoverageSpec(area, patches, rate_up, rate_down, tuple(partition_union(area, model.cell_w, model.cell_h)))
    users = model.users if model.users is not None else (preset.users if preset else 0.0)
    return CoverageSpec.uniform(area, users, rate_up, rate_down, model.cell_w, model.cell_h)


def _srd(entry: SliceEntry, where: str) -> SrdGraph:
    if entry.nodes:
        nodes = tuple(SrdNode(n.id, n.compute, n.storage, n.min_compute, n.min_storage, n.radio) for n in entry.nodes)
        return SrdGraph(nodes, tuple(SrdLink(l.src, l.dst, l.bandwidth) for l in entry.links))
    if entry.preset is None:
        raise ScenarioError(f"{where}: give either a preset or SRD nodes")
    return preset_srd(entry.preset)


def build_slices(entries: Sequence[SliceEntry], total: Optional[int]) -> List[SliceSpec]:
    if not entries:
        if total is None:
            raise ScenarioError("slices: no slices and no total_slices given")
        entries = [SliceEntry(preset=f"slice{t + 1}", count=c)
                   for t, c in enumerate(slice_type_counts(total)) if c]
    elif total is not None and sum(e.count for e in entries) != total:
        raise ScenarioError(
            f"slice-type counts sum to {sum(e.count for e in entries)} but total_slices is {total}"
        )
    slices = []
    for k, entry in enumerate(entries):
        where = f"slices[{k}]"
        if entry.preset is not None and entry.preset not in SLICE_PRESETS:
            raise ScenarioError(f"{where}.preset: unknown preset {entry.preset!r}")
        if entry.count <= 0:
            raise ScenarioError(f"{where}.count must be positive")
        preset = SLICE_PRESETS.get(entry.preset) if entry.preset else None
        base = entry.id or entry.preset
        if base is None:
            raise ScenarioError(f"{where}: a slice without preset needs an id")
        srd = _srd(entry, where)
        coverage = _coverage(entry.coverage, preset, where)
        for c in range(entry.count):
            slices.append(SliceSpec.from_coverage(base if entry.count == 1 else f"{base}_{c}", srd, coverage))
    return slices


def build_infrastructure(model: InfrastructureModel, base_dir: Path) -> InfrastructureGraph:
    if (model.fat_tree is None) == (model.explicit is None):
        raise ScenarioError("infrastructure: give exactly one of fat_tree or explicit")
    if model.fat_tree is not None:
        ft = model.fat_tree
        if ft.rrh_csv:
            if ft.origin is None:
                raise ScenarioError("infrastructure.fat_tree.origin is required with rrh_csv")
            positions = ingest_rrh_csv(base_dir / ft.rrh_csv, ft.origin)
        else:
            positions = [tuple(p) for p in ft.rrh_positions]
        unknown = set(ft.levels) - set(FAT_TREE_LEVELS)
        if unknown:
            raise ScenarioError(f"infrastructure.fat_tree.levels: unknown levels {sorted(unknown)}")
        levels = {name: LevelCaps(**caps.model_dump()) for name, caps in ft.levels.items()}
        costs = {NodeKind(kind): CostRow(**row.model_dump()) for kind, row in ft.costs.items()}
        return build_fat_tree(ft.k, levels, positions, RrhCaps(**ft.rrh.model_dump()), costs)

    explicit = model.explicit
    nodes = []
    for n in explicit.nodes:
        kind = NodeKind(n.kind)
        row = DEFAULT_COSTS[kind]
        nodes.append(InfraNode(
            n.id, kind, n.compute, n.storage, n.rb_capacity, n.position,
            row.fixed if n.fixed_cost is None else n.fixed_cost,
            row.compute if n.compute_cost is None else n.compute_cost,
            row.storage if n.storage_cost is None else n.storage_cost,
            row.rb if n.rb_cost is None else n.rb_cost,
        ))
    links = []
    for l in explicit.links:
        links.append(InfraLink(l.src, l.dst, l.bandwidth, l.unit_cost))
        if l.bidirectional and l.src != l.dst:
            links.append(InfraLink(l.dst, l.src, l.bandwidth, l.unit_cost))
    return InfrastructureGraph(tuple(nodes), tuple(links))


def _field_path(error) -> str:
    return ".".join(str(p) for p in error["loc"]) or "<root>"


def parse_scenario_text(text: str, source: str = "<scenario>") -> ScenarioDocument:
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return ScenarioDocument.model_validate_json(text)
    except ValidationError as e:
        first = e.errors()[0]
        raise ScenarioError(f"{source}: {_field_path(first)}: {first['msg']}") from e


def scenario_from_document(doc: ScenarioDocument, base_dir: Path = Path(".")) -> Scenario:
    try:
        infra = build_infrastructure(doc.infrastructure, base_dir)
        slices = build_slices(doc.slices, doc.total_slices)
        validate_scenario(infra, slices)
        radio = RadioParams(**doc.radio.model_dump())
        variants = [Variant.parse(v) for v in doc.variants]
    except ScenarioError:
        raise
    except ValueError as e:
        # ModelError, RadioError and ProvisioningError all derive from ValueError
        raise ScenarioError(f"{doc.name}: {e}") from e
    output_dir = Path(doc.output_dir or OUTPUT_DIR)
    return Scenario(doc.name, infra, slices, radio, variants, doc.rate_discount, doc.delta_scaling, doc, output_dir)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise ScenarioError(f"scenario file not found: {path}") from e
    doc = parse_scenario_text(text, str(path))
    scenario = scenario_from_document(doc, path.parent)
    logger.info("loaded %s: %d nodes, %d links, %d slices", scenario.name, len(scenario.infra.nodes),
                len(scenario.infra.links), len(scenario.slices))
    return scenario


# --- Solution documents ---

def solution_to_document(sol: ProvisioningSolution, scenario_name: str) -> SolutionDocument:
    radio, wired = sol.radio, sol.wired
    eta = [EtaEntry(slice=s, rrh=i, cell=q, direction=d, value=v)
           for d, table in (("up", radio.eta_up), ("down", radio.eta_down))
           for (s, i, q), v in sorted(table.items())]
    phi = [PhiEntry(slice=s, node=i, vnf=v, resource=n, value=value, instances=wired.kappa.get((s, i, v, n), 0))
           for (s, i, v, n), value in sorted(wired.phi.items())]
    links = [LinkShareEntry(slice=s, src=i, dst=j, vnf_src=v, vnf_dst=w, value=value)
             for (s, i, j, v, w), value in sorted(wired.phi_link.items())]
    served = [ServedEntry(slice=s, node=i, vnf=v, value=value) for (s, i, v), value in sorted(wired.served.items())]
    used = [UsedEntry(slice=s, node=i, layer=layer)
            for layer, table in (("radio", radio.used), ("wired", wired.used))
            for (s, i), flag in sorted(table.items()) if flag]
    records = [RecordEntry(stage=r.stage, slices=list(r.slices), status=r.status.value, variables=r.variables,
                           constraints=r.constraints, objective=r.objective)
               for r in sol.records]
    costs = CostsEntry(radio=sol.costs.radio, wired=sol.costs.wired, total=sol.costs.total,
                       radio_by_slice=sol.costs.radio_by_slice, wired_by_slice=sol.costs.wired_by_slice)
    return SolutionDocument(scenario=scenario_name, variant=sol.variant.value, rate_discount=sol.rate_discount,
                            delta=sol.delta, slice_order=list(sol.slice_order), eta=eta, phi=phi,
                            link_shares=links, served=served, used=used, costs=costs, records=records)


def document_to_solution(doc: SolutionDocument) -> ProvisioningSolution:
    ids = set(doc.slice_order)
    radio = RadioShares(slices=set(ids))
    wired = WiredShares(slices=set(ids))
    for e in doc.eta:
        (radio.eta_up if e.direction == "up" else radio.eta_down)[e.slice, e.rrh, e.cell] = e.value
    for e in doc.phi:
        wired.phi[e.slice, e.node, e.vnf, e.resource] = e.value
        if e.instances:
            wired.kappa[e.slice, e.node, e.vnf, e.resource] = e.instances
    for e in doc.link_shares:
        wired.phi_link[e.slice, e.src, e.dst, e.vnf_src, e.vnf_dst] = e.value
    for e in doc.served:
        wired.served[e.slice, e.node, e.vnf] = e.value
    for e in doc.used:
        (radio.used if e.layer == "radio" else wired.used)[e.slice, e.node] = 1
    costs = Costs(doc.costs.radio, doc.costs.wired, dict(doc.costs.radio_by_slice), dict(doc.costs.wired_by_slice))
    records = [ProblemRecord(r.stage, tuple(r.slices), SolveStatus(r.status), 0.0, r.variables,
                             r.constraints, r.objective) for r in doc.records]
    return ProvisioningSolution(Variant.parse(doc.variant), doc.rate_discount, tuple(doc.slice_order), radio, wired,
                                costs, records, doc.delta)


def save_solution(sol: ProvisioningSolution, path, scenario_name: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(solution_to_document(sol, scenario_name).model_dump_json(indent=2))
    return path


def load_solution(path) -> ProvisioningSolution:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise ScenarioError(f"solution file not found: {path}") from e
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return document_to_solution(SolutionDocument.model_validate_json(text))
    except ValidationError as e:
        first = e.errors()[0]
        raise ScenarioError(f"{path}: {_field_path(first)}: {first['msg']}") from e
