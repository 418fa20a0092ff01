"""
Direct SFC embedding ILP, used as the baseline for provision-then-embed.

An SFC instance carries one VNF per SRD node at the per-instance minimum
demands. Each VNF lands on exactly one node; link flows are splittable.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from core_model import RESOURCES, InfraLink, InfraNode, InfrastructureGraph, SliceSpec
from milp_core import LinExpr, MilpModel, Sense, SolveStatus, VarKind, solve
from provisioning import SHARE_FLOOR, ProvisioningInfeasible, ProvisioningSolution, Variant, carp, vname
from radio_model import RateTables

try:
    from backend.settings import SolverSettings, get_solver_settings
except ImportError:
    from .backend.settings import SolverSettings, get_solver_settings

logger = logging.getLogger(__name__)

# Per-instance minima in the slice presets are about a tenth of the aggregates
DEFAULT_INSTANCES_PER_SRD = 10

METHODS = ("prov-joint-emb", "prov-seq-emb", "dir-joint-emb", "dir-seq-emb")


class EmbeddingError(ValueError):
    pass


class EmbeddingInfeasible(RuntimeError):
    def __init__(self, sfc_id, status: SolveStatus, solve_time: float):
        self.sfc_id = sfc_id
        self.status = status
        self.solve_time = solve_time
        where = f" at {sfc_id}" if sfc_id else ""
        super().__init__(f"embedding{where} ended {status.value}")


class EmbeddingMode(str, Enum):
    JOINT = "joint"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class SfcVnf:
    id: str
    compute: float
    storage: float
    is_radio: bool = False

    def demand(self, n):
        return self.compute if n == "c" else self.storage


@dataclass(frozen=True)
class SfcLink:
    src: str
    dst: str
    bandwidth: float


@dataclass(frozen=True)
class SfcInstance:
    id: str
    vnfs: Tuple[SfcVnf, ...]
    links: Tuple[SfcLink, ...]

    @classmethod
    def from_slice(cls, s: SliceSpec, index: int,
                   instances_per_srd: int = DEFAULT_INSTANCES_PER_SRD) -> "SfcInstance":
        vnfs = tuple(SfcVnf(v.id, v.min_compute, v.min_storage, v.is_radio_node) for v in s.srd.nodes)
        links = tuple(SfcLink(l.src, l.dst, l.bandwidth_demand / instances_per_srd) for l in s.srd.links)
        return cls(f"{s.id}_sfc{index}", vnfs, links)


def make_sfcs(s: SliceSpec, count: int, instances_per_srd: int = DEFAULT_INSTANCES_PER_SRD) -> List[SfcInstance]:
    if not isinstance(count, int) or count <= 0:
        raise EmbeddingError(f"SFC count must be a positive integer, got {count}")
    if instances_per_srd <= 0:
        raise EmbeddingError(f"instances per SRD must be positive, got {instances_per_srd}")
    return [SfcInstance.from_slice(s, k, instances_per_srd) for k in range(count)]


@dataclass
class EmbeddingUsage:
    """Absolute amounts already taken by embedded SFCs."""
    nodes: Dict[Tuple[str, str], float] = field(default_factory=dict)
    links: Dict[Tuple[str, str], float] = field(default_factory=dict)
    used_nodes: set = field(default_factory=set)


@dataclass
class EmbeddingSolution:
    placement: Dict[Tuple[str, str], str] = field(default_factory=dict)  # (sfc, vnf) -> node
    routing: Dict[Tuple[str, str, str], Dict[Tuple[str, str], float]] = field(default_factory=dict)
    cost: float = 0.0
    solve_time: float = 0.0
    status: SolveStatus = SolveStatus.OPTIMAL
    usage: EmbeddingUsage = field(default_factory=EmbeddingUsage)


def _x_name(sfc, vnf, node):
    return vname("x", sfc.id, vnf.id, node.id)


def _f_name(sfc, link, x: InfraLink):
    return vname("f", sfc.id, link.src, link.dst, x.src, x.dst)


def _candidates(infra: InfrastructureGraph, vnf: SfcVnf) -> List[InfraNode]:
    pool = infra.rrh_nodes if vnf.is_radio else infra.nodes
    return [i for i in pool if all(i.capacity(n) >= vnf.demand(n) for n in RESOURCES)]


def build_embedding_ilp(infra: InfrastructureGraph, sfcs: Sequence[SfcInstance],
                        mode: EmbeddingMode = EmbeddingMode.JOINT,
                        prior_usage: Optional[EmbeddingUsage] = None) -> MilpModel:
    if not sfcs:
        raise EmbeddingError("empty SFC list")
    if not infra.nodes:
        raise EmbeddingError("empty infrastructure")
    mode = EmbeddingMode(mode)
    if mode == EmbeddingMode.SEQUENTIAL and len(sfcs) != 1:
        raise EmbeddingError("a sequential step embeds exactly one SFC")
    prior = prior_usage or EmbeddingUsage()
    model = MilpModel("EMB_" + mode.value)
    cost = LinExpr()

    used = {}
    for i in infra.cloud_nodes:
        used[i.id] = model.add_variable(vname("y", i.id), VarKind.BINARY)
        if i.id not in prior.used_nodes:
            cost.add(used[i.id], i.fixed_cost)

    node_load = {(i.id, n): LinExpr() for i in infra.nodes for n in RESOURCES}
    link_load = {x.key: LinExpr() for x in infra.links}
    for sfc in sfcs:
        placed = {}
        for vnf in sfc.vnfs:
            options = _candidates(infra, vnf)
            for i in options:
                x = model.add_variable(_x_name(sfc, vnf, i), VarKind.BINARY)
                placed[vnf.id, i.id] = x
                for n in RESOURCES:
                    node_load[i.id, n].add(x, vnf.demand(n))
                    cost.add(x, i.unit_cost(n) * vnf.demand(n))
                if i.id in used:
                    model.add_constraint(vname("uses", sfc.id, vnf.id, i.id), used[i.id] - x, Sense.GE, 0.0)
            model.add_constraint(vname("place", sfc.id, vnf.id),
                                 LinExpr.total(placed[vnf.id, i.id] for i in options), Sense.EQ, 1.0)

        for link in sfc.links:
            flow = {}
            for x in infra.links:
                if x.bandwidth > 0:
                    flow[x.key] = model.add_variable(_f_name(sfc, link, x), upper=1.0)
                    link_load[x.key].add(flow[x.key], link.bandwidth)
                    cost.add(flow[x.key], x.unit_cost * link.bandwidth)
            for i in infra.nodes:
                src = placed.get((link.src, i.id), 0.0)
                dst = placed.get((link.dst, i.id), 0.0)
                balance = LinExpr.total(flow[x.key] for x in infra.out_links(i.id) if x.key in flow) \
                    - LinExpr.total(flow[x.key] for x in infra.in_links(i.id) if x.key in flow)
                tag = (sfc.id, link.src, link.dst, i.id)
                balance = balance - src + dst
                if balance.terms:
                    model.add_constraint(vname("conserve", *tag), balance, Sense.EQ, 0.0)
                if isinstance(src, float) or isinstance(dst, float):
                    continue
                loop = (i.id, i.id)
                if loop in flow:
                    model.add_constraint(vname("colocate", *tag), flow[loop] - src - dst, Sense.GE, -1.0)
                else:
                    model.add_constraint(vname("colocate", *tag), src + dst, Sense.LE, 1.0)

    for i in infra.nodes:
        for n in RESOURCES:
            if node_load[i.id, n].terms:
                residual = max(0.0, i.capacity(n) - prior.nodes.get((i.id, n), 0.0))
                model.add_constraint(vname(f"capacity_{n}", i.id), node_load[i.id, n], Sense.LE, residual)
    for x in infra.links:
        if link_load[x.key].terms:
            residual = max(0.0, x.bandwidth - prior.links.get(x.key, 0.0))
            model.add_constraint(vname("bandwidth", x.src, x.dst), link_load[x.key], Sense.LE, residual)

    model.parts["cost"] = cost
    model.set_objective(cost)
    return model


def _extract(model: MilpModel, assignment, sfcs: Sequence[SfcInstance], infra: InfrastructureGraph,
             into: EmbeddingSolution):
    for sfc in sfcs:
        for vnf in sfc.vnfs:
            for i in _candidates(infra, vnf):
                if assignment.get(_x_name(sfc, vnf, i), 0.0) > 0.5:
                    into.placement[sfc.id, vnf.id] = i.id
                    for n in RESOURCES:
                        into.usage.nodes[i.id, n] = into.usage.nodes.get((i.id, n), 0.0) + vnf.demand(n)
                    if not i.is_rrh:
                        into.usage.used_nodes.add(i.id)
        for link in sfc.links:
            paths = {}
            for x in infra.links:
                value = assignment.get(_f_name(sfc, link, x), 0.0)
                if value > SHARE_FLOOR:
                    paths[x.key] = value
                    into.usage.links[x.key] = into.usage.links.get(x.key, 0.0) + value * link.bandwidth
            into.routing[sfc.id, link.src, link.dst] = paths


def embed(infra: InfrastructureGraph, sfcs: Sequence[SfcInstance], mode: EmbeddingMode = EmbeddingMode.JOINT,
          settings: Optional[SolverSettings] = None) -> EmbeddingSolution:
    """Embed all SFCs at once, or one after the other in list order on the residual capacities."""
    if not sfcs:
        raise EmbeddingError("empty SFC list")
    settings = settings or get_solver_settings()
    mode = EmbeddingMode(mode)
    result = EmbeddingSolution()
    batches = [list(sfcs)] if mode == EmbeddingMode.JOINT else [[sfc] for sfc in sfcs]
    for batch in batches:
        model = build_embedding_ilp(infra, batch, mode, result.usage)
        sol = solve(model, settings=settings)
        result.solve_time += sol.solve_time
        if not sol.status.has_solution:
            raise EmbeddingInfeasible(None if mode == EmbeddingMode.JOINT else batch[0].id, sol.status,
                                      result.solve_time)
        if sol.status != SolveStatus.OPTIMAL:
            result.status = sol.status
        result.cost += model.parts["cost"].value(sol.assignment)
        _extract(model, sol.assignment, batch, infra, result)
    logger.debug("embedded %d SFCs (%s) at cost %.3f in %.2fs", len(sfcs), mode.value, result.cost,
                 result.solve_time)
    return result


def reduce_graph(infra: InfrastructureGraph, prov: ProvisioningSolution, slice_id: str) -> InfrastructureGraph:
    """
    Infrastructure restricted to what was provisioned for one slice.

    Kept nodes are those the slice uses (wired or radio) plus the endpoints of
    kept links; capacities become the provisioned amounts, so a transit node
    carries no compute or storage.
    """
    link_share: Dict[Tuple[str, str], float] = {}
    for (s, i, j, _, _), value in prov.wired.phi_link.items():
        if s == slice_id:
            link_share[i, j] = link_share.get((i, j), 0.0) + value
    kept_links = {key for key, value in link_share.items() if value > SHARE_FLOOR}

    keep = {i for (s, i), flag in prov.wired.used.items() if s == slice_id and flag}
    keep |= {i for (s, i), flag in prov.radio.used.items() if s == slice_id and flag}
    for i, j in kept_links:
        keep |= {i, j}

    nodes = []
    for node in infra.nodes:
        if node.id not in keep:
            continue
        share = {n: sum(v for (s, i, _, k), v in prov.wired.phi.items() if s == slice_id and i == node.id and k == n)
                 for n in RESOURCES}
        nodes.append(replace(
            node,
            compute_capacity=node.compute_capacity * share["c"],
            storage_capacity=node.storage_capacity * share["s"],
            rb_capacity=node.rb_capacity * prov.radio.slice_share(slice_id, node.id),
        ))
    links = [replace(x, bandwidth=x.bandwidth * link_share[x.key]) for x in infra.links if x.key in kept_links]
    reduced = InfrastructureGraph(tuple(nodes), tuple(links))
    logger.info("reduced graph for %s: %d/%d nodes, %d/%d links", slice_id, len(reduced.nodes), len(infra.nodes),
                len(reduced.links), len(infra.links))
    return reduced


def run_comparison(infra: InfrastructureGraph, s: SliceSpec, sfc_counts: Sequence[int],
                   variant: Variant = Variant.JR_JN, prov: Optional[ProvisioningSolution] = None,
                   instances_per_srd: int = DEFAULT_INSTANCES_PER_SRD, rates: Optional[RateTables] = None,
                   settings: Optional[SolverSettings] = None) -> pd.DataFrame:
    """
    Cost and time of provision-then-embed against direct embedding for each SFC count.

    Rows: method, sfc_count, cost, time_s, status. Infeasible cells are recorded, not raised.
    """
    if not sfc_counts:
        raise EmbeddingError("no SFC counts given")
    for count in sfc_counts:
        if not isinstance(count, int) or count <= 0:
            raise EmbeddingError(f"SFC counts must be positive integers, got {count}")
    settings = settings or get_solver_settings()

    reduced = None
    prov_time = 0.0
    prov_status = None
    try:
        if prov is None:
            prov = carp(infra, [s], variant, rates=rates, settings=settings)
        prov_time = prov.solve_time
        reduced = reduce_graph(infra, prov, s.id)
    except ProvisioningInfeasible as e:
        prov_status = "provisioning-" + e.status.value
        print(f"⚠️ provisioning failed for {s.id}: {e}")

    rows = []
    for count in sfc_counts:
        sfcs = make_sfcs(s, count, instances_per_srd)
        for method in METHODS:
            on_reduced = method.startswith("prov")
            mode = EmbeddingMode.JOINT if "joint" in method else EmbeddingMode.SEQUENTIAL
            extra = prov_time if on_reduced else 0.0
            if on_reduced and reduced is None:
                rows.append({"method": method, "sfc_count": count, "cost": math.nan, "time_s": math.nan,
                             "status": prov_status})
                continue
            try:
                result = embed(reduced if on_reduced else infra, sfcs, mode, settings)
                rows.append({"method": method, "sfc_count": count, "cost": result.cost,
                             "time_s": result.solve_time + extra, "status": result.status.value})
            except EmbeddingInfeasible as e:
                rows.append({"method": method, "sfc_count": count, "cost": math.nan,
                             "time_s": e.solve_time + extra, "status": e.status.value})
    return pd.DataFrame(rows, columns=["method", "sfc_count", "cost", "time_s", "status"])
