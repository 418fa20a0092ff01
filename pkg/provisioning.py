"""
Radio (RP), network (NP) and joint (JRN) provisioning models and the
two-step coverage-aware orchestrator over the variants SR/JR x SN/JN.

Variable names are "<prefix>__<slice>__<part>..." so solved assignments can
be mapped back to shares without keeping solver handles around.

Shares:
    eta_u/eta_d(s, i, q)   fraction of RRH i's resource blocks given to slice s in cell q
    eta_used(s, i)         RRH i serves slice s
    phi_c/phi_s(s, i, v)   fraction of node i's compute/storage provisioned for SRD node v
    kappa_c/kappa_s        whole VNF instances those fractions amount to
    psi(s, i, v)           fraction of v's demand node i actually serves
    phi_used(s, i)         node i provisions anything for slice s
    phi_b(s, i, j, v, w)   fraction of link ij's bandwidth provisioned for SRD link vw
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from core_model import RESOURCES, InfrastructureGraph, SliceSpec, per_cell_demand
from milp_core import LinExpr, MilpModel, MilpSolution, Sense, SolveStatus, VarKind, solve, write_model
from radio_model import RadioParams, RateTables, precompute_rate_tables

try:
    from backend.settings import DELTA_TOLERANCE, RATE_DISCOUNT, SolverSettings, get_solver_settings
except ImportError:
    from .backend.settings import DELTA_TOLERANCE, RATE_DISCOUNT, SolverSettings, get_solver_settings

logger = logging.getLogger(__name__)

SEP = "__"
SHARE_FLOOR = 1e-12
AUXILIARY_PREFIXES = ("kappa_", "psi__")


class ProvisioningError(ValueError):
    pass


class ProvisioningInfeasible(RuntimeError):
    def __init__(self, variant, stage, slice_id, status):
        self.variant = variant
        self.stage = stage
        self.slice_id = slice_id
        self.status = status
        where = f" for slice {slice_id}" if slice_id else ""
        super().__init__(f"{variant.value if isinstance(variant, Variant) else variant}: "
                         f"{stage} step{where} ended {status.value if isinstance(status, SolveStatus) else status}")


class Variant(str, Enum):
    JRN = "JRN"
    SR_SN = "SR-SN"
    SR_JN = "SR-JN"
    JR_SN = "JR-SN"
    JR_JN = "JR-JN"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        key = text.strip().upper().replace("_", "-")
        for v in cls:
            if v.value == key:
                return v
        raise ProvisioningError(f"unknown variant {text!r}; expected one of {[v.value for v in cls]}")

    @property
    def joint_radio(self) -> bool:
        return self in (Variant.JR_SN, Variant.JR_JN)

    @property
    def joint_network(self) -> bool:
        return self in (Variant.SR_JN, Variant.JR_JN)


def vname(prefix: str, *parts) -> str:
    return SEP.join((prefix,) + tuple(str(p) for p in parts))


def eta_name(direction: str, slice_id, rrh_id, q) -> str:
    return vname(f"eta_{direction[0]}", slice_id, rrh_id, q)


# --- Solution data ---

@dataclass
class RadioShares:
    eta_up: Dict[Tuple[str, str, int], float] = field(default_factory=dict)
    eta_down: Dict[Tuple[str, str, int], float] = field(default_factory=dict)
    used: Dict[Tuple[str, str], int] = field(default_factory=dict)
    slices: set = field(default_factory=set)

    def eta(self, direction, slice_id, rrh_id, q) -> float:
        table = self.eta_up if direction == "up" else self.eta_down
        return table.get((slice_id, rrh_id, q), 0.0)

    def slice_share(self, slice_id, rrh_id) -> float:
        return sum(v for (s, i, _), v in self.eta_up.items() if s == slice_id and i == rrh_id) + \
            sum(v for (s, i, _), v in self.eta_down.items() if s == slice_id and i == rrh_id)

    def rrh_share(self, rrh_id) -> float:
        return sum(v for (_, i, _), v in self.eta_up.items() if i == rrh_id) + \
            sum(v for (_, i, _), v in self.eta_down.items() if i == rrh_id)

    def merge(self, other: "RadioShares"):
        self.eta_up.update(other.eta_up)
        self.eta_down.update(other.eta_down)
        self.used.update(other.used)
        self.slices |= other.slices


@dataclass
class WiredShares:
    phi: Dict[Tuple[str, str, str, str], float] = field(default_factory=dict)  # (slice, node, vnf, n)
    phi_link: Dict[Tuple[str, str, str, str, str], float] = field(default_factory=dict)  # (slice, i, j, v, w)
    used: Dict[Tuple[str, str], int] = field(default_factory=dict)
    kappa: Dict[Tuple[str, str, str, str], int] = field(default_factory=dict)
    served: Dict[Tuple[str, str, str], float] = field(default_factory=dict)
    slices: set = field(default_factory=set)

    def node_share(self, node_id, n) -> float:
        return sum(v for (_, i, _, k), v in self.phi.items() if i == node_id and k == n)

    def link_share(self, src, dst) -> float:
        return sum(v for (_, i, j, _, _), v in self.phi_link.items() if i == src and j == dst)

    def merge(self, other: "WiredShares"):
        self.phi.update(other.phi)
        self.phi_link.update(other.phi_link)
        self.used.update(other.used)
        self.kappa.update(other.kappa)
        self.served.update(other.served)
        self.slices |= other.slices


@dataclass
class Costs:
    radio: float = 0.0
    wired: float = 0.0
    radio_by_slice: Dict[str, float] = field(default_factory=dict)
    wired_by_slice: Dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.radio + self.wired


@dataclass(frozen=True)
class ProblemRecord:
    stage: str  # RP, NP or JRN
    slices: Tuple[str, ...]
    status: SolveStatus
    solve_time: float
    variables: int
    constraints: int
    objective: float


@dataclass
class ProvisioningSolution:
    variant: "Variant"
    rate_discount: float
    slice_order: Tuple[str, ...]
    radio: RadioShares
    wired: WiredShares
    costs: Costs
    records: List[ProblemRecord] = field(default_factory=list)
    delta: float = 1.0

    @property
    def solve_time(self) -> float:
        return sum(r.solve_time for r in self.records)

    @property
    def problem_sizes(self) -> List[int]:
        return [r.variables for r in self.records]

    @property
    def status(self) -> SolveStatus:
        if all(r.status == SolveStatus.OPTIMAL for r in self.records):
            return SolveStatus.OPTIMAL
        return SolveStatus.FEASIBLE


@dataclass
class WiredUsage:
    """Shares already committed by earlier slices, per (node, resource) and per link."""
    nodes: Dict[Tuple[str, str], float] = field(default_factory=dict)
    links: Dict[Tuple[str, str], float] = field(default_factory=dict)

    def add(self, wired: WiredShares):
        for (_, i, _, n), v in wired.phi.items():
            self.nodes[i, n] = self.nodes.get((i, n), 0.0) + v
        for (_, i, j, _, _), v in wired.phi_link.items():
            self.links[i, j] = self.links.get((i, j), 0.0) + v


def counted_variables(model: MilpModel) -> int:
    """Variables counted in problem sizes; instance counts and served shares are auxiliary."""
    return sum(1 for n in model.variables if not n.startswith(AUXILIARY_PREFIXES))


def _residual(prior: float, what: str) -> float:
    residual = 1.0 - prior
    if residual < -1e-9:
        raise ProvisioningError(f"negative residual capacity on {what}: {residual}")
    return max(0.0, residual)


# --- Radio part ---

def _check_rates(rates: RateTables, infra: InfrastructureGraph, slices: Sequence[SliceSpec]):
    if tuple(n.id for n in infra.rrh_nodes) != tuple(rates.rrh_ids) or not rates.covers(slices):
        raise ProvisioningError("rate tables do not cover every (RRH, slice, cell)")


def check_rate_discount(infra: InfrastructureGraph, slices: Sequence[SliceSpec], rates: RateTables, lam: float):
    """Every discounted unit cost c_r(i) - lam*b must stay non-negative."""
    if lam < 0:
        raise ProvisioningError(f"rate discount must be >= 0, got {lam}")
    if lam == 0:
        return
    for s in slices:
        for direction in ("up", "down"):
            table = rates.table(direction, s.id)
            for row, node in enumerate(infra.rrh_nodes):
                if table.shape[1] and node.rb_cost - lam * float(table[row].max()) < 0:
                    raise ProvisioningError(
                        f"rate discount {lam} makes the {direction}link RB cost of {node.id} negative for slice {s.id}"
                    )


def _add_radio(model: MilpModel, infra, slices, rates, lam, prior, eps):
    _check_rates(rates, infra, slices)
    check_rate_discount(infra, slices, rates, lam)
    rrhs = infra.rrh_nodes
    usage = {i.id: LinExpr() for i in rrhs}
    for s in slices:
        radio = s.srd.radio_node
        demand = {"up": radio.rate_up_demand, "down": radio.rate_down_demand}
        per_user = {"up": s.coverage.rate_up, "down": s.coverage.rate_down}
        users = [per_cell_demand(s.coverage, q) for q in range(len(s.cells))]
        cover = {(d, q): LinExpr() for d in demand for q in range(len(users))}
        aggregate = {d: LinExpr() for d in demand}
        cost = LinExpr()
        for i in rrhs:
            total = LinExpr()
            for q, users_q in enumerate(users):
                coef = {}
                etas = {}
                for d in ("up", "down"):
                    b = rates.rate(d, s.id, i.id, q)
                    active = demand[d] > 0 and users_q > 0
                    eta = model.add_variable(eta_name(d, s.id, i.id, q), upper=1.0 if active else 0.0)
                    etas[d] = eta
                    total.add(eta)
                    cost.add(eta, i.rb_capacity * (i.rb_cost - lam * b))
                    if active:
                        cover[d, q].add(eta, i.rb_capacity * b / (per_user[d] * users_q))
                        coef[d] = i.rb_capacity * b / demand[d]
                        aggregate[d].add(eta, coef[d])
                if len(coef) == 2:
                    model.add_constraint(vname("updown", s.id, i.id, q),
                                         etas["up"] * coef["up"] - etas["down"] * coef["down"], Sense.EQ, 0.0)
            used = model.add_variable(vname("eta_used", s.id, i.id), VarKind.BINARY)
            cost.add(used, i.fixed_cost)
            model.add_constraint(vname("radio_used_lo", s.id, i.id), used - total, Sense.GE, 0.0)
            model.add_constraint(vname("radio_used_hi", s.id, i.id), used - total, Sense.LE, 1.0 - eps)
            usage[i.id].add(total)
        for d in ("up", "down"):
            if demand[d] <= 0:
                continue
            for q, users_q in enumerate(users):
                if users_q > 0:
                    model.add_constraint(vname(f"cover_{d[0]}", s.id, q), cover[d, q], Sense.GE, 1.0)
            model.add_constraint(vname(f"aggregate_{d[0]}", s.id), aggregate[d], Sense.GE, 1.0)
        model.parts[vname("radio", s.id)] = cost
    for i in rrhs:
        model.add_constraint(vname("rb_capacity", i.id), usage[i.id], Sense.LE,
                             _residual(prior.get(i.id, 0.0), f"RRH {i.id}"))


def build_rp(infra: InfrastructureGraph, slices: Sequence[SliceSpec], rates: RateTables, lam: float = 0.0,
             prior_usage: Optional[Dict[str, float]] = None, epsilon: float = 1e-6) -> MilpModel:
    if not slices:
        raise ProvisioningError("empty slice subset")
    model = MilpModel("RP_" + "_".join(s.id for s in slices))
    _add_radio(model, infra, slices, rates, lam, prior_usage or {}, epsilon)
    model.set_objective(LinExpr.total(model.parts.values()))
    return model


# --- Radio fractions feeding the wired coupling ---

EtaTerm = Callable[[str, str, str, int], object]


def radio_fractions(infra: InfrastructureGraph, s: SliceSpec, rates: RateTables, eta: EtaTerm):
    """Per RRH: (share of r_r, share of r_u, share of r_d) it provides, as expressions in eta."""
    radio = s.srd.radio_node
    r_u, r_d, r_r = radio.rate_up_demand, radio.rate_down_demand, radio.radio_demand
    out = {}
    for j in infra.rrh_nodes:
        total, up, down = LinExpr(), LinExpr(), LinExpr()
        for q in range(len(s.cells)):
            if r_u > 0:
                term = eta("up", s.id, j.id, q)
                b = j.rb_capacity * rates.rate("up", s.id, j.id, q)
                up.add(term, b / r_u)
                total.add(term, b / r_r)
            if r_d > 0:
                term = eta("down", s.id, j.id, q)
                b = j.rb_capacity * rates.rate("down", s.id, j.id, q)
                down.add(term, b / r_d)
                total.add(term, b / r_r)
        out[j.id] = (total, up, down)
    return out


# --- Wired part ---

def _check_srd_links(s: SliceSpec):
    for l in s.srd.links:
        if l.bandwidth_demand <= 0:
            raise ProvisioningError(f"slice {s.id}: SRD link {l.src}->{l.dst} has zero bandwidth demand")


def _add_wired(model: MilpModel, infra: InfrastructureGraph, slices, fractions, prior: WiredUsage, eps):
    node_use = {(i.id, n): LinExpr() for i in infra.nodes for n in RESOURCES}
    link_use = {l.key: LinExpr() for l in infra.links}
    for s in slices:
        _check_srd_links(s)
        srd = s.srd
        norm = 1.0 / (2 * len(srd.nodes))
        cost = LinExpr()
        psi = {}
        phi = {}
        for i in infra.nodes:
            node_sum = LinExpr()
            for v in srd.nodes:
                blocked = any(v.demand(n) > 0 and i.capacity(n) <= 0 for n in RESOURCES)
                served = model.add_variable(vname("psi", s.id, i.id, v.id), upper=0.0 if blocked else None)
                psi[i.id, v.id] = served
                for n in RESOURCES:
                    a, r, r_min = i.capacity(n), v.demand(n), v.min_demand(n)
                    active = a > 0 and r > 0
                    share = model.add_variable(vname(f"phi_{n}", s.id, i.id, v.id), upper=1.0 if active else 0.0)
                    kappa = model.add_variable(vname(f"kappa_{n}", s.id, i.id, v.id), VarKind.INTEGER, 0.0,
                                               float(math.ceil(a / r_min)) if active else 0.0)
                    phi[i.id, v.id, n] = share
                    node_sum.add(share)
                    node_use[i.id, n].add(share)
                    cost.add(share, a * i.unit_cost(n))
                    if not active:
                        continue
                    model.add_constraint(vname(f"instances_{n}", s.id, i.id, v.id),
                                         share - kappa * (r_min / a), Sense.EQ, 0.0)
                    model.add_constraint(vname(f"covers_{n}", s.id, i.id, v.id),
                                         served * (r / a) - share, Sense.LE, 0.0)
                    model.add_constraint(vname(f"within_{n}", s.id, i.id, v.id),
                                         share - served * (r / a), Sense.LE, (r_min / a) * (1.0 - eps))
            used = model.add_variable(vname("phi_used", s.id, i.id), VarKind.BINARY)
            if not i.is_rrh:
                cost.add(used, i.fixed_cost)
            model.add_constraint(vname("node_used_lo", s.id, i.id), used - node_sum * norm, Sense.GE, 0.0)
            model.add_constraint(vname("node_used_hi", s.id, i.id), used - node_sum * norm, Sense.LE, 1.0 - eps)

        for v in srd.nodes:
            for n in RESOURCES:
                r = v.demand(n)
                if r > 0:
                    supply = LinExpr()
                    for i in infra.nodes:
                        supply.add(phi[i.id, v.id, n], i.capacity(n) / r)
                    model.add_constraint(vname(f"demand_{n}", s.id, v.id), supply, Sense.GE, 1.0)
            model.add_constraint(vname("served", s.id, v.id),
                                 LinExpr.total(psi[i.id, v.id] for i in infra.nodes), Sense.GE, 1.0)

        # traffic of SRD link l on infra link x, in units of r_b(l)
        traffic = {}
        for x in infra.links:
            for l in srd.links:
                share = model.add_variable(vname("phi_b", s.id, x.src, x.dst, l.src, l.dst),
                                           upper=1.0 if x.bandwidth > 0 else 0.0)
                link_use[x.key].add(share)
                cost.add(share, x.bandwidth * x.unit_cost)
                traffic[x.key, l.key] = share * (x.bandwidth / l.bandwidth_demand)

        for i in infra.nodes:
            loop = infra.loopback(i.id)
            for l in srd.links:
                produced = psi[i.id, l.src] * srd.out_ratio(l)
                consumed = psi[i.id, l.dst] * srd.in_ratio(l)
                outflow = LinExpr.total(traffic[x.key, l.key] for x in infra.out_links(i.id))
                inflow = LinExpr.total(traffic[x.key, l.key] for x in infra.in_links(i.id))
                tag = (s.id, i.id, l.src, l.dst)
                model.add_constraint(vname("flow", *tag), outflow - inflow - produced + consumed, Sense.EQ, 0.0)
                feed = inflow.copy()
                if loop is not None:
                    internal = traffic[loop.key, l.key]
                    model.add_constraint(vname("loop_out", *tag), internal - produced, Sense.LE, 0.0)
                    model.add_constraint(vname("loop_in", *tag), internal - consumed, Sense.LE, 0.0)
                    feed.add(internal)
                model.add_constraint(vname("feed", *tag), feed - consumed, Sense.GE, 0.0)

        radio = srd.radio_node
        if radio.radio_demand > 0:
            for j in infra.rrh_nodes:
                total, up, down = fractions[s.id][j.id]
                model.add_constraint(vname("radio_node", s.id, j.id), psi[j.id, radio.id] - total, Sense.EQ, 0.0)
                if radio.rate_down_demand > 0:
                    for l in srd.in_links(radio.id):
                        inflow = LinExpr.total(traffic[x.key, l.key] for x in infra.in_links(j.id)
                                               if not infra.node(x.src).is_rrh)
                        model.add_constraint(vname("downlink", s.id, j.id, l.src),
                                             inflow - down * srd.in_ratio(l), Sense.EQ, 0.0)
                if radio.rate_up_demand > 0:
                    for l in srd.out_links(radio.id):
                        outflow = LinExpr.total(traffic[x.key, l.key] for x in infra.out_links(j.id)
                                                if not infra.node(x.dst).is_rrh)
                        model.add_constraint(vname("uplink", s.id, j.id, l.dst),
                                             outflow - up * srd.out_ratio(l), Sense.EQ, 0.0)
        model.parts[vname("wired", s.id)] = cost

    for i in infra.nodes:
        for n in RESOURCES:
            if i.capacity(n) > 0:
                model.add_constraint(vname(f"node_share_{n}", i.id), node_use[i.id, n], Sense.LE,
                                     _residual(prior.nodes.get((i.id, n), 0.0), f"node {i.id}"))
    for x in infra.links:
        if x.bandwidth > 0:
            model.add_constraint(vname("link_share", x.src, x.dst), link_use[x.key], Sense.LE,
                                 _residual(prior.links.get(x.key, 0.0), f"link {x.src}->{x.dst}"))


def build_np(infra: InfrastructureGraph, slices: Sequence[SliceSpec], radio: RadioShares, rates: RateTables,
             prior_usage: Optional[WiredUsage] = None, epsilon: float = 1e-6) -> MilpModel:
    if not slices:
        raise ProvisioningError("empty slice subset")
    fractions = {}
    for s in slices:
        if s.srd.radio_node.radio_demand > 0:
            if s.id not in radio.slices:
                raise ProvisioningError(f"radio shares missing for slice {s.id}")
            _check_rates(rates, infra, [s])
            fractions[s.id] = radio_fractions(infra, s, rates, radio.eta)
    model = MilpModel("NP_" + "_".join(s.id for s in slices))
    _add_wired(model, infra, slices, fractions, prior_usage or WiredUsage(), epsilon)
    model.set_objective(LinExpr.total(model.parts.values()))
    return model


def build_jrn(infra: InfrastructureGraph, slices: Sequence[SliceSpec], rates: RateTables, lam: float = 0.0,
              epsilon: float = 1e-6) -> MilpModel:
    if not slices:
        raise ProvisioningError("empty slice subset")
    model = MilpModel("JRN")
    _add_radio(model, infra, slices, rates, lam, {}, epsilon)

    def eta_var(direction, slice_id, rrh_id, q):
        return model.var(eta_name(direction, slice_id, rrh_id, q))

    fractions = {s.id: radio_fractions(infra, s, rates, eta_var) for s in slices
                 if s.srd.radio_node.radio_demand > 0}
    _add_wired(model, infra, slices, fractions, WiredUsage(), epsilon)
    model.set_objective(LinExpr.total(model.parts.values()))
    return model


# --- Extraction ---

def _clip_share(value: float) -> float:
    return 0.0 if abs(value) < SHARE_FLOOR else value


def extract_radio(assignment: Dict[str, float], slice_ids) -> RadioShares:
    shares = RadioShares(slices=set(slice_ids))
    for name, value in assignment.items():
        prefix, _, rest = name.partition(SEP)
        if prefix in ("eta_u", "eta_d"):
            s, i, q = rest.split(SEP)
            value = _clip_share(value)
            if value:
                table = shares.eta_up if prefix == "eta_u" else shares.eta_down
                table[s, i, int(q)] = value
        elif prefix == "eta_used":
            s, i = rest.split(SEP)
            shares.used[s, i] = int(round(value))
    return shares


def extract_wired(assignment: Dict[str, float], infra: InfrastructureGraph,
                  slices: Sequence[SliceSpec]) -> WiredShares:
    """Wired shares with phi snapped to exact multiples of the per-instance minimum."""
    by_id = {s.id: s for s in slices}
    shares = WiredShares(slices=set(by_id))
    for name, value in assignment.items():
        prefix, _, rest = name.partition(SEP)
        parts = rest.split(SEP)
        if prefix in ("kappa_c", "kappa_s"):
            s, i, v = parts
            count = int(round(value))
            if count:
                n = prefix[-1]
                shares.kappa[s, i, v, n] = count
                shares.phi[s, i, v, n] = by_id[s].srd.node(v).min_demand(n) * count / infra.node(i).capacity(n)
        elif prefix == "phi_b":
            s, i, j, v, w = parts
            value = _clip_share(value)
            if value:
                shares.phi_link[s, i, j, v, w] = value
        elif prefix == "psi":
            s, i, v = parts
            value = _clip_share(value)
            if value:
                shares.served[s, i, v] = value
        elif prefix == "phi_used":
            s, i = parts
            shares.used[s, i] = int(round(value))
    return shares


def _polished(assignment: Dict[str, float], wired: WiredShares) -> Dict[str, float]:
    out = dict(assignment)
    for name in out:
        if name.startswith(("phi_c__", "phi_s__")):
            s, i, v = name.split(SEP)[1:]
            out[name] = wired.phi.get((s, i, v, name[4]), 0.0)
    return out


def _part_values(model: MilpModel, assignment, kind: str) -> Dict[str, float]:
    prefix = kind + SEP
    return {name[len(prefix):]: expr.value(assignment)
            for name, expr in model.parts.items() if name.startswith(prefix)}


# --- Orchestration ---

def _solve_stage(model: MilpModel, stage: str, slice_ids, settings: SolverSettings,
                 variant, records: List[ProblemRecord], failing_slice=None) -> MilpSolution:
    if settings.model_dir:
        write_model(model, Path(settings.model_dir) / f"{variant.value}_{stage}_{'-'.join(slice_ids)}.lp")
    sol = solve(model, settings=settings)
    records.append(ProblemRecord(stage, tuple(slice_ids), sol.status, sol.solve_time,
                                 counted_variables(model), len(model.constraints), sol.objective_value))
    logger.info("%s %s step %s: %s in %.2fs", variant.value, stage, ",".join(slice_ids), sol.status.value,
                sol.solve_time)
    if not sol.status.has_solution:
        raise ProvisioningInfeasible(variant, stage, failing_slice, sol.status)
    return sol


def radio_step(infra, slices, rates, lam, joint: bool, settings: SolverSettings, variant,
               records: List[ProblemRecord]) -> Tuple[RadioShares, Dict[str, float]]:
    radio = RadioShares()
    costs: Dict[str, float] = {}
    if joint:
        model = build_rp(infra, slices, rates, lam, epsilon=settings.epsilon)
        sol = _solve_stage(model, "RP", [s.id for s in slices], settings, variant, records)
        radio.merge(extract_radio(sol.assignment, [s.id for s in slices]))
        costs.update(_part_values(model, sol.assignment, "radio"))
        return radio, costs
    prior: Dict[str, float] = {}
    for s in slices:
        model = build_rp(infra, [s], rates, lam, prior, settings.epsilon)
        sol = _solve_stage(model, "RP", [s.id], settings, variant, records, failing_slice=s.id)
        shares = extract_radio(sol.assignment, [s.id])
        radio.merge(shares)
        costs.update(_part_values(model, sol.assignment, "radio"))
        for i in infra.rrh_nodes:
            prior[i.id] = prior.get(i.id, 0.0) + shares.slice_share(s.id, i.id)
    return radio, costs


def network_step(infra, slices, radio, rates, joint: bool, settings: SolverSettings, variant,
                 records: List[ProblemRecord]) -> Tuple[WiredShares, Dict[str, float]]:
    wired = WiredShares()
    costs: Dict[str, float] = {}
    groups = [list(slices)] if joint else [[s] for s in slices]
    prior = WiredUsage()
    for group in groups:
        ids = [s.id for s in group]
        model = build_np(infra, group, radio, rates, prior, settings.epsilon)
        sol = _solve_stage(model, "NP", ids, settings, variant, records,
                           failing_slice=None if joint else ids[0])
        shares = extract_wired(sol.assignment, infra, group)
        wired.merge(shares)
        costs.update(_part_values(model, _polished(sol.assignment, shares), "wired"))
        prior.add(shares)
    return wired, costs


def _costs(radio_costs, wired_costs) -> Costs:
    return Costs(sum(radio_costs.values()), sum(wired_costs.values()), dict(radio_costs), dict(wired_costs))


def carp(infra: InfrastructureGraph, slices: Sequence[SliceSpec], variant: Variant, lam: Optional[float] = None,
         rates: Optional[RateTables] = None, params: Optional[RadioParams] = None,
         settings: Optional[SolverSettings] = None) -> ProvisioningSolution:
    """
    Provision every slice with the given variant; slices are handled in the order given.

    Raises ProvisioningInfeasible naming the failing stage (and slice for the
    sequential steps) when a subproblem has no solution.
    """
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    lam = RATE_DISCOUNT if lam is None else lam
    settings = settings or get_solver_settings()
    if rates is None:
        rates = precompute_rate_tables(infra, slices, params or RadioParams())
    ids = [s.id for s in slices]
    records: List[ProblemRecord] = []

    if variant == Variant.JRN:
        model = build_jrn(infra, slices, rates, lam, settings.epsilon)
        sol = _solve_stage(model, "JRN", ids, settings, variant, records)
        radio = extract_radio(sol.assignment, ids)
        wired = extract_wired(sol.assignment, infra, slices)
        polished = _polished(sol.assignment, wired)
        costs = _costs(_part_values(model, polished, "radio"), _part_values(model, polished, "wired"))
    else:
        radio, radio_costs = radio_step(infra, slices, rates, lam, variant.joint_radio, settings, variant, records)
        wired, wired_costs = network_step(infra, slices, radio, rates, variant.joint_network, settings, variant,
                                          records)
        costs = _costs(radio_costs, wired_costs)
    return ProvisioningSolution(variant, lam, tuple(ids), radio, wired, costs, records)


def delta_scaling(infra: InfrastructureGraph, slices: Sequence[SliceSpec], variant: Variant,
                  lam: Optional[float] = None, tol: Optional[float] = None, rates: Optional[RateTables] = None,
                  params: Optional[RadioParams] = None,
                  settings: Optional[SolverSettings] = None) -> Tuple[float, ProvisioningSolution]:
    """Largest demand fraction delta (within tol) every slice can be provisioned at, with its solution."""
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    tol = DELTA_TOLERANCE if tol is None else tol
    if not 0 < tol < 1:
        raise ProvisioningError(f"delta tolerance must be in (0, 1), got {tol}")
    if rates is None:
        rates = precompute_rate_tables(infra, slices, params or RadioParams())

    def attempt(delta):
        scaled = [s.scaled(delta) for s in slices] if delta != 1.0 else list(slices)
        sol = carp(infra, scaled, variant, lam, rates, settings=settings)
        sol.delta = delta
        return sol

    try:
        return 1.0, attempt(1.0)
    except ProvisioningInfeasible:
        logger.info("%s infeasible at full demand, bisecting on delta", variant.value)
    try:
        best = attempt(tol)
    except ProvisioningInfeasible as e:
        raise ProvisioningInfeasible(variant, "delta-floor", e.slice_id, e.status) from e
    lo, hi = tol, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        try:
            best = attempt(mid)
            lo = mid
        except ProvisioningInfeasible:
            hi = mid
        logger.debug("delta bracket [%.6f, %.6f]", lo, hi)
    return lo, best


def max_supported_rate(infra: InfrastructureGraph, slices: Sequence[SliceSpec], variant: Variant,
                       lam: float = 0.0, rel_tol: float = 1e-3, rates: Optional[RateTables] = None,
                       params: Optional[RadioParams] = None, settings: Optional[SolverSettings] = None,
                       max_factor: float = 2.0 ** 20) -> float:
    """
    Largest uniform multiplier on every per-user rate for which the variant's
    radio step stays feasible (JRN counts as joint).
    """
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    joint_radio = variant.joint_radio or variant == Variant.JRN
    settings = settings or get_solver_settings()
    if rates is None:
        rates = precompute_rate_tables(infra, slices, params or RadioParams())

    def feasible(factor):
        try:
            radio_step(infra, [s.with_rate_multiplier(factor) for s in slices], rates, lam, joint_radio,
                       settings, variant, [])
            return True
        except ProvisioningInfeasible:
            return False

    lo, hi = 0.0, 1.0
    while feasible(hi):
        lo, hi = hi, hi * 2
        if hi > max_factor:
            return lo
    while hi - lo > rel_tol * hi:
        mid = (lo + hi) / 2
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


# --- Problem sizes ---

@dataclass(frozen=True)
class ScenarioDims:
    rrh: int
    nodes: int
    links: int
    cells: Tuple[int, ...]  # per slice
    srd_nodes: Tuple[int, ...]
    srd_links: Tuple[int, ...]

    def __post_init__(self):
        if not (len(self.cells) == len(self.srd_nodes) == len(self.srd_links)) or not self.cells:
            raise ProvisioningError("dims need one entry per slice and at least one slice")

    @classmethod
    def of(cls, infra: InfrastructureGraph, slices: Sequence[SliceSpec]) -> "ScenarioDims":
        return cls(len(infra.rrh_nodes), len(infra.nodes), len(infra.links),
                   tuple(len(s.cells) for s in slices), tuple(len(s.srd.nodes) for s in slices),
                   tuple(len(s.srd.links) for s in slices))


@dataclass(frozen=True)
class ProblemSizes:
    problems: Tuple[Tuple[str, Tuple[int, ...]], ...]  # (stage, slice positions)
    variables: Tuple[int, ...]
    table_formula: Tuple[int, ...]

    @property
    def count(self):
        return len(self.problems)


def count_problem_size(variant: Variant, dims: ScenarioDims) -> ProblemSizes:
    """Problems solved by a variant and the variables of each (instance counts and served shares excluded)."""
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    n_slices = len(dims.cells)

    def rp(k):
        return dims.rrh * (1 + 2 * dims.cells[k]), dims.rrh * (1 + dims.cells[k])

    def np_(k):
        wired = 2 * dims.nodes * dims.srd_nodes[k] + dims.links * dims.srd_links[k]
        return wired + dims.nodes, wired

    everything = tuple(range(n_slices))
    if variant == Variant.JRN:
        stages = [("JRN", everything)]
    else:
        stages = [("RP", everything)] if variant.joint_radio else [("RP", (k,)) for k in everything]
        stages += [("NP", everything)] if variant.joint_network else [("NP", (k,)) for k in everything]

    exact, formula = [], []
    for stage, members in stages:
        e = f = 0
        for k in members:
            if stage in ("RP", "JRN"):
                e += rp(k)[0]
                f += rp(k)[1]
            if stage in ("NP", "JRN"):
                e += np_(k)[0]
                # the reference JRN row also counts the node indicators
                f += np_(k)[1] + (dims.nodes if stage == "JRN" else 0)
        exact.append(e)
        formula.append(f)
    return ProblemSizes(tuple(stages), tuple(exact), tuple(formula))
