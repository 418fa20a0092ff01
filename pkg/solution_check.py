"""
Independent feasibility check of a provisioning solution.

Everything is recomputed from the scenario and the extracted shares; nothing
here touches the MILP models, so it also catches extraction and polishing bugs.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from core_model import RESOURCES, InfrastructureGraph, SliceSpec, per_cell_demand
from provisioning import Costs, ProvisioningSolution
from radio_model import RadioParams, RateTables, precompute_rate_tables

try:
    from backend.settings import STRICT_EPSILON
except ImportError:
    from .backend.settings import STRICT_EPSILON

logger = logging.getLogger(__name__)

FAMILIES = (
    "bounds", "rb-capacity", "coverage", "aggregate", "up-down", "radio-indicator",
    "node-demand", "served", "node-share", "link-share", "vnf-integrality", "balanced",
    "radio-node", "downlink", "uplink", "flow", "loopback", "node-indicator", "cost",
)


@dataclass(frozen=True)
class CheckViolation:
    family: str
    where: str
    amount: float


class _Collector:
    def __init__(self, tol):
        self.tol = tol
        self.found: List[CheckViolation] = []

    def at_least(self, family, where, value, bound):
        if value < bound - self.tol:
            self.found.append(CheckViolation(family, where, bound - value))

    def at_most(self, family, where, value, bound):
        if value > bound + self.tol:
            self.found.append(CheckViolation(family, where, value - bound))

    def equal(self, family, where, value, target):
        if abs(value - target) > self.tol:
            self.found.append(CheckViolation(family, where, abs(value - target)))


def _radio_fraction(infra, s: SliceSpec, sol: ProvisioningSolution, rates: RateTables, j):
    radio = s.srd.radio_node
    up = down = 0.0
    for q in range(len(s.cells)):
        up += j.rb_capacity * rates.rate("up", s.id, j.id, q) * sol.radio.eta("up", s.id, j.id, q)
        down += j.rb_capacity * rates.rate("down", s.id, j.id, q) * sol.radio.eta("down", s.id, j.id, q)
    total = (up + down) / radio.radio_demand
    return (total,
            up / radio.rate_up_demand if radio.rate_up_demand > 0 else 0.0,
            down / radio.rate_down_demand if radio.rate_down_demand > 0 else 0.0)


def _check_radio(out: _Collector, infra, slices, sol: ProvisioningSolution, rates, epsilon):
    radio = sol.radio
    for table in (radio.eta_up, radio.eta_down):
        for key, value in table.items():
            out.at_least("bounds", f"eta{key}", value, 0.0)
            out.at_most("bounds", f"eta{key}", value, 1.0)
    for i in infra.rrh_nodes:
        out.at_most("rb-capacity", i.id, radio.rrh_share(i.id), 1.0)

    for s in slices:
        node = s.srd.radio_node
        demand = {"up": node.rate_up_demand, "down": node.rate_down_demand}
        per_user = {"up": s.coverage.rate_up, "down": s.coverage.rate_down}
        users = [per_cell_demand(s.coverage, q) for q in range(len(s.cells))]
        for d in ("up", "down"):
            if demand[d] <= 0:
                continue
            provided_total = 0.0
            for q, users_q in enumerate(users):
                provided = sum(i.rb_capacity * rates.rate(d, s.id, i.id, q) * radio.eta(d, s.id, i.id, q)
                               for i in infra.rrh_nodes)
                provided_total += provided
                if users_q > 0:
                    out.at_least("coverage", f"{s.id}/{d}/cell{q}", provided / (per_user[d] * users_q), 1.0)
            out.at_least("aggregate", f"{s.id}/{d}", provided_total / demand[d], 1.0)
        for i in infra.rrh_nodes:
            if demand["up"] > 0 and demand["down"] > 0:
                for q, users_q in enumerate(users):
                    if users_q <= 0:
                        continue
                    up = i.rb_capacity * rates.rate("up", s.id, i.id, q) * radio.eta("up", s.id, i.id, q)
                    down = i.rb_capacity * rates.rate("down", s.id, i.id, q) * radio.eta("down", s.id, i.id, q)
                    out.equal("up-down", f"{s.id}/{i.id}/cell{q}", up / demand["up"], down / demand["down"])
            share = radio.slice_share(s.id, i.id)
            used = radio.used.get((s.id, i.id), 0)
            out.at_least("radio-indicator", f"{s.id}/{i.id}", used, share)
            out.at_most("radio-indicator", f"{s.id}/{i.id}", used, share + 1.0 - epsilon)


def _check_wired(out: _Collector, infra: InfrastructureGraph, slices, sol: ProvisioningSolution, rates, epsilon):
    wired = sol.wired
    for key, value in list(wired.phi.items()) + list(wired.phi_link.items()):
        out.at_least("bounds", f"phi{key}", value, 0.0)
        out.at_most("bounds", f"phi{key}", value, 1.0)
    for key, value in wired.served.items():
        out.at_least("bounds", f"psi{key}", value, 0.0)

    for i in infra.nodes:
        for n in RESOURCES:
            out.at_most("node-share", f"{i.id}/{n}", wired.node_share(i.id, n), 1.0)
    for x in infra.links:
        out.at_most("link-share", f"{x.src}->{x.dst}", wired.link_share(x.src, x.dst), 1.0)

    for s in slices:
        srd = s.srd

        def phi(i, v, n):
            return wired.phi.get((s.id, i, v, n), 0.0)

        def psi(i, v):
            return wired.served.get((s.id, i, v), 0.0)

        def traffic(x, l):
            return wired.phi_link.get((s.id, x.src, x.dst, l.src, l.dst), 0.0) * x.bandwidth / l.bandwidth_demand

        for v in srd.nodes:
            out.at_least("served", f"{s.id}/{v.id}", sum(psi(i.id, v.id) for i in infra.nodes), 1.0)
            for n in RESOURCES:
                r, r_min = v.demand(n), v.min_demand(n)
                if r > 0:
                    supplied = sum(i.capacity(n) * phi(i.id, v.id, n) for i in infra.nodes)
                    out.at_least("node-demand", f"{s.id}/{v.id}/{n}", supplied / r, 1.0)
                for i in infra.nodes:
                    a, share, where = i.capacity(n), phi(i.id, v.id, n), f"{s.id}/{i.id}/{v.id}/{n}"
                    if r <= 0 or a <= 0:
                        out.at_most("vnf-integrality", where, share, 0.0)
                        if r > 0:
                            out.at_most("balanced", where, psi(i.id, v.id), 0.0)
                        continue
                    instances = a * share / r_min
                    recorded = wired.kappa.get((s.id, i.id, v.id, n), 0)
                    out.equal("vnf-integrality", where, instances, float(recorded))
                    out.equal("vnf-integrality", where, instances, float(round(instances)))
                    out.at_most("balanced", where, psi(i.id, v.id) * r / a, share)
                    out.at_most("balanced", where, share - psi(i.id, v.id) * r / a, (r_min / a) * (1.0 - epsilon))

        for i in infra.nodes:
            loop = infra.loopback(i.id)
            for l in srd.links:
                produced = psi(i.id, l.src) * srd.out_ratio(l)
                consumed = psi(i.id, l.dst) * srd.in_ratio(l)
                outflow = sum(traffic(x, l) for x in infra.out_links(i.id))
                inflow = sum(traffic(x, l) for x in infra.in_links(i.id))
                where = f"{s.id}/{i.id}/{l.src}->{l.dst}"
                out.equal("flow", where, outflow - inflow, produced - consumed)
                internal = traffic(loop, l) if loop is not None else 0.0
                out.at_most("loopback", where, internal, min(produced, consumed))
                out.at_least("loopback", where, internal + inflow, consumed)
            used = wired.used.get((s.id, i.id), 0)
            share = sum(phi(i.id, v.id, n) for v in srd.nodes for n in RESOURCES) / (2 * len(srd.nodes))
            out.at_least("node-indicator", f"{s.id}/{i.id}", used, share)
            out.at_most("node-indicator", f"{s.id}/{i.id}", used, share + 1.0 - epsilon)

        radio = srd.radio_node
        if radio.radio_demand <= 0:
            continue
        for j in infra.rrh_nodes:
            total, up, down = _radio_fraction(infra, s, sol, rates, j)
            out.equal("radio-node", f"{s.id}/{j.id}", psi(j.id, radio.id), total)
            if radio.rate_down_demand > 0:
                for l in srd.in_links(radio.id):
                    inflow = sum(traffic(x, l) for x in infra.in_links(j.id) if not infra.node(x.src).is_rrh)
                    out.equal("downlink", f"{s.id}/{j.id}/{l.src}", inflow, down * srd.in_ratio(l))
            if radio.rate_up_demand > 0:
                for l in srd.out_links(radio.id):
                    outflow = sum(traffic(x, l) for x in infra.out_links(j.id) if not infra.node(x.dst).is_rrh)
                    out.equal("uplink", f"{s.id}/{j.id}/{l.dst}", outflow, up * srd.out_ratio(l))


def recompute_costs(infra: InfrastructureGraph, slices: Sequence[SliceSpec], sol: ProvisioningSolution,
                    rates: RateTables) -> Costs:
    lam = sol.rate_discount
    costs = Costs()
    for s in slices:
        radio = 0.0
        for i in infra.rrh_nodes:
            radio += i.fixed_cost * sol.radio.used.get((s.id, i.id), 0)
            for q in range(len(s.cells)):
                for d in ("up", "down"):
                    b = rates.rate(d, s.id, i.id, q)
                    radio += i.rb_capacity * (i.rb_cost - lam * b) * sol.radio.eta(d, s.id, i.id, q)
        wired = 0.0
        for i in infra.nodes:
            if not i.is_rrh:
                wired += i.fixed_cost * sol.wired.used.get((s.id, i.id), 0)
            for v in s.srd.nodes:
                for n in RESOURCES:
                    wired += i.capacity(n) * i.unit_cost(n) * sol.wired.phi.get((s.id, i.id, v.id, n), 0.0)
        for (sid, src, dst, _, _), share in sol.wired.phi_link.items():
            if sid == s.id:
                x = infra.link(src, dst)
                wired += x.bandwidth * x.unit_cost * share
        costs.radio_by_slice[s.id] = radio
        costs.wired_by_slice[s.id] = wired
    costs.radio = sum(costs.radio_by_slice.values())
    costs.wired = sum(costs.wired_by_slice.values())
    return costs


def verify_solution(infra: InfrastructureGraph, slices: Sequence[SliceSpec], sol: ProvisioningSolution,
                    tol: float = 1e-6, rates: Optional[RateTables] = None, params: Optional[RadioParams] = None,
                    epsilon: float = STRICT_EPSILON) -> List[CheckViolation]:
    """Every constraint family re-evaluated on the solution; empty list means feasible within tol."""
    if rates is None:
        rates = precompute_rate_tables(infra, slices, params or RadioParams())
    out = _Collector(tol)
    _check_radio(out, infra, slices, sol, rates, epsilon)
    _check_wired(out, infra, slices, sol, rates, epsilon)

    expected = recompute_costs(infra, slices, sol, rates)
    for label, stored, actual in (("radio", sol.costs.radio, expected.radio),
                                  ("wired", sol.costs.wired, expected.wired),
                                  ("total", sol.costs.total, expected.total)):
        if abs(stored - actual) > tol * max(1.0, abs(actual)):
            out.found.append(CheckViolation("cost", label, abs(stored - actual)))

    if out.found:
        logger.info("%d violations across %s", len(out.found), sorted({v.family for v in out.found}))
    return out.found


def violations_by_family(violations: Sequence[CheckViolation]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for v in violations:
        counts[v.family] = counts.get(v.family, 0) + 1
    return counts
