"""Slice control plane: aggregation, two-phase admission, flow control.

Roles: inference reports summarize each domain without exposing topology;
the global admission check is necessary-but-not-sufficient; domain
controllers hold the only authority over their reservations; a per-slice
controller accepts tasks and keeps flow rates max-min fair.

All quantities are exact Fractions; reservations are applied and released
as whole units so abort/termination round trips restore state exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .resources import ResourceVector, as_fraction, format_quantity, vector_sum
from .topology import (
    UNBOUNDED,
    CoalitionTopology,
    Violation,
    residual_view,
    widest_path,
)

ZERO = ResourceVector()


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class DomainAggregate:
    """What a domain reveals upward: totals and gateway-to-gateway bottlenecks."""

    domain_id: str
    free_totals: ResourceVector
    gateway_bottlenecks: Mapping[tuple[str, str], Fraction]

    def bottleneck(self, a: str, b: str):
        if a == b:
            return UNBOUNDED
        return self.gateway_bottlenecks.get((min(a, b), max(a, b)), Fraction(0))


@dataclass(frozen=True)
class SliceFlow:
    """One requested flow; a pinned path fixes its route, otherwise the
    gateway trunk between the two domains is used."""

    src_domain: str
    dst_domain: str
    rate_mbps: Fraction
    path: tuple[str, ...] | None = None
    links: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rate_mbps", as_fraction(self.rate_mbps))
        if self.path is not None:
            object.__setattr__(self, "path", tuple(self.path))
        if self.links is not None:
            object.__setattr__(self, "links", tuple(self.links))


@dataclass(frozen=True)
class SliceRequest:
    slice_id: str
    mission_id: str
    per_domain_demand: Mapping[str, ResourceVector]
    flows: tuple[SliceFlow, ...] = ()
    shared_with_physical: bool = False
    pinned_nodes: Mapping[str, Mapping[str, ResourceVector]] = field(default_factory=dict)

    def __init__(
        self,
        slice_id: str,
        mission_id: str,
        per_domain_demand: Mapping[str, ResourceVector],
        flows: Iterable[SliceFlow] = (),
        shared_with_physical: bool = False,
        pinned_nodes: Mapping[str, Mapping[str, ResourceVector]] | None = None,
    ):
        object.__setattr__(self, "slice_id", slice_id)
        object.__setattr__(self, "mission_id", mission_id)
        object.__setattr__(self, "per_domain_demand", dict(per_domain_demand))
        object.__setattr__(self, "flows", tuple(flows))
        object.__setattr__(self, "shared_with_physical", bool(shared_with_physical))
        object.__setattr__(
            self, "pinned_nodes", {d: dict(m) for d, m in (pinned_nodes or {}).items()}
        )

    def involved_domains(self) -> list[str]:
        return sorted(self.per_domain_demand)


class GrantState(enum.Enum):
    PENDING = "PENDING"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"
    TERMINATED = "TERMINATED"


_LEGAL_TRANSITIONS = {
    GrantState.PENDING: {GrantState.COMMITTED, GrantState.ABORTED},
    GrantState.COMMITTED: {GrantState.TERMINATED},
    GrantState.ABORTED: set(),
    GrantState.TERMINATED: set(),
}


@dataclass(frozen=True)
class ReservedFlow:
    index: int
    path: tuple[str, ...]
    links: tuple[str, ...]
    rate_mbps: Fraction


@dataclass
class SliceGrant:
    slice_id: str
    per_domain_reservation: dict[str, dict[str, ResourceVector]] = field(default_factory=dict)
    reserved_paths: dict[int, ReservedFlow] = field(default_factory=dict)
    state: GrantState = GrantState.PENDING
    rejecting_domain: str | None = None
    reason: str | None = None

    def transition(self, target: GrantState):
        if target not in _LEGAL_TRANSITIONS[self.state]:
            raise ValueError(f"slice {self.slice_id}: illegal transition {self.state.value} -> {target.value}")
        self.state = target

    def reserved_nodes(self) -> frozenset[str]:
        nodes: set[str] = set()
        for per_node in self.per_domain_reservation.values():
            nodes.update(per_node)
        for rf in self.reserved_paths.values():
            nodes.update(rf.path)
        return frozenset(nodes)


@dataclass(frozen=True)
class TaskFlow:
    flow_id: str
    src_node: str
    dst_node: str
    desired_rate_mbps: Fraction
    links: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "desired_rate_mbps", as_fraction(self.desired_rate_mbps))
        object.__setattr__(self, "links", tuple(self.links))


@dataclass(frozen=True)
class SliceTask:
    task_id: str
    slice_id: str
    node_id: str
    demand: ResourceVector
    flows: tuple[TaskFlow, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))


@dataclass(frozen=True)
class GcDecision:
    admit: bool
    reason: str | None = None
    detail: str | None = None


@dataclass(frozen=True)
class DcOutcome:
    accepted: bool
    reason: str | None = None
    node_reservation: Mapping[str, ResourceVector] = field(default_factory=dict)
    link_reservation: Mapping[str, Fraction] = field(default_factory=dict)
    leg_paths: Mapping[int, tuple[tuple[str, ...], tuple[str, ...]]] = field(default_factory=dict)


@dataclass(frozen=True)
class AdmissionResult:
    outcome: str  # "COMMITTED" | "ABORTED" | "REJECTED"
    grant: SliceGrant | None
    reason: str | None = None
    rejecting_domain: str | None = None


@dataclass(frozen=True)
class InterLink:
    link_id: str
    domain_a: str
    gateway_a: str
    domain_b: str
    gateway_b: str
    residual: Fraction

    def gateway_in(self, domain_id: str) -> str:
        return self.gateway_a if domain_id == self.domain_a else self.gateway_b


# ---------------------------------------------------------------------------
# pure operations


def ie_report(
    topo: CoalitionTopology,
    free: Mapping[str, ResourceVector],
    residual: Mapping[str, Fraction],
    domain_id: str,
) -> DomainAggregate:
    """Aggregate one domain: free totals plus gateway-pair widest bottlenecks."""
    domain = topo.domains_by_id.get(domain_id)
    if domain is None:
        raise KeyError(f"unknown domain {domain_id!r}")
    totals = vector_sum(free[n] for n in sorted(domain.node_ids) if n in free)
    intra = {l.link_id: residual[l.link_id] for l in topo.intra_domain_links(domain_id) if l.link_id in residual}
    gateways = sorted(domain.gateway_ids)
    bottlenecks: dict[tuple[str, str], Fraction] = {}
    for i, a in enumerate(gateways):
        for b in gateways[i + 1 :]:
            found = widest_path(topo, intra, a, b)
            bottlenecks[(a, b)] = found.bottleneck_mbps if found is not None else Fraction(0)
    return DomainAggregate(domain_id, totals, bottlenecks)


def _split_pinned(topo: CoalitionTopology, flow: SliceFlow):
    """Split a pinned path into intra-domain segments and inter-domain hops.

    Single-node segments (the flow enters and terminates at one boundary
    gateway) are kept: that node still does the flow's I/O and owes
    endpoint bandwidth.
    """
    segments: list[tuple[str, tuple[str, ...], tuple[str, ...]]] = []
    hops: list[str] = []
    path, links = flow.path, flow.links
    seg_nodes = [path[0]]
    seg_links: list[str] = []
    cur_domain = topo.domain_of(path[0])
    for (a, b), link_id in zip(zip(path, path[1:]), links):
        b_domain = topo.domain_of(b)
        if b_domain == cur_domain:
            seg_nodes.append(b)
            seg_links.append(link_id)
        else:
            segments.append((cur_domain, tuple(seg_nodes), tuple(seg_links)))
            hops.append(link_id)
            seg_nodes = [b]
            seg_links = []
            cur_domain = b_domain
    segments.append((cur_domain, tuple(seg_nodes), tuple(seg_links)))
    return segments, hops


def _gateway_anchor(topo: CoalitionTopology, domain_id: str) -> str:
    return min(topo.domains_by_id[domain_id].gateway_ids)


def _direct_interlinks(interlinks: Sequence[InterLink], a: str, b: str) -> list[InterLink]:
    return [l for l in interlinks if {l.domain_a, l.domain_b} == {a, b}]


def choose_trunk_link(interlinks: Sequence[InterLink], src_domain: str, dst_domain: str) -> Optional[InterLink]:
    """Deterministic inter-domain link choice: max residual, then smallest id."""
    direct = _direct_interlinks(interlinks, src_domain, dst_domain)
    if not direct:
        return None
    return min(direct, key=lambda l: (-l.residual, l.link_id))


def gc_admit(
    aggregates: Sequence[DomainAggregate],
    interlinks: Sequence[InterLink],
    req: SliceRequest,
    topo: CoalitionTopology,
) -> GcDecision:
    """Feasibility screen over aggregates only: necessary, not sufficient.

    Every rejection is sound: the checked quantity upper-bounds what the
    domain controllers could actually reserve, so a full admission attempt
    from the same state would fail too.  Intra-domain segments that touch
    non-gateway nodes are not checkable from aggregates and pass through
    optimistically.
    """
    by_domain = {a.domain_id: a for a in aggregates}
    for domain_id in req.involved_domains():
        if domain_id not in by_domain:
            raise KeyError(f"missing aggregate for domain {domain_id}")

    for domain_id in req.involved_domains():
        demand = req.per_domain_demand[domain_id]
        totals = by_domain[domain_id].free_totals
        for axis, have, want in zip(
            ("compute", "memory", "storage", "bandwidth"), totals.axes(), demand.axes()
        ):
            if want > have:
                return GcDecision(False, f"domain capacity: {axis}", f"domain {domain_id}")

    residual_of = {l.link_id: l.residual for l in interlinks}
    for idx, flow in enumerate(req.flows):
        if flow.path is not None:
            segments, hops = _split_pinned(topo, flow)
            for link_id in hops:
                if residual_of.get(link_id, Fraction(0)) < flow.rate_mbps:
                    return GcDecision(False, "inter-domain link bandwidth", f"flow {idx} link {link_id}")
            for domain_id, nodes, _ in segments:
                agg = by_domain.get(domain_id)
                if agg is None:
                    continue
                gws = topo.domains_by_id[domain_id].gateway_ids
                if nodes[0] in gws and nodes[-1] in gws and nodes[0] != nodes[-1]:
                    if flow.rate_mbps > agg.bottleneck(nodes[0], nodes[-1]):
                        return GcDecision(False, "gateway bottleneck", f"flow {idx} domain {domain_id}")
        else:
            trunk = choose_trunk_link(interlinks, flow.src_domain, flow.dst_domain)
            if trunk is None:
                return GcDecision(False, "no inter-domain link", f"flow {idx}")
            if trunk.residual < flow.rate_mbps:
                return GcDecision(False, "inter-domain link bandwidth", f"flow {idx} link {trunk.link_id}")
            for domain_id in (flow.src_domain, flow.dst_domain):
                anchor = _gateway_anchor(topo, domain_id)
                boundary = trunk.gateway_in(domain_id)
                if anchor != boundary:
                    if flow.rate_mbps > by_domain[domain_id].bottleneck(anchor, boundary):
                        return GcDecision(False, "gateway bottleneck", f"flow {idx} domain {domain_id}")
    return GcDecision(True)


def dfc_allocate(flows: Sequence[TaskFlow], link_caps: Mapping[str, Fraction]) -> dict[str, Fraction]:
    """Progressive-filling max-min fair rates, capped at each flow's demand.

    All unfrozen flows rise together; a flow freezes when it reaches its
    demand or a link on its path saturates.  Deterministic: flows are
    processed in flow_id order and the result preserves that order.
    """
    ordered = sorted(flows, key=lambda f: f.flow_id)
    for f in ordered:
        for link_id in f.links:
            if link_id not in link_caps:
                raise KeyError(f"flow {f.flow_id}: unknown link {link_id}")
    level: dict[str, Fraction] = {f.flow_id: Fraction(0) for f in ordered}
    active = {f.flow_id: f for f in ordered}
    frozen_usage: dict[str, Fraction] = {l: Fraction(0) for l in link_caps}

    while active:
        members: dict[str, list[str]] = {}
        for fid, f in active.items():
            for link_id in f.links:
                members.setdefault(link_id, []).append(fid)
        # the largest uniform raise every active flow can absorb
        delta = None
        for fid, f in active.items():
            room = f.desired_rate_mbps - level[fid]
            if delta is None or room < delta:
                delta = room
        for link_id, fids in members.items():
            headroom = link_caps[link_id] - frozen_usage[link_id] - sum(
                (level[fid] for fid in fids), Fraction(0)
            )
            share = headroom / len(fids)
            if share < delta:
                delta = share
        if delta < 0:
            delta = Fraction(0)
        for fid in active:
            level[fid] += delta
        # freeze flows at demand or on saturated links
        to_freeze: list[str] = []
        for fid, f in sorted(active.items()):
            if level[fid] >= f.desired_rate_mbps:
                to_freeze.append(fid)
                continue
            for link_id in f.links:
                fids = members[link_id]
                used = frozen_usage[link_id] + sum((level[x] for x in fids), Fraction(0))
                if used >= link_caps[link_id]:
                    to_freeze.append(fid)
                    break
        if not to_freeze:
            # no demand cap and no saturable link: flows are unconstrained
            for fid, f in sorted(active.items()):
                if not f.links:
                    level[fid] = f.desired_rate_mbps
                    to_freeze.append(fid)
            if not to_freeze:
                raise AssertionError("progressive filling failed to make progress")
        for fid in to_freeze:
            f = active.pop(fid)
            for link_id in f.links:
                frozen_usage[link_id] += level[fid]
    return {f.flow_id: level[f.flow_id] for f in ordered}


def dfc_react(flows: Sequence[TaskFlow], link_caps: Mapping[str, Fraction]) -> dict[str, Fraction]:
    """Reaction to a capacity change: recompute the allocation from scratch."""
    return dfc_allocate(flows, link_caps)


# ---------------------------------------------------------------------------
# stateful plane

LogSink = Callable[[str, Sequence[tuple[str, str]]], None]


class DomainController:
    """Owns one domain's reservations; talks to the coordinator via values."""

    def __init__(self, domain_id: str):
        self.domain_id = domain_id
        self.node_reservations: dict[str, dict[str, ResourceVector]] = {}
        self.link_reservations: dict[str, dict[str, Fraction]] = {}

    def holds(self, slice_id: str) -> bool:
        return slice_id in self.node_reservations or slice_id in self.link_reservations


@dataclass(frozen=True)
class _FlowLeg:
    flow_index: int
    rate: Fraction
    src_node: str
    dst_node: str
    pinned_path: tuple[str, ...] | None = None
    pinned_links: tuple[str, ...] | None = None


class SliceController:
    """Per-slice task acceptance and flow bookkeeping."""

    def __init__(self, slice_id: str, grant: SliceGrant):
        self.slice_id = slice_id
        self.grant = grant
        self.tasks: dict[str, SliceTask] = {}
        self.flows: dict[str, TaskFlow] = {}
        self.allocation: dict[str, Fraction] = {}

    def task_usage(self, node_id: str) -> ResourceVector:
        return vector_sum(t.demand for t in self.tasks.values() if t.node_id == node_id)


class SlicingPlane:
    """Holds all live resource state: capacities, preloads, reservations."""

    def __init__(self, topo: CoalitionTopology, log: LogSink | None = None):
        self.topo = topo
        self.node_capacity: dict[str, ResourceVector] = {
            n.node_id: n.capacity for n in topo.nodes
        }
        self.link_capacity: dict[str, Fraction] = {l.link_id: l.capacity_mbps for l in topo.links}
        self.preload: dict[str, ResourceVector] = {}
        self.domain_controllers: dict[str, DomainController] = {
            d.domain_id: DomainController(d.domain_id) for d in topo.domains
        }
        self.interlink_reservations: dict[str, dict[str, Fraction]] = {}
        self.grants: dict[str, SliceGrant] = {}
        self.slice_controllers: dict[str, SliceController] = {}
        self._log: LogSink = log if log is not None else (lambda kind, fields: None)

    def set_log(self, log: LogSink):
        self._log = log

    def log(self, kind: str, fields: Sequence[tuple[str, str]]):
        self._log(kind, fields)

    # -- derived resource views ------------------------------------------

    def node_reserved(self, node_id: str) -> ResourceVector:
        total = self.preload.get(node_id, ZERO)
        domain_id = self.topo.domain_of(node_id)
        dc = self.domain_controllers[domain_id]
        for per_node in dc.node_reservations.values():
            if node_id in per_node:
                total = total + per_node[node_id]
        return total

    def free_node(self, node_id: str) -> ResourceVector:
        return self.node_capacity[node_id] - self.node_reserved(node_id)

    def free_map(self) -> dict[str, ResourceVector]:
        return {n: self.free_node(n) for n in sorted(self.node_capacity)}

    def link_originals(self, link_id: str) -> dict[str, Fraction]:
        out: dict[str, Fraction] = {}
        for dc in self.domain_controllers.values():
            for slice_id, per_link in dc.link_reservations.items():
                if link_id in per_link:
                    out[slice_id] = out.get(slice_id, Fraction(0)) + per_link[link_id]
        for slice_id, per_link in self.interlink_reservations.items():
            if link_id in per_link:
                out[slice_id] = out.get(slice_id, Fraction(0)) + per_link[link_id]
        return out

    def effective_link_rates(self, link_id: str) -> dict[str, Fraction]:
        """Per-slice reserved rate, scaled down proportionally when the link
        has degraded below the sum of original reservations."""
        originals = self.link_originals(link_id)
        total = sum(originals.values(), Fraction(0))
        cap = self.link_capacity[link_id]
        if total <= cap or total == 0:
            return originals
        scale = cap / total
        return {slice_id: rate * scale for slice_id, rate in originals.items()}

    def link_residual(self, link_id: str) -> Fraction:
        used = sum(self.effective_link_rates(link_id).values(), Fraction(0))
        residual = self.link_capacity[link_id] - used
        return residual if residual > 0 else Fraction(0)

    def residual_map(self) -> dict[str, Fraction]:
        return {l: self.link_residual(l) for l in sorted(self.link_capacity)}

    def interlink_views(self) -> list[InterLink]:
        out = []
        for link in self.topo.inter_domain_links():
            a = self.topo.nodes_by_id[link.endpoint_a]
            b = self.topo.nodes_by_id[link.endpoint_b]
            out.append(
                InterLink(
                    link.link_id,
                    a.domain_id,
                    a.node_id,
                    b.domain_id,
                    b.node_id,
                    self.link_residual(link.link_id),
                )
            )
        return out

    def aggregate(self, domain_id: str) -> DomainAggregate:
        return ie_report(self.topo, self.free_map(), self.residual_map(), domain_id)

    def slice_link_capacity(self, slice_id: str) -> dict[str, Fraction]:
        grant = self.grants[slice_id]
        caps: dict[str, Fraction] = {}
        for rf in grant.reserved_paths.values():
            for link_id in rf.links:
                if link_id not in caps:
                    caps[link_id] = self.effective_link_rates(link_id).get(slice_id, Fraction(0))
        return caps

    def snapshot(self):
        """Comparable copy of all reservation state, for atomicity checks."""
        return (
            {
                d: (
                    {s: dict(m) for s, m in dc.node_reservations.items()},
                    {s: dict(m) for s, m in dc.link_reservations.items()},
                )
                for d, dc in self.domain_controllers.items()
            },
            {s: dict(m) for s, m in self.interlink_reservations.items()},
            dict(self.preload),
        )

    # -- request validation ------------------------------------------------

    def validate_request(self, req: SliceRequest) -> list[str]:
        problems: list[str] = []
        for domain_id in req.involved_domains():
            if domain_id not in self.topo.domains_by_id:
                problems.append(f"unknown domain {domain_id}")
        for domain_id, pins in sorted(req.pinned_nodes.items()):
            if domain_id not in req.per_domain_demand:
                problems.append(f"pinned nodes for unrequested domain {domain_id}")
                continue
            total = vector_sum(pins.values())
            if total != req.per_domain_demand[domain_id]:
                problems.append(f"pinned nodes in {domain_id} do not sum to the domain demand")
            for node_id in sorted(pins):
                node = self.topo.nodes_by_id.get(node_id)
                if node is None or node.domain_id != domain_id:
                    problems.append(f"pinned node {node_id} is not in domain {domain_id}")
        for idx, flow in enumerate(req.flows):
            if flow.rate_mbps <= 0:
                problems.append(f"flow {idx}: rate must be positive")
            for domain_id in (flow.src_domain, flow.dst_domain):
                if domain_id not in req.per_domain_demand:
                    problems.append(f"flow {idx}: endpoint domain {domain_id} not requested")
            if flow.path is None:
                if flow.src_domain == flow.dst_domain:
                    problems.append(f"flow {idx}: same-domain flows need a pinned path")
                continue
            path, links = flow.path, flow.links
            if links is None or len(path) < 2 or len(links) != len(path) - 1:
                problems.append(f"flow {idx}: malformed pinned path")
                continue
            ok = True
            for node_id in path:
                if node_id not in self.topo.nodes_by_id:
                    problems.append(f"flow {idx}: unknown node {node_id}")
                    ok = False
            for (a, b), link_id in zip(zip(path, path[1:]), links):
                spec = self.topo.links_by_id.get(link_id)
                if spec is None or {spec.endpoint_a, spec.endpoint_b} != {a, b}:
                    problems.append(f"flow {idx}: link {link_id} does not join {a}-{b}")
                    ok = False
            if not ok:
                continue
            if self.topo.domain_of(path[0]) != flow.src_domain or self.topo.domain_of(path[-1]) != flow.dst_domain:
                problems.append(f"flow {idx}: pinned path endpoints disagree with declared domains")
            for node_id in path:
                if self.topo.domain_of(node_id) not in req.per_domain_demand:
                    problems.append(
                        f"flow {idx}: transit domain {self.topo.domain_of(node_id)} not requested"
                    )
        return problems

    # -- domain reservation -------------------------------------------------

    def dc_reserve(
        self,
        domain_id: str,
        slice_id: str,
        demand: ResourceVector,
        legs: Sequence[_FlowLeg] = (),
        pinned: Mapping[str, ResourceVector] | None = None,
    ) -> DcOutcome:
        """Reserve one domain's share of a slice, atomically.

        Unpinned demand packs as one indivisible unit, first-fit over nodes
        sorted by descending free compute (node_id ties).  Flow legs reserve
        intra-domain paths (widest path unless pinned) plus endpoint-node
        bandwidth.  On any shortfall the domain state is left untouched.
        """
        dc = self.domain_controllers[domain_id]
        if dc.holds(slice_id):
            raise ValueError(f"slice {slice_id} already reserved in domain {domain_id}")
        domain_nodes = sorted(self.topo.domains_by_id[domain_id].node_ids)
        work_free = {n: self.free_node(n) for n in domain_nodes}
        work_link = {
            l.link_id: self.link_residual(l.link_id)
            for l in self.topo.intra_domain_links(domain_id)
        }
        node_res: dict[str, ResourceVector] = {}
        link_res: dict[str, Fraction] = {}

        def place(node_id: str, rv: ResourceVector) -> bool:
            if not rv.fits_within(work_free[node_id]):
                return False
            work_free[node_id] = work_free[node_id] - rv
            node_res[node_id] = node_res.get(node_id, ZERO) + rv
            return True

        if pinned:
            for node_id in sorted(pinned):
                if not place(node_id, pinned[node_id]):
                    return DcOutcome(False, "capacity")
        elif not demand.is_zero():
            order = sorted(domain_nodes, key=lambda n: (-work_free[n].compute, n))
            for node_id in order:
                if place(node_id, demand):
                    break
            else:
                return DcOutcome(False, "fragmentation")

        leg_paths: dict[int, tuple[tuple[str, ...], tuple[str, ...]]] = {}
        for leg in sorted(legs, key=lambda l: l.flow_index):
            if leg.pinned_path is not None:
                path, links = leg.pinned_path, leg.pinned_links
                for link_id in links:
                    if work_link.get(link_id, Fraction(0)) < leg.rate:
                        return DcOutcome(False, "bandwidth")
            else:
                found = widest_path(self.topo, work_link, leg.src_node, leg.dst_node)
                if found is None or found.bottleneck_mbps < leg.rate:
                    return DcOutcome(False, "bandwidth")
                path, links = found.path, ()
                if len(path) > 1:
                    links = _links_of(self.topo, path, work_link, leg.rate)
            for link_id in links:
                work_link[link_id] -= leg.rate
                link_res[link_id] = link_res.get(link_id, Fraction(0)) + leg.rate
            endpoint_bw = ResourceVector(bandwidth=leg.rate)
            for node_id in dict.fromkeys((path[0], path[-1])):
                if not place(node_id, endpoint_bw):
                    return DcOutcome(False, "node bandwidth")
            leg_paths[leg.flow_index] = (path, tuple(links))

        dc.node_reservations[slice_id] = node_res
        dc.link_reservations[slice_id] = link_res
        return DcOutcome(True, None, node_res, link_res, leg_paths)

    def release_domain(self, domain_id: str, slice_id: str):
        dc = self.domain_controllers[domain_id]
        dc.node_reservations.pop(slice_id, None)
        dc.link_reservations.pop(slice_id, None)

    # -- two-phase admission --------------------------------------------

    def two_phase_admit(self, req: SliceRequest) -> AdmissionResult:
        """Aggregate feasibility, then per-domain reservation in ascending
        domain order with compensation on any rejection."""
        if req.slice_id in self.grants:
            raise ValueError(f"duplicate slice_id {req.slice_id}")
        problems = self.validate_request(req)
        if problems:
            raise ValueError(f"invalid slice request {req.slice_id}: " + "; ".join(problems))

        involved = req.involved_domains()
        aggregates = []
        for domain_id in involved:
            agg = self.aggregate(domain_id)
            aggregates.append(agg)
            self.log(
                "IE_REPORT",
                [
                    ("domain", domain_id),
                    ("free", str(agg.free_totals)),
                    (
                        "gw",
                        ";".join(
                            f"{a}-{b}:{format_quantity(v)}"
                            for (a, b), v in sorted(agg.gateway_bottlenecks.items())
                        )
                        or "-",
                    ),
                ],
            )
        interlinks = self.interlink_views()
        decision = gc_admit(aggregates, interlinks, req, self.topo)
        self.log(
            "GC_DECISION",
            [
                ("slice", req.slice_id),
                ("decision", "admit" if decision.admit else "reject"),
                ("reason", decision.reason or "-"),
            ],
        )
        if not decision.admit:
            return AdmissionResult("REJECTED", None, decision.reason)

        legs_by_domain, hops_by_flow, trunk_error = self._flow_legs(req, interlinks)
        if trunk_error is not None:
            # unreachable after gc_admit, kept for standalone safety
            return AdmissionResult("REJECTED", None, trunk_error)

        grant = SliceGrant(req.slice_id)
        reserved_domains: list[str] = []
        leg_results: dict[str, Mapping[int, tuple[tuple[str, ...], tuple[str, ...]]]] = {}

        def compensate():
            for domain_id in reversed(reserved_domains):
                self.release_domain(domain_id, req.slice_id)
                self.log("DC_RELEASE", [("domain", domain_id), ("slice", req.slice_id), ("cause", "abort")])

        for domain_id in involved:
            outcome = self.dc_reserve(
                domain_id,
                req.slice_id,
                req.per_domain_demand[domain_id],
                legs_by_domain.get(domain_id, ()),
                req.pinned_nodes.get(domain_id),
            )
            self.log(
                "DC_RESERVE",
                [
                    ("domain", domain_id),
                    ("slice", req.slice_id),
                    ("decision", "accept" if outcome.accepted else "reject"),
                    ("reason", outcome.reason or "-"),
                ],
            )
            if not outcome.accepted:
                compensate()
                grant.reason = outcome.reason
                grant.rejecting_domain = domain_id
                grant.transition(GrantState.ABORTED)
                self.grants[req.slice_id] = grant
                self.log(
                    "SLICE_ABORT",
                    [("slice", req.slice_id), ("domain", domain_id), ("reason", outcome.reason or "-")],
                )
                return AdmissionResult("ABORTED", grant, outcome.reason, domain_id)
            reserved_domains.append(domain_id)
            grant.per_domain_reservation[domain_id] = dict(outcome.node_reservation)
            leg_results[domain_id] = outcome.leg_paths

        # inter-domain hops are coordinator-held reservations
        work_inter = {l.link_id: l.residual for l in interlinks}
        inter_res: dict[str, Fraction] = {}
        for idx in sorted(hops_by_flow):
            flow = req.flows[idx]
            for link_id in hops_by_flow[idx]:
                if work_inter.get(link_id, Fraction(0)) < flow.rate_mbps:
                    compensate()
                    grant.reason = "inter-domain link bandwidth"
                    grant.transition(GrantState.ABORTED)
                    self.grants[req.slice_id] = grant
                    self.log(
                        "SLICE_ABORT",
                        [("slice", req.slice_id), ("domain", "-"), ("reason", grant.reason)],
                    )
                    return AdmissionResult("ABORTED", grant, grant.reason, None)
                work_inter[link_id] -= flow.rate_mbps
                inter_res[link_id] = inter_res.get(link_id, Fraction(0)) + flow.rate_mbps
                self.log(
                    "LINK_RESERVE",
                    [("link", link_id), ("slice", req.slice_id), ("rate", format_quantity(flow.rate_mbps))],
                )
        if inter_res:
            self.interlink_reservations[req.slice_id] = inter_res

        grant.reserved_paths = self._assemble_paths(req, legs_by_domain, leg_results, hops_by_flow)
        grant.transition(GrantState.COMMITTED)
        self.grants[req.slice_id] = grant
        self.slice_controllers[req.slice_id] = SliceController(req.slice_id, grant)
        self.log("SLICE_COMMIT", [("slice", req.slice_id)])
        self.log("SC_CREATE", [("slice", req.slice_id)])
        return AdmissionResult("COMMITTED", grant)

    def _flow_legs(self, req: SliceRequest, interlinks: Sequence[InterLink]):
        """Derive per-domain reservation legs and inter-domain hops per flow."""
        legs_by_domain: dict[str, list[_FlowLeg]] = {}
        hops_by_flow: dict[int, list[str]] = {}

        def add_leg(domain_id: str, leg: _FlowLeg):
            legs_by_domain.setdefault(domain_id, []).append(leg)

        for idx, flow in enumerate(req.flows):
            if flow.path is not None:
                segments, hops = _split_pinned(self.topo, flow)
                for domain_id, nodes, links in segments:
                    add_leg(
                        domain_id,
                        _FlowLeg(idx, flow.rate_mbps, nodes[0], nodes[-1], nodes, links),
                    )
                if hops:
                    hops_by_flow[idx] = hops
            else:
                trunk = choose_trunk_link(interlinks, flow.src_domain, flow.dst_domain)
                if trunk is None:
                    return legs_by_domain, hops_by_flow, "no inter-domain link"
                src_anchor = _gateway_anchor(self.topo, flow.src_domain)
                dst_anchor = _gateway_anchor(self.topo, flow.dst_domain)
                add_leg(
                    flow.src_domain,
                    _FlowLeg(idx, flow.rate_mbps, src_anchor, trunk.gateway_in(flow.src_domain)),
                )
                add_leg(
                    flow.dst_domain,
                    _FlowLeg(idx, flow.rate_mbps, trunk.gateway_in(flow.dst_domain), dst_anchor),
                )
                hops_by_flow[idx] = [trunk.link_id]
        return legs_by_domain, hops_by_flow, None

    def _assemble_paths(self, req, legs_by_domain, leg_results, hops_by_flow):
        """Stitch per-domain leg paths and inter-domain hops into the
        reserved path recorded on the grant."""
        reserved: dict[int, ReservedFlow] = {}
        for idx, flow in enumerate(req.flows):
            if flow.path is not None:
                reserved[idx] = ReservedFlow(idx, flow.path, flow.links, flow.rate_mbps)
                continue
            src_path, src_links = leg_results[flow.src_domain][idx]
            dst_path, dst_links = leg_results[flow.dst_domain][idx]
            links = src_links + tuple(hops_by_flow.get(idx, ())) + dst_links
            reserved[idx] = ReservedFlow(idx, src_path + dst_path, links, flow.rate_mbps)
        return reserved

    # -- slice controller operations --------------------------------------

    def sc_accept_task(self, task: SliceTask) -> tuple[bool, str | None]:
        """Accept a task iff node headroom and a positive max-min rate for
        every new flow exist inside the slice's reservation."""
        grant = self.grants.get(task.slice_id)
        if grant is None or grant.state is not GrantState.COMMITTED:
            raise ValueError(f"slice {task.slice_id} is not committed")
        sc = self.slice_controllers[task.slice_id]
        if task.task_id in sc.tasks:
            raise ValueError(f"duplicate task {task.task_id}")
        reserved_nodes = grant.reserved_nodes()
        for node_id in [task.node_id] + [n for f in task.flows for n in (f.src_node, f.dst_node)]:
            if node_id not in reserved_nodes:
                raise ValueError(f"task {task.task_id}: node {node_id} is outside the slice")

        domain_id = self.topo.domain_of(task.node_id)
        reserved_here = grant.per_domain_reservation.get(domain_id, {}).get(task.node_id, ZERO)
        usage = sc.task_usage(task.node_id)
        residual = reserved_here - usage if usage.fits_within(reserved_here) else ZERO
        if not task.demand.fits_within(residual):
            outcome = (False, "node reservation")
            self._log_task(task, outcome)
            return outcome

        candidate = dict(sc.flows)
        for f in task.flows:
            if f.flow_id in candidate:
                raise ValueError(f"duplicate flow id {f.flow_id}")
            candidate[f.flow_id] = f
        caps = self.slice_link_capacity(task.slice_id)
        trial = dfc_allocate(list(candidate.values()), caps)
        for f in task.flows:
            if f.links and trial[f.flow_id] <= 0:
                outcome = (False, "flow capacity")
                self._log_task(task, outcome)
                return outcome

        sc.tasks[task.task_id] = task
        sc.flows = candidate
        sc.allocation = trial
        self._log_task(task, (True, None))
        self.log_allocation(task.slice_id)
        return (True, None)

    def _log_task(self, task: SliceTask, outcome: tuple[bool, str | None]):
        self.log(
            "SC_TASK",
            [
                ("slice", task.slice_id),
                ("task", task.task_id),
                ("decision", "accept" if outcome[0] else "reject"),
                ("reason", outcome[1] or "-"),
            ],
        )

    def log_allocation(self, slice_id: str):
        sc = self.slice_controllers[slice_id]
        rates = ";".join(f"{fid}:{format_quantity(rate)}" for fid, rate in sorted(sc.allocation.items()))
        self.log("DFC_ALLOC", [("slice", slice_id), ("rates", rates or "-")])

    def reallocate_slice(self, slice_id: str) -> dict[str, Fraction]:
        """dfc reaction for one slice: rebuild rates from current capacities."""
        sc = self.slice_controllers[slice_id]
        sc.allocation = dfc_react(list(sc.flows.values()), self.slice_link_capacity(slice_id))
        self.log_allocation(slice_id)
        return dict(sc.allocation)

    def slices_using_link(self, link_id: str) -> list[str]:
        out = []
        for slice_id, grant in sorted(self.grants.items()):
            if grant.state is not GrantState.COMMITTED:
                continue
            if any(link_id in rf.links for rf in grant.reserved_paths.values()):
                out.append(slice_id)
        return out

    def slices_using_node(self, node_id: str) -> list[str]:
        out = []
        for slice_id, grant in sorted(self.grants.items()):
            if grant.state is not GrantState.COMMITTED:
                continue
            if node_id in grant.reserved_nodes():
                out.append(slice_id)
        return out

    def terminate_slice(self, slice_id: str) -> SliceGrant:
        """Cancel tasks, release every reservation, mark TERMINATED; a second
        call is a no-op."""
        grant = self.grants.get(slice_id)
        if grant is None:
            raise ValueError(f"unknown slice {slice_id}")
        if grant.state is GrantState.TERMINATED:
            return grant
        if grant.state is not GrantState.COMMITTED:
            raise ValueError(f"cannot terminate slice {slice_id} in state {grant.state.value}")
        sc = self.slice_controllers.get(slice_id)
        if sc is not None:
            for task_id in sorted(sc.tasks):
                self.log("TASK_CANCEL", [("slice", slice_id), ("task", task_id)])
            sc.tasks.clear()
            sc.flows.clear()
            sc.allocation.clear()
        for domain_id in sorted(grant.per_domain_reservation):
            self.release_domain(domain_id, slice_id)
            self.log("DC_RELEASE", [("domain", domain_id), ("slice", slice_id), ("cause", "terminate")])
        self.interlink_reservations.pop(slice_id, None)
        grant.transition(GrantState.TERMINATED)
        self.slice_controllers.pop(slice_id, None)
        self.log("SLICE_TERMINATE", [("slice", slice_id)])
        return grant

    # -- physical load and faults ----------------------------------------

    def add_preload(self, node_id: str, load: ResourceVector):
        free = self.free_node(node_id)
        if not load.fits_within(free):
            raise ValueError(f"preload on {node_id} exceeds free capacity")
        self.preload[node_id] = self.preload.get(node_id, ZERO) + load

    def fail_node(self, node_id: str):
        self.node_capacity[node_id] = ZERO
        self.preload.pop(node_id, None)

    def restore_node(self, node_id: str):
        self.node_capacity[node_id] = self.topo.nodes_by_id[node_id].capacity

    def set_link_capacity(self, link_id: str, capacity: Fraction):
        if link_id not in self.link_capacity:
            raise KeyError(f"unknown link {link_id}")
        self.link_capacity[link_id] = as_fraction(capacity)

    def restore_link(self, link_id: str):
        self.link_capacity[link_id] = self.topo.links_by_id[link_id].capacity_mbps


def _links_of(topo: CoalitionTopology, path: tuple[str, ...], work_link: Mapping[str, Fraction], rate: Fraction):
    """Resolve a widest-path node sequence to concrete links, preferring the
    highest-residual (then smallest-id) parallel link with room for rate."""
    links = []
    for a, b in zip(path, path[1:]):
        candidates = [
            l
            for l in topo.links
            if {l.endpoint_a, l.endpoint_b} == {a, b} and work_link.get(l.link_id, Fraction(0)) >= rate
        ]
        if not candidates:
            raise AssertionError(f"widest path chose an unreservable hop {a}-{b}")
        best = min(candidates, key=lambda l: (-work_link[l.link_id], l.link_id))
        links.append(best.link_id)
    return tuple(links)


# ---------------------------------------------------------------------------
# auditing


def audit(plane: SlicingPlane) -> list[Violation]:
    """No-overcommit and conservation checks over the whole plane; pure."""
    out: list[Violation] = []
    for node_id in sorted(plane.node_capacity):
        reserved = plane.node_reserved(node_id)
        if not reserved.fits_within(plane.node_capacity[node_id]):
            out.append(
                Violation("node-overcommit", node_id, f"reserved {reserved} exceeds capacity {plane.node_capacity[node_id]}")
            )
    for link_id in sorted(plane.link_capacity):
        effective = plane.effective_link_rates(link_id)
        total = sum(effective.values(), Fraction(0))
        if total > plane.link_capacity[link_id]:
            out.append(
                Violation(
                    "link-overcommit",
                    link_id,
                    f"effective reserved {format_quantity(total)} exceeds capacity "
                    f"{format_quantity(plane.link_capacity[link_id])}",
                )
            )
    for slice_id, sc in sorted(plane.slice_controllers.items()):
        caps = plane.slice_link_capacity(slice_id)
        usage: dict[str, Fraction] = {}
        for fid, flow in sorted(sc.flows.items()):
            rate = sc.allocation.get(fid, Fraction(0))
            if rate < 0 or rate > flow.desired_rate_mbps:
                out.append(Violation("allocation-bounds", fid, f"rate {format_quantity(rate)} outside [0, desired]"))
            for link_id in flow.links:
                usage[link_id] = usage.get(link_id, Fraction(0)) + rate
        for link_id, used in sorted(usage.items()):
            if used > caps.get(link_id, Fraction(0)):
                out.append(
                    Violation(
                        "slice-link-overcommit",
                        f"{slice_id}/{link_id}",
                        f"allocated {format_quantity(used)} exceeds slice share {format_quantity(caps.get(link_id, Fraction(0)))}",
                    )
                )
    for slice_id, grant in sorted(plane.grants.items()):
        holding = [d for d, dc in sorted(plane.domain_controllers.items()) if dc.holds(slice_id)]
        if grant.state is GrantState.COMMITTED:
            missing = sorted(set(grant.per_domain_reservation) - set(holding))
            if missing:
                out.append(Violation("grant-consistency", slice_id, f"committed but domains {missing} hold nothing"))
        else:
            if holding or slice_id in plane.interlink_reservations:
                out.append(
                    Violation("grant-consistency", slice_id, f"state {grant.state.value} but reservations remain")
                )
    return out
