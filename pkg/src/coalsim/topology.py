"""Coalition network model: partners, domains, three-tier nodes and links.

Topologies are immutable after construction.  Construction is permissive so
that validate_topology can report every violation in malformed input; the
routing and slicing operations assume a topology that validated cleanly.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

from .resources import ResourceVector, as_fraction

UNBOUNDED = float("inf")


class Tier(enum.Enum):
    EDGE = "EDGE"
    TACTICAL = "TACTICAL"
    CLOUD = "CLOUD"


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    domain_id: str
    tier: Tier
    capacity: ResourceVector
    is_enclave: bool = False
    is_gateway: bool = False


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    endpoint_a: str
    endpoint_b: str
    capacity_mbps: Fraction
    latency_ms: Fraction

    def __post_init__(self):
        object.__setattr__(self, "capacity_mbps", as_fraction(self.capacity_mbps))
        object.__setattr__(self, "latency_ms", as_fraction(self.latency_ms))
        if self.capacity_mbps < 0:
            raise ValueError(f"link {self.link_id}: capacity must be non-negative")
        if self.latency_ms < 0:
            raise ValueError(f"link {self.link_id}: latency must be non-negative")

    def endpoints(self) -> tuple[str, str]:
        return (self.endpoint_a, self.endpoint_b)

    def other(self, node_id: str) -> str:
        return self.endpoint_b if node_id == self.endpoint_a else self.endpoint_a


@dataclass(frozen=True)
class Domain:
    domain_id: str
    partner_id: str
    node_ids: frozenset[str]
    gateway_ids: frozenset[str]

    def __init__(self, domain_id: str, partner_id: str, node_ids: Iterable[str], gateway_ids: Iterable[str]):
        object.__setattr__(self, "domain_id", domain_id)
        object.__setattr__(self, "partner_id", partner_id)
        object.__setattr__(self, "node_ids", frozenset(node_ids))
        object.__setattr__(self, "gateway_ids", frozenset(gateway_ids))


@dataclass(frozen=True)
class Violation:
    """One invariant violation; violations are data, not errors."""

    code: str
    subject: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.subject}: {self.detail}"


class CoalitionTopology:
    """Domains, nodes and links with lookup indexes.

    Duplicate identifiers survive construction (first occurrence wins in the
    indexes) so the validator can still walk the raw collections.
    """

    def __init__(self, domains: Iterable[Domain], nodes: Iterable[NodeSpec], links: Iterable[LinkSpec]):
        self.domains: tuple[Domain, ...] = tuple(domains)
        self.nodes: tuple[NodeSpec, ...] = tuple(nodes)
        self.links: tuple[LinkSpec, ...] = tuple(links)
        self.domains_by_id: dict[str, Domain] = {}
        for d in self.domains:
            self.domains_by_id.setdefault(d.domain_id, d)
        self.nodes_by_id: dict[str, NodeSpec] = {}
        for n in self.nodes:
            self.nodes_by_id.setdefault(n.node_id, n)
        self.links_by_id: dict[str, LinkSpec] = {}
        for l in self.links:
            self.links_by_id.setdefault(l.link_id, l)
        # adjacency sorted for deterministic traversal
        adjacency: dict[str, list[tuple[str, str]]] = {n: [] for n in self.nodes_by_id}
        for l in self.links:
            if l.endpoint_a in adjacency and l.endpoint_b in adjacency:
                adjacency[l.endpoint_a].append((l.endpoint_b, l.link_id))
                adjacency[l.endpoint_b].append((l.endpoint_a, l.link_id))
        self.adjacency = {n: tuple(sorted(neigh)) for n, neigh in adjacency.items()}

    def link_is_intra_domain(self, link: LinkSpec) -> bool:
        a = self.nodes_by_id.get(link.endpoint_a)
        b = self.nodes_by_id.get(link.endpoint_b)
        return a is not None and b is not None and a.domain_id == b.domain_id

    def domain_of(self, node_id: str) -> str:
        return self.nodes_by_id[node_id].domain_id

    def intra_domain_links(self, domain_id: str) -> tuple[LinkSpec, ...]:
        return tuple(
            l
            for l in self.links
            if l.endpoint_a in self.nodes_by_id
            and l.endpoint_b in self.nodes_by_id
            and self.nodes_by_id[l.endpoint_a].domain_id == domain_id
            and self.nodes_by_id[l.endpoint_b].domain_id == domain_id
        )

    def inter_domain_links(self) -> tuple[LinkSpec, ...]:
        return tuple(l for l in self.links if not self.link_is_intra_domain(l))

    def domain_nodes(self, domain_id: str) -> tuple[NodeSpec, ...]:
        return tuple(n for n in self.nodes if n.domain_id == domain_id and self.nodes_by_id.get(n.node_id) is n)


def validate_topology(topo: CoalitionTopology) -> list[Violation]:
    """Return every invariant violation; an empty report means valid."""
    out: list[Violation] = []

    seen_domains: set[str] = set()
    for d in topo.domains:
        if d.domain_id in seen_domains:
            out.append(Violation("duplicate-domain", d.domain_id, "domain_id declared more than once"))
        seen_domains.add(d.domain_id)

    seen_nodes: set[str] = set()
    for n in topo.nodes:
        if n.node_id in seen_nodes:
            out.append(Violation("duplicate-node", n.node_id, "node_id must be unique across the coalition"))
        seen_nodes.add(n.node_id)
        if n.is_enclave and n.tier is not Tier.CLOUD:
            out.append(Violation("enclave-tier", n.node_id, "enclave must be cloud tier"))
        if n.domain_id not in topo.domains_by_id:
            out.append(Violation("unknown-domain", n.node_id, f"references undeclared domain {n.domain_id}"))

    membership: dict[str, list[str]] = {}
    for d in topo.domains:
        if not d.gateway_ids:
            out.append(Violation("no-gateway", d.domain_id, "every domain needs at least one gateway"))
        for g in sorted(d.gateway_ids - d.node_ids):
            out.append(Violation("gateway-outside-domain", d.domain_id, f"gateway {g} is not a domain node"))
        for node_id in sorted(d.node_ids):
            membership.setdefault(node_id, []).append(d.domain_id)
            node = topo.nodes_by_id.get(node_id)
            if node is None:
                out.append(Violation("unknown-node", d.domain_id, f"domain lists undeclared node {node_id}"))
            elif node.domain_id != d.domain_id:
                out.append(
                    Violation("membership-mismatch", node_id, f"declared domain {node.domain_id}, listed in {d.domain_id}")
                )
            elif node_id in d.gateway_ids and not node.is_gateway:
                out.append(Violation("gateway-flag", node_id, "listed as gateway but is_gateway is false"))

    for n in topo.nodes:
        owners = membership.get(n.node_id, [])
        if len(owners) == 0:
            out.append(Violation("orphan-node", n.node_id, "belongs to no domain's node list"))
        elif len(owners) > 1:
            out.append(Violation("multi-domain-node", n.node_id, f"listed in domains {', '.join(sorted(owners))}"))

    seen_links: set[str] = set()
    for l in topo.links:
        if l.link_id in seen_links:
            out.append(Violation("duplicate-link", l.link_id, "link_id declared more than once"))
        seen_links.add(l.link_id)
        a = topo.nodes_by_id.get(l.endpoint_a)
        b = topo.nodes_by_id.get(l.endpoint_b)
        if l.endpoint_a == l.endpoint_b:
            out.append(Violation("self-link", l.link_id, "endpoints must be distinct"))
            continue
        missing = [e for e, spec in ((l.endpoint_a, a), (l.endpoint_b, b)) if spec is None]
        if missing:
            out.append(Violation("unknown-endpoint", l.link_id, f"unknown node(s) {', '.join(missing)}"))
            continue
        if a.domain_id != b.domain_id and not (a.is_gateway and b.is_gateway):
            out.append(Violation("interdomain-gateways", l.link_id, "inter-domain link requires gateways"))

    # intra-domain connectivity
    for d in topo.domains:
        nodes = sorted(nid for nid in d.node_ids if nid in topo.nodes_by_id)
        if len(nodes) <= 1:
            continue
        intra = topo.intra_domain_links(d.domain_id)
        neighbors: dict[str, set[str]] = {n: set() for n in nodes}
        for l in intra:
            if l.endpoint_a in neighbors and l.endpoint_b in neighbors:
                neighbors[l.endpoint_a].add(l.endpoint_b)
                neighbors[l.endpoint_b].add(l.endpoint_a)
        reached = {nodes[0]}
        frontier = [nodes[0]]
        while frontier:
            cur = frontier.pop()
            for nxt in neighbors[cur]:
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        stranded = sorted(set(nodes) - reached)
        if stranded:
            out.append(
                Violation("disconnected-domain", d.domain_id, f"nodes unreachable intra-domain: {', '.join(stranded)}")
            )

    return out


@dataclass(frozen=True)
class PathResult:
    path: tuple[str, ...]
    bottleneck_mbps: object  # Fraction, or UNBOUNDED for the degenerate path

    @property
    def hops(self) -> int:
        return len(self.path) - 1


def widest_path(
    topo: CoalitionTopology,
    residual: Mapping[str, Fraction],
    src: str,
    dst: str,
) -> Optional[PathResult]:
    """Maximum-bottleneck path from src to dst over the links named in residual.

    Ties break on fewer hops, then the lexicographically smallest node-id
    sequence.  Returns None when dst is unreachable; src == dst yields the
    single-node path with an unbounded bottleneck.
    """
    for node in (src, dst):
        if node not in topo.nodes_by_id:
            raise KeyError(f"unknown node id {node!r}")
    if src == dst:
        return PathResult((src,), UNBOUNDED)

    # heap orders by (-bottleneck, hops, path); first pop per node is final
    heap: list[tuple[object, int, tuple[str, ...]]] = [(-UNBOUNDED, 0, (src,))]
    done: set[str] = set()
    while heap:
        neg_bottleneck, hops, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == dst:
            return PathResult(path, -neg_bottleneck)
        for neighbor, link_id in topo.adjacency.get(node, ()):
            if neighbor in done or link_id not in residual:
                continue
            free = residual[link_id]
            bottleneck = min(-neg_bottleneck, free)
            heapq.heappush(heap, (-bottleneck, hops + 1, path + (neighbor,)))
    return None


def residual_view(topo: CoalitionTopology, *, domain_id: str | None = None) -> dict[str, Fraction]:
    """Full-capacity residual map; optionally restricted to one domain's intra links."""
    if domain_id is None:
        return {l.link_id: l.capacity_mbps for l in topo.links}
    return {l.link_id: l.capacity_mbps for l in topo.intra_domain_links(domain_id)}


def path_links(topo: CoalitionTopology, path: tuple[str, ...]) -> tuple[str, ...]:
    """Resolve a node path to link ids, picking the highest-capacity (then
    smallest-id) parallel link for each hop."""
    links: list[str] = []
    for a, b in zip(path, path[1:]):
        candidates = [
            l for l in topo.links if {l.endpoint_a, l.endpoint_b} == {a, b} and l.link_id in topo.links_by_id
        ]
        if not candidates:
            raise ValueError(f"no link between {a} and {b}")
        best = min(candidates, key=lambda l: (-l.capacity_mbps, l.link_id))
        links.append(best.link_id)
    return tuple(links)
