"""Central coalition planning: model selection, schema mediation, placement.

All operations are pure functions over immutable snapshots; identical inputs
produce identical plans so simulation replays are byte-stable.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .registry import (
    EMPTY_SCHEMA,
    InterfaceSchema,
    ModelDescriptor,
    Registry,
    SensitivityLevel,
    coalition_catalog,
)
from .resources import ResourceVector, as_fraction, vector_sum
from .topology import CoalitionTopology, NodeSpec, Tier, residual_view


@dataclass(frozen=True)
class Interaction:
    producer_capability: str
    consumer_capability: str
    min_rate_mbps: Fraction
    max_latency_ms: Fraction

    def __post_init__(self):
        object.__setattr__(self, "min_rate_mbps", as_fraction(self.min_rate_mbps))
        object.__setattr__(self, "max_latency_ms", as_fraction(self.max_latency_ms))


@dataclass(frozen=True)
class MissionProcessModel:
    mission_id: str
    participants: frozenset[str]
    required_capabilities: frozenset[str]
    interactions: tuple[Interaction, ...]
    classification_ceiling: SensitivityLevel

    def __init__(
        self,
        mission_id: str,
        participants: Iterable[str],
        required_capabilities: Iterable[str],
        interactions: Iterable[Interaction],
        classification_ceiling: SensitivityLevel,
    ):
        object.__setattr__(self, "mission_id", mission_id)
        object.__setattr__(self, "participants", frozenset(participants))
        object.__setattr__(self, "required_capabilities", frozenset(required_capabilities))
        object.__setattr__(self, "interactions", tuple(interactions))
        object.__setattr__(self, "classification_ceiling", classification_ceiling)

    def problems(self) -> list[str]:
        out = []
        if not self.participants:
            out.append("participants must be non-empty")
        if not self.required_capabilities:
            out.append("required_capabilities must be non-empty")
        for i, inter in enumerate(self.interactions):
            for cap in (inter.producer_capability, inter.consumer_capability):
                if cap not in self.required_capabilities:
                    out.append(f"interaction {i}: capability {cap} not in required_capabilities")
            if inter.min_rate_mbps <= 0:
                out.append(f"interaction {i}: min_rate_mbps must be positive")
            if inter.max_latency_ms <= 0:
                out.append(f"interaction {i}: max_latency_ms must be positive")
        return out


@dataclass(frozen=True)
class PolicyContext:
    """Releasability grants; a partner always releases to itself."""

    releasability: Mapping[tuple[str, SensitivityLevel], frozenset[str]]
    overrides: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __init__(
        self,
        releasability: Mapping[tuple[str, SensitivityLevel], Iterable[str]] | None = None,
        overrides: Mapping[str, Iterable[str]] | None = None,
    ):
        rel = {k: frozenset(v) for k, v in (releasability or {}).items()}
        ovr = {k: frozenset(v) for k, v in (overrides or {}).items()}
        object.__setattr__(self, "releasability", rel)
        object.__setattr__(self, "overrides", ovr)


def check_releasable(policy: PolicyContext, descriptor: ModelDescriptor, consumers: Iterable[str]) -> bool:
    """True iff every consumer may receive the model's outputs."""
    granted = set(policy.releasability.get((descriptor.partner_id, descriptor.sensitivity), frozenset()))
    granted |= policy.overrides.get(descriptor.model_id, frozenset())
    granted.add(descriptor.partner_id)
    return set(consumers) <= granted


class FederationError(Exception):
    """Planning failure, labelled with the stage that raised it."""

    stage = "federation"

    def __init__(self, message: str):
        super().__init__(f"{self.stage}: {message}")
        self.message = message


class CatalogError(FederationError):
    stage = "catalog"


class SelectionError(FederationError):
    stage = "selection"

    def __init__(self, uncovered: Sequence[str] | None = None, message: str | None = None):
        self.uncovered = tuple(uncovered or ())
        if message is None:
            message = "uncovered capability: " + ", ".join(self.uncovered)
        super().__init__(message)


class MediationRejected(FederationError):
    stage = "mediation"

    def __init__(self, interaction_index: int, missing_fields: Sequence[str]):
        self.interaction_index = interaction_index
        self.missing_fields = tuple(missing_fields)
        super().__init__(
            f"interaction {interaction_index} is lossy; unmapped consumer fields: "
            + ", ".join(self.missing_fields)
        )


class PlacementInfeasible(FederationError):
    stage = "placement"

    def __init__(self, constraint_class: str, offender: str):
        self.constraint_class = constraint_class
        self.offender = offender
        super().__init__(f"infeasible({constraint_class}) for {offender}")


def select_models(
    catalog: Sequence[ModelDescriptor],
    pm: MissionProcessModel,
    policy: PolicyContext,
) -> dict[str, ModelDescriptor]:
    """Pick one admissible model per required capability.

    Admissible: offers the capability, sensitivity at or below the mission
    ceiling, releasable to every participant.  Minimizes footprint.compute,
    tie-broken by model_id.  Raises SelectionError naming every capability
    with zero candidates.
    """
    problems = pm.problems()
    if problems:
        raise SelectionError(message="invalid mission process model: " + "; ".join(problems))
    chosen: dict[str, ModelDescriptor] = {}
    uncovered: list[str] = []
    for capability in sorted(pm.required_capabilities):
        candidates = [
            d
            for d in catalog
            if capability in d.capabilities
            and d.sensitivity <= pm.classification_ceiling
            and check_releasable(policy, d, pm.participants)
        ]
        if not candidates:
            uncovered.append(capability)
            continue
        chosen[capability] = min(candidates, key=lambda d: (d.footprint.compute, d.model_id))
    if uncovered:
        raise SelectionError(uncovered)
    return chosen


@dataclass(frozen=True)
class SchemaMapping:
    from_schema: InterfaceSchema
    to_schema: InterfaceSchema
    field_map: tuple[tuple[str, str], ...]
    lossiness: bool


def mediate(
    producer: InterfaceSchema,
    consumer_requirements: InterfaceSchema,
    dictionary: Mapping[str, str],
) -> SchemaMapping:
    """Map producer fields onto consumer fields through the shared vocabulary.

    Two fields match when the dictionary resolves their semantic types to the
    same canonical name; types missing from the dictionary cannot match.
    Among several matching producer fields the lexicographically smallest
    field name wins.  lossiness flags any required consumer field left
    unmapped; lossy mappings are data, not errors.
    """
    by_canon: dict[str, str] = {}
    for f in sorted(producer.fields, key=lambda f: f.name):
        canon = dictionary.get(f.semantic_type)
        if canon is not None and canon not in by_canon:
            by_canon[canon] = f.name
    field_map: list[tuple[str, str]] = []
    lossy = False
    for target in consumer_requirements.fields:
        canon = dictionary.get(target.semantic_type)
        source = by_canon.get(canon) if canon is not None else None
        if source is not None:
            field_map.append((source, target.name))
        elif target.required:
            lossy = True
    return SchemaMapping(producer, consumer_requirements, tuple(field_map), lossy)


@dataclass(frozen=True)
class FederationPlan:
    mission_id: str
    selected: Mapping[str, str]  # capability -> model_id
    placement: Mapping[str, str]  # model_id -> node_id
    routes: Mapping[int, tuple[str, ...]]  # interaction index -> node path
    route_links: Mapping[int, tuple[str, ...]]
    mediations: tuple[SchemaMapping, ...]
    total_cost: Fraction
    mode: str  # "exact" | "heuristic"

    def nodes_used(self) -> frozenset[str]:
        used = set(self.placement.values())
        for path in self.routes.values():
            used.update(path)
        return frozenset(used)

    def links_used(self) -> frozenset[str]:
        used: set[str] = set()
        for links in self.route_links.values():
            used.update(links)
        return frozenset(used)


@dataclass(frozen=True)
class _Route:
    path: tuple[str, ...]
    links: tuple[str, ...]
    latency: Fraction
    cost: Fraction

    @property
    def hops(self) -> int:
        return len(self.links)


def _best_route(
    topo: CoalitionTopology,
    link_free: Mapping[str, Fraction],
    src: str,
    dst: str,
    rate: Fraction,
    max_latency: Fraction,
    *,
    ignore_bandwidth: bool = False,
) -> Optional[_Route]:
    """Minimum-latency path whose every link has residual >= rate.

    Ties break on fewer hops, then the lexicographically smallest node
    sequence; None when no path meets the latency bound.
    """
    if src == dst:
        return _Route((src,), (), Fraction(0), Fraction(0))
    heap: list[tuple[Fraction, int, tuple[str, ...], tuple[str, ...]]] = [
        (Fraction(0), 0, (src,), ())
    ]
    done: set[str] = set()
    while heap:
        latency, hops, path, links = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == dst:
            return _Route(path, links, latency, latency * rate)
        for neighbor, link_id in topo.adjacency.get(node, ()):
            if neighbor in done:
                continue
            if not ignore_bandwidth and link_free.get(link_id, Fraction(0)) < rate:
                continue
            if ignore_bandwidth and link_id not in topo.links_by_id:
                continue
            spec = topo.links_by_id[link_id]
            total = latency + spec.latency_ms
            if total > max_latency:
                continue
            heapq.heappush(heap, (total, hops + 1, path + (neighbor,), links + (link_id,)))
    return None


def _route_tables(
    topo: CoalitionTopology,
    link_free: Mapping[str, Fraction],
    interactions: Sequence[Interaction],
    endpoints: Sequence[tuple[str, str]],  # (producer model, consumer model)
    candidates: Mapping[str, tuple[str, ...]],
) -> list[dict[tuple[str, str], Optional[_Route]]]:
    tables = []
    for inter, (prod, cons) in zip(interactions, endpoints):
        table: dict[tuple[str, str], Optional[_Route]] = {}
        for src in candidates[prod]:
            for dst in candidates[cons]:
                table[(src, dst)] = _best_route(
                    topo, link_free, src, dst, inter.min_rate_mbps, inter.max_latency_ms
                )
        tables.append(table)
    return tables


def plan_placement(
    topo: CoalitionTopology,
    free: Mapping[str, ResourceVector],
    selection: Mapping[str, ModelDescriptor],
    pm: MissionProcessModel,
    link_free: Mapping[str, Fraction] | None = None,
    *,
    exact_max_models: int = 5,
    exact_max_nodes: int = 8,
    force_mode: str | None = None,
) -> FederationPlan:
    """Assign selected models to nodes and route every interaction.

    Objective: minimize sum over interactions of (path latency x rate);
    ties on fewer total hops, then the lexicographic placement vector.
    Exact branch-and-bound runs within the size limits, a greedy heuristic
    above them; the plan is labelled accordingly.
    """
    if link_free is None:
        link_free = residual_view(topo)
    missing = sorted(set(pm.required_capabilities) - set(selection))
    if missing:
        raise SelectionError(missing)

    models: dict[str, ModelDescriptor] = {}
    for cap in sorted(selection):
        d = selection[cap]
        models[d.model_id] = d
    model_ids = sorted(models)

    candidates: dict[str, tuple[str, ...]] = {}
    for mid in model_ids:
        d = models[mid]
        eligible = [
            n.node_id
            for n in topo.nodes
            if n.tier in d.allowed_tiers
            and (d.sensitivity is not SensitivityLevel.SECRET or n.is_enclave)
            and n.node_id in free
        ]
        if not eligible:
            raise PlacementInfeasible("tier", mid)
        candidates[mid] = tuple(sorted(eligible))

    endpoints = [
        (selection[i.producer_capability].model_id, selection[i.consumer_capability].model_id)
        for i in pm.interactions
    ]
    tables = _route_tables(topo, link_free, pm.interactions, endpoints, candidates)

    candidate_union = sorted({n for c in candidates.values() for n in c})
    exact = force_mode == "exact" or (
        force_mode is None
        and len(model_ids) <= exact_max_models
        and len(candidate_union) <= exact_max_nodes
    )

    if exact:
        assignment = _search_exact(model_ids, models, candidates, free, endpoints, tables)
        mode = "exact"
    else:
        assignment = _search_greedy(model_ids, models, candidates, free, endpoints, tables)
        mode = "heuristic"

    if assignment is None:
        raise _diagnose(topo, free, link_free, model_ids, models, candidates, pm, endpoints, tables)

    placement, routes = assignment
    total_cost = sum((r.cost for r in routes), Fraction(0))
    return FederationPlan(
        mission_id=pm.mission_id,
        selected={cap: selection[cap].model_id for cap in sorted(selection)},
        placement={mid: placement[mid] for mid in model_ids},
        routes={i: r.path for i, r in enumerate(routes)},
        route_links={i: r.links for i, r in enumerate(routes)},
        mediations=(),
        total_cost=total_cost,
        mode=mode,
    )


def _capacity_ok(used: dict[str, ResourceVector], free: Mapping[str, ResourceVector], node: str, foot: ResourceVector):
    current = used.get(node)
    combined = foot if current is None else current + foot
    return combined if combined.fits_within(free[node]) else None


def _search_exact(model_ids, models, candidates, free, endpoints, tables):
    """Depth-first branch and bound in lexicographic placement order."""
    n = len(model_ids)
    level_of = {mid: i for i, mid in enumerate(model_ids)}
    # interactions become checkable once both endpoint models are assigned
    ready_at: dict[int, list[int]] = {i: [] for i in range(n)}
    for idx, (prod, cons) in enumerate(endpoints):
        ready_at[max(level_of[prod], level_of[cons])].append(idx)

    best: Optional[tuple[Fraction, int, tuple[str, ...], list[_Route]]] = None
    assign: dict[str, str] = {}
    used: dict[str, ResourceVector] = {}
    route_acc: dict[int, _Route] = {}

    def dfs(level: int, cost: Fraction, hops: int):
        nonlocal best
        if best is not None:
            bc, bh, _, _ = best
            if cost > bc or (cost == bc and hops >= bh):
                return
        if level == n:
            vector = tuple(assign[mid] for mid in model_ids)
            best = (cost, hops, vector, [route_acc[i] for i in range(len(endpoints))])
            return
        mid = model_ids[level]
        foot = models[mid].footprint
        for node in candidates[mid]:
            combined = _capacity_ok(used, free, node, foot)
            if combined is None:
                continue
            added: list[int] = []
            extra_cost = Fraction(0)
            extra_hops = 0
            feasible = True
            for idx in ready_at[level]:
                prod, cons = endpoints[idx]
                src = node if prod == mid else assign[prod]
                dst = node if cons == mid else assign[cons]
                route = tables[idx].get((src, dst))
                if route is None:
                    feasible = False
                    break
                route_acc[idx] = route
                added.append(idx)
                extra_cost += route.cost
                extra_hops += route.hops
            if feasible:
                assign[mid] = node
                prev = used.get(node)
                used[node] = combined
                dfs(level + 1, cost + extra_cost, hops + extra_hops)
                del assign[mid]
                if prev is None:
                    del used[node]
                else:
                    used[node] = prev
            for idx in added:
                del route_acc[idx]

    dfs(0, Fraction(0), 0)
    if best is None:
        return None
    _, _, vector, routes = best
    return dict(zip(model_ids, vector)), routes


def _search_greedy(model_ids, models, candidates, free, endpoints, tables):
    """Place models by descending compute footprint, minimizing marginal cost."""
    order = sorted(model_ids, key=lambda m: (-models[m].footprint.compute, m))
    assign: dict[str, str] = {}
    used: dict[str, ResourceVector] = {}
    for mid in order:
        foot = models[mid].footprint
        best_node = None
        best_key = None
        for node in candidates[mid]:
            combined = _capacity_ok(used, free, node, foot)
            if combined is None:
                continue
            marginal_cost = Fraction(0)
            marginal_hops = 0
            feasible = True
            for idx, (prod, cons) in enumerate(endpoints):
                other = None
                if prod == mid and cons in assign:
                    other = (node, assign[cons])
                elif cons == mid and prod in assign:
                    other = (assign[prod], node)
                elif prod == mid and cons == mid:
                    other = (node, node)
                if other is None:
                    continue
                route = tables[idx].get(other)
                if route is None:
                    feasible = False
                    break
                marginal_cost += route.cost
                marginal_hops += route.hops
            if not feasible:
                continue
            key = (marginal_cost, marginal_hops, node)
            if best_key is None or key < best_key:
                best_key = key
                best_node = node
        if best_node is None:
            return None
        assign[mid] = best_node
        used[best_node] = _capacity_ok(used, free, best_node, foot)
    routes: list[_Route] = []
    for idx, (prod, cons) in enumerate(endpoints):
        route = tables[idx].get((assign[prod], assign[cons]))
        if route is None:
            return None
        routes.append(route)
    return assign, routes


def _diagnose(topo, free, link_free, model_ids, models, candidates, pm, endpoints, tables):
    """Pick the first violated constraint class for the infeasibility report."""
    # capacity: is there any assignment satisfying node capacities alone?
    n = len(model_ids)
    assign: dict[str, str] = {}
    used: dict[str, ResourceVector] = {}

    def dfs_capacity(level: int) -> bool:
        if level == n:
            return True
        mid = model_ids[level]
        for node in candidates[mid]:
            combined = _capacity_ok(used, free, node, models[mid].footprint)
            if combined is None:
                continue
            prev = used.get(node)
            assign[mid] = node
            used[node] = combined
            if dfs_capacity(level + 1):
                return True
            del assign[mid]
            if prev is None:
                del used[node]
            else:
                used[node] = prev
        return False

    if not dfs_capacity(0):
        for mid in model_ids:
            if not any(models[mid].footprint.fits_within(free[node]) for node in candidates[mid]):
                return PlacementInfeasible("capacity", mid)
        bulky = max(model_ids, key=lambda m: (models[m].footprint.compute, m))
        return PlacementInfeasible("capacity", bulky)

    # assign now holds the lexicographically first capacity-feasible placement
    for idx, (prod, cons) in enumerate(endpoints):
        src, dst = assign[prod], assign[cons]
        if tables[idx].get((src, dst)) is not None:
            continue
        inter = pm.interactions[idx]
        relaxed = _best_route(
            topo, link_free, src, dst, inter.min_rate_mbps, inter.max_latency_ms, ignore_bandwidth=True
        )
        kind = "latency" if relaxed is None else "bandwidth"
        return PlacementInfeasible(kind, f"interaction {idx}")
    return PlacementInfeasible("latency", "unroutable under joint constraints")


def validate_plan(
    topo: CoalitionTopology,
    free: Mapping[str, ResourceVector],
    link_free: Mapping[str, Fraction],
    selection: Mapping[str, ModelDescriptor],
    pm: MissionProcessModel,
    plan: FederationPlan,
) -> list[str]:
    """Independent re-check of a plan's feasibility claims."""
    problems: list[str] = []
    models = {d.model_id: d for d in selection.values()}
    loads: dict[str, ResourceVector] = {}
    for mid, node_id in plan.placement.items():
        d = models[mid]
        node = topo.nodes_by_id.get(node_id)
        if node is None:
            problems.append(f"{mid}: placed on unknown node {node_id}")
            continue
        if node.tier not in d.allowed_tiers:
            problems.append(f"{mid}: node {node_id} tier {node.tier.value} not allowed")
        if d.sensitivity is SensitivityLevel.SECRET and not node.is_enclave:
            problems.append(f"{mid}: secret model placed outside an enclave")
        loads[node_id] = loads.get(node_id, ResourceVector()) + d.footprint
    for node_id, load in sorted(loads.items()):
        if not load.fits_within(free.get(node_id, ResourceVector())):
            problems.append(f"node {node_id}: aggregate footprint exceeds free capacity")
    for idx, inter in enumerate(pm.interactions):
        path = plan.routes.get(idx)
        links = plan.route_links.get(idx)
        if path is None or links is None:
            problems.append(f"interaction {idx}: missing route")
            continue
        prod = selection[inter.producer_capability].model_id
        cons = selection[inter.consumer_capability].model_id
        if path[0] != plan.placement[prod] or path[-1] != plan.placement[cons]:
            problems.append(f"interaction {idx}: route endpoints do not match placement")
        latency = Fraction(0)
        for (a, b), link_id in zip(zip(path, path[1:]), links):
            spec = topo.links_by_id.get(link_id)
            if spec is None or {spec.endpoint_a, spec.endpoint_b} != {a, b}:
                problems.append(f"interaction {idx}: link {link_id} does not join {a}-{b}")
                continue
            latency += spec.latency_ms
            if link_free.get(link_id, Fraction(0)) < inter.min_rate_mbps:
                problems.append(f"interaction {idx}: link {link_id} lacks {inter.min_rate_mbps} Mbps")
        if latency > inter.max_latency_ms:
            problems.append(f"interaction {idx}: latency {latency} exceeds bound {inter.max_latency_ms}")
    return problems


def federate(
    registries: Sequence[Registry],
    topo: CoalitionTopology,
    free: Mapping[str, ResourceVector],
    pm: MissionProcessModel,
    policy: PolicyContext,
    dictionary: Mapping[str, str],
    link_free: Mapping[str, Fraction] | None = None,
    *,
    exact_max_models: int = 5,
    exact_max_nodes: int = 8,
) -> FederationPlan:
    """catalog -> selection -> mediation -> placement, with stage-labelled errors.

    Any lossy mediation rejects the mission outright, naming the unmapped
    fields.  Running this against a state snapshot IS the dry-run rehearsal;
    nothing is committed here.
    """
    try:
        catalog = coalition_catalog(registries, None, policy)
    except ValueError as exc:
        raise CatalogError(str(exc)) from exc

    selection = select_models(catalog, pm, policy)

    mediations: list[SchemaMapping] = []
    for idx, inter in enumerate(pm.interactions):
        producer = selection[inter.producer_capability]
        consumer = selection[inter.consumer_capability]
        requirement = consumer.input_schemas.get(inter.producer_capability, EMPTY_SCHEMA)
        mapping = mediate(producer.output_schema, requirement, dictionary)
        if mapping.lossiness:
            mapped_targets = {t for _, t in mapping.field_map}
            missing = [f.name for f in requirement.fields if f.required and f.name not in mapped_targets]
            raise MediationRejected(idx, missing)
        mediations.append(mapping)

    plan = plan_placement(
        topo,
        free,
        selection,
        pm,
        link_free,
        exact_max_models=exact_max_models,
        exact_max_nodes=exact_max_nodes,
    )
    return FederationPlan(
        mission_id=plan.mission_id,
        selected=plan.selected,
        placement=plan.placement,
        routes=plan.routes,
        route_links=plan.route_links,
        mediations=tuple(mediations),
        total_cost=plan.total_cost,
        mode=plan.mode,
    )
