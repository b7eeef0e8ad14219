"""Scenario files: strict JSON schema, cross-reference checks, digest.

Unknown keys are errors, not warnings: a typo in a capacity field must not
silently change results.  Numbers parse to exact Fractions.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

from .federation import Interaction, MissionProcessModel, PolicyContext
from .registry import (
    InputRequirement,
    InterfaceSchema,
    ModelDescriptor,
    Registry,
    SchemaField,
    SensitivityLevel,
    register,
)
from .resources import ResourceVector
from .topology import (
    CoalitionTopology,
    Domain,
    LinkSpec,
    NodeSpec,
    Tier,
    validate_topology,
)


class EventKind(enum.Enum):
    MISSION_REQUEST = "MISSION_REQUEST"
    LINK_DEGRADE = "LINK_DEGRADE"
    LINK_RESTORE = "LINK_RESTORE"
    NODE_FAIL = "NODE_FAIL"
    NODE_RESTORE = "NODE_RESTORE"
    PRELOAD_PHYSICAL_LOAD = "PRELOAD_PHYSICAL_LOAD"
    END = "END"


@dataclass(frozen=True)
class ScenarioEvent:
    at_ms: int
    kind: EventKind
    payload: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SimConfig:
    report_period_ms: int = 1000
    uplink_threshold_mbps: Fraction = Fraction(1)
    upstream_queue_bound: int = 16
    report_size_mb: Fraction = Fraction(1, 10)
    exact_placement_max_models: int = 5
    exact_placement_max_nodes: int = 8


@dataclass(frozen=True)
class MissionOptions:
    shared_with_physical: bool = False


@dataclass
class Scenario:
    topology: CoalitionTopology
    registries: dict[str, Registry]
    policy: PolicyContext
    dictionary: dict[str, str]
    missions: dict[str, MissionProcessModel]
    mission_options: dict[str, MissionOptions]
    events: list[ScenarioEvent]
    config: SimConfig
    digest: str


class ScenarioError(ValueError):
    """Scenario rejected; problems lists every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {p}" for p in self.problems))


_MISSING = object()


class _Obj:
    """One JSON object under strict-key scrutiny."""

    def __init__(self, data: dict, path: str, problems: list[str]):
        self.data = data if isinstance(data, dict) else {}
        self.path = path
        self.problems = problems
        self.seen: set[str] = set()
        if not isinstance(data, dict):
            problems.append(f"{path}: expected an object")

    def take(self, key: str, kind: str, default=_MISSING):
        self.seen.add(key)
        if key not in self.data:
            if default is _MISSING:
                self.problems.append(f"{self.path}.{key}: required key missing")
                return None
            return default
        value = self.data[key]
        where = f"{self.path}.{key}"
        if kind == "str":
            if not isinstance(value, str) or not value:
                self.problems.append(f"{where}: expected a non-empty string")
                return None
        elif kind == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                self.problems.append(f"{where}: expected an integer")
                return None
        elif kind == "num":
            if isinstance(value, bool) or not isinstance(value, (int, Fraction)):
                self.problems.append(f"{where}: expected a number")
                return None
            value = Fraction(value)
        elif kind == "bool":
            if not isinstance(value, bool):
                self.problems.append(f"{where}: expected a boolean")
                return None
        elif kind == "list":
            if not isinstance(value, list):
                self.problems.append(f"{where}: expected an array")
                return None
        elif kind == "dict":
            if not isinstance(value, dict):
                self.problems.append(f"{where}: expected an object")
                return None
        return value

    def finish(self):
        for key in sorted(set(self.data) - self.seen):
            self.problems.append(f"{self.path}.{key}: unknown key")


def _resource(data, path: str, problems: list[str]) -> ResourceVector:
    obj = _Obj(data, path, problems)
    values = {}
    for axis in ("compute", "memory", "storage", "bandwidth"):
        values[axis] = obj.take(axis, "num", default=Fraction(0)) or Fraction(0)
    obj.finish()
    try:
        return ResourceVector(**values)
    except ValueError as exc:
        problems.append(f"{path}: {exc}")
        return ResourceVector()


def _schema(data, path: str, problems: list[str]) -> InterfaceSchema:
    obj = _Obj(data, path, problems)
    raw_fields = obj.take("fields", "list", default=[])
    obj.finish()
    fields = []
    for i, f in enumerate(raw_fields or []):
        fobj = _Obj(f, f"{path}.fields[{i}]", problems)
        name = fobj.take("name", "str")
        semantic = fobj.take("semantic_type", "str")
        required = fobj.take("required", "bool", default=True)
        fobj.finish()
        if name and semantic:
            fields.append(SchemaField(name, semantic, bool(required)))
    try:
        return InterfaceSchema(fields)
    except ValueError as exc:
        problems.append(f"{path}: {exc}")
        return InterfaceSchema(())


def _enum_member(enum_cls, raw, path: str, problems: list[str]):
    if raw is None:
        return None
    try:
        return enum_cls[raw]
    except KeyError:
        allowed = ", ".join(m.name for m in enum_cls)
        problems.append(f"{path}: expected one of {allowed}, got {raw!r}")
        return None


_EVENT_FIELDS = {
    EventKind.MISSION_REQUEST: (("mission_id", "str", _MISSING), ("duration_ms", "int", None)),
    EventKind.LINK_DEGRADE: (("link_id", "str", _MISSING), ("capacity_mbps", "num", _MISSING)),
    EventKind.LINK_RESTORE: (("link_id", "str", _MISSING),),
    EventKind.NODE_FAIL: (("node_id", "str", _MISSING),),
    EventKind.NODE_RESTORE: (("node_id", "str", _MISSING),),
    EventKind.PRELOAD_PHYSICAL_LOAD: (("node_id", "str", _MISSING), ("load", "dict", _MISSING)),
    EventKind.END: (),
}


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document; raises ScenarioError."""
    problems: list[str] = []
    try:
        raw = json.loads(text, parse_float=Fraction)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"not valid JSON: {exc}"]) from exc

    root = _Obj(raw, "$", problems)
    topo_raw = root.take("topology", "dict", default={})
    models_raw = root.take("models", "list", default=[])
    policy_raw = root.take("policy", "dict", default={})
    dict_raw = root.take("dictionary", "dict", default={})
    missions_raw = root.take("missions", "list", default=[])
    events_raw = root.take("events", "list", default=[])
    config_raw = root.take("config", "dict", default={})
    root.finish()

    # -- topology -----------------------------------------------------------
    tobj = _Obj(topo_raw, "$.topology", problems)
    domains_raw = tobj.take("domains", "list", default=[])
    nodes_raw = tobj.take("nodes", "list", default=[])
    links_raw = tobj.take("links", "list", default=[])
    tobj.finish()

    domains = []
    for i, d in enumerate(domains_raw or []):
        obj = _Obj(d, f"$.topology.domains[{i}]", problems)
        domain_id = obj.take("domain_id", "str")
        partner_id = obj.take("partner_id", "str")
        node_ids = obj.take("nodes", "list", default=[])
        gateway_ids = obj.take("gateways", "list", default=[])
        obj.finish()
        if domain_id and partner_id is not None:
            domains.append(Domain(domain_id, partner_id, node_ids or [], gateway_ids or []))

    nodes = []
    for i, n in enumerate(nodes_raw or []):
        obj = _Obj(n, f"$.topology.nodes[{i}]", problems)
        node_id = obj.take("node_id", "str")
        domain_id = obj.take("domain_id", "str")
        tier = _enum_member(Tier, obj.take("tier", "str"), f"$.topology.nodes[{i}].tier", problems)
        capacity = _resource(obj.take("capacity", "dict", default={}), f"$.topology.nodes[{i}].capacity", problems)
        is_enclave = obj.take("is_enclave", "bool", default=False)
        is_gateway = obj.take("is_gateway", "bool", default=False)
        obj.finish()
        if node_id and domain_id and tier is not None:
            nodes.append(NodeSpec(node_id, domain_id, tier, capacity, bool(is_enclave), bool(is_gateway)))

    links = []
    for i, l in enumerate(links_raw or []):
        obj = _Obj(l, f"$.topology.links[{i}]", problems)
        link_id = obj.take("link_id", "str")
        a = obj.take("endpoint_a", "str")
        b = obj.take("endpoint_b", "str")
        capacity = obj.take("capacity_mbps", "num")
        latency = obj.take("latency_ms", "num")
        obj.finish()
        if link_id and a and b and capacity is not None and latency is not None:
            try:
                links.append(LinkSpec(link_id, a, b, capacity, latency))
            except ValueError as exc:
                problems.append(f"$.topology.links[{i}]: {exc}")

    topology = CoalitionTopology(domains, nodes, links)
    for violation in validate_topology(topology):
        problems.append(f"$.topology: {violation}")

    # -- models / registries ------------------------------------------------
    registries: dict[str, Registry] = {}
    seen_models: set[str] = set()
    for i, m in enumerate(models_raw or []):
        path = f"$.models[{i}]"
        obj = _Obj(m, path, problems)
        model_id = obj.take("model_id", "str")
        partner_id = obj.take("partner_id", "str")
        capabilities = obj.take("capabilities", "list", default=[])
        output_schema = _schema(obj.take("output_schema", "dict", default={}), f"{path}.output_schema", problems)
        input_schemas_raw = obj.take("input_schemas", "dict", default={})
        reqs_raw = obj.take("input_requirements", "list", default=[])
        footprint = _resource(obj.take("footprint", "dict", default={}), f"{path}.footprint", problems)
        sensitivity = _enum_member(
            SensitivityLevel, obj.take("sensitivity", "str"), f"{path}.sensitivity", problems
        )
        tiers_raw = obj.take("allowed_tiers", "list", default=[])
        rate = obj.take("update_rate_hz", "num")
        obj.finish()
        if not (model_id and partner_id and sensitivity is not None and rate is not None):
            continue
        if rate <= 0:
            problems.append(f"{path}.update_rate_hz: must be positive")
            continue
        if model_id in seen_models:
            problems.append(f"{path}: duplicate model_id {model_id}")
            continue
        seen_models.add(model_id)
        tiers = [t for t in (_enum_member(Tier, t, f"{path}.allowed_tiers", problems) for t in tiers_raw or []) if t]
        input_schemas = {
            cap: _schema(sch, f"{path}.input_schemas.{cap}", problems)
            for cap, sch in sorted((input_schemas_raw or {}).items())
        }
        requirements = []
        for j, r in enumerate(reqs_raw or []):
            robj = _Obj(r, f"{path}.input_requirements[{j}]", problems)
            cap = robj.take("capability", "str")
            min_rate = robj.take("min_rate_hz", "num")
            robj.finish()
            if cap and min_rate is not None:
                requirements.append(InputRequirement(cap, min_rate))
        descriptor = ModelDescriptor(
            model_id,
            partner_id,
            capabilities or [],
            output_schema,
            footprint,
            sensitivity,
            tiers,
            rate,
            requirements,
            input_schemas,
        )
        registry = registries.get(partner_id, Registry(partner_id))
        try:
            registries[partner_id] = register(registry, descriptor).registry
        except ValueError as exc:
            problems.append(f"{path}: {exc}")

    # -- policy --------------------------------------------------------------
    pobj = _Obj(policy_raw, "$.policy", problems)
    releasability_raw = pobj.take("releasability", "list", default=[])
    overrides_raw = pobj.take("overrides", "dict", default={})
    pobj.finish()
    releasability: dict[tuple[str, SensitivityLevel], set[str]] = {}
    for i, grant in enumerate(releasability_raw or []):
        obj = _Obj(grant, f"$.policy.releasability[{i}]", problems)
        partner = obj.take("partner_id", "str")
        level = _enum_member(
            SensitivityLevel, obj.take("level", "str"), f"$.policy.releasability[{i}].level", problems
        )
        release_to = obj.take("release_to", "list", default=[])
        obj.finish()
        if partner and level is not None:
            releasability.setdefault((partner, level), set()).update(release_to or [])
    overrides: dict[str, set[str]] = {}
    for model_id, extra in sorted((overrides_raw or {}).items()):
        if not isinstance(extra, list):
            problems.append(f"$.policy.overrides.{model_id}: expected an array of partner ids")
            continue
        if model_id not in seen_models:
            problems.append(f"$.policy.overrides.{model_id}: unknown model")
            continue
        overrides[model_id] = set(extra)
    policy = PolicyContext(releasability, overrides)

    # -- dictionary -----------------------------------------------------------
    dictionary: dict[str, str] = {}
    for semantic, canonical in sorted((dict_raw or {}).items()):
        if not isinstance(canonical, str) or not canonical:
            problems.append(f"$.dictionary.{semantic}: expected a non-empty string")
            continue
        dictionary[semantic] = canonical

    # -- missions --------------------------------------------------------------
    missions: dict[str, MissionProcessModel] = {}
    mission_options: dict[str, MissionOptions] = {}
    for i, m in enumerate(missions_raw or []):
        path = f"$.missions[{i}]"
        obj = _Obj(m, path, problems)
        mission_id = obj.take("mission_id", "str")
        participants = obj.take("participants", "list", default=[])
        caps = obj.take("required_capabilities", "list", default=[])
        interactions_raw = obj.take("interactions", "list", default=[])
        ceiling = _enum_member(
            SensitivityLevel,
            obj.take("classification_ceiling", "str"),
            f"{path}.classification_ceiling",
            problems,
        )
        shared = obj.take("shared_with_physical", "bool", default=False)
        obj.finish()
        if not (mission_id and ceiling is not None):
            continue
        if mission_id in missions:
            problems.append(f"{path}: duplicate mission_id {mission_id}")
            continue
        interactions = []
        for j, inter in enumerate(interactions_raw or []):
            iobj = _Obj(inter, f"{path}.interactions[{j}]", problems)
            producer = iobj.take("producer", "str")
            consumer = iobj.take("consumer", "str")
            min_rate = iobj.take("min_rate_mbps", "num")
            max_latency = iobj.take("max_latency_ms", "num")
            iobj.finish()
            if producer and consumer and min_rate is not None and max_latency is not None:
                interactions.append(Interaction(producer, consumer, min_rate, max_latency))
        pm = MissionProcessModel(mission_id, participants or [], caps or [], interactions, ceiling)
        for problem in pm.problems():
            problems.append(f"{path}: {problem}")
        missions[mission_id] = pm
        mission_options[mission_id] = MissionOptions(bool(shared))

    # -- events ---------------------------------------------------------------
    events: list[ScenarioEvent] = []
    end_times: list[int] = []
    max_at = 0
    requested_missions: set[str] = set()
    for i, e in enumerate(events_raw or []):
        path = f"$.events[{i}]"
        obj = _Obj(e, path, problems)
        at_ms = obj.take("at_ms", "int")
        kind = _enum_member(EventKind, obj.take("kind", "str"), f"{path}.kind", problems)
        if at_ms is None or kind is None:
            obj.finish()
            continue
        if at_ms < 0:
            problems.append(f"{path}.at_ms: must be non-negative")
        payload = {}
        for key, field_kind, default in _EVENT_FIELDS[kind]:
            value = obj.take(key, field_kind, default=default)
            if value is not None and value is not _MISSING:
                payload[key] = value
        obj.finish()
        max_at = max(max_at, at_ms or 0)
        if kind is EventKind.END:
            end_times.append(at_ms)
        if kind is EventKind.MISSION_REQUEST:
            mission_id = payload.get("mission_id")
            if mission_id is not None:
                if mission_id not in missions:
                    problems.append(f"{path}.mission_id: unknown mission {mission_id}")
                elif mission_id in requested_missions:
                    problems.append(f"{path}.mission_id: mission {mission_id} requested twice")
                requested_missions.add(mission_id)
            duration = payload.get("duration_ms")
            if duration is not None and duration <= 0:
                problems.append(f"{path}.duration_ms: must be positive")
        if kind in (EventKind.LINK_DEGRADE, EventKind.LINK_RESTORE):
            link_id = payload.get("link_id")
            if link_id is not None and link_id not in topology.links_by_id:
                problems.append(f"{path}.link_id: unknown link {link_id}")
            if kind is EventKind.LINK_DEGRADE and payload.get("capacity_mbps", Fraction(0)) < 0:
                problems.append(f"{path}.capacity_mbps: must be non-negative")
        if kind in (EventKind.NODE_FAIL, EventKind.NODE_RESTORE, EventKind.PRELOAD_PHYSICAL_LOAD):
            node_id = payload.get("node_id")
            if node_id is not None and node_id not in topology.nodes_by_id:
                problems.append(f"{path}.node_id: unknown node {node_id}")
        if kind is EventKind.PRELOAD_PHYSICAL_LOAD and "load" in payload:
            payload["load"] = _resource(payload["load"], f"{path}.load", problems)
        events.append(ScenarioEvent(at_ms, kind, payload))

    if len(end_times) != 1:
        problems.append("$.events: exactly one END event is required")
    elif end_times[0] < max_at:
        problems.append("$.events: END must be the latest event")

    # -- config ------------------------------------------------------------------
    cobj = _Obj(config_raw, "$.config", problems)
    defaults = SimConfig()
    config = SimConfig(
        report_period_ms=cobj.take("report_period_ms", "int", default=defaults.report_period_ms),
        uplink_threshold_mbps=cobj.take("uplink_threshold_mbps", "num", default=defaults.uplink_threshold_mbps),
        upstream_queue_bound=cobj.take("upstream_queue_bound", "int", default=defaults.upstream_queue_bound),
        report_size_mb=cobj.take("report_size_mb", "num", default=defaults.report_size_mb),
        exact_placement_max_models=cobj.take(
            "exact_placement_max_models", "int", default=defaults.exact_placement_max_models
        ),
        exact_placement_max_nodes=cobj.take(
            "exact_placement_max_nodes", "int", default=defaults.exact_placement_max_nodes
        ),
    )
    cobj.finish()
    if config.report_period_ms is None or config.report_period_ms <= 0:
        problems.append("$.config.report_period_ms: must be positive")

    if problems:
        raise ScenarioError(problems)

    digest = hashlib.sha256(text.encode()).hexdigest()
    # events keep file order; the engine's queue applies (at_ms, insertion) order
    return Scenario(
        topology=topology,
        registries=registries,
        policy=policy,
        dictionary=dictionary,
        missions=missions,
        mission_options=mission_options,
        events=events,
        config=config,
        digest=digest,
    )


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_scenario(handle.read())
