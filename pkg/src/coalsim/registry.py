"""Per-partner model registries: registration, discovery, coalition catalog."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

from .resources import ResourceVector, as_fraction
from .topology import Tier


class SensitivityLevel(enum.IntEnum):
    """Three-level classification lattice, ordered low to high."""

    UNCLASSIFIED = 0
    RESTRICTED = 1
    SECRET = 2


class RegistryError(ValueError):
    """Registration rejected: partner mismatch or descriptor invariant violation."""


@dataclass(frozen=True)
class SchemaField:
    name: str
    semantic_type: str
    required: bool = True


@dataclass(frozen=True)
class InterfaceSchema:
    fields: tuple[SchemaField, ...]

    def __init__(self, fields: Iterable[SchemaField]):
        object.__setattr__(self, "fields", tuple(fields))
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise ValueError("schema field names must be unique")

    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def required_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields if f.required)


EMPTY_SCHEMA = InterfaceSchema(())


@dataclass(frozen=True)
class InputRequirement:
    capability: str
    min_rate_hz: Fraction

    def __post_init__(self):
        object.__setattr__(self, "min_rate_hz", as_fraction(self.min_rate_hz))


@dataclass(frozen=True)
class ModelDescriptor:
    """What a registered DT model offers and needs.

    input_schemas states, per consumed capability, the fields the model
    requires from that producer; capabilities without an entry mediate
    trivially.
    """

    model_id: str
    partner_id: str
    capabilities: frozenset[str]
    output_schema: InterfaceSchema
    input_requirements: tuple[InputRequirement, ...]
    footprint: ResourceVector
    sensitivity: SensitivityLevel
    allowed_tiers: frozenset[Tier]
    update_rate_hz: Fraction
    input_schemas: Mapping[str, InterfaceSchema] = field(default_factory=dict)

    def __init__(
        self,
        model_id: str,
        partner_id: str,
        capabilities: Iterable[str],
        output_schema: InterfaceSchema,
        footprint: ResourceVector,
        sensitivity: SensitivityLevel,
        allowed_tiers: Iterable[Tier],
        update_rate_hz,
        input_requirements: Iterable[InputRequirement] = (),
        input_schemas: Mapping[str, InterfaceSchema] | None = None,
    ):
        object.__setattr__(self, "model_id", model_id)
        object.__setattr__(self, "partner_id", partner_id)
        object.__setattr__(self, "capabilities", frozenset(capabilities))
        object.__setattr__(self, "output_schema", output_schema)
        object.__setattr__(self, "input_requirements", tuple(input_requirements))
        object.__setattr__(self, "footprint", footprint)
        object.__setattr__(self, "sensitivity", sensitivity)
        object.__setattr__(self, "allowed_tiers", frozenset(allowed_tiers))
        object.__setattr__(self, "update_rate_hz", as_fraction(update_rate_hz))
        object.__setattr__(self, "input_schemas", dict(input_schemas or {}))

    def problems(self) -> list[str]:
        """Invariant violations preventing registration."""
        out = []
        if not self.capabilities:
            out.append("capabilities must be non-empty")
        if not self.allowed_tiers:
            out.append("allowed_tiers must be non-empty")
        if self.sensitivity is SensitivityLevel.SECRET and self.allowed_tiers - {Tier.CLOUD}:
            out.append("secret models are enclave-only (allowed_tiers must be {CLOUD})")
        if self.update_rate_hz <= 0:
            out.append("update_rate_hz must be positive")
        for req in self.input_requirements:
            if req.min_rate_hz <= 0:
                out.append(f"input requirement {req.capability}: min_rate_hz must be positive")
        return out


@dataclass(frozen=True)
class Registry:
    """One partner's registry; operations return updated copies."""

    partner_id: str
    descriptors: Mapping[str, ModelDescriptor] = field(default_factory=dict)

    def __init__(self, partner_id: str, descriptors: Mapping[str, ModelDescriptor] | None = None):
        object.__setattr__(self, "partner_id", partner_id)
        object.__setattr__(self, "descriptors", dict(descriptors or {}))

    def __len__(self) -> int:
        return len(self.descriptors)

    def get(self, model_id: str) -> Optional[ModelDescriptor]:
        return self.descriptors.get(model_id)


@dataclass(frozen=True)
class RegisterResult:
    registry: Registry
    replaced: bool


def register(reg: Registry, descriptor: ModelDescriptor) -> RegisterResult:
    """Add or replace a descriptor; re-registration of a model_id replaces."""
    if descriptor.partner_id != reg.partner_id:
        raise RegistryError(
            f"model {descriptor.model_id} belongs to {descriptor.partner_id}, registry is {reg.partner_id}"
        )
    problems = descriptor.problems()
    if problems:
        raise RegistryError(f"model {descriptor.model_id}: " + "; ".join(problems))
    updated = dict(reg.descriptors)
    replaced = descriptor.model_id in updated
    updated[descriptor.model_id] = descriptor
    return RegisterResult(Registry(reg.partner_id, updated), replaced)


def deregister(reg: Registry, model_id: str) -> Registry:
    if model_id not in reg.descriptors:
        raise RegistryError(f"model {model_id} is not registered with {reg.partner_id}")
    updated = dict(reg.descriptors)
    del updated[model_id]
    return Registry(reg.partner_id, updated)


def query(reg: Registry, needed_capability: str, max_sensitivity: SensitivityLevel) -> list[ModelDescriptor]:
    """Descriptors offering the capability at or below the sensitivity ceiling.

    Sorted by (footprint.compute ascending, model_id).
    """
    hits = [
        d
        for d in reg.descriptors.values()
        if needed_capability in d.capabilities and d.sensitivity <= max_sensitivity
    ]
    hits.sort(key=lambda d: (d.footprint.compute, d.model_id))
    return hits


def coalition_catalog(
    registries: Iterable[Registry],
    requester_partner: str | None,
    policy,
) -> list[ModelDescriptor]:
    """Union of all registries' contents visible to the requesting partner.

    requester_partner None means the coordinator view: no releasability
    filter (consumption is gated later, at selection).  Ordered by
    (partner_id, model_id).
    """
    from .federation import check_releasable  # cycle-free at call time

    seen_partners: set[str] = set()
    out: list[ModelDescriptor] = []
    for reg in registries:
        if reg.partner_id in seen_partners:
            raise RegistryError(f"duplicate registry for partner {reg.partner_id}")
        seen_partners.add(reg.partner_id)
        for descriptor in reg.descriptors.values():
            if requester_partner is None or check_releasable(policy, descriptor, {requester_partner}):
                out.append(descriptor)
    out.sort(key=lambda d: (d.partner_id, d.model_id))
    return out
