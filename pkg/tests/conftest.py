import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).parent
sys.path.insert(0, str(TESTS_DIR))

from coalsim.registry import (
    InterfaceSchema,
    ModelDescriptor,
    Registry,
    SchemaField,
    SensitivityLevel,
)
from coalsim.resources import ResourceVector
from coalsim.topology import CoalitionTopology, Domain, LinkSpec, NodeSpec, Tier

SCENARIOS = TESTS_DIR.parent / "scenarios"


def rv(compute=0, memory=0, storage=0, bandwidth=0) -> ResourceVector:
    return ResourceVector(compute, memory, storage, bandwidth)


def make_node(node_id, domain_id, tier=Tier.TACTICAL, capacity=None, enclave=False, gateway=False):
    return NodeSpec(node_id, domain_id, tier, capacity or rv(8, 8192, 10000, 100), enclave, gateway)


def triangle_topo(ab=10, bc=4, ac=5):
    """Single-domain triangle used by the widest-path examples."""
    nodes = [
        make_node("A", "d1", gateway=True),
        make_node("B", "d1"),
        make_node("C", "d1"),
    ]
    links = [
        LinkSpec("l-ab", "A", "B", ab, 1),
        LinkSpec("l-bc", "B", "C", bc, 1),
        LinkSpec("l-ac", "A", "C", ac, 1),
    ]
    domains = [Domain("d1", "p1", ["A", "B", "C"], ["A"])]
    return CoalitionTopology(domains, nodes, links)


def two_domain_topo(inter_cap=40, a_caps=None, b_caps=None):
    """alpha {a1, ag} -- l-x -- {bg, b1} bravo."""
    a_caps = a_caps or {}
    b_caps = b_caps or {}
    nodes = [
        make_node("a1", "alpha", capacity=a_caps.get("a1")),
        make_node("ag", "alpha", capacity=a_caps.get("ag"), gateway=True),
        make_node("b1", "bravo", capacity=b_caps.get("b1")),
        make_node("bg", "bravo", capacity=b_caps.get("bg"), gateway=True),
    ]
    links = [
        LinkSpec("l-a", "a1", "ag", 80, 2),
        LinkSpec("l-x", "ag", "bg", inter_cap, 10),
        LinkSpec("l-b", "b1", "bg", 80, 2),
    ]
    domains = [
        Domain("alpha", "p1", ["a1", "ag"], ["ag"]),
        Domain("bravo", "p2", ["b1", "bg"], ["bg"]),
    ]
    return CoalitionTopology(domains, nodes, links)


def schema(*fields) -> InterfaceSchema:
    return InterfaceSchema([SchemaField(name, semantic, required) for name, semantic, required in fields])


def descriptor(
    model_id="m1",
    partner_id="p1",
    capabilities=("cap-a",),
    compute=1,
    sensitivity=SensitivityLevel.UNCLASSIFIED,
    tiers=(Tier.EDGE, Tier.TACTICAL, Tier.CLOUD),
    update_rate_hz=1,
    output_schema=None,
    input_schemas=None,
    footprint=None,
) -> ModelDescriptor:
    return ModelDescriptor(
        model_id,
        partner_id,
        capabilities,
        output_schema or schema(("out", "generic", True)),
        footprint or rv(compute, 128, 128, 1),
        sensitivity,
        tiers,
        update_rate_hz,
        input_schemas=input_schemas,
    )


@pytest.fixture
def registry_p1():
    return Registry("p1")
