import random
from fractions import Fraction

import pytest

from coalsim.topology import (
    UNBOUNDED,
    CoalitionTopology,
    Domain,
    LinkSpec,
    Tier,
    validate_topology,
    widest_path,
)

from conftest import make_node, rv, triangle_topo, two_domain_topo
from oracles import widest_oracle


def codes(violations):
    return sorted(v.code for v in violations)


def test_minimal_valid_topology():
    topo = CoalitionTopology(
        [Domain("d1", "p1", ["n1"], ["n1"])],
        [make_node("n1", "d1", tier=Tier.CLOUD, gateway=True)],
        [],
    )
    assert validate_topology(topo) == []


def test_enclave_must_be_cloud():
    topo = CoalitionTopology(
        [Domain("d1", "p1", ["n1"], ["n1"])],
        [make_node("n1", "d1", tier=Tier.EDGE, enclave=True, gateway=True)],
        [],
    )
    report = validate_topology(topo)
    assert codes(report) == ["enclave-tier"]
    assert "enclave must be cloud tier" in str(report[0])


def test_interdomain_link_requires_gateways():
    nodes = [
        make_node("a1", "alpha"),
        make_node("ag", "alpha", gateway=True),
        make_node("b1", "bravo"),
        make_node("bg", "bravo", gateway=True),
    ]
    links = [
        LinkSpec("l1", "a1", "ag", 10, 1),
        LinkSpec("l2", "b1", "bg", 10, 1),
        LinkSpec("bad", "a1", "b1", 10, 1),
    ]
    domains = [Domain("alpha", "p1", ["a1", "ag"], ["ag"]), Domain("bravo", "p2", ["b1", "bg"], ["bg"])]
    report = validate_topology(CoalitionTopology(domains, nodes, links))
    assert codes(report) == ["interdomain-gateways"]
    assert report[0].subject == "bad"


def test_duplicate_and_orphan_nodes_reported():
    nodes = [make_node("n1", "d1", gateway=True), make_node("n1", "d1"), make_node("n2", "d1")]
    domains = [Domain("d1", "p1", ["n1"], ["n1"])]
    report = validate_topology(CoalitionTopology(domains, nodes, []))
    assert "duplicate-node" in codes(report)
    assert "orphan-node" in codes(report)


def test_disconnected_domain_reported():
    nodes = [make_node("n1", "d1", gateway=True), make_node("n2", "d1")]
    domains = [Domain("d1", "p1", ["n1", "n2"], ["n1"])]
    report = validate_topology(CoalitionTopology(domains, nodes, []))
    assert codes(report) == ["disconnected-domain"]


def test_validation_is_pure_and_idempotent():
    topo = two_domain_topo()
    first = validate_topology(topo)
    second = validate_topology(topo)
    assert first == second == []


# -- widest path -------------------------------------------------------------


def residuals(topo):
    return {l.link_id: l.capacity_mbps for l in topo.links}


def test_widest_path_degenerate():
    topo = triangle_topo()
    found = widest_path(topo, residuals(topo), "A", "A")
    assert found.path == ("A",)
    assert found.bottleneck_mbps == UNBOUNDED


def test_widest_path_triangle_example():
    topo = triangle_topo(ab=10, bc=4, ac=5)
    found = widest_path(topo, residuals(topo), "A", "C")
    assert found.path == ("A", "C")
    assert found.bottleneck_mbps == 5


def test_widest_path_disconnected():
    topo = CoalitionTopology(
        [Domain("d1", "p1", ["n1", "n2"], ["n1"])],
        [make_node("n1", "d1", gateway=True), make_node("n2", "d1")],
        [],
    )
    assert widest_path(topo, {}, "n1", "n2") is None


def test_widest_path_unknown_node():
    topo = triangle_topo()
    with pytest.raises(KeyError):
        widest_path(topo, residuals(topo), "A", "nope")


def test_widest_path_ignores_links_missing_from_residual():
    topo = triangle_topo(ab=10, bc=10, ac=5)
    partial = {"l-ab": Fraction(10), "l-ac": Fraction(5)}
    found = widest_path(topo, partial, "B", "C")
    assert found.path == ("B", "A", "C")
    assert found.bottleneck_mbps == 5


def random_connected_topo(rng, n_nodes):
    node_ids = [f"n{i}" for i in range(n_nodes)]
    nodes = [make_node(nid, "d1", gateway=(nid == "n0")) for nid in node_ids]
    links = []
    for i in range(1, n_nodes):
        j = rng.randrange(i)
        links.append(LinkSpec(f"l{len(links)}", node_ids[i], node_ids[j], rng.randint(1, 20), 1))
    extra = rng.randint(0, n_nodes)
    for _ in range(extra):
        i, j = rng.sample(range(n_nodes), 2)
        links.append(LinkSpec(f"l{len(links)}", node_ids[i], node_ids[j], rng.randint(1, 20), 1))
    domains = [Domain("d1", "p1", node_ids, ["n0"])]
    return CoalitionTopology(domains, nodes, links)


def test_widest_path_matches_exhaustive_oracle():
    rng = random.Random(8)
    for trial in range(120):
        topo = random_connected_topo(rng, rng.randint(2, 7))
        res = residuals(topo)
        names = sorted(topo.nodes_by_id)
        src, dst = rng.sample(names, 2)
        expected = widest_oracle(topo, res, src, dst)
        found = widest_path(topo, res, src, dst)
        if expected is None:
            assert found is None
        else:
            assert (found.path, found.bottleneck_mbps) == expected, f"trial {trial}"
