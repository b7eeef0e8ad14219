import random
from fractions import Fraction

import pytest

from coalsim.resources import ResourceVector
from coalsim.slicing import (
    GrantState,
    SliceFlow,
    SliceRequest,
    SliceTask,
    SlicingPlane,
    TaskFlow,
    audit,
    dfc_allocate,
    dfc_react,
    gc_admit,
    ie_report,
)
from coalsim.topology import CoalitionTopology, Domain, LinkSpec, Tier, UNBOUNDED

from conftest import make_node, rv, two_domain_topo
from oracles import fairness_violations, waterfill_oracle


def fresh_plane(topo=None):
    return SlicingPlane(topo or two_domain_topo())


def request(slice_id="s1", demand=None, flows=(), pinned=None):
    return SliceRequest(slice_id, "m", demand or {"alpha": rv(1, 1, 1, 1)}, flows, pinned_nodes=pinned)


# -- ie_report ---------------------------------------------------------------


def test_ie_report_single_node_sum():
    topo = CoalitionTopology(
        [Domain("d1", "p1", ["n1"], ["n1"])],
        [make_node("n1", "d1", capacity=rv(4, 4, 4, 4), gateway=True)],
        [],
    )
    agg = ie_report(topo, {"n1": rv(4, 4, 4, 4)}, {}, "d1")
    assert agg.free_totals == rv(4, 4, 4, 4)


def test_ie_report_componentwise_sum():
    topo = two_domain_topo()
    free = {"a1": rv(1, 1, 1, 1), "ag": rv(2, 2, 2, 2), "b1": rv(0), "bg": rv(0)}
    agg = ie_report(topo, free, {}, "alpha")
    assert agg.free_totals == rv(3, 3, 3, 3)


def test_ie_report_gateway_pair_bottleneck_picks_widest():
    nodes = [
        make_node("g1", "d1", gateway=True),
        make_node("g2", "d1", gateway=True),
        make_node("mid", "d1"),
    ]
    links = [
        LinkSpec("direct", "g1", "g2", 4, 1),
        LinkSpec("via-a", "g1", "mid", 9, 1),
        LinkSpec("via-b", "mid", "g2", 5, 1),
    ]
    topo = CoalitionTopology([Domain("d1", "p1", ["g1", "g2", "mid"], ["g1", "g2"])], nodes, links)
    residual = {"direct": Fraction(4), "via-a": Fraction(9), "via-b": Fraction(5)}
    agg = ie_report(topo, {n.node_id: n.capacity for n in nodes}, residual, "d1")
    assert agg.gateway_bottlenecks[("g1", "g2")] == 5


def test_ie_report_unknown_domain():
    with pytest.raises(KeyError):
        ie_report(two_domain_topo(), {}, {}, "nowhere")


def test_ie_report_is_pure():
    plane = fresh_plane()
    first = plane.aggregate("alpha")
    second = plane.aggregate("alpha")
    assert first == second


# -- gc_admit -----------------------------------------------------------------


def admit(plane, req):
    aggregates = [plane.aggregate(d) for d in req.involved_domains()]
    return gc_admit(aggregates, plane.interlink_views(), req, plane.topo)


def test_gc_zero_demand_admits():
    plane = fresh_plane()
    decision = admit(plane, request(demand={"alpha": rv()}))
    assert decision.admit


def test_gc_rejects_on_component_excess():
    plane = fresh_plane()
    decision = admit(plane, request(demand={"alpha": rv(1000, 0, 0, 0)}))
    assert not decision.admit
    assert decision.reason == "domain capacity: compute"


def test_gc_rejects_flow_beyond_interlink_residual():
    plane = fresh_plane(two_domain_topo(inter_cap=5))
    req = request(
        demand={"alpha": rv(), "bravo": rv()},
        flows=[SliceFlow("alpha", "bravo", 6)],
    )
    decision = admit(plane, req)
    assert not decision.admit
    assert decision.reason == "inter-domain link bandwidth"


def test_gc_rejects_missing_interlink():
    nodes = [make_node("a1", "alpha", gateway=True), make_node("b1", "bravo", gateway=True)]
    topo = CoalitionTopology(
        [Domain("alpha", "p1", ["a1"], ["a1"]), Domain("bravo", "p2", ["b1"], ["b1"])], nodes, []
    )
    plane = fresh_plane(topo)
    decision = admit(plane, request(demand={"alpha": rv(), "bravo": rv()}, flows=[SliceFlow("alpha", "bravo", 1)]))
    assert not decision.admit
    assert decision.reason == "no inter-domain link"


def test_gc_missing_aggregate_is_an_error():
    plane = fresh_plane()
    req = request(demand={"alpha": rv(), "bravo": rv()})
    with pytest.raises(KeyError):
        gc_admit([plane.aggregate("alpha")], plane.interlink_views(), req, plane.topo)


def multi_gateway_topo(thin=2):
    """bravo has two gateways joined by a thin internal link."""
    nodes = [
        make_node("a1", "alpha"),
        make_node("ag", "alpha", gateway=True),
        make_node("bg1", "bravo", gateway=True),
        make_node("bg2", "bravo", gateway=True),
        make_node("b1", "bravo"),
    ]
    links = [
        LinkSpec("l-a", "a1", "ag", 80, 2),
        LinkSpec("l-x", "ag", "bg2", 50, 10),
        LinkSpec("l-thin", "bg1", "bg2", thin, 3),
        LinkSpec("l-b", "b1", "bg1", 80, 2),
    ]
    domains = [
        Domain("alpha", "p1", ["a1", "ag"], ["ag"]),
        Domain("bravo", "p2", ["bg1", "bg2", "b1"], ["bg1", "bg2"]),
    ]
    return CoalitionTopology(domains, nodes, links)


def test_gc_rejects_on_endpoint_gateway_bottleneck():
    # trunk enters bravo at bg2 but the slice anchor gateway is bg1; the
    # thin bg1-bg2 link cannot carry the flow
    plane = fresh_plane(multi_gateway_topo(thin=2))
    req = request(demand={"alpha": rv(), "bravo": rv()}, flows=[SliceFlow("alpha", "bravo", 4)])
    decision = admit(plane, req)
    assert not decision.admit
    assert decision.reason == "gateway bottleneck"


def test_gc_admits_when_gateway_pair_is_wide_enough():
    plane = fresh_plane(multi_gateway_topo(thin=20))
    req = request(demand={"alpha": rv(), "bravo": rv()}, flows=[SliceFlow("alpha", "bravo", 4)])
    assert admit(plane, req).admit


# -- dc_reserve ------------------------------------------------------------------


def test_dc_reserve_single_bin_fit():
    plane = fresh_plane()
    outcome = plane.dc_reserve("alpha", "s1", rv(4, 100, 100, 10))
    assert outcome.accepted
    # first fit over descending free compute: both nodes tie at 8, a1 wins by id
    assert dict(outcome.node_reservation) == {"a1": rv(4, 100, 100, 10)}


def test_dc_reserve_fragmentation_reject():
    caps = {"a1": rv(4, 4096, 4096, 50), "ag": rv(4, 4096, 4096, 50)}
    plane = fresh_plane(two_domain_topo(a_caps=caps))
    outcome = plane.dc_reserve("alpha", "s1", rv(6, 100, 100, 10))
    assert not outcome.accepted
    assert outcome.reason == "fragmentation"


def test_dc_reserve_reject_leaves_state_untouched():
    plane = fresh_plane()
    before = plane.snapshot()
    outcome = plane.dc_reserve("alpha", "s1", rv(1000, 0, 0, 0))
    assert not outcome.accepted
    assert plane.snapshot() == before


def test_dc_reserve_duplicate_slice_is_an_error():
    plane = fresh_plane()
    assert plane.dc_reserve("alpha", "s1", rv(1, 1, 1, 1)).accepted
    with pytest.raises(ValueError, match="already reserved"):
        plane.dc_reserve("alpha", "s1", rv(1, 1, 1, 1))


def test_dc_reserve_pinned_nodes():
    plane = fresh_plane()
    outcome = plane.dc_reserve("alpha", "s1", rv(2, 2, 2, 2), pinned={"ag": rv(2, 2, 2, 2)})
    assert outcome.accepted
    assert dict(outcome.node_reservation) == {"ag": rv(2, 2, 2, 2)}
    bad = plane.dc_reserve("alpha", "s2", rv(100, 0, 0, 0), pinned={"ag": rv(100, 0, 0, 0)})
    assert not bad.accepted and bad.reason == "capacity"


# -- two_phase_admit ----------------------------------------------------------------


def test_single_domain_commit():
    plane = fresh_plane()
    result = plane.two_phase_admit(request())
    assert result.outcome == "COMMITTED"
    assert result.grant.state is GrantState.COMMITTED
    assert audit(plane) == []


def test_duplicate_slice_id_globally_rejected():
    plane = fresh_plane()
    plane.two_phase_admit(request())
    with pytest.raises(ValueError, match="duplicate slice_id"):
        plane.two_phase_admit(request())


def test_abort_on_fragmented_second_domain_restores_snapshot():
    caps = {"b1": rv(4, 4096, 4096, 50), "bg": rv(4, 4096, 4096, 50)}
    plane = fresh_plane(two_domain_topo(b_caps=caps))
    before = plane.snapshot()
    req = request(demand={"alpha": rv(2, 10, 10, 2), "bravo": rv(6, 10, 10, 2)})
    result = plane.two_phase_admit(req)
    assert result.outcome == "ABORTED"
    assert result.rejecting_domain == "bravo"
    assert result.reason == "fragmentation"
    assert result.grant.state is GrantState.ABORTED
    assert plane.snapshot() == before
    assert audit(plane) == []


def test_gc_rejected_request_creates_no_grant():
    plane = fresh_plane()
    result = plane.two_phase_admit(request(demand={"alpha": rv(1000, 0, 0, 0)}))
    assert result.outcome == "REJECTED"
    assert result.grant is None
    assert "s1" not in plane.grants


def test_committed_cross_domain_flow_reserves_trunk():
    plane = fresh_plane()
    req = request(
        demand={"alpha": rv(1, 1, 1, 1), "bravo": rv(1, 1, 1, 1)},
        flows=[SliceFlow("alpha", "bravo", 10)],
    )
    result = plane.two_phase_admit(req)
    assert result.outcome == "COMMITTED"
    reserved = result.grant.reserved_paths[0]
    assert reserved.links == ("l-x",)
    assert plane.link_residual("l-x") == 30
    assert audit(plane) == []


def test_gc_optimism_soundness_on_random_states():
    rng = random.Random(12)
    rejects_seen = 0
    for _ in range(250):
        inter_cap = rng.randint(0, 30)
        caps = {
            name: rv(rng.randint(0, 8), 4096, 4096, rng.randint(0, 80))
            for name in ("a1", "ag", "b1", "bg")
        }
        plane = fresh_plane(
            two_domain_topo(inter_cap=inter_cap, a_caps={k: caps[k] for k in ("a1", "ag")}, b_caps={k: caps[k] for k in ("b1", "bg")})
        )
        demand = {
            "alpha": rv(rng.randint(0, 12), 0, 0, rng.randint(0, 40)),
            "bravo": rv(rng.randint(0, 12), 0, 0, rng.randint(0, 40)),
        }
        flows = []
        if rng.random() < 0.7:
            flows.append(SliceFlow("alpha", "bravo", rng.randint(1, 40)))
        req = request(demand=demand, flows=flows)
        decision = admit(plane, req)
        if decision.admit:
            continue
        rejects_seen += 1
        result = plane.two_phase_admit(req)
        assert result.outcome in ("REJECTED", "ABORTED"), decision
    assert rejects_seen >= 30


# -- dfc ----------------------------------------------------------------------------


def flow(fid, links, desired):
    return TaskFlow(fid, "x", "y", desired, links)


def test_dfc_symmetric_split():
    rates = dfc_allocate([flow("f1", ("L",), 10), flow("f2", ("L",), 10)], {"L": Fraction(10)})
    assert rates == {"f1": 5, "f2": 5}


def test_dfc_two_links_fixture():
    rates = dfc_allocate(
        [flow("a", ("L1",), 100), flow("b", ("L1",), 100), flow("c", ("L2",), 100)],
        {"L1": Fraction(10), "L2": Fraction(8)},
    )
    assert rates == {"a": 5, "b": 5, "c": 8}


def test_dfc_demand_cap():
    rates = dfc_allocate([flow("f", ("L",), 3)], {"L": Fraction(10)})
    assert rates == {"f": 3}


def test_dfc_unknown_link():
    with pytest.raises(KeyError):
        dfc_allocate([flow("f", ("missing",), 1)], {})


def test_dfc_react_is_recomputation():
    flows = [flow("a", ("L1",), 100), flow("b", ("L1",), 100), flow("c", ("L2",), 100)]
    caps = {"L1": Fraction(10), "L2": Fraction(8)}
    assert dfc_react(flows, caps) == dfc_allocate(flows, caps)
    degraded = dict(caps, L1=Fraction(6))
    assert dfc_react(flows, degraded) == {"a": 3, "b": 3, "c": 8}


def test_dfc_zero_capacity_link():
    rates = dfc_allocate(
        [flow("a", ("L1",), 5), flow("b", ("L2",), 5)], {"L1": Fraction(0), "L2": Fraction(9)}
    )
    assert rates == {"a": 0, "b": 5}


def test_dfc_linkless_flow_gets_demand():
    rates = dfc_allocate([flow("free", (), 7)], {})
    assert rates == {"free": 7}


def test_dfc_matches_waterfilling_oracle_and_predicate():
    rng = random.Random(5)
    for trial in range(60):
        n_links = rng.randint(1, 4)
        caps = {f"L{i}": Fraction(rng.randint(0, 20)) for i in range(n_links)}
        flows = []
        for i in range(rng.randint(1, 4)):
            n_path = rng.randint(0, n_links)
            links = tuple(rng.sample(sorted(caps), n_path))
            flows.append(flow(f"f{i}", links, Fraction(rng.randint(1, 25))))
        rates = dfc_allocate(flows, caps)
        oracle = waterfill_oracle([(f.flow_id, f.links, f.desired_rate_mbps) for f in flows], caps)
        for f in flows:
            assert abs(rates[f.flow_id] - oracle[f.flow_id]) <= Fraction(1, 10**9), f"trial {trial}"
        triples = [(f.flow_id, f.links, f.desired_rate_mbps) for f in flows]
        assert fairness_violations(triples, caps, rates) == []


# -- tasks and termination ------------------------------------------------------------


def committed_plane_with_flow():
    plane = fresh_plane()
    req = request(
        demand={"alpha": rv(2, 10, 10, 2), "bravo": rv(2, 10, 10, 2)},
        flows=[SliceFlow("alpha", "bravo", 10)],
    )
    result = plane.two_phase_admit(req)
    assert result.outcome == "COMMITTED"
    return plane, result.grant


def test_zero_demand_task_accepts():
    plane, grant = committed_plane_with_flow()
    node = sorted(grant.per_domain_reservation["alpha"])[0]
    accepted, reason = plane.sc_accept_task(SliceTask("t0", "s1", node, rv()))
    assert accepted


def test_task_demand_beyond_node_reservation_rejects():
    plane, grant = committed_plane_with_flow()
    node = sorted(grant.per_domain_reservation["alpha"])[0]
    accepted, reason = plane.sc_accept_task(SliceTask("t0", "s1", node, rv(3, 0, 0, 0)))
    assert not accepted
    assert reason == "node reservation"


def test_task_outside_slice_nodes_is_an_error():
    plane = fresh_plane()
    result = plane.two_phase_admit(request(demand={"alpha": rv(1, 1, 1, 1)}))
    assert result.outcome == "COMMITTED"
    assert result.grant.reserved_nodes() == {"a1"}
    with pytest.raises(ValueError, match="outside the slice"):
        plane.sc_accept_task(SliceTask("t0", "s1", "bg", rv()))


def test_saturated_link_still_accepts_via_maxmin_shrink():
    plane, grant = committed_plane_with_flow()
    reserved = grant.reserved_paths[0]
    node = reserved.path[0]
    first = SliceTask("t1", "s1", node, rv(), (TaskFlow("fl-1", reserved.path[0], reserved.path[-1], 10, reserved.links),))
    assert plane.sc_accept_task(first)[0]
    sc = plane.slice_controllers["s1"]
    assert sc.allocation["fl-1"] == 10
    second = SliceTask("t2", "s1", node, rv(), (TaskFlow("fl-2", reserved.path[0], reserved.path[-1], 10, reserved.links),))
    assert plane.sc_accept_task(second)[0]
    assert sc.allocation == {"fl-1": 5, "fl-2": 5}


def test_terminate_restores_free_resources_exactly():
    plane = fresh_plane()
    before = plane.snapshot()
    result = plane.two_phase_admit(
        request(demand={"alpha": rv(2, 10, 10, 2), "bravo": rv(2, 10, 10, 2)}, flows=[SliceFlow("alpha", "bravo", 10)])
    )
    assert result.outcome == "COMMITTED"
    assert plane.snapshot() != before
    grant = plane.terminate_slice("s1")
    assert grant.state is GrantState.TERMINATED
    assert plane.snapshot() == before
    assert audit(plane) == []


def test_double_terminate_is_idempotent():
    plane, _ = committed_plane_with_flow()
    first = plane.terminate_slice("s1")
    second = plane.terminate_slice("s1")
    assert first is second
    assert second.state is GrantState.TERMINATED


def test_terminate_pending_or_aborted_is_an_error():
    caps = {"b1": rv(1, 1, 1, 1), "bg": rv(1, 1, 1, 1)}
    plane = fresh_plane(two_domain_topo(b_caps=caps))
    result = plane.two_phase_admit(request(demand={"alpha": rv(), "bravo": rv(4, 0, 0, 0)}))
    assert result.outcome == "ABORTED"
    with pytest.raises(ValueError, match="cannot terminate"):
        plane.terminate_slice("s1")


def test_terminate_cancels_tasks_before_release():
    lines = []
    plane, grant = committed_plane_with_flow()
    plane.set_log(lambda kind, fields: lines.append(kind))
    node = sorted(grant.per_domain_reservation["alpha"])[0]
    for i in range(3):
        assert plane.sc_accept_task(SliceTask(f"t{i}", "s1", node, rv()))[0]
    plane.terminate_slice("s1")
    cancel_positions = [i for i, k in enumerate(lines) if k == "TASK_CANCEL"]
    release_positions = [i for i, k in enumerate(lines) if k == "DC_RELEASE"]
    assert len(cancel_positions) == 3
    assert max(cancel_positions) < min(release_positions)


# -- degradation scaling ------------------------------------------------------------


def test_degraded_link_scales_reservations_proportionally():
    plane, grant = committed_plane_with_flow()
    assert plane.effective_link_rates("l-x") == {"s1": 10}
    plane.set_link_capacity("l-x", 4)
    assert plane.effective_link_rates("l-x") == {"s1": 4}
    assert plane.link_residual("l-x") == 0
    assert audit(plane) == []
    plane.restore_link("l-x")
    assert plane.effective_link_rates("l-x") == {"s1": 10}


def test_audit_flags_corrupted_state():
    plane = fresh_plane()
    plane.two_phase_admit(request())
    dc = plane.domain_controllers["alpha"]
    node = sorted(dc.node_reservations["s1"])[0]
    dc.node_reservations["s1"][node] = rv(10**6, 0, 0, 0)
    violations = audit(plane)
    assert any(v.code == "node-overcommit" and v.subject == node for v in violations)
