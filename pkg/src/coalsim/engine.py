"""Deterministic discrete-event engine.

Owns global state, orders all events by (time, insertion), injects faults,
runs the auditor after every processed event, and collects the run report.
Event processing is a pure fold over the event sequence: no wall clock, no
unseeded randomness; identical (scenario, seed) yields byte-identical
output.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

from . import __version__
from .federation import FederationError, federate
from .mission import InteractionEdge, MissionInstance, MissionStatus
from .resources import ResourceVector, format_quantity
from .scenario import EventKind, Scenario, ScenarioEvent
from .slicing import (
    GrantState,
    SliceFlow,
    SliceRequest,
    SliceTask,
    SlicingPlane,
    TaskFlow,
    audit,
)


class SimulationError(RuntimeError):
    """A run aborted: auditor violation or a scenario-level runtime error."""


@dataclass(frozen=True)
class _Internal:
    kind: str
    mission_id: str
    payload: tuple = ()


@dataclass
class MissionRecord:
    mission_id: str
    status: str = "PENDING"
    stage: str | None = None
    reason: str | None = None
    plan: Any = None
    slice_id: str | None = None
    instance: MissionInstance | None = None
    flow_of_interaction: dict[int, str] = field(default_factory=dict)
    flow_pos_of_interaction: dict[int, int] = field(default_factory=dict)
    anchor_node: str | None = None
    metrics: dict | None = None


@dataclass
class SimState:
    scenario: Scenario
    seed: int
    plane: SlicingPlane
    now: int = 0
    log_lines: list[str] = field(default_factory=list)
    missions: dict[str, MissionRecord] = field(default_factory=dict)
    attempted: int = 0
    committed: int = 0
    aborted: int = 0
    rejected_gc: int = 0
    abort_reasons: dict[str, int] = field(default_factory=dict)
    gc_reject_reasons: dict[str, int] = field(default_factory=dict)
    planning_rejects: dict[str, int] = field(default_factory=dict)
    fairness: list[dict] = field(default_factory=list)


class Engine:
    def __init__(self, scenario: Scenario, seed: int = 0):
        plane = SlicingPlane(scenario.topology)
        self.state = SimState(scenario, seed, plane)
        plane.set_log(self._sink)
        self._queue: list[tuple[int, int, object]] = []
        self._seq = 0
        self._ended = False

    # -- logging ------------------------------------------------------------

    def _sink(self, kind: str, fields):
        parts = " ".join(f"{k}={v}" for k, v in fields)
        self.state.log_lines.append(f"t={self.state.now} {kind} {parts}".rstrip())

    def log(self, kind: str, **fields):
        self._sink(kind, list(fields.items()))

    # -- queue ----------------------------------------------------------------

    def _push(self, at_ms: int, item):
        heapq.heappush(self._queue, (at_ms, self._seq, item))
        self._seq += 1

    # -- main loop --------------------------------------------------------------

    def run(self) -> "RunResult":
        for event in self.state.scenario.events:
            self._push(event.at_ms, event)
        while self._queue and not self._ended:
            at_ms, _, item = heapq.heappop(self._queue)
            self.state.now = at_ms
            if isinstance(item, ScenarioEvent):
                self._process_scenario(item)
            else:
                self._process_internal(item)
            violations = self._audit()
            if violations:
                detail = "; ".join(str(v) for v in violations)
                raise SimulationError(f"auditor violation after t={at_ms}: {detail}")
        report = build_report(self.state)
        return RunResult(report, list(self.state.log_lines), self.state)

    def _audit(self):
        violations = audit(self.state.plane)
        for record in self.state.missions.values():
            if record.instance is not None and record.instance.status is MissionStatus.ACTIVE:
                grant = self.state.plane.grants.get(record.slice_id)
                if grant is None or grant.state is not GrantState.COMMITTED:
                    from .topology import Violation

                    violations.append(
                        Violation("mission-grant", record.mission_id, "active mission without committed slice")
                    )
        return violations

    # -- scenario events ---------------------------------------------------------

    def _process_scenario(self, event: ScenarioEvent):
        kind = event.kind
        if kind is EventKind.MISSION_REQUEST:
            self._on_mission_request(event)
        elif kind is EventKind.LINK_DEGRADE:
            link_id = event.payload["link_id"]
            cap = event.payload["capacity_mbps"]
            self.state.plane.set_link_capacity(link_id, cap)
            self.log("LINK_DEGRADE", link=link_id, capacity=format_quantity(cap))
            self._react_to_link(link_id)
        elif kind is EventKind.LINK_RESTORE:
            link_id = event.payload["link_id"]
            self.state.plane.restore_link(link_id)
            self.log("LINK_RESTORE", link=link_id)
            self._react_to_link(link_id)
            self._bandwidth_recovery()
        elif kind is EventKind.NODE_FAIL:
            self._on_node_fail(event.payload["node_id"])
        elif kind is EventKind.NODE_RESTORE:
            node_id = event.payload["node_id"]
            self.state.plane.restore_node(node_id)
            self.log("NODE_RESTORE", node=node_id)
            self._bandwidth_recovery()
        elif kind is EventKind.PRELOAD_PHYSICAL_LOAD:
            node_id = event.payload["node_id"]
            load = event.payload["load"]
            try:
                self.state.plane.add_preload(node_id, load)
            except ValueError as exc:
                raise SimulationError(f"t={self.state.now}: {exc}") from exc
            self.log("PRELOAD", node=node_id, load=str(load))
        elif kind is EventKind.END:
            self._on_end()

    def _on_end(self):
        self.log("END")
        for mission_id in sorted(self.state.missions):
            record = self.state.missions[mission_id]
            if record.instance is not None and record.instance.status is MissionStatus.ACTIVE:
                self._complete_mission(record)
        self._ended = True

    def _complete_mission(self, record: MissionRecord):
        record.metrics = record.instance.complete(self.state.now)
        record.status = "COMPLETED"
        self.log("MISSION_COMPLETE", mission=record.mission_id)
        self.state.plane.terminate_slice(record.slice_id)

    def _on_node_fail(self, node_id: str):
        plane = self.state.plane
        self.log("NODE_FAIL", node=node_id)
        plane.fail_node(node_id)
        doomed: set[str] = set()
        for mission_id, record in sorted(self.state.missions.items()):
            if record.instance is None or record.instance.status is not MissionStatus.ACTIVE:
                continue
            if node_id in record.plan.nodes_used():
                doomed.add(mission_id)
        for slice_id in plane.slices_using_node(node_id):
            for mission_id, record in self.state.missions.items():
                if record.slice_id == slice_id and record.instance is not None:
                    if record.instance.status is MissionStatus.ACTIVE:
                        doomed.add(mission_id)
        for mission_id in sorted(doomed):
            record = self.state.missions[mission_id]
            record.metrics = record.instance.fail(self.state.now, f"node {node_id} failed")
            record.status = "FAILED"
            self.log("MISSION_FAIL", mission=mission_id, cause=f"node:{node_id}")
            self.state.plane.terminate_slice(record.slice_id)

    def _react_to_link(self, link_id: str):
        plane = self.state.plane
        for slice_id in plane.slices_using_link(link_id):
            allocation = plane.reallocate_slice(slice_id)
            self._snapshot_fairness(slice_id, allocation)
            record = self._record_of_slice(slice_id)
            if record is not None and record.instance is not None:
                released = record.instance.release_deferred(self.state.now, self._rate_lookup(record))
                for delivery in released:
                    self.log(
                        "RELEASE_DEFERRED",
                        mission=record.mission_id,
                        interaction=str(delivery.interaction_index),
                    )
                    self._push(delivery.deliver_at, _Internal("DELIVER", record.mission_id, (delivery,)))

    def _bandwidth_recovery(self):
        for mission_id in sorted(self.state.missions):
            record = self.state.missions[mission_id]
            if record.instance is None or record.instance.status is not MissionStatus.ACTIVE:
                continue
            residual = self.state.plane.free_node(record.anchor_node).bandwidth
            drained = record.instance.retry_reports(
                residual, threshold_mbps=self.state.scenario.config.uplink_threshold_mbps
            )
            if drained:
                self.log("REPORT_UP", mission=mission_id, outcome=f"retry sent {drained}")

    # -- mission admission pipeline ------------------------------------------

    def _on_mission_request(self, event: ScenarioEvent):
        mission_id = event.payload["mission_id"]
        duration = event.payload.get("duration_ms")
        scenario = self.state.scenario
        pm = scenario.missions[mission_id]
        record = MissionRecord(mission_id)
        self.state.missions[mission_id] = record
        self.log("MISSION_REQUEST", mission=mission_id)

        registries = [scenario.registries[p] for p in sorted(scenario.registries)]
        plane = self.state.plane
        config = scenario.config
        try:
            plan = federate(
                registries,
                scenario.topology,
                plane.free_map(),
                pm,
                scenario.policy,
                scenario.dictionary,
                plane.residual_map(),
                exact_max_models=config.exact_placement_max_models,
                exact_max_nodes=config.exact_placement_max_nodes,
            )
        except FederationError as exc:
            record.status = "REJECTED_PLANNING"
            record.stage = exc.stage
            record.reason = exc.message
            self.state.planning_rejects[exc.stage] = self.state.planning_rejects.get(exc.stage, 0) + 1
            self.log("MISSION_REJECT", mission=mission_id, stage=exc.stage, reason=exc.message)
            return

        record.plan = plan
        self.log(
            "MISSION_PLAN",
            mission=mission_id,
            cost=format_quantity(plan.total_cost),
            mode=plan.mode,
            placement=";".join(f"{m}:{n}" for m, n in sorted(plan.placement.items())),
        )

        request, flow_pos = _slice_request_from_plan(self, plan, pm, scenario)
        record.slice_id = request.slice_id
        record.flow_pos_of_interaction = flow_pos
        self.state.attempted += 1
        result = plane.two_phase_admit(request)
        if result.outcome == "REJECTED":
            self.state.rejected_gc += 1
            reason = result.reason or "unspecified"
            self.state.gc_reject_reasons[reason] = self.state.gc_reject_reasons.get(reason, 0) + 1
            record.status = "REJECTED_ADMISSION"
            record.reason = reason
            return
        if result.outcome == "ABORTED":
            self.state.aborted += 1
            reason = result.reason or "unspecified"
            self.state.abort_reasons[reason] = self.state.abort_reasons.get(reason, 0) + 1
            record.status = "ABORTED_ADMISSION"
            record.reason = reason
            return

        self.state.committed += 1
        self._activate_mission(record, pm, duration)

    def _activate_mission(self, record: MissionRecord, pm, duration: Optional[int]):
        from .mission import activate

        scenario = self.state.scenario
        plane = self.state.plane
        plan = record.plan
        grant = plane.grants[record.slice_id]
        selection = {cap: _descriptor(scenario, mid) for cap, mid in plan.selected.items()}

        edges = []
        task_flows = []
        for idx, inter in enumerate(pm.interactions):
            producer = selection[inter.producer_capability]
            consumer = selection[inter.consumer_capability]
            path = plan.routes[idx]
            links = plan.route_links[idx]
            latency = sum(
                (scenario.topology.links_by_id[l].latency_ms for l in links), Fraction(0)
            )
            size_mb = inter.min_rate_mbps / (8 * producer.update_rate_hz)
            has_flow = len(path) > 1
            edges.append(
                InteractionEdge(idx, producer.model_id, consumer.model_id, latency, size_mb, has_flow)
            )
            if has_flow:
                flow_id = f"i{idx:03d}"
                record.flow_of_interaction[idx] = flow_id
                pos = record.flow_pos_of_interaction[idx]
                reserved = grant.reserved_paths[pos]
                task_flows.append(
                    TaskFlow(flow_id, path[0], path[-1], inter.min_rate_mbps, reserved.links)
                )

        rates = {d.model_id: d.update_rate_hz for d in selection.values()}
        record.instance = activate(plan, grant.state.value, record.slice_id, edges, rates, self.state.now)
        record.anchor_node = plan.placement[plan.selected[min(plan.selected)]]
        record.status = "ACTIVE"
        self.log("MISSION_ACTIVATE", mission=record.mission_id, slice=record.slice_id)

        task = SliceTask(f"{record.mission_id}-exchange", record.slice_id, record.anchor_node, ResourceVector(), tuple(task_flows))
        accepted, reason = plane.sc_accept_task(task)
        if not accepted:
            record.metrics = record.instance.fail(self.state.now, f"task rejected: {reason}")
            record.status = "FAILED"
            self.log("MISSION_FAIL", mission=record.mission_id, cause=f"task:{reason}")
            plane.terminate_slice(record.slice_id)
            return
        sc = plane.slice_controllers[record.slice_id]
        self._snapshot_fairness(record.slice_id, sc.allocation)

        for model_id in record.instance.models:
            self._push(record.instance.next_production_time(model_id), _Internal("PRODUCE", record.mission_id, (model_id,)))
        self._push(self.state.now + scenario.config.report_period_ms, _Internal("REPORT", record.mission_id))
        if duration is not None:
            self._push(self.state.now + duration, _Internal("COMPLETE", record.mission_id))

    # -- internal events ---------------------------------------------------------

    def _process_internal(self, item: _Internal):
        record = self.state.missions.get(item.mission_id)
        if record is None or record.instance is None:
            return
        mi = record.instance
        if item.kind == "PRODUCE":
            if mi.status is not MissionStatus.ACTIVE:
                return
            (model_id,) = item.payload
            deliveries, deferred = mi.on_produce(model_id, self.state.now, self._rate_lookup(record))
            self.log("PRODUCE", mission=record.mission_id, model=model_id, seq=str(mi.production_count[model_id]))
            for delivery in deliveries:
                self._push(delivery.deliver_at, _Internal("DELIVER", record.mission_id, (delivery,)))
            for idx in deferred:
                self.log("DEFER", mission=record.mission_id, interaction=str(idx))
            self._push(mi.next_production_time(model_id), _Internal("PRODUCE", record.mission_id, (model_id,)))
        elif item.kind == "DELIVER":
            if mi.status is not MissionStatus.ACTIVE:
                return
            (delivery,) = item.payload
            outcome, staleness = mi.on_deliver(
                delivery.update, delivery.consumer_model, delivery.interaction_index, self.state.now
            )
            if outcome == "applied":
                self.log(
                    "DELIVER",
                    mission=record.mission_id,
                    interaction=str(delivery.interaction_index),
                    producer=delivery.update.producer,
                    seq=str(delivery.update.seq),
                    staleness=str(staleness),
                )
            elif outcome == "dropped":
                self.log(
                    "DROP",
                    mission=record.mission_id,
                    interaction=str(delivery.interaction_index),
                    producer=delivery.update.producer,
                    seq=str(delivery.update.seq),
                )
        elif item.kind == "REPORT":
            if mi.status is not MissionStatus.ACTIVE:
                return
            residual = self.state.plane.free_node(record.anchor_node).bandwidth
            config = self.state.scenario.config
            outcome = mi.report_upstream(
                residual,
                config.report_size_mb,
                self.state.now,
                threshold_mbps=config.uplink_threshold_mbps,
                queue_bound=config.upstream_queue_bound,
            )
            self.log("REPORT_UP", mission=record.mission_id, outcome=outcome)
            self._push(self.state.now + config.report_period_ms, _Internal("REPORT", record.mission_id))
        elif item.kind == "COMPLETE":
            if mi.status is MissionStatus.ACTIVE:
                self._complete_mission(record)

    # -- helpers -------------------------------------------------------------------

    def _rate_lookup(self, record: MissionRecord):
        plane = self.state.plane

        def rate_of(interaction_index: int):
            flow_id = record.flow_of_interaction.get(interaction_index)
            if flow_id is None:
                return None
            sc = plane.slice_controllers.get(record.slice_id)
            if sc is None:
                return Fraction(0)
            return sc.allocation.get(flow_id, Fraction(0))

        return rate_of

    def _record_of_slice(self, slice_id: str) -> Optional[MissionRecord]:
        for record in self.state.missions.values():
            if record.slice_id == slice_id:
                return record
        return None

    def _snapshot_fairness(self, slice_id: str, allocation):
        self.state.fairness.append(
            {
                "t": self.state.now,
                "slice": slice_id,
                "rates": {fid: float(rate) for fid, rate in sorted(allocation.items())},
            }
        )


def _descriptor(scenario: Scenario, model_id: str):
    for registry in scenario.registries.values():
        descriptor = registry.get(model_id)
        if descriptor is not None:
            return descriptor
    raise KeyError(f"model {model_id} not found in any registry")


def _slice_request_from_plan(engine: Engine, plan, pm, scenario: Scenario):
    """Derive the slice request: model footprints pinned at their planned
    nodes, one pinned flow per routed interaction, transit domains included
    with zero demand."""
    topo = scenario.topology
    demand: dict[str, ResourceVector] = {}
    pinned: dict[str, dict[str, ResourceVector]] = {}
    for model_id in sorted(plan.placement):
        node_id = plan.placement[model_id]
        domain_id = topo.domain_of(node_id)
        footprint = _descriptor(scenario, model_id).footprint
        demand[domain_id] = demand.get(domain_id, ResourceVector()) + footprint
        pinned.setdefault(domain_id, {})
        pinned[domain_id][node_id] = pinned[domain_id].get(node_id, ResourceVector()) + footprint

    flows: list[SliceFlow] = []
    flow_pos: dict[int, int] = {}
    for idx in sorted(plan.routes):
        path = plan.routes[idx]
        if len(path) < 2:
            continue
        links = plan.route_links[idx]
        rate = pm.interactions[idx].min_rate_mbps
        for node_id in path:
            d = topo.domain_of(node_id)
            if d not in demand:
                demand[d] = ResourceVector()
                pinned.setdefault(d, {})
        flow_pos[idx] = len(flows)
        flows.append(SliceFlow(topo.domain_of(path[0]), topo.domain_of(path[-1]), rate, path, links))

    request = SliceRequest(
        slice_id=f"slice-{plan.mission_id}",
        mission_id=plan.mission_id,
        per_domain_demand=demand,
        flows=flows,
        shared_with_physical=scenario.mission_options[plan.mission_id].shared_with_physical,
        pinned_nodes=pinned,
    )
    return request, flow_pos


@dataclass(frozen=True)
class RunResult:
    report: dict
    log: list[str]
    state: SimState


def build_report(state: SimState) -> dict:
    """Assemble the run report; counters must reconcile exactly."""
    assert state.attempted == state.committed + state.aborted + state.rejected_gc
    missions = {}
    for mission_id in sorted(state.missions):
        record = state.missions[mission_id]
        entry: dict[str, Any] = {"status": record.status}
        if record.stage is not None:
            entry["stage"] = record.stage
        if record.reason is not None:
            entry["reason"] = record.reason
        if record.plan is not None:
            entry["placement_cost"] = float(record.plan.total_cost)
            entry["placement_mode"] = record.plan.mode
            entry["selected"] = dict(sorted(record.plan.selected.items()))
            entry["placement"] = dict(sorted(record.plan.placement.items()))
        if record.metrics is not None:
            staleness = {}
            for idx, stats in record.metrics["staleness"].items():
                staleness[str(idx)] = {
                    "count": stats["count"],
                    "mean_ms": None if stats["mean_ms"] is None else float(stats["mean_ms"]),
                    "max_ms": stats["max_ms"],
                }
            entry["metrics"] = {
                "staleness": staleness,
                "dropped_updates": record.metrics["dropped_updates"],
                "deferred_deliveries": record.metrics["deferred_deliveries"],
                "upstream_sent": record.metrics["upstream_sent"],
                "upstream_deferred": record.metrics["upstream_deferred"],
                "upstream_dropped": record.metrics["upstream_dropped"],
            }
            if "failure_reason" in record.metrics:
                entry["metrics"]["failure_reason"] = record.metrics["failure_reason"]
        missions[mission_id] = entry
    return {
        "tool": {"name": "coalsim", "version": __version__},
        "seed": state.seed,
        "scenario_digest": state.scenario.digest,
        "admissions": {
            "attempted": state.attempted,
            "committed": state.committed,
            "aborted": state.aborted,
            "rejected_gc": state.rejected_gc,
            "abort_reasons": dict(sorted(state.abort_reasons.items())),
            "gc_reject_reasons": dict(sorted(state.gc_reject_reasons.items())),
        },
        "planning_rejects": dict(sorted(state.planning_rejects.items())),
        "missions": missions,
        "fairness": state.fairness,
        "auditor_violations": [],
    }


def run(scenario: Scenario, seed: int = 0) -> RunResult:
    """Run a validated scenario to END under the given seed."""
    return Engine(scenario, seed).run()
