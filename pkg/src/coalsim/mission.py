"""Per-mission runtime: drives state exchange between placed models over a
committed slice, keeps causal order with vector clocks, measures staleness.

Payloads are synthetic (digest + size); the coordination fabric is the
artifact, not twin content.  Late or out-of-order updates are dropped and
counted rather than buffered for causal delivery: honest behaviour for
lossy tactical links.
"""

from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence

from .federation import FederationPlan
from .resources import as_fraction

VectorClock = dict[str, int]


def merge_clocks(a: VectorClock, b: VectorClock) -> VectorClock:
    """Componentwise maximum."""
    return {k: max(a.get(k, 0), b.get(k, 0)) for k in sorted(set(a) | set(b))}


def clock_leq(a: VectorClock, b: VectorClock) -> bool:
    return all(v <= b.get(k, 0) for k, v in a.items())


def ceil_ms(value) -> int:
    frac = as_fraction(value)
    return -((-frac.numerator) // frac.denominator)


class MissionStatus(enum.Enum):
    PLANNED = "PLANNED"
    ACTIVE = "ACTIVE"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


def _digest(producer: str, seq: int) -> str:
    return hashlib.sha256(f"{producer}:{seq}".encode()).hexdigest()[:12]


@dataclass(frozen=True)
class StateUpdate:
    producer: str
    seq: int
    vclock: Mapping[str, int]
    emitted_at: int
    size_mb: Fraction

    def digest(self) -> str:
        return _digest(self.producer, self.seq)


@dataclass(frozen=True)
class InteractionEdge:
    """One plan interaction, resolved to concrete runtime parameters."""

    index: int
    producer_model: str
    consumer_model: str
    route_latency_ms: Fraction
    size_mb: Fraction
    has_network_flow: bool


@dataclass(frozen=True)
class Delivery:
    interaction_index: int
    consumer_model: str
    update: StateUpdate
    deliver_at: int


@dataclass
class InteractionMetrics:
    staleness_samples: list[int] = field(default_factory=list)

    def mean(self) -> Optional[Fraction]:
        if not self.staleness_samples:
            return None
        return Fraction(sum(self.staleness_samples), len(self.staleness_samples))

    def max(self) -> Optional[int]:
        return max(self.staleness_samples) if self.staleness_samples else None


class MissionInstance:
    """Runtime state of one activated mission."""

    def __init__(
        self,
        plan: FederationPlan,
        slice_id: str,
        edges: Sequence[InteractionEdge],
        update_rates_hz: Mapping[str, Fraction],
        activated_at: int,
    ):
        self.mission_id = plan.mission_id
        self.plan = plan
        self.slice_id = slice_id
        self.status = MissionStatus.ACTIVE
        self.activated_at = activated_at
        self.edges = tuple(edges)
        self.out_edges: dict[str, list[InteractionEdge]] = {}
        for e in self.edges:
            self.out_edges.setdefault(e.producer_model, []).append(e)
        self.models = tuple(sorted(update_rates_hz))
        self.period_ms: dict[str, Fraction] = {
            m: Fraction(1000) / as_fraction(hz) for m, hz in update_rates_hz.items()
        }
        self.production_count: dict[str, int] = {m: 0 for m in self.models}
        self.views: dict[str, VectorClock] = {m: {} for m in self.models}
        self.last_state: dict[str, tuple[str, VectorClock, int]] = {}
        self.last_applied_seq: dict[tuple[str, str], int] = {}
        self.interaction_metrics: dict[int, InteractionMetrics] = {
            e.index: InteractionMetrics() for e in self.edges
        }
        self.dropped_updates = 0
        self.deferred_deliveries = 0
        self.pending_deferred: dict[int, deque[StateUpdate]] = {}
        self.upstream_queue: deque[int] = deque()
        self.upstream_sent = 0
        self.upstream_deferred = 0
        self.upstream_dropped = 0
        self.final_metrics: dict | None = None

    # -- production schedule ------------------------------------------------

    def next_production_time(self, model_id: str) -> int:
        """Absolute time of the model's next production tick."""
        k = self.production_count[model_id] + 1
        return self.activated_at + ceil_ms(k * self.period_ms[model_id])

    # -- operations ---------------------------------------------------------

    def on_produce(
        self,
        model_id: str,
        now: int,
        rate_of: Callable[[int], Optional[Fraction]],
    ) -> tuple[list[Delivery], list[int]]:
        """Advance the producer clock and emit one update per consumer.

        rate_of maps an interaction index to its current allocated rate in
        Mbps; None means no network flow (co-located endpoints) and zero
        defers the delivery until a reallocation frees capacity.
        """
        if self.status is not MissionStatus.ACTIVE:
            raise ValueError(f"mission {self.mission_id} is not active")
        if model_id not in self.production_count:
            raise KeyError(f"unknown model {model_id}")
        self.production_count[model_id] += 1
        seq = self.production_count[model_id]
        view = self.views[model_id]
        view[model_id] = seq
        snapshot = dict(view)
        deliveries: list[Delivery] = []
        deferred: list[int] = []
        for edge in self.out_edges.get(model_id, ()):
            update = StateUpdate(model_id, seq, snapshot, now, edge.size_mb)
            if not edge.has_network_flow:
                deliver_at = now + ceil_ms(edge.route_latency_ms)
                deliveries.append(Delivery(edge.index, edge.consumer_model, update, deliver_at))
                continue
            rate = rate_of(edge.index)
            if rate is None or rate <= 0:
                self.pending_deferred.setdefault(edge.index, deque()).append(update)
                self.deferred_deliveries += 1
                deferred.append(edge.index)
                continue
            transfer_ms = edge.size_mb * 8 * 1000 / rate
            deliver_at = now + ceil_ms(edge.route_latency_ms + transfer_ms)
            deliveries.append(Delivery(edge.index, edge.consumer_model, update, deliver_at))
        self.last_state[model_id] = (_digest(model_id, seq), snapshot, now)
        return deliveries, deferred

    def release_deferred(
        self,
        now: int,
        rate_of: Callable[[int], Optional[Fraction]],
    ) -> list[Delivery]:
        """Reschedule queued updates whose interaction has a positive rate again."""
        released: list[Delivery] = []
        for index in sorted(self.pending_deferred):
            rate = rate_of(index)
            if rate is None or rate <= 0:
                continue
            edge = next(e for e in self.edges if e.index == index)
            queue = self.pending_deferred[index]
            while queue:
                update = queue.popleft()
                transfer_ms = edge.size_mb * 8 * 1000 / rate
                deliver_at = now + ceil_ms(edge.route_latency_ms + transfer_ms)
                released.append(Delivery(edge.index, edge.consumer_model, update, deliver_at))
        self.pending_deferred = {i: q for i, q in self.pending_deferred.items() if q}
        return released

    def on_deliver(self, update: StateUpdate, consumer_model: str, interaction_index: int, now: int) -> tuple[str, Optional[int]]:
        """Apply an update at the consumer: merge clocks or drop stale input.

        Returns ("applied", staleness_ms) or ("dropped", None).
        """
        if self.status is not MissionStatus.ACTIVE:
            return ("ignored", None)
        key = (consumer_model, update.producer)
        if update.seq <= self.last_applied_seq.get(key, 0):
            self.dropped_updates += 1
            return ("dropped", None)
        self.last_applied_seq[key] = update.seq
        self.views[consumer_model] = merge_clocks(self.views[consumer_model], dict(update.vclock))
        staleness = now - update.emitted_at
        self.interaction_metrics[interaction_index].staleness_samples.append(staleness)
        return ("applied", staleness)

    def report_upstream(
        self,
        residual_mbps,
        report_size_mb,
        now: int,
        *,
        threshold_mbps=Fraction(1),
        queue_bound: int = 16,
    ) -> str:
        """Send a state report when bandwidth permits, otherwise queue it.

        The queue is bounded; overflow drops the oldest entry and counts it.
        """
        if self.status is not MissionStatus.ACTIVE:
            raise ValueError(f"mission {self.mission_id} is not active")
        if as_fraction(residual_mbps) >= as_fraction(threshold_mbps):
            drained = self.drain_reports()
            self.upstream_sent += 1
            return "sent" if drained == 0 else f"sent (+{drained} queued)"
        self.upstream_queue.append(now)
        self.upstream_deferred += 1
        if len(self.upstream_queue) > queue_bound:
            self.upstream_queue.popleft()
            self.upstream_dropped += 1
        return "deferred"

    def retry_reports(self, residual_mbps, *, threshold_mbps=Fraction(1)) -> int:
        """Bandwidth-recovery hook: drain the queue FIFO if the uplink allows."""
        if as_fraction(residual_mbps) >= as_fraction(threshold_mbps):
            return self.drain_reports()
        return 0

    def drain_reports(self) -> int:
        drained = len(self.upstream_queue)
        self.upstream_sent += drained
        self.upstream_queue.clear()
        return drained

    def complete(self, now: int) -> dict:
        if self.status is not MissionStatus.ACTIVE:
            raise ValueError(f"mission {self.mission_id} is not active")
        self.status = MissionStatus.COMPLETED
        self.final_metrics = self._freeze_metrics(now)
        return self.final_metrics

    def fail(self, now: int, reason: str) -> dict:
        if self.status is not MissionStatus.ACTIVE:
            raise ValueError(f"mission {self.mission_id} is not active")
        self.status = MissionStatus.FAILED
        self.final_metrics = self._freeze_metrics(now)
        self.final_metrics["failure_reason"] = reason
        return self.final_metrics

    def _freeze_metrics(self, now: int) -> dict:
        staleness = {}
        for index in sorted(self.interaction_metrics):
            m = self.interaction_metrics[index]
            mean = m.mean()
            staleness[index] = {
                "count": len(m.staleness_samples),
                "mean_ms": None if mean is None else mean,
                "max_ms": m.max(),
            }
        return {
            "completed_at": now,
            "staleness": staleness,
            "dropped_updates": self.dropped_updates,
            "deferred_deliveries": self.deferred_deliveries,
            "upstream_sent": self.upstream_sent,
            "upstream_deferred": self.upstream_deferred,
            "upstream_dropped": self.upstream_dropped,
        }


def activate(
    plan: FederationPlan,
    grant_state: str,
    slice_id: str,
    edges: Sequence[InteractionEdge],
    update_rates_hz: Mapping[str, Fraction],
    now: int,
) -> MissionInstance:
    """Build the ACTIVE runtime for a plan whose slice committed."""
    if grant_state != "COMMITTED":
        raise ValueError(f"mission {plan.mission_id}: slice grant is {grant_state}, not COMMITTED")
    missing = sorted(set(plan.placement) - set(update_rates_hz))
    if missing:
        raise ValueError(f"mission {plan.mission_id}: no update rate for models {missing}")
    return MissionInstance(plan, slice_id, edges, update_rates_hz, now)
