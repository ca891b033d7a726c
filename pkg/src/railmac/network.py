"""Scenario runtime shared by every MAC scheme: nodes, traffic, accounting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .backoff_queue import Tier
from .kernel import Simulator
from .workload import (
    Frame,
    FrameBuffer,
    HarnessError,
    Metrics,
    ScenarioStats,
    TrafficProfile,
    draw_rate,
    next_arrival,
    summarize,
)


class SimNode:
    __slots__ = (
        "node_id",
        "group",
        "profile",
        "rng",
        "mac_rng",
        "buffer",
        "rate_bps",
        "period_us",
        "access_class",
        "tier",
        "alive",
        "mac",
        "next_event",
        "arrivals",
        "last_arrival",
    )

    def __init__(self, node_id, group: str, profile: TrafficProfile, rng, buffer: FrameBuffer,
                 access_class: str = "best_effort", tier: Tier = Tier.REGULAR):
        self.node_id = node_id
        self.group = group
        self.profile = profile
        self.rng = rng
        self.mac_rng = rng
        self.buffer = buffer
        self.rate_bps: float | None = None
        self.period_us: int | None = profile.period_us
        self.access_class = access_class
        self.tier = tier
        self.alive = True
        self.mac = None
        self.next_event = None
        self.arrivals: list[int] | None = None
        self.last_arrival: int | None = None

    def __repr__(self) -> str:
        return f"SimNode({self.node_id!r}, {self.group})"


class MacEngine(Protocol):
    scheme: str

    def attach(self, net: "Network") -> None: ...

    def start(self) -> None: ...

    def on_frame(self, node: SimNode) -> None: ...

    def in_flight(self, node: SimNode) -> int: ...


@dataclass
class NodeSpec:
    node_id: object
    group: str
    profile: TrafficProfile
    access_class: str = "best_effort"
    tier: Tier = Tier.REGULAR


class Network:
    """Owns the simulator, the nodes' traffic processes and the metrics."""

    def __init__(self, sim: Simulator, mac: MacEngine, specs: list[NodeSpec], horizon_us: int,
                 warmup_us: int = 0, buffer_frames: int = 64, traffic_start_us: int = 0,
                 record_arrivals: bool = False):
        self.sim = sim
        self.mac = mac
        self.horizon_us = horizon_us
        self.warmup_us = warmup_us
        self.traffic_start_us = traffic_start_us
        self.metrics = Metrics()
        self.nodes: list[SimNode] = []
        self.by_id: dict = {}
        for spec in specs:
            node = SimNode(
                spec.node_id, spec.group, spec.profile, sim.rng(f"node/{spec.node_id}"),
                FrameBuffer(self.metrics, buffer_frames), spec.access_class, spec.tier,
            )
            node.mac_rng = sim.rng(f"mac/{spec.node_id}")
            if record_arrivals:
                node.arrivals = []
            if spec.profile.kind == "rate":
                node.rate_bps = draw_rate(spec.profile, node.rng)
            self.metrics.register(node.node_id, node.group)
            self.nodes.append(node)
            self.by_id[node.node_id] = node
        mac.attach(self)

    # -- traffic -----------------------------------------------------------

    def first_gap(self, node: SimNode) -> int:
        t, _ = next_arrival(node.profile, node.rng, 0, node.rate_bps, node.period_us)
        return t

    def start_traffic(self, node: SimNode, at: int | None = None) -> None:
        """Begin generation at a random phase inside the node's first interval."""
        start = self.traffic_start_us if at is None else at
        gap = self.first_gap(node)
        first = start + node.rng.randrange(gap)
        if first < self.horizon_us:
            node.next_event = self.sim.at(first, "arrival", self._arrive, node)

    def emit(self, node: SimNode) -> None:
        """Generate one frame now, outside the node's own arrival process."""
        now = self.sim.now()
        frame = Frame(node.node_id, node.group, now, node.profile.payload_bytes)
        node.last_arrival = now
        if node.arrivals is not None:
            node.arrivals.append(now)
        node.buffer.push(frame, now)
        self.mac.on_frame(node)

    def _arrive(self, node: SimNode) -> None:
        now = self.sim.now()
        node.next_event = None
        if not node.alive:
            return
        self.emit(node)
        t, _ = next_arrival(node.profile, node.rng, now, node.rate_bps, node.period_us)
        if t < self.horizon_us:
            node.next_event = self.sim.at(t, "arrival", self._arrive, node)

    def set_period(self, node: SimNode, period_us: int, last_arrival: int | None) -> None:
        """Apply a new generation period from now on."""
        now = self.sim.now()
        node.period_us = period_us
        if node.next_event is None:
            return
        self.sim.cancel(node.next_event)
        base = last_arrival if last_arrival is not None else now
        t = max(now, base + period_us)
        node.next_event = None
        if t < self.horizon_us:
            node.next_event = self.sim.at(t, "arrival", self._arrive, node)

    # -- run ---------------------------------------------------------------

    def run(self) -> ScenarioStats:
        self.mac.start()
        for node in self.nodes:
            if node.alive and node.next_event is None and node.profile.kind != "event":
                self.start_traffic(node)
        self.sim.run_until(self.horizon_us)
        return self.stats()

    def stats(self) -> ScenarioStats:
        m = self.metrics
        groups = sorted({n.group for n in self.nodes})
        stats = summarize(m.samples, self.warmup_us, m.dropped_by_group, groups)
        created = fulfilled = dropped = residual = 0
        for node in self.nodes:
            c = m.counters[node.node_id]
            left = len(node.buffer) + self.mac.in_flight(node)
            if c.created != c.fulfilled + c.dropped + left:
                raise HarnessError(
                    f"node {node.node_id!r}: created {c.created} != fulfilled {c.fulfilled}"
                    f" + dropped {c.dropped} + residual {left}"
                )
            created += c.created
            fulfilled += c.fulfilled
            dropped += c.dropped
            residual += left
        stats.created, stats.fulfilled, stats.dropped, stats.residual = (
            created, fulfilled, dropped, residual,
        )
        stats.utilization = getattr(self.mac, "utilization", lambda: {})()
        stats.gc_turns = getattr(self.mac, "gc_turns", 0)
        stats.warnings = dict(getattr(self.mac, "warnings", {}))
        return stats

    def residual(self, node: SimNode) -> int:
        return len(node.buffer) + self.mac.in_flight(node)
