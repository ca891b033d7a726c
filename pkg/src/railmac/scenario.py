"""Turn a validated config into a simulation run and its outputs."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

from .backoff_queue import ProtocolViolation
from .baselines import CsmaSlottedMac, DcfMac, LplMac
from .bq_mac import BackoffQueueMac
from .config import ScenarioConfig
from .kernel import Simulator
from .network import Network, NodeSpec
from .railway import SituationController, SituationLog, self_diagnosis
from .workload import HarnessError, ScenarioStats, TrafficProfile, write_csv

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INVARIANT = 3


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    stats: ScenarioStats
    rows: list
    protocol_trace: str = ""
    event_trace: str = ""
    situation: SituationLog | None = None
    network: Network | None = field(default=None, repr=False)

    def csv_text(self, header: bool = True) -> str:
        buf = io.StringIO()
        write_csv(self.rows, buf, header)
        return buf.getvalue()


def node_specs(config: ScenarioConfig) -> list[NodeSpec]:
    if config.situation is not None:
        sit = config.situation
        specs = []
        for _, sensor in sit.topology().sensors():
            kind = "event" if sensor.sensor_class == "position_reader" else "situation"
            specs.append(
                NodeSpec(sensor.sensor_id, sensor.sensor_class, TrafficProfile(kind, sit.payload_bytes))
            )
        return specs
    groups = [(g, g.profile()) for g in config.nodes]
    if config.roster_order == "grouped":
        return [
            NodeSpec(f"{g.group}{i}", g.group, prof, g.access_class)
            for g, prof in groups
            for i in range(g.count)
        ]
    # spread each group evenly over the admission order
    items = []
    for order, (g, prof) in enumerate(groups):
        for i in range(g.count):
            items.append(((i + 0.5) / g.count, order, i, g, prof))
    items.sort(key=lambda x: x[:3])
    return [NodeSpec(f"{g.group}{i}", g.group, prof, g.access_class) for _, _, i, g, prof in items]


def make_mac(config: ScenarioConfig, trace):
    params = config.mac_params()
    channel = config.channel
    if config.scheme == "backoff_queue":
        sit = config.situation
        gateway = sit.safety_gateway_service_us if sit is not None and sit.safety_gateway else None
        return BackoffQueueMac(params, channel, trace, safety_gateway_us=gateway)
    if config.scheme == "csma154":
        return CsmaSlottedMac(params, channel, trace)
    if config.scheme == "bmac":
        return LplMac(params, channel, trace)
    return DcfMac(params, channel, trace)


def run_scenario(config: ScenarioConfig, protocol_trace: bool | None = None) -> ScenarioResult:
    """Run one scenario; raises ``ProtocolViolation`` or ``HarnessError`` on invariant failure."""
    want_trace = config.trace.protocol if protocol_trace is None else protocol_trace
    ptrace = io.StringIO() if want_trace else None
    etrace = io.StringIO() if config.trace.events else None
    sim = Simulator(config.seed, etrace)
    mac = make_mac(config, ptrace)
    sit = config.situation
    traffic_start = 0
    if sit is not None:
        # start-up diagnosis owns the first superframe
        traffic_start = config.backoff_queue.beacon_interval_us
    net = Network(
        sim, mac, node_specs(config), config.horizon_us, config.warmup_us,
        config.buffer_frames, traffic_start_us=traffic_start, record_arrivals=sit is not None,
    )
    controller = None
    if sit is not None:
        topology = sit.topology()
        controller = SituationController(
            net, mac, sit.track.build(), topology, sit.sensor_profiles(), sit.policy(),
            sit.initial_speed_mps, sit.acceleration_mps2, sit.max_speed_mps, sit.tick_us,
        )
        for _, sensor in topology.sensors():
            node = net.by_id[sensor.sensor_id]
            node.period_us = controller.initial_period(sensor.sensor_id)
            node.tier = controller.initial_tier(sensor.sensor_id)
            node.alive = sensor.healthy
        controller.start(traffic_start)
    stats = net.run()
    log = None
    if controller is not None:
        log = controller.log
        log.diagnosis = self_diagnosis(controller.topology, mac)
        done = [e.latency_us for e in log.diagnosis if e.passed]
        if done and max(done) >= traffic_start:
            raise HarnessError("self-diagnosis ran past the first beacon of the main phase")
    return ScenarioResult(
        config, stats, stats.rows(config.scheme, config.name),
        ptrace.getvalue() if ptrace is not None else "",
        etrace.getvalue() if etrace is not None else "",
        log, net,
    )


def write_outputs(result: ScenarioResult, out_dir: Path, stem: str | None = None) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or result.config.name.replace("/", "_").replace(":", "-")
    written = []
    path = out_dir / f"{stem}.csv"
    path.write_text(result.csv_text())
    written.append(path)
    if result.protocol_trace:
        path = out_dir / f"{stem}.trace.tsv"
        path.write_text(result.protocol_trace)
        written.append(path)
    if result.event_trace:
        path = out_dir / f"{stem}.events.tsv"
        path.write_text(result.event_trace)
        written.append(path)
    if result.situation is not None:
        path = out_dir / f"{stem}.situation.tsv"
        path.write_text(situation_text(result.situation))
        written.append(path)
    return written


def situation_text(log: SituationLog) -> str:
    lines = []
    for e in log.diagnosis:
        lat = "-" if e.latency_us is None else str(e.latency_us)
        lines.append(f"diagnosis\t{e.sensor_id}\t{'pass' if e.passed else 'fail'}\t{lat}")
    seen = set()
    for alert, delivered in log.alerts:
        key = (alert.issued_at, delivered)
        if key in seen:
            continue
        seen.add(key)
        lines.append(
            f"alert\t{alert.issued_at}\t{delivered}\t{alert.speed:.3f}\t{alert.track_position:.3f}"
        )
    for t, sensor_id, period, tier in log.changes:
        lines.append(f"change\t{t}\t{sensor_id}\t{period}\t{tier.value}")
    for t, tag in log.tags:
        lines.append(f"tag\t{t}\t{tag:.1f}")
    if log.ended_at is not None:
        lines.append(f"track_end\t{log.ended_at}")
    return "\n".join(lines) + "\n"


__all__ = [
    "EXIT_INVALID",
    "EXIT_INVARIANT",
    "EXIT_OK",
    "ProtocolViolation",
    "HarnessError",
    "ScenarioResult",
    "node_specs",
    "make_mac",
    "run_scenario",
    "write_outputs",
]
