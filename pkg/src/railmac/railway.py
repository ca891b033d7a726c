"""Railway model and the situation-aware controller.

Sensors sit in vehicles, each vehicle has a cluster head, and a train
gateway issues situation alerts. The controller adapts per-sensor collection
periods and access tiers from speed, position and upcoming curvature.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

from .backoff_queue import Tier
from .kernel import MS, SECOND

SENSOR_CLASSES = (
    "tilt",
    "wheel_defect",
    "axle_defect",
    "pantograph_video",
    "position_reader",
    "interior_humidity",
    "interior_fire",
)
INTERIOR_CLASSES = ("interior_humidity", "interior_fire")
SPEED_DRIVEN_CLASSES = ("wheel_defect", "axle_defect", "pantograph_video")


# -- track and kinematics ----------------------------------------------------


@dataclass(frozen=True)
class Segment:
    length_m: float
    curved: bool = False
    radius_m: float | None = None

    def __post_init__(self):
        if not self.length_m > 0:
            raise ValueError("segment length must be positive")
        if self.curved and self.radius_m is not None and self.radius_m <= 0:
            raise ValueError("curve radius must be positive")

    @property
    def kind(self) -> str:
        return "curved" if self.curved else "straight"


@dataclass(frozen=True)
class TrackMap:
    segments: tuple[Segment, ...]
    tags: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a track needs at least one segment")
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "tags", tuple(sorted(self.tags)))
        for tag in self.tags:
            if not 0 <= tag <= self.length:
                raise ValueError(f"tag at {tag} m lies outside the track")

    @property
    def length(self) -> float:
        return sum(s.length_m for s in self.segments)

    def starts(self) -> list[float]:
        out, acc = [], 0.0
        for seg in self.segments:
            out.append(acc)
            acc += seg.length_m
        return out

    def locate(self, position: float) -> int:
        """Index of the segment containing ``position`` (end points belong to the next one)."""
        idx = bisect_right(self.starts(), position) - 1
        return min(max(idx, 0), len(self.segments) - 1)


@dataclass(frozen=True)
class TrainState:
    speed: float
    track_position: float
    segment: Segment
    upcoming: Segment | None
    distance_to_next_segment: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.distance_to_next_segment < 0:
            raise ValueError("distance to next segment must be non-negative")

    def curve_within(self, lookahead_m: float) -> bool:
        if self.segment.curved:
            return True
        return (
            self.upcoming is not None
            and self.upcoming.curved
            and self.distance_to_next_segment <= lookahead_m
        )


def train_state(track: TrackMap, position: float, speed: float) -> TrainState:
    idx = track.locate(position)
    start = track.starts()[idx]
    seg = track.segments[idx]
    upcoming = track.segments[idx + 1] if idx + 1 < len(track.segments) else None
    remaining = max(0.0, start + seg.length_m - position)
    return TrainState(speed, position, seg, upcoming, remaining)


class TrackEndReached(Exception):
    def __init__(self, state: TrainState, tags: list[tuple[float, float]]):
        super().__init__(f"train reached the end of the track at {state.track_position} m")
        self.state = state
        self.tags = tags


def _time_to_cover(distance: float, v0: float, accel: float) -> float:
    if distance <= 0:
        return 0.0
    if abs(accel) < 1e-12:
        return distance / v0
    disc = v0 * v0 + 2 * accel * distance
    return (-v0 + math.sqrt(max(disc, 0.0))) / accel


def advance_train(
    state: TrainState,
    dt: float,
    track: TrackMap,
    acceleration: float | Callable[[TrainState], float] = 0.0,
    max_speed: float | None = None,
) -> tuple[TrainState, list[tuple[float, float]]]:
    """Move the train ``dt`` seconds under constant acceleration.

    Returns the new state and the tags crossed as ``(offset_m, seconds_into_dt)``.
    Speed is held within [0, max_speed]; the acceleration phase ends when a
    bound is hit and the rest of ``dt`` runs at that constant speed.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    accel = acceleration(state) if callable(acceleration) else acceleration
    v0 = state.speed
    cap = math.inf if max_speed is None else max_speed
    if accel > 0 and v0 < cap:
        t_bound = min(dt, (cap - v0) / accel)
    elif accel < 0 and v0 > 0:
        t_bound = min(dt, v0 / -accel)
    else:
        t_bound = 0.0
        accel = 0.0
    x1 = v0 * t_bound + 0.5 * accel * t_bound * t_bound
    v1 = v0 + accel * t_bound
    if accel > 0:
        v1 = min(v1, cap)
    v1 = max(v1, 0.0)
    distance = x1 + v1 * (dt - t_bound)
    start = state.track_position
    end = start + distance

    def crossing_time(d: float) -> float:
        if d <= x1:
            return _time_to_cover(d, v0, accel)
        return t_bound + (d - x1) / v1

    tags = [(tag, crossing_time(tag - start)) for tag in track.tags if start < tag <= end]
    if end >= track.length:
        tags = [(tag, t) for tag, t in tags if tag <= track.length]
        raise TrackEndReached(train_state(track, track.length, v1), tags)
    return train_state(track, end, v1), tags


# -- sensors and the adaptation policy ----------------------------------------


@dataclass(frozen=True)
class SensorProfile:
    sensor_class: str
    base_period_us: int
    min_period_us: int
    alpha: float = 0.0
    beta: float = 0.0
    tier: Tier = Tier.REGULAR

    def __post_init__(self):
        if self.sensor_class not in SENSOR_CLASSES:
            raise ValueError(f"unknown sensor class {self.sensor_class!r}")
        if not 0 < self.min_period_us <= self.base_period_us:
            raise ValueError("need 0 < min_period <= base_period")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("sensitivities must be non-negative")
        if self.sensor_class in INTERIOR_CLASSES and (self.alpha or self.beta):
            raise ValueError("interior sensors keep a constant collection rate")


# artifact defaults; none of these numbers come from measurements
DEFAULT_PROFILES = {
    "tilt": SensorProfile("tilt", 1 * SECOND, 100 * MS, alpha=1.0, beta=3.0),
    "wheel_defect": SensorProfile("wheel_defect", 500 * MS, 50 * MS, alpha=2.0),
    "axle_defect": SensorProfile("axle_defect", 500 * MS, 50 * MS, alpha=2.0),
    "pantograph_video": SensorProfile("pantograph_video", 200 * MS, 40 * MS, alpha=2.0),
    "position_reader": SensorProfile("position_reader", 1 * SECOND, 1 * SECOND),
    "interior_humidity": SensorProfile("interior_humidity", 5 * SECOND, 5 * SECOND),
    "interior_fire": SensorProfile("interior_fire", 1 * SECOND, 1 * SECOND),
}


@dataclass(frozen=True)
class SituationPolicy:
    v_ref_mps: float = 100.0
    lookahead_m: float = 2000.0
    speed_threshold_mps: float = 55.6
    hop_latency_us: int = 2 * MS
    # alerts go out when the curve flag flips or the speed crosses a band edge
    speed_band_mps: float = 10.0


DEFAULT_POLICY = SituationPolicy()


def curve_factor(state: TrainState, policy: SituationPolicy = DEFAULT_POLICY) -> int:
    return 1 if state.curve_within(policy.lookahead_m) else 0


def collection_period(
    profile: SensorProfile, state: TrainState, policy: SituationPolicy = DEFAULT_POLICY
) -> int:
    """Sampling period in microseconds for ``profile`` in ``state``."""
    denom = 1 + profile.alpha * state.speed / policy.v_ref_mps + profile.beta * curve_factor(
        state, policy
    )
    period = round(profile.base_period_us / denom)
    return min(max(period, profile.min_period_us), profile.base_period_us)


def priority_tier(
    profile: SensorProfile, state: TrainState, policy: SituationPolicy = DEFAULT_POLICY
) -> Tier:
    if profile.sensor_class == "tilt" and curve_factor(state, policy):
        return Tier.SAFETY_CRITICAL
    if profile.sensor_class in SPEED_DRIVEN_CLASSES and state.speed > policy.speed_threshold_mps:
        return Tier.ELEVATED
    return profile.tier


# -- topology and alerts --------------------------------------------------------


@dataclass(frozen=True)
class Sensor:
    sensor_id: str
    sensor_class: str
    healthy: bool = True


@dataclass(frozen=True)
class Vehicle:
    vehicle_id: str
    cluster_head: str
    sensors: tuple[Sensor, ...]


@dataclass(frozen=True)
class Topology:
    vehicles: tuple[Vehicle, ...]
    gateway_id: str = "gateway"
    safety_gateway: bool = False

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        seen: set = set()
        names = {self.gateway_id}
        for v in self.vehicles:
            if v.cluster_head in names:
                raise ValueError(f"duplicate node id {v.cluster_head!r}")
            names.add(v.cluster_head)
            for s in v.sensors:
                if s.sensor_id in seen or s.sensor_id in names:
                    raise ValueError(f"sensor {s.sensor_id!r} appears more than once")
                if s.sensor_class not in SENSOR_CLASSES:
                    raise ValueError(f"unknown sensor class {s.sensor_class!r}")
                seen.add(s.sensor_id)

    def sensors(self) -> Iterator[tuple[Vehicle, Sensor]]:
        for v in self.vehicles:
            for s in v.sensors:
                yield v, s


@dataclass(frozen=True)
class Alert:
    issued_at: int
    speed: float
    track_position: float
    segment: Segment
    upcoming: Segment | None
    distance_to_next_segment: float

    @classmethod
    def from_state(cls, issued_at: int, state: TrainState) -> "Alert":
        return cls(
            issued_at, state.speed, state.track_position, state.segment, state.upcoming,
            state.distance_to_next_segment,
        )

    def state(self) -> TrainState:
        return TrainState(
            self.speed, self.track_position, self.segment, self.upcoming,
            self.distance_to_next_segment,
        )


def disseminate_alert(
    alert: Alert, topology: Topology, hop_latency_us: int = DEFAULT_POLICY.hop_latency_us
) -> dict[str, int]:
    """Delivery time per sensor: gateway to cluster head, then cluster head to sensor.

    Hops on different vehicles run in parallel over the wired backbone.
    """
    return {s.sensor_id: alert.issued_at + 2 * hop_latency_us for _, s in topology.sensors()}


def escalate_access(mac, node, tier: Tier) -> bool:
    """Apply a new access tier; only moves in or out of the safety tier change slots.

    Returns whether any protocol operation was requested.
    """
    if tier is node.tier:
        return False
    if Tier.SAFETY_CRITICAL not in (tier, node.tier):
        node.tier = tier
        return False
    if not mac.relocate(node, tier):
        return False
    node.tier = tier
    return True


@dataclass
class DiagnosisEntry:
    sensor_id: str
    passed: bool
    latency_us: int | None


def self_diagnosis(topology: Topology, mac) -> list[DiagnosisEntry]:
    """Per-sensor outcome of the start-up exchange.

    Every healthy sensor's diagnostic frame is its admission transmission in
    the first superframe; a sensor that never answers is left out of the
    rosters.
    """
    report = []
    for _, s in topology.sensors():
        joined = mac.joined_at.get(s.sensor_id)
        report.append(DiagnosisEntry(s.sensor_id, joined is not None, joined))
    return report


# -- the situation run --------------------------------------------------------


@dataclass
class SituationLog:
    alerts: list = field(default_factory=list)  # (alert, delivered_at)
    changes: list = field(default_factory=list)  # (t, sensor_id, period_us, tier)
    tags: list = field(default_factory=list)  # (t, tag_m)
    ended_at: int | None = None
    diagnosis: list = field(default_factory=list)


class SituationController:
    """Gateway-side loop: move the train, read tags, issue alerts, apply them on delivery."""

    def __init__(self, net, mac, track: TrackMap, topology: Topology,
                 profiles: dict[str, SensorProfile], policy: SituationPolicy,
                 initial_speed: float, acceleration: float, max_speed: float | None,
                 tick_us: int = 100 * MS):
        self.net = net
        self.mac = mac
        self.track = track
        self.topology = topology
        self.profiles = profiles
        self.policy = policy
        self.acceleration = acceleration
        self.max_speed = max_speed
        self.tick_us = tick_us
        self.state = train_state(track, 0.0, initial_speed)
        self.log = SituationLog()
        self.class_of = {s.sensor_id: s.sensor_class for _, s in topology.sensors()}
        self._key = None

    def initial_period(self, sensor_id: str) -> int:
        return collection_period(self.profiles[self.class_of[sensor_id]], self.state, self.policy)

    def initial_tier(self, sensor_id: str) -> Tier:
        return priority_tier(self.profiles[self.class_of[sensor_id]], self.state, self.policy)

    def _situation_key(self, state: TrainState) -> tuple:
        return curve_factor(state, self.policy), math.floor(state.speed / self.policy.speed_band_mps)

    def start(self, at: int) -> None:
        self._key = self._situation_key(self.state)
        self.net.sim.at(at, "train", self._tick)

    def _tick(self) -> None:
        sim = self.net.sim
        now = sim.now()
        dt = self.tick_us / SECOND
        try:
            nxt, tags = advance_train(self.state, dt, self.track, self.acceleration, self.max_speed)
        except TrackEndReached as end:
            for tag, offset in end.tags:
                self._schedule_tag(now, tag, offset)
            self.log.ended_at = now + self.tick_us
            sim.at(now + self.tick_us, "track_end", self._end)
            return
        for tag, offset in tags:
            self._schedule_tag(now, tag, offset)
        if now + self.tick_us < self.net.horizon_us:
            sim.at(now + self.tick_us, "train", self._arrive_state, nxt)

    def _arrive_state(self, state: TrainState) -> None:
        self.state = state
        key = self._situation_key(state)
        if key != self._key:
            self._key = key
            self.issue_alert()
        self._tick()

    def _end(self) -> None:
        self.net.sim.stop_at_now()

    def _schedule_tag(self, now: int, tag: float, offset_s: float) -> None:
        t = now + min(self.tick_us, max(1, math.ceil(offset_s * SECOND)))
        self.net.sim.at(t, "tag", self._read_tag, tag)

    def _read_tag(self, tag: float) -> None:
        now = self.net.sim.now()
        self.log.tags.append((now, tag))
        for _, s in self.topology.sensors():
            node = self.net.by_id[s.sensor_id]
            if s.sensor_class == "position_reader" and node.alive:
                self.net.emit(node)

    def issue_alert(self) -> Alert:
        sim = self.net.sim
        alert = Alert.from_state(sim.now(), self.state)
        deliveries = disseminate_alert(alert, self.topology, self.policy.hop_latency_us)
        by_time: dict[int, list] = {}
        for sensor_id, t in deliveries.items():
            by_time.setdefault(t, []).append(sensor_id)
        for t in sorted(by_time):
            self.log.alerts.append((alert, t))
            if t < self.net.horizon_us:
                sim.at(t, "alert", self._deliver, (alert, by_time[t]))
        return alert

    def _deliver(self, payload) -> None:
        alert, sensor_ids = payload
        now = self.net.sim.now()
        state = alert.state()
        for sensor_id in sensor_ids:
            node = self.net.by_id[sensor_id]
            if not node.alive or node.mac is None:
                continue
            profile = self.profiles[self.class_of[sensor_id]]
            period = collection_period(profile, state, self.policy)
            tier = priority_tier(profile, state, self.policy)
            changed = False
            if profile.sensor_class != "position_reader" and period != node.period_us:
                self.net.set_period(node, period, node.last_arrival)
                changed = True
            if tier is not node.tier:
                escalate_access(self.mac, node, tier)
                changed = True
            if changed:
                self.log.changes.append((now, sensor_id, node.period_us, node.tier))


def demo_track() -> TrackMap:
    segments = (Segment(3000.0), Segment(1500.0, True, 4000.0), Segment(6000.0))
    tags = tuple(float(x) for x in range(500, 10500, 500))
    return TrackMap(segments, tags)


def demo_topology(vehicles: int = 3, dead: tuple[str, ...] = ("v3.interior_humidity",)) -> Topology:
    out = []
    for i in range(1, vehicles + 1):
        classes = ["tilt", "wheel_defect", "axle_defect", "interior_humidity", "interior_fire"]
        if i == 1:
            classes[3:3] = ["pantograph_video", "position_reader"]
        sensors = tuple(
            Sensor(f"v{i}.{c}", c, healthy=f"v{i}.{c}" not in dead) for c in classes
        )
        out.append(Vehicle(f"v{i}", f"v{i}.head", sensors))
    return Topology(tuple(out))


def with_sensor(topology: Topology, sensor_id: str, **changes) -> Topology:
    vehicles = []
    for v in topology.vehicles:
        sensors = tuple(replace(s, **changes) if s.sensor_id == sensor_id else s for s in v.sensors)
        vehicles.append(replace(v, sensors=sensors))
    return replace(topology, vehicles=tuple(vehicles))
