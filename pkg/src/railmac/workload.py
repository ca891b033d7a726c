"""Traffic generation, per-node frame buffers and delay accounting."""
from __future__ import annotations

import csv
import io
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .kernel import MS

LOW_RATE_PAYLOAD = 32
VOIP_PAYLOAD = 160
BULK_PAYLOAD = 1500

CSV_HEADER = ["scheme", "scenario", "group", "samples", "mean_delay_us", "p95_delay_us", "dropped"]


class HarnessError(RuntimeError):
    """Accounting went wrong; always a simulator bug."""


@dataclass(frozen=True)
class TrafficProfile:
    """How one node generates frames.

    kind is one of ``periodic``, ``uniform`` (inter-arrival uniform in
    [min_interval_us, max_interval_us]), ``rate`` (constant bit rate drawn
    once per node from [rate_min_bps, rate_max_bps]) or ``situation``
    (period set at runtime by the railway controller) or ``event`` (frames
    only when something external happens, such as a tag crossing).
    """

    kind: str
    payload_bytes: int = LOW_RATE_PAYLOAD
    period_us: int | None = None
    min_interval_us: int | None = None
    max_interval_us: int | None = None
    rate_min_bps: float | None = None
    rate_max_bps: float | None = None
    rate_draw: str = "uniform"

    def __post_init__(self):
        if self.payload_bytes <= 0:
            raise ValueError("payload must be positive")
        if self.kind not in ("periodic", "uniform", "rate", "situation", "event"):
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if self.kind == "periodic" and not (self.period_us and self.period_us > 0):
            raise ValueError("periodic traffic needs a positive period")
        if self.kind == "uniform":
            if not (0 < self.min_interval_us <= self.max_interval_us):
                raise ValueError("uniform traffic needs 0 < min <= max interval")
        if self.kind == "rate":
            if not (0 < self.rate_min_bps <= self.rate_max_bps):
                raise ValueError("rate traffic needs 0 < min <= max rate")


def periodic_a() -> TrafficProfile:
    return TrafficProfile("periodic", period_us=100 * MS)


def periodic_b() -> TrafficProfile:
    return TrafficProfile("periodic", period_us=250 * MS)


def random_c() -> TrafficProfile:
    return TrafficProfile("uniform", min_interval_us=100 * MS, max_interval_us=1000 * MS)


def voip() -> TrafficProfile:
    return TrafficProfile("rate", VOIP_PAYLOAD, rate_min_bps=96_000, rate_max_bps=96_000)


def video_phone() -> TrafficProfile:
    return TrafficProfile("rate", BULK_PAYLOAD, rate_min_bps=500_000, rate_max_bps=1_000_000)


def av_streaming(draw: str = "log_uniform") -> TrafficProfile:
    return TrafficProfile(
        "rate", BULK_PAYLOAD, rate_min_bps=128_000, rate_max_bps=24_000_000, rate_draw=draw
    )


def draw_rate(profile: TrafficProfile, rng: random.Random) -> float:
    lo, hi = profile.rate_min_bps, profile.rate_max_bps
    if lo == hi:
        return lo
    if profile.rate_draw == "log_uniform":
        return math.exp(rng.uniform(math.log(lo), math.log(hi)))
    return rng.uniform(lo, hi)


def rate_interval(payload_bytes: int, rate_bps: float) -> int:
    return max(1, round(payload_bytes * 8 * 1_000_000 / rate_bps))


def expected_frame_rate(profile: TrafficProfile, rate_bps: float | None = None,
                        period_us: int | None = None) -> float:
    """Mean frames per second a node with this profile offers."""
    if profile.kind == "periodic":
        return 1e6 / profile.period_us
    if profile.kind == "uniform":
        return 2e6 / (profile.min_interval_us + profile.max_interval_us)
    if profile.kind == "rate":
        return (rate_bps or profile.rate_min_bps) / (profile.payload_bytes * 8)
    return 1e6 / period_us if period_us else 0.0


def next_arrival(
    profile: TrafficProfile,
    rng: random.Random,
    now: int,
    rate_bps: float | None = None,
    period_us: int | None = None,
) -> tuple[int, int]:
    """Time of the next frame after ``now`` and its payload size."""
    kind = profile.kind
    if kind == "periodic":
        gap = profile.period_us
    elif kind == "uniform":
        gap = rng.randint(profile.min_interval_us, profile.max_interval_us)
    elif kind == "rate":
        gap = rate_interval(profile.payload_bytes, rate_bps if rate_bps else profile.rate_min_bps)
    elif kind == "situation":
        if period_us is None:
            raise ValueError("situation traffic needs the controller's period")
        gap = period_us
    else:
        raise ValueError(f"unknown traffic kind {kind!r}")
    return now + gap, profile.payload_bytes


class Frame:
    __slots__ = ("node", "group", "created_at", "payload", "head_at", "tx_start", "done")

    def __init__(self, node, group: str, created_at: int, payload: int):
        self.node = node
        self.group = group
        self.created_at = created_at
        self.payload = payload
        self.head_at: int | None = None
        self.tx_start: int | None = None
        self.done = False


@dataclass(frozen=True)
class DelaySample:
    node: object
    group: str
    created_at: int
    fulfilled_at: int
    head_at: int = 0
    tx_start: int = 0

    @property
    def delay(self) -> int:
        return self.fulfilled_at - self.created_at

    @property
    def queueing_wait(self) -> int:
        return self.head_at - self.created_at

    @property
    def access_delay(self) -> int:
        return self.tx_start - self.head_at

    @property
    def tx_time(self) -> int:
        return self.fulfilled_at - self.tx_start


@dataclass
class NodeCounters:
    created: int = 0
    fulfilled: int = 0
    dropped: int = 0


class Metrics:
    """Creation/fulfillment ledger for one scenario run."""

    def __init__(self):
        self.samples: list[DelaySample] = []
        self.counters: dict = {}
        self.groups: dict = {}
        self.dropped_by_group: dict = {}

    def register(self, node, group: str) -> None:
        self.counters.setdefault(node, NodeCounters())
        self.groups[node] = group
        self.dropped_by_group.setdefault(group, 0)

    def created(self, frame: Frame) -> None:
        self.counters[frame.node].created += 1

    def dropped(self, frame: Frame) -> None:
        if frame.done:
            raise HarnessError(f"dropping an already fulfilled frame of node {frame.node!r}")
        frame.done = True
        self.counters[frame.node].dropped += 1
        self.dropped_by_group[frame.group] += 1

    def record_fulfillment(self, frame: Frame, fulfilled_at: int, tx_start: int | None = None) -> None:
        if frame.done:
            raise HarnessError(f"frame of node {frame.node!r} fulfilled twice")
        if fulfilled_at < frame.created_at:
            raise HarnessError("fulfillment precedes creation")
        frame.done = True
        head = frame.head_at if frame.head_at is not None else frame.created_at
        start = tx_start if tx_start is not None else (frame.tx_start or head)
        self.counters[frame.node].fulfilled += 1
        self.samples.append(
            DelaySample(frame.node, frame.group, frame.created_at, fulfilled_at, head, start)
        )


class FrameBuffer:
    """Per-node FIFO; overflow drops the oldest frame."""

    __slots__ = ("frames", "limit", "metrics")

    def __init__(self, metrics: Metrics, limit: int = 64):
        self.frames: deque = deque()
        self.limit = limit
        self.metrics = metrics

    def __len__(self) -> int:
        return len(self.frames)

    def push(self, frame: Frame, now: int) -> None:
        self.metrics.created(frame)
        if len(self.frames) >= self.limit:
            self.metrics.dropped(self.frames.popleft())
            if self.frames:
                self.frames[0].head_at = now
        if not self.frames:
            frame.head_at = now
        self.frames.append(frame)

    def head(self) -> Frame | None:
        return self.frames[0] if self.frames else None

    def pop(self, now: int) -> Frame:
        frame = self.frames.popleft()
        if self.frames:
            self.frames[0].head_at = now
        return frame

    def drop_head(self, now: int) -> None:
        self.metrics.dropped(self.pop(now))

    def requeue_front(self, frame: Frame, now: int) -> None:
        """Put back a frame whose transmission failed; it stays the oldest."""
        self.frames.appendleft(frame)


@dataclass
class GroupStats:
    group: str
    samples: int
    total_delay_us: int
    p95_delay_us: int | None
    min_delay_us: int | None
    max_delay_us: int | None
    dropped: int

    @property
    def mean_delay_us(self) -> float | None:
        if not self.samples:
            return None
        return self.total_delay_us / self.samples

    @property
    def mean_delay_us_rounded(self) -> int | None:
        # half-up rounding on exact integer sums
        if not self.samples:
            return None
        return (2 * self.total_delay_us + self.samples) // (2 * self.samples)


@dataclass
class ScenarioStats:
    groups: dict
    overall: GroupStats
    created: int
    fulfilled: int
    dropped: int
    residual: int
    utilization: dict = field(default_factory=dict)
    gc_turns: int = 0
    warnings: dict = field(default_factory=dict)

    def rows(self, scheme: str, scenario: str) -> list[list]:
        out = []
        for g in sorted(self.groups):
            out.append(_row(scheme, scenario, self.groups[g]))
        out.append(_row(scheme, scenario, self.overall))
        return out


def _row(scheme: str, scenario: str, gs: GroupStats) -> list:
    mean = gs.mean_delay_us_rounded
    return [
        scheme,
        scenario,
        gs.group,
        gs.samples,
        "" if mean is None else mean,
        "" if gs.p95_delay_us is None else gs.p95_delay_us,
        gs.dropped,
    ]


def _group_stats(group: str, delays: list[int], dropped: int) -> GroupStats:
    if not delays:
        return GroupStats(group, 0, 0, None, None, None, dropped)
    delays = sorted(delays)
    rank = max(1, math.ceil(0.95 * len(delays)))
    return GroupStats(
        group, len(delays), sum(delays), delays[rank - 1], delays[0], delays[-1], dropped
    )


def summarize(
    samples: Iterable[DelaySample],
    warmup_us: int = 5_000_000,
    dropped_by_group: dict | None = None,
    groups: Iterable[str] = (),
) -> ScenarioStats:
    """Per-group and overall delay statistics over post-warm-up creations."""
    dropped_by_group = dropped_by_group or {}
    by_group: dict = {g: [] for g in groups}
    by_group.update({g: [] for g in dropped_by_group})
    everything = []
    for s in samples:
        if s.created_at < warmup_us:
            continue
        d = s.fulfilled_at - s.created_at
        by_group.setdefault(s.group, []).append(d)
        everything.append(d)
    stats = {g: _group_stats(g, d, dropped_by_group.get(g, 0)) for g, d in by_group.items()}
    overall = _group_stats("all", everything, sum(dropped_by_group.values()))
    return ScenarioStats(stats, overall, 0, 0, 0, 0)


def write_csv(rows: Iterable[list], fh: io.TextIOBase, header: bool = True) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    if header:
        writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row)
