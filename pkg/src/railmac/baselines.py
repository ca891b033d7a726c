"""Comparison MACs at the same abstraction level as the backoff queue.

* ``CsmaSlottedMac``: slotted 802.15.4-style CSMA/CA, contention confined to
  each node's TDMA time slot (same superframe as the backoff queue).
* ``LplMac``: B-MAC-style low-power listening; every frame carries a
  preamble at least one receiver check interval long.
* ``DcfMac``: 802.11 DCF with per-class contention windows.

The ``*_attempt`` functions run one frame's access procedure against a
channel oracle ``busy(t) -> bool`` and are used for closed-form checks.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

from .backoff_queue import SlotAllocator
from .params import ChannelParams, CsmaParams, DcfParams, LplParams
from .workload import expected_frame_rate


@dataclass(frozen=True)
class Success:
    delay: int
    tx_start: int


@dataclass(frozen=True)
class ChannelAccessFailure:
    backoffs: int
    elapsed: int


@dataclass(frozen=True)
class Retry:
    cw: int


def csma_attempt(
    params: CsmaParams,
    rng: random.Random,
    start: int,
    busy: Callable[[int], bool],
    tx_time: int,
    be: int | None = None,
) -> Success | ChannelAccessFailure:
    """Slotted CSMA/CA from backoff boundary ``start``: backoff, two CCAs, send."""
    unit = params.backoff_slot_us
    nb = 0
    be = params.be_min if be is None else be
    t = start
    while True:
        t += rng.randrange(2**be) * unit
        cw = 2
        while cw:
            if busy(t):
                break
            cw -= 1
            t += unit
        if cw == 0:
            return Success(t - start + tx_time, t)
        nb += 1
        be = min(be + 1, params.be_max)
        if nb > params.max_csma_backoffs:
            return ChannelAccessFailure(nb, t - start)


def dcf_attempt(
    params: DcfParams,
    rng: random.Random,
    start: int,
    busy: Callable[[int], bool],
    tx_time: int,
    cw: int | None = None,
) -> Success:
    """Count a uniform backoff down over idle slots after DIFS; freeze while busy."""
    cw = params.cw_min if cw is None else cw
    counter = rng.randint(0, cw)
    slot = params.slot_us
    t = start
    idle_for = 0
    while idle_for < params.difs_us:
        if busy(t):
            idle_for = 0
        else:
            idle_for += 1
        t += 1
    while counter:
        if busy(t):
            t += 1
            idle_for = 0
            while idle_for < params.difs_us:
                idle_for = 0 if busy(t) else idle_for + 1
                t += 1
            continue
        t += slot
        counter -= 1
    return Success(t - start + tx_time, t)


def lpl_attempt(
    params: LplParams,
    rng: random.Random,
    start: int,
    busy: Callable[[int], bool],
    tx_time: int,
) -> Success:
    """Initial backoff, CCA, congestion backoff while busy, then preamble + frame."""
    unit = params.backoff_unit_us
    t = start + rng.randint(1, params.initial_backoff_slots) * unit
    while busy(t):
        t += rng.randint(1, params.congestion_backoff_slots) * unit
    return Success(t - start + params.effective_preamble_us + tx_time, t)


def cw_after_collisions(params: DcfParams, collisions: int, cw_min: int | None = None,
                        cw_max: int | None = None) -> int:
    cw_min = params.cw_min if cw_min is None else cw_min
    cw_max = params.cw_max if cw_max is None else cw_max
    return min(2**collisions * (cw_min + 1) - 1, cw_max)


# ---------------------------------------------------------------------------
# slotted CSMA/CA inside TDMA slots


class _CsmaState:
    __slots__ = ("phase", "nb", "be", "backoff", "cw", "retries", "tx_at", "ready_at",
                 "in_flight", "collided")

    def __init__(self):
        self.phase = "idle"
        self.nb = 0
        self.be = 0
        self.backoff = 0
        self.cw = 2
        self.retries = 0
        self.tx_at = 0
        self.ready_at = 0
        self.in_flight = None
        self.collided = False


class CsmaSlottedMac:
    scheme = "csma154"

    def __init__(self, params: CsmaParams, channel: ChannelParams, trace=None):
        self.params = params
        self.channel = channel
        self.trace = trace
        self.allocator = SlotAllocator(params.slot_count, params.queue_capacity, None, params.slot_policy)
        self.members: dict[int, list] = {}
        self.net = None
        self._slot_end: dict = {}
        self._slot_start: dict = {}
        self._busy_until: dict = {}
        self._stepping: dict = {}
        self._busy: dict = {}
        self._occurrences: dict = {}
        self.collisions = 0
        self.access_failures = 0
        self.warnings: dict = {}

    def attach(self, net) -> None:
        self.net = net

    def start(self) -> None:
        roster = list(self.net.nodes)
        if self.allocator.policy == "balance":
            roster.sort(key=lambda n: -expected_frame_rate(n.profile, n.rate_bps, n.period_us))
        for node in roster:
            load = expected_frame_rate(node.profile, node.rate_bps, node.period_us)
            slot = self.allocator.allocate_slot(node.node_id, node.tier, load)
            node.mac = _CsmaState()
            self.members.setdefault(slot, []).append(node)
        for slot in self.members:
            self.members[slot].sort(key=lambda n: str(n.node_id))
        self.net.sim.at(self.net.sim.now(), "beacon", self._beacon)

    def in_flight(self, node) -> int:
        return 1 if node.mac.in_flight is not None else 0

    def _beacon(self) -> None:
        sim = self.net.sim
        now = sim.now()
        p = self.params
        for slot in sorted(self.members):
            start = now + p.beacon_time_us + (slot - 1) * p.slot_duration_us
            if start < self.net.horizon_us:
                sim.at(start, "slot", self._open_slot, slot)
        if now + p.beacon_interval_us < self.net.horizon_us:
            sim.at(now + p.beacon_interval_us, "beacon", self._beacon)

    def _open_slot(self, slot: int) -> None:
        now = self.net.sim.now()
        self._slot_start[slot] = now
        self._slot_end[slot] = now + self.params.slot_duration_us
        self._occurrences[slot] = self._occurrences.get(slot, 0) + 1
        for node in self.members[slot]:
            if node.mac.phase == "suspended":
                node.mac.phase = "backoff"
        self._stepping[slot] = True
        self._step(slot)

    def on_frame(self, node) -> None:
        slot = self.allocator.assignment[node.node_id]
        if self._stepping.get(slot):
            return
        now = self.net.sim.now()
        end = self._slot_end.get(slot, -1)
        if now >= end:
            return
        unit = self.params.backoff_slot_us
        start = self._slot_start[slot]
        b = start + -(-(now - start) // unit) * unit
        if b < end:
            self._stepping[slot] = True
            self.net.sim.at(b, "csma_step", self._step, slot)

    def _ack_total(self) -> int:
        return self.params.ack_turnaround_us + self.params.ack_us

    def _step(self, slot: int) -> None:
        net = self.net
        sim = net.sim
        b = sim.now()
        p = self.params
        unit = p.backoff_slot_us
        end = self._slot_end[slot]
        members = self.members[slot]
        tx_time = self.channel.tx_time

        starters = [n for n in members if n.mac.phase == "armed" and n.mac.tx_at == b]
        if starters:
            longest = 0
            for node in starters:
                st = node.mac
                frame = node.buffer.pop(b) if len(node.buffer) else None
                st.in_flight = frame
                st.phase = "wait"
                longest = max(longest, tx_time(frame.payload) if frame else 0)
            if len(starters) == 1 and starters[0].mac.in_flight is not None:
                node = starters[0]
                st = node.mac
                tx = tx_time(st.in_flight.payload)
                net.metrics.record_fulfillment(st.in_flight, b + tx, tx_start=b)
                st.in_flight = None
                st.collided = False
                st.retries = 0
                st.ready_at = b + tx + self._ack_total()
                self._busy_until[slot] = st.ready_at
                self._busy[slot] = self._busy.get(slot, 0) + tx
            else:
                self.collisions += 1
                self._busy_until[slot] = b + longest
                for node in starters:
                    st = node.mac
                    st.collided = True
                    st.ready_at = b + longest + p.ack_wait_us
            if self.trace is not None:
                kind = "data" if len(starters) == 1 else "collision"
                who = ",".join(str(n.node_id) for n in starters)
                self.trace.write(f"{b}\t{slot}\t{kind}\t{who}\t-\t-\n")

        busy = self._busy_until.get(slot, 0) > b
        work = False
        for node in members:
            st = node.mac
            if st.phase == "wait":
                if b < st.ready_at:
                    work = True
                    continue
                if st.collided:
                    st.collided = False
                    st.retries += 1
                    frame = st.in_flight
                    st.in_flight = None
                    if frame is not None:
                        if st.retries > p.max_frame_retries:
                            net.metrics.dropped(frame)
                            st.retries = 0
                        else:
                            node.buffer.requeue_front(frame, b)
                st.phase = "idle"
            if st.phase == "idle":
                if not len(node.buffer):
                    continue
                st.nb = 0
                st.be = min(p.be_min + st.retries, p.be_max)
                st.backoff = node.mac_rng.randrange(2**st.be)
                st.cw = 2
                st.phase = "backoff"
            if st.phase == "armed":
                work = True
                continue
            if st.phase != "backoff":
                continue
            work = True
            if st.backoff > 0:
                st.backoff -= 1
                continue
            head = node.buffer.head()
            if head is None:
                st.phase = "idle"
                continue
            if st.cw == 2 and b + 2 * unit + tx_time(head.payload) + self._ack_total() > end:
                st.phase = "suspended"
                continue
            if busy:
                st.nb += 1
                st.be = min(st.be + 1, p.be_max)
                st.cw = 2
                if st.nb > p.max_csma_backoffs:
                    self.access_failures += 1
                    node.buffer.drop_head(b)
                    st.phase = "idle"
                else:
                    st.backoff = node.mac_rng.randrange(2**st.be)
                continue
            st.cw -= 1
            if st.cw == 0:
                st.phase = "armed"
                st.tx_at = b + unit
        nxt = b + unit
        if work and nxt < end:
            sim.at(nxt, "csma_step", self._step, slot)
        else:
            self._stepping[slot] = False

    def utilization(self) -> dict:
        d = self.params.slot_duration_us
        return {s: self._busy.get(s, 0) / (n * d) for s, n in sorted(self._occurrences.items())}


# ---------------------------------------------------------------------------
# B-MAC low-power listening


class _LplState:
    __slots__ = ("phase", "in_flight", "timer")

    def __init__(self):
        self.phase = "idle"
        self.in_flight = None
        self.timer = None


class LplMac:
    scheme = "bmac"

    def __init__(self, params: LplParams, channel: ChannelParams, trace=None):
        self.params = params
        self.channel = channel
        self.trace = trace
        self.net = None
        self._air: list = []  # [start, end, node, collided, is_data]
        self.collisions = 0
        self.busy_time = 0
        self.warnings: dict = {}

    def attach(self, net) -> None:
        self.net = net

    def start(self) -> None:
        for node in self.net.nodes:
            node.mac = _LplState()

    def in_flight(self, node) -> int:
        return 1 if node.mac.in_flight is not None else 0

    def on_frame(self, node) -> None:
        if node.mac.phase == "idle":
            self._begin(node)

    def _begin(self, node) -> None:
        st = node.mac
        st.phase = "backoff"
        delay = node.mac_rng.randint(1, self.params.initial_backoff_slots) * self.params.backoff_unit_us
        self.net.sim.after(delay, "lpl_cca", self._cca, node)

    def _prune(self, t: int) -> None:
        if self._air and any(rec[1] <= t for rec in self._air):
            self._air = [rec for rec in self._air if rec[1] > t]

    def _cca(self, node) -> None:
        sim = self.net.sim
        t = sim.now()
        p = self.params
        self._prune(t)
        st = node.mac
        if not len(node.buffer):
            st.phase = "idle"
            return
        covered = [rec[1] for rec in self._air if rec[0] <= t - p.cca_vulnerable_us]
        if covered:
            # every CCA before the longest detectable record ends is certain to
            # find the medium busy, so draw through those without events
            until = max(covered)
            while t < until:
                t += node.mac_rng.randint(1, p.congestion_backoff_slots) * p.backoff_unit_us
            sim.at(t, "lpl_cca", self._cca, node)
            return
        frame = node.buffer.pop(t)
        st.in_flight = frame
        st.phase = "tx"
        dur = p.effective_preamble_us + self.channel.tx_time(frame.payload)
        rec = [t, t + dur, node, False, True]
        for other in self._air:
            if other[4]:
                other[3] = True
                rec[3] = True
        if rec[3]:
            self.collisions += 1
        self._air.append(rec)
        sim.at(t + dur, "lpl_end", self._end, rec)

    def _end(self, rec) -> None:
        sim = self.net.sim
        t = sim.now()
        p = self.params
        node = rec[2]
        st = node.mac
        frame = st.in_flight
        st.in_flight = None
        if not rec[3]:
            self.net.metrics.record_fulfillment(frame, t, tx_start=rec[0])
            self.busy_time += rec[1] - rec[0]
            ack_start = t + p.ack_turnaround_us
            self._air.append([ack_start, ack_start + p.ack_us, node, False, False])
            ready = ack_start + p.ack_us
        else:
            node.buffer.requeue_front(frame, t)
            ready = t + p.ack_wait_us
        st.phase = "wait"
        sim.at(ready, "lpl_ready", self._ready, node)

    def _ready(self, node) -> None:
        node.mac.phase = "idle"
        if len(node.buffer):
            self._begin(node)

    def utilization(self) -> dict:
        return {0: self.busy_time / max(1, self.net.sim.now())}


# ---------------------------------------------------------------------------
# 802.11 DCF


class _DcfState:
    __slots__ = ("counter", "origin", "cw", "cw_min", "cw_max", "contending", "in_flight")

    def __init__(self, cw_min: int, cw_max: int):
        self.counter = 0
        self.origin = 0
        self.cw = cw_min
        self.cw_min = cw_min
        self.cw_max = cw_max
        self.contending = False
        self.in_flight = None


class DcfMac:
    """Event-level DCF: backoff counters advance only across idle slot times.

    Counting for every contender starts DIFS after the medium goes idle;
    when the earliest counter expires the others freeze with whatever whole
    slots they have left.
    """

    scheme = "dcf"

    def __init__(self, params: DcfParams, channel: ChannelParams, trace=None):
        self.params = params
        self.channel = channel
        self.trace = trace
        self.net = None
        self.busy_until = 0
        self._next = None
        self.collisions = 0
        self.busy_time = 0
        self.warnings: dict = {}

    def attach(self, net) -> None:
        self.net = net

    def start(self) -> None:
        for node in self.net.nodes:
            lo, hi = self.params.class_window(node.access_class)
            node.mac = _DcfState(lo, hi)

    def in_flight(self, node) -> int:
        return 1 if node.mac.in_flight is not None else 0

    def on_frame(self, node) -> None:
        st = node.mac
        if not st.contending and st.in_flight is None:
            self._join(node, self.net.sim.now())
            self._reschedule()

    def _join(self, node, t: int) -> None:
        st = node.mac
        st.contending = True
        st.counter = node.mac_rng.randint(0, st.cw)
        st.origin = max(t, self.busy_until) + self.params.difs_us

    def _expiry(self, st: _DcfState) -> int:
        return st.origin + st.counter * self.params.slot_us

    def _reschedule(self) -> None:
        best = None
        for node in self.net.nodes:
            st = node.mac
            if st.contending:
                e = self._expiry(st)
                if best is None or e < best:
                    best = e
        if self._next is not None:
            if best is not None and self._next.fire_at == best:
                return
            self.net.sim.cancel(self._next)
            self._next = None
        if best is not None:
            self._next = self.net.sim.at(best, "dcf_tx", self._transmit)

    def _transmit(self) -> None:
        self._next = None
        sim = self.net.sim
        t = sim.now()
        p = self.params
        slot = p.slot_us
        winners = []
        for node in self.net.nodes:
            st = node.mac
            if not st.contending:
                continue
            if self._expiry(st) == t:
                winners.append(node)
            elif st.origin < t:
                st.counter -= (t - st.origin) // slot
        tx_time = self.channel.tx_time
        longest = 0
        for node in winners:
            st = node.mac
            st.contending = False
            st.in_flight = node.buffer.pop(t)
            longest = max(longest, tx_time(st.in_flight.payload))
        if len(winners) == 1:
            node = winners[0]
            st = node.mac
            tx = tx_time(st.in_flight.payload)
            self.net.metrics.record_fulfillment(st.in_flight, t + tx, tx_start=t)
            st.in_flight = None
            st.cw = st.cw_min
            end = t + tx + p.sifs_us + p.ack_us
            self.busy_time += tx
        else:
            self.collisions += 1
            end = t + longest + p.sifs_us + p.ack_us
            for node in winners:
                st = node.mac
                node.buffer.requeue_front(st.in_flight, t)
                st.in_flight = None
                st.cw = min(2 * st.cw + 1, st.cw_max)
        self.busy_until = end
        if self.trace is not None:
            kind = "data" if len(winners) == 1 else "collision"
            self.trace.write(f"{t}\t0\t{kind}\t{','.join(str(n.node_id) for n in winners)}\t-\t-\n")
        for node in self.net.nodes:
            st = node.mac
            if st.contending:
                st.origin = end + p.difs_us
        for node in winners:
            if len(node.buffer):
                self._join(node, end)
        self._reschedule()

    def utilization(self) -> dict:
        return {0: self.busy_time / max(1, self.net.sim.now())}
