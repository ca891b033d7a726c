"""Backoff-queueing MAC driven over a beacon-framed TDMA superframe.

Each beacon interval holds ``slot_count`` equal time slots after the beacon.
A slot hosts whole turns only; a turn that would overrun the slot waits for
the slot's next occurrence.
"""
from __future__ import annotations

from typing import Callable, TextIO

from .backoff_queue import (
    CONTROL_PAYLOAD_BYTES,
    BackoffQueue,
    NodeMacState,
    SlotAllocator,
    Tier,
    trace_line,
)
from .params import ChannelParams, MacParams
from .workload import expected_frame_rate


class BackoffQueueMac:
    scheme = "backoff_queue"

    def __init__(self, params: MacParams, channel: ChannelParams, trace: TextIO | None = None,
                 check: bool = True, probe: bool = True, safety_gateway_us: int | None = None):
        self.params = params
        self.channel = channel
        self.trace = trace
        self.check = check
        self.probe = probe
        self.allocator = SlotAllocator(
            params.slot_count, params.queue_capacity, params.reserved_safety_slot,
            params.slot_policy,
        )
        self.queues: dict[int, BackoffQueue] = {}
        self.slot_of: dict = {}
        self.net = None
        self.gc_turns = 0
        self.warnings: dict = {}
        self._busy: dict = {}
        self._occurrences: dict = {}
        self._slot_end: dict = {}
        self._moves: dict = {}
        self.joined_at: dict = {}
        self.on_turn: list[Callable] = []
        self.started = False
        self.safety_gateway_us = safety_gateway_us
        self.bypass: dict = {}

    # -- wiring ------------------------------------------------------------

    def attach(self, net) -> None:
        self.net = net

    def queue(self, slot: int) -> BackoffQueue:
        q = self.queues.get(slot)
        if q is None:
            p = self.params
            q = BackoffQueue(
                p.queue_capacity, p.backoff_slot_us, self.channel.tx_time, time_slot=slot,
                liveness_threshold=p.liveness_threshold, check=self.check,
            )
            q.payload_of = self._payload_of
            self.queues[slot] = q
        return q

    def _payload_of(self, state: NodeMacState) -> int:
        frame = self.net.by_id[state.node_id].buffer.head()
        return frame.payload if frame is not None else CONTROL_PAYLOAD_BYTES

    def admit(self, node, tier: Tier | None = None) -> int:
        tier = node.tier if tier is None else tier
        load = expected_frame_rate(node.profile, node.rate_bps, node.period_us)
        slot = self.allocator.allocate_slot(node.node_id, tier, load)
        state = NodeMacState(node.node_id, has_pending_data=len(node.buffer) > 0)
        node.mac = state
        self.queue(slot).request_admission(state)
        self.slot_of[node.node_id] = slot
        return slot

    def start(self) -> None:
        if not self.started:
            roster = [n for n in self.net.nodes if n.mac is None and n.alive]
            if self.params.slot_policy == "balance":
                # heaviest first, so the greedy spread approximates an even split
                roster.sort(key=lambda n: -expected_frame_rate(n.profile, n.rate_bps, n.period_us))
            for node in roster:
                self.admit(node)
            self.started = True
        self.net.sim.at(self.net.sim.now(), "beacon", self._beacon)

    def in_flight(self, node) -> int:
        return 0

    def on_frame(self, node) -> None:
        if node.node_id in self.bypass:
            self._serve_bypass(node)

    # -- relocation between slots (dequeue here, enqueue there) -------------

    def _reserved_has_room(self) -> bool:
        reserved = self.allocator.reserved_safety_slot
        if reserved is None:
            return True
        return self.allocator.counts.get(reserved, 0) < self.allocator.capacity

    def relocate(self, node, tier: Tier) -> bool:
        """Move ``node`` to a slot for ``tier`` through a protocol-correct dequeue.

        With a safety gateway configured, safety-critical nodes leave the MAC
        altogether and are served by the gateway instead.
        """
        if node.node_id in self._moves:
            self._moves[node.node_id] = tier
            return True
        if node.node_id in self.bypass:
            if tier is Tier.SAFETY_CRITICAL:
                return False
            del self.bypass[node.node_id]
            self.admit(node, tier)
            return True
        if tier is Tier.SAFETY_CRITICAL and self.safety_gateway_us is None and not self._reserved_has_room():
            self.warnings["reserved_slot_full"] = self.warnings.get("reserved_slot_full", 0) + 1
            return False
        state = node.mac
        slot = self.slot_of[node.node_id]
        q = self.queues[slot]
        if state.node_id not in q.members:
            return False
        q.request_dequeue(state)
        self._moves[node.node_id] = tier
        return True

    def _finish_move(self, node_id) -> None:
        tier = self._moves.pop(node_id)
        node = self.net.by_id[node_id]
        self.allocator.release(node_id)
        self.slot_of.pop(node_id, None)
        if tier is Tier.SAFETY_CRITICAL and self.safety_gateway_us is not None:
            self.bypass[node_id] = None
            self._serve_bypass(node)
            return
        try:
            self.admit(node, tier)
        except Exception:
            self.warnings["relocation_failed"] = self.warnings.get("relocation_failed", 0) + 1
            self.admit(node, node.tier if node.tier is not tier else Tier.REGULAR)

    def _serve_bypass(self, node) -> None:
        if self.bypass.get(node.node_id) is not None or not len(node.buffer):
            return
        sim = self.net.sim
        self.bypass[node.node_id] = sim.after(self.safety_gateway_us, "gateway", self._bypass_done, node)

    def _bypass_done(self, node) -> None:
        now = self.net.sim.now()
        if node.node_id not in self.bypass:
            return
        self.bypass[node.node_id] = None
        frame = node.buffer.pop(now)
        start = max(now - self.safety_gateway_us, frame.head_at or frame.created_at)
        self.net.metrics.record_fulfillment(frame, now, tx_start=start)
        if self.trace is not None:
            self.trace.write(f"{now}\t0\tgateway\t{node.node_id}\t-\t-\n")
        self._serve_bypass(node)

    # -- superframe ----------------------------------------------------------

    def _beacon(self) -> None:
        sim = self.net.sim
        now = sim.now()
        p = self.params
        slot_dur = p.slot_duration_us
        for slot in sorted(self.queues):
            q = self.queues[slot]
            if self.probe and q.coordinator.roster:
                q.probe_next()
            start = now + p.beacon_time_us + (slot - 1) * slot_dur
            if start < self.net.horizon_us:
                sim.at(start, "slot", self._slot_start, slot)
        nxt = now + p.beacon_interval_us
        if nxt < self.net.horizon_us:
            sim.at(nxt, "beacon", self._beacon)

    def _slot_start(self, slot: int) -> None:
        now = self.net.sim.now()
        self._slot_end[slot] = now + self.params.slot_duration_us
        self._occurrences[slot] = self._occurrences.get(slot, 0) + 1
        self._turn(slot)

    def _active(self, q: BackoffQueue) -> bool:
        c = q.coordinator
        return bool(q.members or c.admissions or c.pending_sort is not None)

    def _turn(self, slot: int) -> None:
        net = self.net
        sim = net.sim
        now = sim.now()
        q = self.queues[slot]
        if not self._active(q):
            return
        by_id = net.by_id
        for state in q.members.values():
            state.has_pending_data = len(by_id[state.node_id].buffer) > 0
        for node_id in q.coordinator.admissions:
            by_id[node_id].mac.has_pending_data = len(by_id[node_id].buffer) > 0
        plan = q.plan_turn()
        end = now + plan.duration
        if end > self._slot_end[slot]:
            return
        q.apply(plan)
        kind = plan.kind
        if kind == "enqueue":
            self.joined_at.setdefault(plan.transmitter, end)
        if plan.delivered:
            node = by_id[plan.transmitter]
            frame = node.buffer.pop(now)
            tx = self.channel.tx_time(frame.payload)
            net.metrics.record_fulfillment(frame, end, tx_start=end - tx)
        if kind not in ("idle", "collect_idle", "grant_lost"):
            self._busy[slot] = self._busy.get(slot, 0) + plan.duration
        if plan.was_collection:
            self.gc_turns += 1
        if self.trace is not None:
            self.trace.write(trace_line(now, slot, plan, q.snapshot()))
        for hook in self.on_turn:
            hook(now, slot, plan)
        if kind == "sort":
            out_id = None
            # the out node is the one no longer in this slot's roster
            for node_id in list(self._moves):
                if self.slot_of.get(node_id) == slot and node_id not in q.coordinator.roster:
                    out_id = node_id
                    break
            if out_id is not None:
                self._finish_move(out_id)
        if self._active(q):
            sim.at(end, "turn", self._turn, slot)

    def utilization(self) -> dict:
        slot_dur = self.params.slot_duration_us
        return {
            s: self._busy.get(s, 0) / (n * slot_dur) for s, n in sorted(self._occurrences.items())
        }
