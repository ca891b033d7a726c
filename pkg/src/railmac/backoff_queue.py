"""Backoff-queueing MAC: per-time-slot virtual queue kept by carrier sensing.

Each member knows only its own queue position. On every turn the
non-deferring member with the smallest position transmits after that many
backoff slots; members above it step down by one and the transmitter
re-enters at the tail (position N). A newly admitted node transmits with
zero backoff, so every member steps down and the newcomer takes N.

Orderly exits (dequeue) are repaired by a coordinator broadcast on the
following turn; silent exits leave garbage slots that a counter-driven
collection sweep of N turns removes.

``BackoffQueueState`` is a global ledger used only to cross-check the
distributed rules. With ``strict_ledger`` the ledger is sealed while
protocol code runs, and any read raises ``LedgerAccessError``.
"""
from __future__ import annotations

import enum
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

NodeId = Hashable

CONTROL_PAYLOAD_BYTES = 4


class Mode(enum.Enum):
    NORMAL = "normal"
    COLLECTING = "collecting"


class Tier(str, enum.Enum):
    REGULAR = "regular"
    ELEVATED = "elevated"
    SAFETY_CRITICAL = "safety_critical"


class Liveness(enum.Enum):
    ALIVE = "alive"
    SILENT = "silent"


class Rejected(Exception):
    """Admission refused."""


class SlotFull(Rejected):
    pass


class NetworkFull(Rejected):
    pass


class ProtocolViolation(AssertionError):
    """A queue invariant or ledger cross-check failed."""

    def __init__(self, message: str, snapshot: str = ""):
        super().__init__(f"{message} [{snapshot}]" if snapshot else message)
        self.snapshot = snapshot


class LedgerAccessError(ProtocolViolation):
    pass


class NodeMacState:
    """What a single node knows about itself."""

    __slots__ = (
        "node_id",
        "position",
        "last_position",
        "has_pending_data",
        "deferring",
        "memorized_collection_position",
        "wants_dequeue",
        "alive",
    )

    def __init__(self, node_id: NodeId, has_pending_data: bool = False):
        self.node_id = node_id
        self.position: int | None = None
        self.last_position: int | None = None
        self.has_pending_data = has_pending_data
        self.deferring = False
        self.memorized_collection_position: int | None = None
        self.wants_dequeue = False
        self.alive = True

    def __repr__(self) -> str:
        flags = "" if self.alive else " dead"
        return f"NodeMacState({self.node_id!r}, pos={self.position}{flags})"

    def backoff(self) -> int | None:
        """Backoff slots before this node would transmit, or None if it defers."""
        if self.deferring or not (self.has_pending_data or self.wants_dequeue):
            return None
        return self.position

    def sense(self, p_eff: int) -> None:
        self.last_position = self.position
        if self.position > p_eff:
            self.position -= 1

    def sense_collection(self) -> None:
        self.last_position = self.position
        self.position -= 1

    def enter_tail(self, capacity: int) -> None:
        self.last_position = self.position
        self.position = capacity

    def apply_sort(self, p_out: int) -> None:
        last = self.last_position
        if last > p_out:
            self.position = last
        elif last < p_out:
            self.position = last + 1
        else:
            raise ProtocolViolation(f"node {self.node_id!r} still claims vacated position {p_out}")
        self.last_position = self.position


def defer(node: NodeMacState) -> NodeMacState:
    """Decline the current turn; the flag clears when the turn resolves."""
    node.deferring = True
    return node


@dataclass
class CoordinatorState:
    """Cluster-head view of one time slot: counts and rosters, never positions."""

    capacity: int
    liveness_threshold: int = 3
    node_count: int = 0
    roster: list = field(default_factory=list)
    misses: dict = field(default_factory=dict)
    pending_sort: tuple | None = None
    admissions: deque = field(default_factory=deque)
    collection_requested: bool = False
    probe_cursor: int = 0

    def is_full(self) -> bool:
        return self.node_count + len(self.admissions) >= self.capacity


@dataclass
class TurnOutcome:
    kind: str
    transmitter: NodeId | None
    p_eff: int | None
    duration: int
    was_dequeue: bool = False
    was_collection: bool = False
    delivered: bool = False
    payload_bytes: int = 0


class BackoffQueueState:
    """Global per-slot ledger, updated from turn outcomes for cross-checking."""

    def __init__(self, capacity: int, time_slot: int = 1):
        self.capacity = capacity
        self.time_slot = time_slot
        self._occupancy: dict = {}
        self._pre_dequeue: dict | None = None
        self.mode = Mode.NORMAL
        self.counter = 0
        self._sealed = False

    @property
    def occupancy(self) -> dict:
        if self._sealed:
            raise LedgerAccessError("protocol code read the global ledger")
        return self._occupancy

    @contextmanager
    def sealed(self):
        self._sealed = True
        try:
            yield
        finally:
            self._sealed = False

    def remove(self, node_id: NodeId) -> None:
        self._occupancy.pop(node_id, None)
        if self._pre_dequeue is not None:
            self._pre_dequeue.pop(node_id, None)

    def apply(self, outcome: TurnOutcome) -> None:
        occ = self._occupancy
        n = self.capacity
        kind = outcome.kind
        if kind == "enqueue":
            for k in occ:
                occ[k] -= 1
            occ[outcome.transmitter] = n
        elif kind in ("data", "dequeue"):
            p = outcome.p_eff
            if kind == "dequeue":
                self._pre_dequeue = dict(occ)
                del self._pre_dequeue[outcome.transmitter]
            for k, q in occ.items():
                if q > p:
                    occ[k] = q - 1
            if kind == "dequeue":
                del occ[outcome.transmitter]
            else:
                occ[outcome.transmitter] = n
        elif kind == "sort":
            p_out = outcome.p_eff
            pre = self._pre_dequeue or {}
            for k in list(occ):
                q = pre[k]
                occ[k] = q + 1 if q < p_out else q
            self._pre_dequeue = None
        elif kind == "collect":
            for k in occ:
                occ[k] -= 1
            occ[outcome.transmitter] = n

    def check(self, garbage: bool) -> None:
        positions = sorted(self._occupancy.values())
        if len(set(positions)) != len(positions):
            raise ProtocolViolation("duplicate positions", self.render())
        if positions and (positions[0] < 1 or positions[-1] > self.capacity):
            raise ProtocolViolation("position out of range", self.render())
        if self.mode is Mode.NORMAL and not garbage and self._pre_dequeue is None:
            k = len(positions)
            if positions != list(range(self.capacity - k + 1, self.capacity + 1)):
                raise ProtocolViolation("queue not tail-anchored", self.render())

    def render(self) -> str:
        return render_snapshot(self._occupancy.items())


def render_snapshot(pairs: Iterable[tuple]) -> str:
    return ",".join(f"{k}:{p}" for k, p in sorted(pairs, key=lambda kv: kv[1]))


def trace_line(ticks: int, slot: int, outcome: TurnOutcome, snapshot: str) -> str:
    """One protocol-trace record, tab separated, newline terminated."""
    tx = "-" if outcome.transmitter is None else str(outcome.transmitter)
    p_eff = "-" if outcome.p_eff is None else str(outcome.p_eff)
    return f"{ticks}\t{slot}\t{outcome.kind}\t{tx}\t{p_eff}\t{snapshot}\n"


class BackoffQueue:
    """One TDMA time slot: its members, its coordinator view and its ledger.

    ``tx_time`` maps a payload size in bytes to an air time in microseconds.
    """

    def __init__(
        self,
        capacity: int,
        backoff_slot: int,
        tx_time: Callable[[int], int],
        time_slot: int = 1,
        liveness_threshold: int = 3,
        tier: Tier | None = None,
        check: bool = True,
        strict_ledger: bool = False,
    ):
        if capacity < 1 or backoff_slot < 1:
            raise ValueError("capacity and backoff_slot must be positive")
        self.capacity = capacity
        self.backoff_slot = backoff_slot
        self.tx_time = tx_time
        self.time_slot = time_slot
        self.tier = tier
        self.members: dict = {}
        self.coordinator = CoordinatorState(capacity, liveness_threshold)
        self.ledger = BackoffQueueState(capacity, time_slot)
        self.mode = Mode.NORMAL
        self.counter = 0
        self._collection_seen: list = []
        self.collection_turns = 0
        self.check = check
        self.strict_ledger = strict_ledger
        self._newcomers: dict = {}
        self.payload_of: Callable[[NodeMacState], int] = lambda node: CONTROL_PAYLOAD_BYTES

    # -- admission ---------------------------------------------------------

    def request_admission(self, node: NodeMacState) -> None:
        if node.node_id in self.members or node.node_id in self._newcomers:
            raise ValueError(f"node {node.node_id!r} already in slot {self.time_slot}")
        if self.coordinator.is_full():
            raise SlotFull(f"slot {self.time_slot} is full")
        self._newcomers[node.node_id] = node
        self.coordinator.admissions.append(node.node_id)

    def enqueue(self, node: NodeMacState) -> TurnOutcome:
        """Admit ``node`` and run its entry turn immediately."""
        self.request_admission(node)
        plan = self.plan_turn()
        if plan.kind != "enqueue":
            raise ProtocolViolation(f"admission blocked by a pending {plan.kind} turn")
        return self.apply(plan)

    def request_dequeue(self, node: NodeMacState) -> None:
        if node.node_id not in self.members:
            raise KeyError(node.node_id)
        node.wants_dequeue = True

    def kill(self, node_id: NodeId) -> None:
        """Power the node off without any protocol exchange."""
        node = self.members.get(node_id)
        if node is None:
            node = self._newcomers.get(node_id)
        if node is not None:
            node.alive = False
        self.ledger.remove(node_id)

    # -- liveness and garbage collection ------------------------------------

    def probe_liveness(self, node_id: NodeId) -> Liveness:
        coord = self.coordinator
        node = self.members.get(node_id)
        if node is not None and node.alive:
            coord.misses[node_id] = 0
            return Liveness.ALIVE
        misses = coord.misses.get(node_id, 0) + 1
        coord.misses[node_id] = misses
        if misses == coord.liveness_threshold:
            coord.collection_requested = True
        return Liveness.SILENT

    def probe_next(self) -> tuple | None:
        """Probe one roster member, round-robin."""
        coord = self.coordinator
        if not coord.roster:
            return None
        coord.probe_cursor %= len(coord.roster)
        node_id = coord.roster[coord.probe_cursor]
        coord.probe_cursor += 1
        return node_id, self.probe_liveness(node_id)

    def begin_collection(self) -> bool:
        if self.mode is Mode.COLLECTING:
            return False
        self.mode = Mode.COLLECTING
        self.ledger.mode = Mode.COLLECTING
        self.counter = 1
        self._collection_seen = []
        for node in self.members.values():
            if node.alive:
                node.memorized_collection_position = node.position
        return True

    def _finish_collection(self) -> None:
        coord = self.coordinator
        seen = self._collection_seen
        coord.node_count = len(seen)
        for node_id in coord.roster:
            if node_id not in seen:
                self.members.pop(node_id, None)
                coord.misses.pop(node_id, None)
        coord.roster = [n for n in coord.roster if n in seen]
        coord.collection_requested = False
        for node in self.members.values():
            node.memorized_collection_position = None
        self.mode = Mode.NORMAL
        self.ledger.mode = Mode.NORMAL
        self.counter = 0

    # -- turns -------------------------------------------------------------

    def idle_duration(self) -> int:
        top = self.capacity if self.coordinator.node_count else 0
        return (top + 1) * self.backoff_slot

    def plan_turn(self) -> TurnOutcome:
        """Resolve who transmits this turn without changing any node state.

        Starting a requested collection happens here since the coordinator
        orders it at the start of a turn.
        """
        coord = self.coordinator
        if coord.pending_sort is not None:
            _, p_out = coord.pending_sort
            return TurnOutcome(
                "sort", None, p_out, self.tx_time(CONTROL_PAYLOAD_BYTES), was_dequeue=True,
                payload_bytes=CONTROL_PAYLOAD_BYTES,
            )
        if coord.collection_requested and self.mode is Mode.NORMAL:
            self.begin_collection()
        if self.mode is Mode.COLLECTING:
            return self._plan_collection()
        if coord.admissions and coord.node_count < self.capacity:
            node = self._newcomers[coord.admissions[0]]
            if node.alive:
                size = self.payload_of(node)
                return TurnOutcome(
                    "enqueue", node.node_id, 0, self.tx_time(size),
                    delivered=node.has_pending_data, payload_bytes=size,
                )
            # a dead newcomer never answers its grant
            return TurnOutcome("grant_lost", node.node_id, None, self.idle_duration())
        if self.strict_ledger:
            with self.ledger.sealed():
                return self._plan_contention()
        return self._plan_contention()

    def _plan_contention(self) -> TurnOutcome:
        winner = None
        best = None
        tie = False
        for node in self.members.values():
            if not node.alive:
                continue
            b = node.backoff()
            if b is None:
                continue
            if best is None or b < best:
                best, winner, tie = b, node, False
            elif b == best:
                tie = True
        if tie:
            raise ProtocolViolation(f"two members expire at backoff {best}")
        if winner is None:
            return TurnOutcome("idle", None, None, self.idle_duration())
        size = self.payload_of(winner)
        kind = "dequeue" if winner.wants_dequeue else "data"
        return TurnOutcome(
            kind, winner.node_id, best, best * self.backoff_slot + self.tx_time(size),
            was_dequeue=kind == "dequeue", delivered=winner.has_pending_data,
            payload_bytes=size,
        )

    def _plan_collection(self) -> TurnOutcome:
        c = self.counter
        for node in self.members.values():
            if node.alive and node.memorized_collection_position == c:
                size = self.payload_of(node)
                return TurnOutcome(
                    "collect", node.node_id, 0, self.tx_time(size), was_collection=True,
                    delivered=node.has_pending_data, payload_bytes=size,
                )
        return TurnOutcome("collect_idle", None, None, self.backoff_slot, was_collection=True)

    def apply(self, outcome: TurnOutcome) -> TurnOutcome:
        if self.strict_ledger:
            with self.ledger.sealed():
                self._apply(outcome)
        else:
            self._apply(outcome)
        self.ledger.apply(outcome)
        if self.check:
            self.verify()
        return outcome

    def _apply(self, outcome: TurnOutcome) -> None:
        kind = outcome.kind
        coord = self.coordinator
        n = self.capacity
        members = self.members
        if kind == "enqueue":
            node = self._newcomers.pop(coord.admissions.popleft())
            for other in members.values():
                if other.alive:
                    other.sense(0)
            node.enter_tail(n)
            members[node.node_id] = node
            coord.node_count += 1
            coord.roster.append(node.node_id)
        elif kind == "grant_lost":
            self._newcomers.pop(coord.admissions.popleft())
        elif kind in ("data", "dequeue"):
            p = outcome.p_eff
            tx = members[outcome.transmitter]
            for other in members.values():
                if other is not tx and other.alive:
                    other.sense(p)
            if kind == "data":
                tx.enter_tail(n)
            else:
                tx.position = None
                tx.wants_dequeue = False
                del members[tx.node_id]
                coord.pending_sort = (tx.node_id, p)
        elif kind == "sort":
            out_id, p_out = coord.pending_sort
            for node in members.values():
                if node.alive:
                    node.apply_sort(p_out)
            coord.pending_sort = None
            coord.node_count -= 1
            coord.roster.remove(out_id)
            coord.misses.pop(out_id, None)
        elif kind == "collect":
            tx = members[outcome.transmitter]
            for other in members.values():
                if other is not tx and other.alive:
                    other.sense_collection()
            tx.enter_tail(n)
            self._collection_seen.append(tx.node_id)
        if outcome.was_collection:
            self.collection_turns += 1
            self.counter += 1
            if self.counter > n:
                self._finish_collection()
        for node in members.values():
            node.deferring = False

    def run_turn(self, arrival: NodeMacState | None = None) -> TurnOutcome:
        if arrival is not None:
            self.request_admission(arrival)
        return self.apply(self.plan_turn())

    # -- inspection --------------------------------------------------------

    def has_garbage(self) -> bool:
        return any(not m.alive for m in self.members.values())

    def live_members(self) -> list:
        return [m for m in self.members.values() if m.alive]

    def snapshot(self) -> str:
        return render_snapshot((m.node_id, m.position) for m in self.members.values() if m.alive)

    def verify(self) -> None:
        ledger = self.ledger
        occ = ledger._occupancy
        live = {m.node_id: m.position for m in self.members.values() if m.alive}
        if live != occ:
            raise ProtocolViolation(
                "self-known positions disagree with ledger " + ledger.render(), self.snapshot()
            )
        ledger.check(self.has_garbage())
        if self.coordinator.node_count > self.capacity:
            raise ProtocolViolation("coordinator count exceeds capacity", self.snapshot())


@dataclass
class SlotAllocator:
    """Coordinator-side mapping of nodes to time slots.

    ``policy='pack'`` fills the lowest-id non-full slot of the right tier
    first; ``'spread'`` claims a fresh slot before doubling up;
    ``'balance'`` picks the non-full slot with the least offered load
    (frames per second), lowest id on ties.
    """

    slot_count: int
    capacity: int
    reserved_safety_slot: int | None = None
    policy: str = "pack"
    tiers: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    loads: dict = field(default_factory=dict)
    assignment: dict = field(default_factory=dict)
    node_load: dict = field(default_factory=dict)

    def _candidates(self) -> list[int]:
        return [s for s in range(1, self.slot_count + 1) if s != self.reserved_safety_slot]

    def allocate_slot(self, node_id: NodeId, qos_tier: Tier = Tier.REGULAR, load: float = 0.0) -> int:
        if node_id in self.assignment:
            raise ValueError(f"node {node_id!r} already assigned")
        slot = None
        if qos_tier is Tier.SAFETY_CRITICAL and self.reserved_safety_slot is not None:
            if self.counts.get(self.reserved_safety_slot, 0) < self.capacity:
                slot = self.reserved_safety_slot
        if slot is None:
            slot = self._pick(qos_tier)
        if slot is None:
            raise NetworkFull(f"no slot can take node {node_id!r}")
        self.tiers.setdefault(slot, qos_tier)
        self.counts[slot] = self.counts.get(slot, 0) + 1
        self.loads[slot] = self.loads.get(slot, 0.0) + load
        self.assignment[node_id] = slot
        self.node_load[node_id] = load
        return slot

    def _pick(self, tier: Tier) -> int | None:
        open_same = [
            s for s in self._candidates()
            if self.tiers.get(s) is tier and self.counts.get(s, 0) < self.capacity
        ]
        fresh = [s for s in self._candidates() if s not in self.tiers]
        if self.policy == "spread":
            order = fresh + open_same
        elif self.policy == "balance":
            order = sorted(open_same + fresh, key=lambda s: (self.loads.get(s, 0.0), s))
        else:
            order = open_same + fresh
        return order[0] if order else None

    def release(self, node_id: NodeId) -> int:
        slot = self.assignment.pop(node_id)
        self.counts[slot] -= 1
        self.loads[slot] = self.loads.get(slot, 0.0) - self.node_load.pop(node_id, 0.0)
        if self.counts[slot] == 0 and slot != self.reserved_safety_slot:
            del self.tiers[slot]
            del self.counts[slot]
            self.loads.pop(slot, None)
        return slot
