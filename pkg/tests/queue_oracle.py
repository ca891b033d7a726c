"""Brute-force reference for one backoff-queue time slot.

The queue is an explicit list of N cells, cell i holding position i+1.
A transmission at cell i closes the gap and appends the transmitter at the
tail; a newcomer shifts everyone down one cell. Dead nodes stay in their
cell (garbage) and shift with everyone else until a collection sweep drops
them. Nothing here is shared with the package under test.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

SLOT = 10
SIZE = 32
CONTROL = 4


def air(nbytes: int) -> int:
    return 100 + nbytes


@dataclass
class ListQueue:
    n: int
    cells: list = field(default_factory=list)
    alive: set = field(default_factory=set)
    pending: set = field(default_factory=set)
    leaving: set = field(default_factory=set)
    waiting: list = field(default_factory=list)
    count: int = 0
    pre_sort: tuple | None = None  # (cells before the dequeue turn, index)
    sweep: dict | None = None  # node -> memorized position
    counter: int = 0
    seen: list = field(default_factory=list)
    sweep_wanted: bool = False

    def __post_init__(self):
        if not self.cells:
            self.cells = [None] * self.n

    def positions(self) -> dict:
        return {c: i + 1 for i, c in enumerate(self.cells) if c is not None and c in self.alive}

    def is_full(self) -> bool:
        return self.count + len(self.waiting) >= self.n

    def _send(self, i: int) -> None:
        node = self.cells[i]
        self.cells = self.cells[:i] + self.cells[i + 1:] + [node]

    def turn(self) -> tuple:
        if self.pre_sort is not None:
            pre, i = self.pre_sort
            new = [None] + pre[:i] + pre[i + 1:]
            self.cells = new
            self.pre_sort = None
            self.count -= 1
            return ("sort", None, i + 1, air(CONTROL))
        if self.sweep_wanted and self.sweep is None:
            self.sweep = {c: i + 1 for i, c in enumerate(self.cells) if c is not None and c in self.alive}
            self.counter = 1
            self.seen = []
        if self.sweep is not None:
            c = self.counter
            who = [node for node, p in self.sweep.items() if p == c and node in self.alive]
            if who:
                node = who[0]
                self._send(self.cells.index(node))
                self.seen.append(node)
                out = ("collect", node, 0, air(SIZE))
            else:
                out = ("collect_idle", None, None, SLOT)
            self.counter += 1
            if self.counter > self.n:
                self.cells = [c if c in self.seen else None for c in self.cells]
                self.count = len(self.seen)
                self.sweep = None
                self.sweep_wanted = False
            return out
        if self.waiting and self.count < self.n:
            node = self.waiting.pop(0)
            assert self.cells[0] is None
            self.cells = self.cells[1:] + [node]
            self.count += 1
            return ("enqueue", node, 0, air(SIZE))
        for i, node in enumerate(self.cells):
            if node is None or node not in self.alive:
                continue
            if node in self.pending or node in self.leaving:
                p = i + 1
                if node in self.leaving:
                    pre = list(self.cells)
                    pre[i] = None
                    self.pre_sort = (pre, i)
                    self.cells = self.cells[:i] + self.cells[i + 1:] + [None]
                    self.leaving.discard(node)
                    self.alive.discard(node)
                    return ("dequeue", node, p, p * SLOT + air(SIZE))
                self._send(i)
                return ("data", node, p, p * SLOT + air(SIZE))
        top = self.n if self.count else 0
        return ("idle", None, None, (top + 1) * SLOT)


def compare_run(rng: random.Random, n: int, k_max: int, length: int) -> int:
    """Drive the real queue and the list model with one random script.

    Returns the number of turns compared; raises AssertionError on the first
    divergence in kind, transmitter, effective backoff, duration or live
    positions, or when positions collide or leave the tail outside a sort or
    collection.
    """
    from railmac.backoff_queue import BackoffQueue, Mode, NodeMacState

    q = BackoffQueue(n, SLOT, air, check=True)
    q.payload_of = lambda node: SIZE
    model = ListQueue(n)
    nodes = {}
    next_id = 0
    turns = 0
    for _ in range(length):
        r = rng.random()
        members = sorted(model.positions())
        if r < 0.3:
            assert q.coordinator.is_full() == model.is_full()
            if len(nodes) >= k_max or model.is_full():
                continue
            node = NodeMacState(next_id)
            nodes[next_id] = node
            q.request_admission(node)
            model.waiting.append(next_id)
            model.alive.add(next_id)
            next_id += 1
        elif r < 0.38:
            if members:
                victim = rng.choice(members)
                q.kill(victim)
                model.alive.discard(victim)
        elif r < 0.46:
            free = [m for m in members if m not in model.leaving]
            if free:
                who = rng.choice(free)
                q.request_dequeue(nodes[who])
                model.leaving.add(who)
        elif r < 0.5:
            q.coordinator.collection_requested = True
            model.sweep_wanted = True
        else:
            model.pending = set()
            for m in members:
                busy = rng.random() < 0.5
                nodes[m].has_pending_data = busy
                if busy:
                    model.pending.add(m)
            got = q.run_turn()
            want = model.turn()
            turns += 1
            have = (got.kind, got.transmitter, got.p_eff, got.duration)
            assert have == want, (have, want)
            live = {m.node_id: m.position for m in q.live_members()}
            assert live == model.positions(), (live, model.cells)
            assert q.coordinator.node_count == model.count
            pos = sorted(live.values())
            assert len(set(pos)) == len(pos)
            calm = q.coordinator.pending_sort is None and q.mode is Mode.NORMAL
            if calm and not q.has_garbage():
                assert pos == list(range(n - len(pos) + 1, n + 1))
    return turns
