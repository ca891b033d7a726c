"""Deterministic discrete-event engine.

Time is an integer count of microseconds since scenario start. Events with
the same timestamp dispatch in insertion order, so protocol turns replay
identically across runs.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, TextIO

US = 1
MS = 1000
SECOND = 1_000_000


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(order=True)
class Event:
    fire_at: int
    sequence: int
    kind: str = field(compare=False)
    handler: Callable[..., Any] | None = field(default=None, compare=False, repr=False)
    payload: Any = field(default=None, compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False, repr=False)
    fired: bool = field(default=False, compare=False, repr=False)


def derive_seed(seed: int, stream: int | str) -> int:
    """Stable 64-bit seed for one (master seed, stream id) pair."""
    digest = hashlib.blake2b(f"{seed}/{stream}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def rng_stream(seed: int, stream: int | str) -> random.Random:
    # random.Random seeded from an int is reproducible across platforms
    return random.Random(derive_seed(seed, stream))


class Simulator:
    def __init__(self, seed: int = 0, trace: TextIO | None = None):
        self.seed = seed
        self._now = 0
        self._queue: list[Event] = []
        self._sequence = 0
        self._trace = trace
        self.dispatched = 0

    def now(self) -> int:
        return self._now

    def rng(self, stream: int | str) -> random.Random:
        return rng_stream(self.seed, stream)

    def schedule(self, event: Event) -> Event:
        if event.fire_at < self._now:
            raise SchedulingError(
                f"event {event.kind!r} at {event.fire_at} is before now={self._now}"
            )
        event.sequence = self._sequence
        self._sequence += 1
        heapq.heappush(self._queue, event)
        return event

    def at(self, fire_at: int, kind: str, handler: Callable[..., Any], payload: Any = None) -> Event:
        return self.schedule(Event(int(fire_at), 0, kind, handler, payload))

    def after(self, delay: int, kind: str, handler: Callable[..., Any], payload: Any = None) -> Event:
        return self.at(self._now + int(delay), kind, handler, payload)

    def cancel(self, handle: Event) -> bool:
        if handle.cancelled or handle.fired:
            return False
        handle.cancelled = True
        return True

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run_until(self, t_end: int) -> int:
        if t_end < self._now:
            raise SchedulingError(f"run_until({t_end}) is before now={self._now}")
        count = 0
        queue = self._queue
        while queue and queue[0].fire_at <= t_end:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self._now = ev.fire_at
            ev.fired = True
            if self._trace is not None:
                self._trace.write(f"{ev.fire_at}\t{ev.sequence}\t{ev.kind}\n")
            if ev.handler is not None:
                if ev.payload is None:
                    ev.handler()
                else:
                    ev.handler(ev.payload)
            count += 1
        self._now = t_end
        self.dispatched += count
        return count

    def stop_at_now(self) -> None:
        """Drop every pending event; used when a scenario ends early."""
        for ev in self._queue:
            ev.cancelled = True
        self._queue.clear()
