"""Virtual time.

Every module in the stack takes time as an input; nothing reads the wall
clock. The scenario runner owns a VirtualClock and a Scheduler and advances
them tick by tick, which is what makes accelerated, byte-reproducible runs
possible. Live mode simply paces the same loop against wall time.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable


class VirtualClock:
    """Monotone simulated clock, seconds since scenario start."""

    def __init__(self, start: float = 0.0, epoch: float = 0.0):
        self.now = start
        # Offset added when converting to dataset timestamps (unix seconds).
        self.epoch = epoch

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise ValueError(f"clock cannot move backwards ({t} < {self.now})")
        self.now = t

    def unix(self) -> float:
        return self.epoch + self.now


class Scheduler:
    """Deterministic callback scheduler driven by a VirtualClock.

    Callbacks due at the same instant fire in scheduling order. Periodic
    tasks re-arm themselves from their nominal due time, not from "now",
    so cadences never drift.
    """

    def __init__(self, clock: VirtualClock):
        self.clock = clock
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._counter = itertools.count()
        self._cancelled: set[int] = set()

    def call_at(self, t: float, fn: Callable[[], None]) -> int:
        handle = next(self._counter)
        heapq.heappush(self._heap, (t, handle, fn))
        return handle

    def call_later(self, delay: float, fn: Callable[[], None]) -> int:
        return self.call_at(self.clock.now + delay, fn)

    def call_every(self, period: float, fn: Callable[[], None], first: float | None = None) -> None:
        """Run fn at first, first+period, ... (first defaults to now+period)."""
        due = self.clock.now + period if first is None else first

        def tick():
            fn()
            self.call_at(due_next[0], tick)
            due_next[0] += period

        due_next = [due + period]
        self.call_at(due, tick)

    def cancel(self, handle: int) -> None:
        self._cancelled.add(handle)

    def run_until(self, t: float) -> None:
        """Fire every callback due at or before t, then set the clock to t."""
        while self._heap and self._heap[0][0] <= t:
            due, handle, fn = heapq.heappop(self._heap)
            if handle in self._cancelled:
                self._cancelled.discard(handle)
                continue
            # Clock shows the callback's own due time while it runs.
            if due > self.clock.now:
                self.clock.advance_to(due)
            fn()
        if t > self.clock.now:
            self.clock.advance_to(t)

    def pending(self) -> int:
        return len(self._heap) - len(self._cancelled)
