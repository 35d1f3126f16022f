"""Cycle-ordered event kernel.

Work is keyed by ``(cycle, phase, seq)``.  Within one cycle the phases run in
a fixed order, so a run is a pure function of its inputs:

    ARRIVE -> RELEASE -> CCU -> FABRIC -> ENGINE -> VAULT

Cycles with nothing scheduled are skipped.
"""
from __future__ import annotations

import heapq
from typing import Callable, List, Tuple

ARRIVE, RELEASE, CCU, FABRIC, ENGINE, VAULT = range(6)


class Kernel:
    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, int, Callable[[int], None]]] = []
        self._seq = 0
        self.now = 0

    def at(self, cycle: int, phase: int, fn: Callable[[int], None]) -> None:
        if cycle < self.now:
            raise ValueError(f"cannot schedule in the past ({cycle} < {self.now})")
        self._seq += 1
        heapq.heappush(self._heap, (cycle, phase, self._seq, fn))

    def empty(self) -> bool:
        return not self._heap

    def peek(self) -> int:
        return self._heap[0][0]

    def step(self) -> None:
        cycle, _, _, fn = heapq.heappop(self._heap)
        self.now = cycle
        fn(cycle)


class Waker:
    """Schedules a component's tick at most once per (cycle)."""

    def __init__(self, kernel: Kernel, phase: int, tick: Callable[[int], None]):
        self.kernel = kernel
        self.phase = phase
        self.tick = tick
        self._pending: set = set()

    def wake(self, cycle: int) -> None:
        if cycle in self._pending:
            return
        self._pending.add(cycle)
        self.kernel.at(cycle, self.phase, self._fire)

    def _fire(self, cycle: int) -> None:
        self._pending.discard(cycle)
        self.tick(cycle)
