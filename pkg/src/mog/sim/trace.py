"""Event queue and trace records for the discrete-event runs."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable


@dataclass
class EventTrace:
    events: list[tuple[float, str, str]] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)

    def record(self, time: float, actor: str, event: str) -> None:
        self.events.append((time, actor, event))

    def lines(self) -> list[str]:
        return [f"{t:.6f},{a},{e}" for t, a, e in self.events]


class EventQueue:
    """Time-ordered callbacks; ties run in scheduling order."""

    def __init__(self, trace: EventTrace | None = None):
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable[[], Any]]] = []
        self._seq = itertools.count()
        self.trace = trace

    def schedule(self, at: float, fn: Callable[[], Any]) -> None:
        heapq.heappush(self._heap, (at, next(self._seq), fn))

    def run(self, until: float = float("inf")) -> None:
        while self._heap and self._heap[0][0] <= until:
            at, _, fn = heapq.heappop(self._heap)
            self.now = at
            fn()
