"""Deterministic discrete-event queue shared by the simulators."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Callable


class BudgetExhausted(RuntimeError):
    def __init__(self, residual: int, at: int):
        super().__init__(f"tick budget exhausted at t={at} with {residual} queued events")
        self.residual = residual
        self.at = at


@dataclass(order=True)
class SimEvent:
    at: int
    seq: int
    target: int = field(compare=False)
    kind: str = field(compare=False)
    payload: bytes = field(compare=False, default=b"")
    meta: Any = field(compare=False, default=None)


class EventLoop:
    """Events run in (time, enqueue order); ties never depend on payloads."""

    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0
        self.processed = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, delay: int, target: int, kind: str, payload: bytes = b"",
                 meta: Any = None) -> SimEvent:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        ev = SimEvent(self.now + delay, self._seq, target, kind, payload, meta)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def peek_time(self) -> int | None:
        return self._heap[0].at if self._heap else None

    def run(self, handler: Callable[[SimEvent], None], *, until: int | None = None,
            budget: int | None = None) -> int:
        """Process events up to time ``until`` (inclusive) or until the queue drains.

        ``budget`` bounds the logical time; hitting it with work left raises
        :class:`BudgetExhausted`.
        """
        n = 0
        while self._heap:
            at = self._heap[0].at
            if until is not None and at > until:
                break
            if budget is not None and at > budget:
                raise BudgetExhausted(len(self._heap), self.now)
            ev = heapq.heappop(self._heap)
            self.now = ev.at
            handler(ev)
            n += 1
        if until is not None and self.now < until:
            self.now = until
        self.processed += n
        return n
