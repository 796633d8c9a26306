"""Multi-rate activation schedule.

Times are kept as integer nanoseconds so coincidences between loops of
different periods are exact. At equal times faster loops run first, then
loop ids break the remaining ties.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

NS_PER_S = 1_000_000_000


def to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def format_time(ns: int) -> str:
    """Seconds with 12 significant digits, matching the trace number format."""
    return format(ns / NS_PER_S, ".12g")


@dataclass(frozen=True)
class LoopRegistration:
    loop_id: str
    period: float
    """Seconds between activations; ``math.inf`` activates once at ``phase``."""
    phase: float = 0.0
    callback: Callable | None = None

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"{self.loop_id}: period must be positive")
        if self.phase < 0:
            raise ValueError(f"{self.loop_id}: phase must be non-negative")

    @property
    def period_ns(self) -> int | None:
        return None if math.isinf(self.period) else to_ns(self.period)


@dataclass(frozen=True, order=True)
class Activation:
    time_ns: int
    period_ns: float
    loop_id: str

    @property
    def time(self) -> float:
        return self.time_ns / NS_PER_S


def iter_schedule(registrations: Sequence[LoopRegistration], horizon: float) -> Iterator[Activation]:
    """Activations in order, generated lazily; the horizon is inclusive."""
    ids = [r.loop_id for r in registrations]
    if len(set(ids)) != len(ids):
        raise ValueError("loop ids must be unique")
    end = to_ns(horizon)
    heap = []
    for r in registrations:
        start = to_ns(r.phase)
        if start <= end:
            p = r.period_ns
            heap.append((start, math.inf if p is None else p, r.loop_id, p))
    heapq.heapify(heap)
    while heap:
        t, key, loop_id, p = heapq.heappop(heap)
        yield Activation(t, key, loop_id)
        if p is not None and t + p <= end:
            heapq.heappush(heap, (t + p, key, loop_id, p))


def schedule(registrations: Sequence[LoopRegistration], horizon: float) -> list[Activation]:
    """Full ordered activation list sorted by ``(time, period, loop_id)``."""
    return list(iter_schedule(registrations, horizon))
