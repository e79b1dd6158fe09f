"""Timestamped events and the virtual-time priority queue."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

from .errors import ProtocolError

DISPATCH = "dispatch"
EPOCH_COMPLETE = "epoch_complete"
UPLOAD_ARRIVAL = "upload_arrival"
NOTIFY = "notify"
EVAL_CHECKPOINT = "eval_checkpoint"


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    seq: int
    kind: str = field(compare=False)
    client_id: int | None = field(default=None, compare=False)
    dispatch_id: int | None = field(default=None, compare=False)


class EventQueue:
    """Min-heap on ``(time, seq)``; ``seq`` is the insertion counter.

    Events may not be scheduled before the last popped time, so the
    virtual clock never runs backwards.
    """

    def __init__(self) -> None:
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, event: SimEvent) -> SimEvent:
        if event.time < self.now:
            raise ProtocolError(f"event at {event.time} scheduled in the past (now={self.now})")
        event = replace(event, seq=self._seq)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> SimEvent:
        event = heapq.heappop(self._heap)
        self.now = event.time
        return event

    def peek_time(self) -> float:
        return self._heap[0].time
