"""Service delivery and utility metering.

Composes input streams through windowed analytics and fans the output to
subscribers, counting every delivered tuple and byte per service.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from queue import Queue
from typing import Iterable, Optional

from .aggregates import Aggregate, AnalyticOpSpec, window_aggregate
from .ingest import StreamTuple

END_OF_STREAM = None


class SdumError(Exception):
    pass


@dataclass
class UtilityRecord:
    service_id: str
    tuples_delivered: int = 0
    bytes_delivered: int = 0
    first_delivery_ms: Optional[int] = None
    last_delivery_ms: Optional[int] = None


@dataclass
class _Pipeline:
    spec: AnalyticOpSpec
    subscribers: list[Queue] = field(default_factory=list)
    stopped: bool = False
    received: int = 0


class DeliveryManager:
    def __init__(self):
        self._lock = threading.Lock()
        self._pipelines: dict[str, _Pipeline] = {}
        self._utility: dict[str, UtilityRecord] = {}

    def open_service(self, service_id: str, spec: AnalyticOpSpec) -> None:
        with self._lock:
            if service_id in self._pipelines:
                raise SdumError(f"service already open: {service_id}")
            self._pipelines[service_id] = _Pipeline(spec)
            self._utility[service_id] = UtilityRecord(service_id)

    def deliver(self, service_id: str, capacity: int = 10_000) -> Queue:
        """Subscribe a consumer; each subscriber receives every output tuple
        and the utility counters count each delivery."""
        with self._lock:
            pipe = self._pipeline(service_id)
            if pipe.stopped:
                raise SdumError(f"service stopped: {service_id}")
            q: Queue = Queue(maxsize=capacity)
            pipe.subscribers.append(q)
            return q

    def feed(self, service_id: str, tuples: Iterable[StreamTuple], now_ms: int = 0) -> list[Aggregate]:
        """Run the service's windowed analytic over a batch and deliver the
        resulting aggregates. Returns them for callers that forward upstream."""
        with self._lock:
            pipe = self._pipeline(service_id)
            if pipe.stopped:
                raise SdumError(f"service stopped: {service_id}")
        batch = list(tuples)
        pipe.received += len(batch)
        out = list(window_aggregate(batch, pipe.spec))
        self._fan_out(service_id, pipe, out, now_ms)
        return out

    def _fan_out(self, service_id: str, pipe: _Pipeline, aggs: list[Aggregate], now_ms: int):
        record = self._utility[service_id]
        for agg in aggs:
            payload = agg.csv_record()
            for q in pipe.subscribers:
                q.put(agg)
                record.tuples_delivered += 1
                record.bytes_delivered += len(payload)
                if record.first_delivery_ms is None:
                    record.first_delivery_ms = now_ms
                record.last_delivery_ms = now_ms

    def stop(self, service_id: str) -> None:
        """Freeze counters and close every subscription with an end-of-stream
        sentinel."""
        with self._lock:
            pipe = self._pipeline(service_id)
            if pipe.stopped:
                return
            pipe.stopped = True
            for q in pipe.subscribers:
                q.put(END_OF_STREAM)

    def get_utility(self, service_id: str) -> UtilityRecord:
        with self._lock:
            if service_id not in self._utility:
                raise SdumError(f"unknown service: {service_id}")
            return self._utility[service_id]

    def received_count(self, service_id: str) -> int:
        with self._lock:
            return self._pipeline(service_id).received

    def _pipeline(self, service_id: str) -> _Pipeline:
        try:
            return self._pipelines[service_id]
        except KeyError:
            raise SdumError(f"unknown service: {service_id}") from None
