"""Per-component metric collection: CPU, resident memory, and logical
counters sampled per node component. Acceptance relies only on the logical
counters; CPU/RSS are recorded as observed on the host and may exceed 100%
on multicore machines."""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field

import psutil

COMPONENTS = ("store", "query", "ingest", "scheduler", "sdum", "federation")


class MonitoringError(Exception):
    pass


@dataclass
class MetricSample:
    node_id: str
    component: str
    ts_ms: int
    cpu_pct: float
    rss_bytes: int
    counters: dict[str, int] = field(default_factory=dict)


class MetricRegistry:
    """Counters grouped by component, plus an on-demand process sampler."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self._lock = threading.Lock()
        self._counters: dict[str, dict[str, int]] = {c: {} for c in COMPONENTS}
        self._samples: list[MetricSample] = []
        self._proc = psutil.Process()
        self._proc.cpu_percent(interval=None)  # prime the delta

    def add(self, component: str, name: str, delta: int = 1) -> None:
        if component not in self._counters:
            raise MonitoringError(f"unknown component {component!r}")
        with self._lock:
            self._counters[component][name] = self._counters[component].get(name, 0) + delta

    def get(self, component: str, name: str) -> int:
        if component not in self._counters:
            raise MonitoringError(f"unknown component {component!r}")
        with self._lock:
            return self._counters[component].get(name, 0)

    def sample(self, ts_ms: int | None = None) -> list[MetricSample]:
        """Capture one sample per component and append it to the series."""
        if ts_ms is None:
            ts_ms = int(time.time() * 1000)
        cpu = self._proc.cpu_percent(interval=None)
        rss = self._proc.memory_info().rss
        with self._lock:
            batch = [
                MetricSample(self.node_id, comp, ts_ms, cpu, rss, dict(self._counters[comp]))
                for comp in COMPONENTS
            ]
            self._samples.extend(batch)
        return batch

    def series(self, component: str, window: tuple[int, int] | None = None) -> list[MetricSample]:
        if component not in self._counters:
            raise MonitoringError(f"unknown component {component!r}")
        with self._lock:
            out = [s for s in self._samples if s.component == component]
        if window is not None:
            start, end = window
            out = [s for s in out if start <= s.ts_ms < end]
        return out

    def export_csv(self, path: str) -> None:
        with self._lock:
            samples = list(self._samples)
        names = sorted({n for s in samples for n in s.counters})
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["node", "component", "ts_ms", "cpu_pct", "rss_bytes", *names])
            for s in samples:
                w.writerow(
                    [s.node_id, s.component, s.ts_ms, repr(s.cpu_pct), s.rss_bytes]
                    + [s.counters.get(n, 0) for n in names]
                )


def import_csv(path: str) -> list[MetricSample]:
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        names = header[5:]
        for row in r:
            out.append(
                MetricSample(
                    node_id=row[0],
                    component=row[1],
                    ts_ms=int(row[2]),
                    cpu_pct=float(row[3]),
                    rss_bytes=int(row[4]),
                    counters={n: int(v) for n, v in zip(names, row[5:]) if int(v) != 0},
                )
            )
    return out


class PeriodicSampler:
    """Background sampler at a fixed interval (default 1 s)."""

    def __init__(self, registry: MetricRegistry, interval_s: float = 1.0):
        self.registry = registry
        self.interval_s = interval_s
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self):
        if self._thread is not None:
            raise MonitoringError("sampler already running")
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        while not self._stop.wait(self.interval_s):
            self.registry.sample()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
