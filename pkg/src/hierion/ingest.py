"""Virtual-sensor stream ingestion.

Each virtual sensor owns one stream per observed property and pushes tuples
to subscriber queues. Two clocks: a deterministic simulated clock for exact
tuple-count tests and the wall clock for demos. Generators are seeded random
walks or CSV replay, so every run is reproducible.
"""

from __future__ import annotations

import csv
import random
import threading
import time
from dataclasses import dataclass, field
from queue import Queue
from typing import Callable, Iterable, Optional

from .store import GraphId, Iri, Literal, Triple, TripleStore

XSD_DOUBLE = Iri("http://www.w3.org/2001/XMLSchema#double")
XSD_LONG = Iri("http://www.w3.org/2001/XMLSchema#long")
OBSERVED_BY = Iri("urn:hierion:observedBy")
OBSERVED_PROPERTY = Iri("urn:hierion:observedProperty")
OBSERVATION_VALUE = Iri("urn:hierion:hasValue")

PROPERTY_NS = "urn:hierion:property:"
DEFAULT_PROPERTIES = ("temperature", "humidity", "carbon-monoxide", "pressure", "noise")

DEFAULT_QUEUE_CAPACITY = 10_000


class IngestError(Exception):
    pass


@dataclass(frozen=True)
class StreamTuple:
    stream_id: str
    ts_ms: int
    value: float


class SimulatedClock:
    """Deterministic manual clock; milliseconds."""

    def __init__(self, start_ms: int = 0):
        self.now_ms = start_ms

    def advance(self, ms: int) -> int:
        self.now_ms += ms
        return self.now_ms


class RandomWalkGenerator:
    """Seeded pseudo-random walk; documented default step keeps values in a
    plausible sensor range without mattering to any assertion."""

    def __init__(self, seed: int, start: float = 20.0, step: float = 0.5):
        self._rng = random.Random(seed)
        self._value = start
        self._step = step

    def __call__(self) -> float:
        self._value += self._rng.uniform(-self._step, self._step)
        return self._value


class ReplayGenerator:
    """Replays `timestamp_ms,value` rows from a CSV file, cycling at EOF.
    Only the values are replayed; emission timestamps come from the clock."""

    def __init__(self, path: str):
        self._values = [v for _, v in read_replay_file(path)]
        if not self._values:
            raise IngestError(f"replay file has no rows: {path}")
        self._i = 0

    def __call__(self) -> float:
        v = self._values[self._i % len(self._values)]
        self._i += 1
        return v


def read_replay_file(path: str) -> list[tuple[int, float]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append((int(row[0]), float(row[1])))
            except (IndexError, ValueError) as exc:
                raise IngestError(f"{path}:{lineno}: bad replay row {row!r}") from exc
    return rows


def write_replay_file(path: str, rows: Iterable[tuple[int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        for ts, value in rows:
            w.writerow([ts, repr(value)])


@dataclass
class VirtualSensorConfig:
    sensor_id: str  # IRI of a registered sensor
    properties: tuple[str, ...] = DEFAULT_PROPERTIES
    rate_hz: float = 1.0
    seed: int = 0
    generators: dict[str, Callable[[], float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise IngestError(f"rate_hz must be > 0, got {self.rate_hz}")
        if not self.properties:
            raise IngestError("at least one property required")


class Subscription:
    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        self.queue: Queue = Queue(maxsize=capacity)

    def drain(self) -> list[StreamTuple]:
        out = []
        while not self.queue.empty():
            out.append(self.queue.get_nowait())
        return out


class VirtualSensor:
    """One registered device emitting one stream per observed property."""

    def __init__(self, config: VirtualSensorConfig, clock: Optional[SimulatedClock] = None):
        self.config = config
        self.clock = clock
        self.stream_ids = [f"{config.sensor_id}/stream/{p}" for p in config.properties]
        self._generators = {}
        for i, prop in enumerate(config.properties):
            gen = config.generators.get(prop)
            if gen is None:
                gen = RandomWalkGenerator(seed=config.seed * 1009 + i)
            self._generators[self.stream_ids[i]] = gen
        self._last_ts: dict[str, int] = {}
        self._subscribers: list[Subscription] = []
        self._running = False
        self._lock = threading.Lock()
        self.emitted: dict[str, int] = {sid: 0 for sid in self.stream_ids}

    def subscribe(self, capacity: int = DEFAULT_QUEUE_CAPACITY) -> Subscription:
        sub = Subscription(capacity)
        self._subscribers.append(sub)
        return sub

    def run(self, duration_s: float) -> dict[str, int]:
        """Emit floor(duration * rate) tuples per stream. Simulated clock runs
        are exact and synchronous; wall clock sleeps between ticks. Delivery
        blocks on full subscriber queues, so loss is never silent."""
        with self._lock:
            if self._running:
                raise IngestError(f"sensor {self.config.sensor_id} already running")
            self._running = True
        try:
            interval_ms = 1000.0 / self.config.rate_hz
            ticks = int(duration_s * self.config.rate_hz)
            report = {sid: 0 for sid in self.stream_ids}
            for _ in range(ticks):
                if self.clock is not None:
                    now = self.clock.advance(int(interval_ms))
                else:
                    time.sleep(interval_ms / 1000.0)
                    now = int(time.time() * 1000)
                self._emit_tick(now, report)
            self.emitted = {sid: self.emitted[sid] + n for sid, n in report.items()}
            return report
        finally:
            with self._lock:
                self._running = False

    def _emit_tick(self, now_ms: int, report: dict[str, int]) -> None:
        for sid in self.stream_ids:
            ts = now_ms
            last = self._last_ts.get(sid)
            if last is not None and ts <= last:
                ts = last + 1  # wall clock can repeat a millisecond
            self._last_ts[sid] = ts
            t = StreamTuple(sid, ts, self._generators[sid]())
            for sub in self._subscribers:
                sub.queue.put(t)
            report[sid] += 1


def create_virtual_sensors(
    count: int,
    clock: Optional[SimulatedClock] = None,
    rate_hz: float = 1.0,
    base_seed: int = 42,
) -> list[VirtualSensor]:
    """Default fleet: each sensor carries the five standard property streams,
    so 10 sensors yield 50 live streams."""
    sensors = []
    for i in range(count):
        cfg = VirtualSensorConfig(
            sensor_id=f"urn:hierion:sensor:{i}",
            rate_hz=rate_hz,
            seed=base_seed + i,
        )
        sensors.append(VirtualSensor(cfg, clock))
    return sensors


class Annotator:
    """Links stream tuples back to their sensor and property as triples in a
    per-node observation graph. Off the hot path by default; retained in full
    for correctness tests."""

    def __init__(self, store: TripleStore, node_id: str, known_streams: dict[str, tuple[str, str]]):
        # known_streams: stream_id -> (sensor IRI, property IRI)
        self.store = store
        self.graph = GraphId(f"urn:hierion:observations:{node_id}")
        self.known_streams = known_streams
        self._n = 0

    def annotate(self, t: StreamTuple) -> Iri:
        if t.stream_id not in self.known_streams:
            raise IngestError(f"unknown stream {t.stream_id!r}")
        sensor, prop = self.known_streams[t.stream_id]
        self._n += 1
        obs = Iri(f"urn:hierion:obs:{self._n}")
        self.store.insert(
            self.graph,
            [
                Triple(obs, OBSERVED_BY, Iri(sensor)),
                Triple(obs, OBSERVED_PROPERTY, Iri(prop)),
                Triple(obs, OBSERVATION_VALUE, Literal(f"{t.value!r}@{t.ts_ms}")),
            ],
        )
        return obs


def property_iri(name: str) -> str:
    return PROPERTY_NS + name
