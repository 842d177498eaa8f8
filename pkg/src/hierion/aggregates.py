"""Mergeable windowed aggregates.

The summary carried between nodes is always (sum, count, min, max), never a
bare mean: merging means of unequal-count partitions is wrong, while merging
sums and counts keeps the hierarchical average exact. Merge forms a
commutative monoid per kind with the empty aggregate as identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional

KINDS = ("avg", "sum", "count", "min", "max")


class AggregateError(Exception):
    pass


@dataclass(frozen=True)
class Aggregate:
    kind: str
    sum: float = 0.0
    count: int = 0
    min: float = math.inf
    max: float = -math.inf
    window_start: int = 0  # ms timestamps; [start, end)
    window_end: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AggregateError(f"unknown aggregate kind {self.kind!r}")
        if self.count < 0:
            raise AggregateError("negative count")
        if self.count > 0 and self.min > self.max:
            raise AggregateError("min > max on non-empty aggregate")

    @property
    def empty(self) -> bool:
        return self.count == 0

    def value(self) -> float:
        if self.empty:
            raise AggregateError("empty aggregate has no value")
        if self.kind == "avg":
            return self.sum / self.count
        if self.kind == "sum":
            return self.sum
        if self.kind == "count":
            return float(self.count)
        if self.kind == "min":
            return self.min
        return self.max

    def csv_record(self) -> str:
        return "%d,%d,%s,%r,%d,%r,%r" % (
            self.window_start,
            self.window_end,
            self.kind,
            self.sum,
            self.count,
            self.min,
            self.max,
        )


def empty(kind: str) -> Aggregate:
    return Aggregate(kind)


def of_values(kind: str, values: Iterable[float], window: tuple[int, int] = (0, 0)) -> Aggregate:
    agg = empty(kind)
    start, end = window
    agg = replace(agg, window_start=start, window_end=end)
    for v in values:
        agg = add(agg, v)
    return agg


def add(agg: Aggregate, value: float, ts: Optional[int] = None) -> Aggregate:
    start = agg.window_start
    end = agg.window_end
    if ts is not None:
        start = ts if agg.empty else min(start, ts)
        end = ts + 1 if agg.empty else max(end, ts + 1)
    return Aggregate(
        kind=agg.kind,
        sum=agg.sum + value,
        count=agg.count + 1,
        min=min(agg.min, value),
        max=max(agg.max, value),
        window_start=start,
        window_end=end,
    )


def merge(a: Aggregate, b: Aggregate) -> Aggregate:
    if a.kind != b.kind:
        raise AggregateError(f"kind mismatch: {a.kind} vs {b.kind}")
    if a.empty:
        return b
    if b.empty:
        return a
    return Aggregate(
        kind=a.kind,
        sum=a.sum + b.sum,
        count=a.count + b.count,
        min=min(a.min, b.min),
        max=max(a.max, b.max),
        window_start=min(a.window_start, b.window_start),
        window_end=max(a.window_end, b.window_end),
    )


def merge_all(kind: str, aggs: Iterable[Aggregate]) -> Aggregate:
    out = empty(kind)
    for a in aggs:
        out = merge(out, a)
    return out


def parse_record(line: str) -> Aggregate:
    parts = line.strip().split(",")
    if len(parts) != 7:
        raise AggregateError(f"bad aggregate record: {line!r}")
    ws, we, kind, s, c, mn, mx = parts
    return Aggregate(
        kind=kind,
        sum=float(s),
        count=int(c),
        min=float(mn),
        max=float(mx),
        window_start=int(ws),
        window_end=int(we),
    )


@dataclass(frozen=True)
class AnalyticOpSpec:
    """One windowed analytic: tumbling windows by tuple count or time span."""

    kind: str
    window_tuples: Optional[int] = None
    window_ms: Optional[int] = None
    input_streams: tuple[str, ...] = ()
    output_stream: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AggregateError(f"unknown aggregate kind {self.kind!r}")
        if (self.window_tuples is None) == (self.window_ms is None):
            raise AggregateError("exactly one of window_tuples / window_ms required")
        if self.window_tuples is not None and self.window_tuples < 1:
            raise AggregateError("window_tuples must be >= 1")
        if self.window_ms is not None and self.window_ms <= 0:
            raise AggregateError("window_ms must be > 0")


def window_aggregate(tuples, spec: AnalyticOpSpec) -> Iterator[Aggregate]:
    """Tumbling-window aggregation over (timestamp_ms, value) pairs or
    StreamTuples. Emits one aggregate per window; a final partial window is
    emitted at stream close so no tuple is ever dropped."""
    if spec.window_tuples is not None:
        yield from _tuple_windows(tuples, spec)
    else:
        yield from _time_windows(tuples, spec)


def _ts_value(item):
    if isinstance(item, tuple):
        return item[0], item[1]
    return item.ts_ms, item.value


def _tuple_windows(tuples, spec):
    agg = empty(spec.kind)
    for item in tuples:
        ts, value = _ts_value(item)
        agg = add(agg, value, ts)
        if agg.count == spec.window_tuples:
            yield agg
            agg = empty(spec.kind)
    if not agg.empty:
        yield agg


def _time_windows(tuples, spec):
    width = spec.window_ms
    agg = empty(spec.kind)
    bucket = None
    for item in tuples:
        ts, value = _ts_value(item)
        b = ts // width
        if bucket is not None and b != bucket:
            yield _clamp_window(agg, bucket, width)
            agg = empty(spec.kind)
        bucket = b
        agg = add(agg, value, ts)
    if not agg.empty:
        yield _clamp_window(agg, bucket, width)


def _clamp_window(agg, bucket, width):
    return replace(agg, window_start=bucket * width, window_end=(bucket + 1) * width)
