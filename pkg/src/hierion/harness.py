"""Experiment driver: builds topologies, generates load, runs the scaled
streaming and hierarchical-query experiments plus the amusement-park case
study, and writes CSV/text reports.

All experiment parameters are echoed into the report header; with fixed
seeds and the simulated clock, streaming and case-study reports are
byte-identical across runs.
"""

from __future__ import annotations

import csv
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from . import aggregates
from .federation import (
    FederatedQuery,
    Node,
    NodeDescriptor,
    RemoteChild,
    load_topology,
)
from .ingest import SimulatedClock, create_virtual_sensors, write_replay_file, read_replay_file
from .monitoring import MetricRegistry

ADMIN_TOKEN = "tok-admin"
CONSUMER_TOKEN = "tok-consumer"
DEFAULT_TOKENS = {ADMIN_TOKEN: "admin", CONSUMER_TOKEN: "consumer"}


class HarnessError(Exception):
    pass


@dataclass
class ExperimentReport:
    experiment_id: str
    parameters: dict[str, object] = field(default_factory=dict)
    rows: list[dict[str, object]] = field(default_factory=list)
    edge_traffic: dict[str, dict[str, int]] = field(default_factory=dict)
    latencies_ms: list[float] = field(default_factory=list)
    errors: int = 0
    completeness: dict[str, int] = field(default_factory=dict)
    metric_csv_paths: list[str] = field(default_factory=list)

    def percentiles(self) -> dict[str, float]:
        if not self.latencies_ms:
            return {}
        data = sorted(self.latencies_ms)
        return {p: _nearest_rank(data, q) for p, q in (("p50", 50), ("p95", 95), ("p99", 99))}

    def summary(self) -> str:
        lines = [f"experiment: {self.experiment_id}"]
        for k in sorted(self.parameters):
            lines.append(f"param {k} = {self.parameters[k]}")
        for row in self.rows:
            lines.append("row " + " ".join(f"{k}={row[k]}" for k in sorted(row)))
        for edge in sorted(self.edge_traffic):
            e = self.edge_traffic[edge]
            lines.append(
                f"edge {edge} uplink_tuples={e['uplink_tuples']}"
                f" uplink_bytes={e['uplink_bytes']} child_input={e['child_input']}"
            )
        pcts = self.percentiles()
        if pcts:
            lines.append(
                "latency_ms p50=%.3f p95=%.3f p99=%.3f n=%d"
                % (pcts["p50"], pcts["p95"], pcts["p99"], len(self.latencies_ms))
            )
        lines.append(f"errors: {self.errors}")
        for k in sorted(self.completeness):
            lines.append(f"completeness {k}: {self.completeness[k]}")
        for p in self.metric_csv_paths:
            lines.append(f"metrics: {p}")
        return "\n".join(lines) + "\n"

    def write(self, base_path: str) -> tuple[str, str]:
        txt = base_path + ".txt"
        csv_path = base_path + ".csv"
        with open(txt, "w", encoding="utf-8") as f:
            f.write(self.summary())
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["section", "key", "value"])
            for k in sorted(self.parameters):
                w.writerow(["param", k, self.parameters[k]])
            for i, row in enumerate(self.rows):
                for k in sorted(row):
                    w.writerow([f"row{i}", k, row[k]])
            for edge in sorted(self.edge_traffic):
                for k, v in sorted(self.edge_traffic[edge].items()):
                    w.writerow(["edge", f"{edge}.{k}", v])
            for p, v in sorted(self.percentiles().items()):
                w.writerow(["latency", p, "%.3f" % v])
            w.writerow(["result", "errors", self.errors])
        return csv_path, txt


def _nearest_rank(sorted_data: list[float], pct: float) -> float:
    import math

    k = max(1, math.ceil(pct / 100.0 * len(sorted_data)))
    return sorted_data[k - 1]


# ---------------------------------------------------------------------------
# Experiment 1: streaming


def run_experiment1(
    max_sensors: int = 10,
    rate_hz: float = 1.0,
    duration_s: float = 60.0,
    out_dir: Optional[str] = None,
    base_seed: int = 42,
) -> ExperimentReport:
    """Sweep sensor counts 1..max_sensors on the simulated clock; assert zero
    tuple loss at each step (emitted == received by the subscriber)."""
    report = ExperimentReport(
        "experiment1",
        parameters={
            "max_sensors": max_sensors,
            "rate_hz": rate_hz,
            "duration_s": duration_s,
            "seed": base_seed,
        },
    )
    if duration_s <= 0 or max_sensors < 1:
        return report
    metrics = MetricRegistry("leaf-1")
    for count in range(1, max_sensors + 1):
        clock = SimulatedClock()
        sensors = create_virtual_sensors(count, clock, rate_hz, base_seed)
        subs = []
        expected_per_stream = int(duration_s * rate_hz)
        for sensor in sensors:
            capacity = expected_per_stream * len(sensor.stream_ids) + 1
            subs.append(sensor.subscribe(capacity=capacity))
        emitted = 0
        for sensor in sensors:
            result = sensor.run(duration_s)
            emitted += sum(result.values())
        received = sum(len(sub.drain()) for sub in subs)
        lost = emitted - received
        if lost != 0:
            raise HarnessError(
                f"tuple loss at {count} sensors: emitted {emitted}, received {received}"
            )
        streams = sum(len(s.stream_ids) for s in sensors)
        metrics.add("ingest", "tuples", emitted)
        metrics.add("sdum", "delivered", received)
        metrics.sample(ts_ms=clock.now_ms)
        report.rows.append(
            {
                "sensors": count,
                "streams": streams,
                "emitted": emitted,
                "received": received,
                "lost": lost,
            }
        )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "experiment1-metrics.csv")
        metrics.export_csv(path)
        report.metric_csv_paths.append(path)
    return report


# ---------------------------------------------------------------------------
# Experiment 2: hierarchical query load


def default_topology_text() -> str:
    """Two leaf nodes plus one fusing root, mirroring the 2+1 cloud layout."""
    return """\
[node google-1]
address = 127.0.0.1:0
role = root
children = azure-1@127.0.0.1:0, azure-2@127.0.0.1:0
tokens = tok-admin:admin, tok-consumer:consumer
services = waiting-time

[node azure-1]
address = 127.0.0.1:0
role = leaf
tokens = tok-admin:admin, tok-consumer:consumer
services = waiting-time

[node azure-2]
address = 127.0.0.1:0
role = leaf
tokens = tok-admin:admin, tok-consumer:consumer
services = waiting-time
"""


def build_tcp_topology(
    topology_text: Optional[str] = None,
) -> tuple[Node, list[Node]]:
    """Serve every node in-process on loopback TCP; returns (root, all)."""
    descs = load_topology(topology_text or default_topology_text())
    roots = [d for d in descs.values() if d.role == "root"]
    if len(roots) != 1:
        raise HarnessError(f"expected exactly one root node, found {len(roots)}")
    nodes: dict[str, Node] = {}
    addresses: dict[str, str] = {}
    # leaves first so parents can learn their bound ports
    for desc in sorted(descs.values(), key=lambda d: ("leaf", "intermediate", "root").index(d.role)):
        desc.children = [(cid, addresses.get(cid, addr)) for cid, addr in desc.children]
        node = Node(desc)
        host, port = node.serve()
        addresses[desc.node_id] = f"{host}:{port}"
        nodes[desc.node_id] = node
    root = next(n for n in nodes.values() if n.descriptor.role == "root")
    return root, list(nodes.values())


def seed_waiting_times(
    nodes: list[Node], tuples_per_leaf: int = 200, seed: int = 7
) -> dict[str, list[tuple[int, float]]]:
    rng = random.Random(seed)
    data = {}
    for node in nodes:
        if node.descriptor.role != "leaf":
            continue
        rows = [(1000 * i, round(rng.uniform(1.0, 60.0), 3)) for i in range(tuples_per_leaf)]
        node.load_capability_data("waiting-time", rows)
        data[node.descriptor.node_id] = rows
    return data


def run_experiment2(
    user_counts: Optional[list[int]] = None,
    queries_per_user: int = 10,
    topology_text: Optional[str] = None,
    tuples_per_leaf: int = 200,
    spot_check_fraction: float = 0.01,
    out_dir: Optional[str] = None,
    seed: int = 7,
) -> ExperimentReport:
    """Closed-loop load against the root node over loopback TCP: each user
    issues, awaits, and reissues federated average queries. One percent of
    answers (at least one per round) is re-checked against the raw-data
    oracle."""
    if user_counts is None:
        user_counts = list(range(50, 501, 50))
    report = ExperimentReport(
        "experiment2",
        parameters={
            "user_counts": ",".join(map(str, user_counts)),
            "queries_per_user": queries_per_user,
            "tuples_per_leaf": tuples_per_leaf,
            "seed": seed,
        },
    )
    if not user_counts:
        return report

    root, nodes = build_tcp_topology(topology_text)
    try:
        data = seed_waiting_times(nodes, tuples_per_leaf, seed)
        all_values = [v for rows in data.values() for _, v in rows]
        oracle_avg = sum(all_values) / len(all_values)
        root_addr = f"{root.descriptor.host}:{root.descriptor.port}"
        lock = threading.Lock()

        for users in user_counts:
            latencies: list[float] = []
            errors: list[str] = []
            spot_failures: list[str] = []
            spot_every = max(1, int(round(1.0 / max(spot_check_fraction, 1e-9))))

            def worker(worker_id: int):
                link = RemoteChild("root", root_addr, CONSUMER_TOKEN)
                mine: list[float] = []
                try:
                    # establish the pooled connection before timing starts;
                    # users measure query latency, not TCP setup
                    try:
                        link.ping(CONSUMER_TOKEN, timeout=30.0)
                    except Exception as exc:
                        with lock:
                            errors.append(f"connect: {exc}")
                        return
                    for i in range(queries_per_user):
                        q = FederatedQuery(
                            capability="waiting-time",
                            kind="avg",
                            window=10 ** 9,  # one record per hop
                            deadline_s=30.0,
                        )
                        t0 = time.perf_counter()
                        try:
                            partial = link.query(q, CONSUMER_TOKEN, timeout=30.0)
                        except Exception as exc:
                            with lock:
                                errors.append(str(exc))
                            continue
                        mine.append((time.perf_counter() - t0) * 1000.0)
                        if (worker_id * queries_per_user + i) % spot_every == 0:
                            agg = aggregates.merge_all("avg", partial.records)
                            if agg.empty or abs(agg.value() - oracle_avg) > 1e-9 * abs(oracle_avg):
                                with lock:
                                    spot_failures.append(
                                        f"user {worker_id} query {i}: got "
                                        f"{'empty' if agg.empty else agg.value()}"
                                    )
                finally:
                    link.close()
                with lock:
                    latencies.extend(mine)

            threads = [threading.Thread(target=worker, args=(w,)) for w in range(users)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if spot_failures:
                raise HarnessError("wrong answers: " + "; ".join(spot_failures[:3]))
            report.errors += len(errors)
            report.latencies_ms.extend(latencies)
            row = {"users": users, "queries": len(latencies), "errors": len(errors)}
            data_sorted = sorted(latencies)
            if data_sorted:
                for p in (50, 95, 99):
                    row[f"p{p}_ms"] = "%.3f" % _nearest_rank(data_sorted, p)
            report.rows.append(row)

        for node in nodes:
            for edge, traffic in node.measure_edge_traffic().items():
                report.edge_traffic[f"{node.descriptor.node_id}->{edge}"] = {
                    "uplink_tuples": traffic.uplink_tuples,
                    "uplink_bytes": traffic.uplink_bytes,
                    "child_input": traffic.child_input_tuples,
                }
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            for node in nodes:
                node.metrics.sample()
                path = os.path.join(out_dir, f"experiment2-{node.descriptor.node_id}-metrics.csv")
                node.metrics.export_csv(path)
                report.metric_csv_paths.append(path)
    finally:
        for node in nodes:
            node.shutdown()
    return report


# ---------------------------------------------------------------------------
# Case study: amusement-park chain


def run_case_study(
    workdir: str,
    tuples_per_park: int = 600,
    window: int = 300,
    seed: int = 11,
) -> ExperimentReport:
    """Three park leaves (US/UK/AU) replay waiting-time streams; the root's
    federated average must equal the raw-data oracle and every leaf uplink
    must shrink by at least the window factor."""
    os.makedirs(workdir, exist_ok=True)
    if tuples_per_park % window != 0:
        raise HarnessError("tuples_per_park must be a multiple of the window")
    parks = ("us", "uk", "au")
    rng = random.Random(seed)
    replay_paths = {}
    for park in parks:
        rows = [(1000 * i, round(rng.uniform(5.0, 90.0), 3)) for i in range(tuples_per_park)]
        path = os.path.join(workdir, f"waiting-time-{park}.csv")
        write_replay_file(path, rows)
        replay_paths[park] = path

    root_desc = NodeDescriptor(
        node_id="hq",
        role="root",
        children=[(p, "127.0.0.1:1") for p in parks],
        tokens=dict(DEFAULT_TOKENS),
    )
    root = Node(root_desc, child_token=CONSUMER_TOKEN)
    root.children.clear()  # replaced with in-process links below
    leaves = []
    raw: list[float] = []
    for park in parks:
        desc = NodeDescriptor(node_id=park, role="leaf", tokens=dict(DEFAULT_TOKENS))
        leaf = Node(desc)
        rows = read_replay_file(replay_paths[park])
        leaf.load_capability_data("waiting-time", rows)
        raw.extend(v for _, v in rows)
        root.attach_local_child(leaf)
        leaves.append(leaf)

    q = FederatedQuery(capability="waiting-time", kind="avg", window=window, deadline_s=30.0)
    result = root.execute_federated(q, CONSUMER_TOKEN)
    oracle = sum(raw) / len(raw)
    got = result.aggregate.value()
    if abs(got - oracle) > 1e-9 * abs(oracle):
        raise HarnessError(f"federated avg {got!r} != oracle {oracle!r}")

    report = ExperimentReport(
        "case-study",
        parameters={
            "parks": ",".join(parks),
            "tuples_per_park": tuples_per_park,
            "window": window,
            "seed": seed,
        },
    )
    report.rows.append(
        {
            "federated_avg": repr(got),
            "oracle_avg": repr(oracle),
            "count": result.aggregate.count,
            "completeness": result.completeness,
        }
    )
    report.completeness["root"] = result.answered
    for edge, traffic in root.measure_edge_traffic().items():
        if traffic.uplink_tuples * window > traffic.child_input_tuples:
            raise HarnessError(
                f"edge {edge}: reduction factor below window size "
                f"({traffic.child_input_tuples}/{traffic.uplink_tuples})"
            )
        report.edge_traffic[f"hq->{edge}"] = {
            "uplink_tuples": traffic.uplink_tuples,
            "uplink_bytes": traffic.uplink_bytes,
            "child_input": traffic.child_input_tuples,
        }
    for node in [root, *leaves]:
        node.shutdown()
    return report
