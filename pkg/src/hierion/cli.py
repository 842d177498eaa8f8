"""Command-line entry point.

Subcommands: node serve, register-sensor, discover, service submit, query
(local SPARQL or federated), metrics export, experiment {1|2|case-study},
osdspec validate. Registry state for the standalone registry commands lives
in a snapshot file (default ./registry.nq).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import harness, monitoring, osdspec, sparql
from .federation import FederatedQuery, RemoteChild, encode_message, load_topology, Node
from .geo import GeoPoint
from .registry import Registry, SensorDescription
from .store import TripleStore

DEFAULT_SNAPSHOT = "registry.nq"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"error: {exc.code}", file=sys.stderr)
            return 1
        return exc.code if exc.code is not None else 0
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("node", help="node operations")
    node_sub = p.add_subparsers(dest="node_command", required=True)
    serve = node_sub.add_parser("serve", help="serve one or more topology nodes")
    serve.add_argument("--config", required=True, help="topology config file")
    serve.add_argument("--node-id", help="serve only this node (default: all in config)")
    serve.set_defaults(func=cmd_node_serve)

    p = sub.add_parser("register-sensor", help="register a sensor description")
    p.add_argument("--file", required=True, help="key/value description file")
    p.add_argument("--snapshot", default=DEFAULT_SNAPSHOT)
    p.set_defaults(func=cmd_register_sensor)

    p = sub.add_parser("discover", help="discover sensors within a radius")
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--radius-km", type=float, required=True)
    p.add_argument("--type", dest="type_filter")
    p.add_argument("--snapshot", default=DEFAULT_SNAPSHOT)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("service", help="service operations")
    svc_sub = p.add_subparsers(dest="service_command", required=True)
    submit = svc_sub.add_parser("submit", help="submit a service description to a node")
    submit.add_argument("file", help="service description XML")
    submit.add_argument("--token", required=True)
    submit.add_argument("--address", required=True, help="node host:port")
    submit.set_defaults(func=cmd_service_submit)

    p = sub.add_parser("query", help="run a local SPARQL query or a federated aggregate")
    p.add_argument("--graph", help="graph IRI for local queries")
    p.add_argument("--file", help="SPARQL query file (local mode)")
    p.add_argument("--snapshot", default=DEFAULT_SNAPSHOT)
    p.add_argument("--capability", help="capability tag (federated mode)")
    p.add_argument("--agg", default="avg", choices=("avg", "sum", "count", "min", "max"))
    p.add_argument("--window", default="60s", help="tuple window, e.g. 300, or time span like 60s")
    p.add_argument("--address", help="root node host:port (federated mode)")
    p.add_argument("--token")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("metrics", help="metric operations")
    met_sub = p.add_subparsers(dest="metrics_command", required=True)
    export = met_sub.add_parser("export", help="filter an experiment metrics CSV by node")
    export.add_argument("--node", required=True)
    export.add_argument("--out", required=True)
    export.add_argument("--in", dest="input", required=True, help="source metrics CSV")
    export.set_defaults(func=cmd_metrics_export)

    p = sub.add_parser("experiment", help="run a scaled experiment")
    p.add_argument("which", choices=("1", "2", "case-study"))
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--sensors", type=int, default=10)
    p.add_argument("--rate-hz", type=float, default=1.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--users", default="50:500:50", help="start:stop:step for user counts")
    p.add_argument("--queries-per-user", type=int, default=10)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("osdspec", help="service description operations")
    osd_sub = p.add_subparsers(dest="osdspec_command", required=True)
    validate = osd_sub.add_parser("validate", help="validate a service description file")
    validate.add_argument("file")
    validate.set_defaults(func=cmd_osdspec_validate)

    return parser


def _load_registry(snapshot: str) -> Registry:
    if os.path.exists(snapshot):
        return Registry(TripleStore.restore(snapshot))
    return Registry()


def cmd_node_serve(args) -> int:
    with open(args.config, encoding="utf-8") as f:
        descs = load_topology(f.read())
    wanted = [args.node_id] if args.node_id else list(descs)
    nodes = []
    for node_id in wanted:
        if node_id not in descs:
            raise SystemExit(f"no node {node_id!r} in config")
        node = Node(descs[node_id])
        host, port = node.serve()
        print(f"{node_id}: serving on {host}:{port}")
        nodes.append(node)
    try:
        import threading

        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        for node in nodes:
            node.shutdown()
    return 0


def cmd_register_sensor(args) -> int:
    desc = read_sensor_file(args.file)
    registry = _load_registry(args.snapshot)
    sensor_id = registry.register_sensor(desc)
    registry.store.snapshot(args.snapshot)
    print(sensor_id)
    return 0


def read_sensor_file(path: str) -> SensorDescription:
    """Key/value description: id, label, type, parents (comma-separated),
    properties (comma-separated), lon, lat, owner."""
    fields = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    try:
        return SensorDescription(
            id=fields["id"],
            label=fields.get("label", fields["id"]),
            sensor_type=fields["type"],
            type_parents=[p.strip() for p in fields["parents"].split(",") if p.strip()],
            observed_properties=[p.strip() for p in fields["properties"].split(",") if p.strip()],
            location=GeoPoint(float(fields["lon"]), float(fields["lat"])),
            owner_node=fields.get("owner", "local"),
        )
    except KeyError as exc:
        raise SystemExit(f"{path}: missing field {exc}") from exc


def cmd_discover(args) -> int:
    registry = _load_registry(args.snapshot)
    center = GeoPoint(args.lon, args.lat)
    for sensor_id in registry.discover_sensors(args.type_filter, center, args.radius_km):
        print(sensor_id)
    return 0


def cmd_service_submit(args) -> int:
    with open(args.file, encoding="utf-8") as f:
        body = f.read()
    osdspec.parse_osdspec(body)  # fail fast with a local diagnostic
    import uuid

    link = RemoteChild("target", args.address, args.token)
    payload = encode_message(
        "SUBMIT",
        {"query-id": uuid.uuid4().hex, "token": args.token, "node-id": "cli"},
        body,
    )
    from .federation import decode_message, recv_frame, send_frame

    sock = link._checkout(timeout=10.0)
    try:
        send_frame(sock, payload)
        mtype, headers, _ = decode_message(recv_frame(sock))
    finally:
        sock.close()
    if mtype == "ERROR":
        print(f"error: {headers.get('error')}", file=sys.stderr)
        return 1
    print(f"service {headers.get('service-id')} state={headers.get('state')}")
    return 0 if headers.get("state") != "failed" else 1


def cmd_query(args) -> int:
    if args.file:
        with open(args.file, encoding="utf-8") as f:
            text = f.read()
        ast = sparql.parse(text)
        if args.graph:
            from .store import GraphId

            ast.from_graph = GraphId(args.graph)
        registry = _load_registry(args.snapshot)
        result = sparql.evaluate(ast, registry.store)
        sys.stdout.write(result.as_tsv())
        return 0
    if not args.capability or not args.address or not args.token:
        raise SystemExit("federated mode needs --capability, --address and --token")
    window = _parse_window(args.window)
    q = FederatedQuery(capability=args.capability, kind=args.agg, window=window, deadline_s=30.0)
    link = RemoteChild("root", args.address, args.token)
    try:
        partial = link.query(q, args.token, timeout=30.0)
    finally:
        link.close()
    from . import aggregates

    merged = aggregates.merge_all(args.agg, partial.records)
    if merged.empty:
        print("empty result (no contributing data)")
        return 0
    print(f"{args.agg}({args.capability}) = {merged.value()!r}  count={merged.count}")
    return 0


def _parse_window(text: str) -> int:
    # a time span like "60s" over 1 Hz streams equals a 60-tuple window
    if text.endswith("s"):
        return max(1, int(float(text[:-1])))
    return int(text)


def cmd_metrics_export(args) -> int:
    samples = [s for s in monitoring.import_csv(args.input) if s.node_id == args.node]
    if not samples:
        raise SystemExit(f"no samples for node {args.node!r} in {args.input}")
    registry = monitoring.MetricRegistry(args.node)
    registry._samples = samples
    registry.export_csv(args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_experiment(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.which == "1":
        report = harness.run_experiment1(
            args.sensors, args.rate_hz, args.duration, out_dir=args.out_dir
        )
        base = os.path.join(args.out_dir, "experiment1")
    elif args.which == "2":
        start, stop, step = (int(x) for x in args.users.split(":"))
        report = harness.run_experiment2(
            list(range(start, stop + 1, step)),
            args.queries_per_user,
            out_dir=args.out_dir,
        )
        base = os.path.join(args.out_dir, "experiment2")
    else:
        report = harness.run_case_study(os.path.join(args.out_dir, "case-study"))
        base = os.path.join(args.out_dir, "case-study")
    csv_path, txt_path = report.write(base)
    sys.stdout.write(report.summary())
    print(f"report: {csv_path} {txt_path}")
    return 0


def cmd_osdspec_validate(args) -> int:
    with open(args.file, "rb") as f:
        data = f.read()
    try:
        spec = osdspec.parse_osdspec(data)
    except osdspec.OsdSpecValidationError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return 1
    except osdspec.OsdSpecParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    diags = osdspec.validate(spec)
    for d in diags:
        print(d, file=sys.stderr)
    if diags:
        return 1
    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
