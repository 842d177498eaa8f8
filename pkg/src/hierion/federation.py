"""Node identity, wire protocol, and hierarchical query execution.

A query fans out from a node to its children in parallel, each child answers
with mergeable partial aggregates, and the parent merges them. Children that
miss the deadline are excluded and reported in the completeness annotation,
never silently dropped. Every hop carries (sum, count, min, max) records, so
the hierarchical average is exact for any tree and any data partition.

Wire format: 4-byte big-endian length, then a UTF-8 payload of `key: value`
header lines, a blank line, and a body. Result bodies are CSV aggregate
records, one per window.
"""

from __future__ import annotations

import hashlib
import hmac
import socket
import socketserver
import struct
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from typing import Optional

from . import aggregates
from .aggregates import Aggregate, AnalyticOpSpec, window_aggregate
from .monitoring import MetricRegistry
from .registry import Registry
from .scheduler import AuthError, Scheduler

MAX_FRAME = 4 * 1024 * 1024
_LEN = struct.Struct(">I")

ROLES = ("leaf", "intermediate", "root")
TOKEN_ROLES = ("admin", "consumer")


class FederationError(Exception):
    pass


class ProtocolError(FederationError):
    pass


class QueryError(FederationError):
    pass


# ---------------------------------------------------------------------------
# Messages


def encode_message(mtype: str, headers: dict[str, str], body: str = "") -> bytes:
    lines = [f"type: {mtype}"]
    for k, v in headers.items():
        if "\n" in str(v):
            raise ProtocolError(f"header value contains newline: {k}")
        lines.append(f"{k}: {v}")
    lines.append("")
    lines.append(body)
    return "\n".join(lines).encode("utf-8")


def decode_message(payload: bytes) -> tuple[str, dict[str, str], str]:
    if not payload.startswith(b"type: "):
        raise ProtocolError("bad magic: payload does not begin with a type header")
    text = payload.decode("utf-8")
    head, _, body = text.partition("\n\n")
    headers: dict[str, str] = {}
    for line in head.splitlines():
        key, sep, value = line.partition(": ")
        if not sep:
            raise ProtocolError(f"malformed header line: {line!r}")
        headers[key] = value
    return headers.pop("type"), headers, body


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_LEN.pack(len(payload)) + payload)


def recv_frame(sock: socket.socket) -> bytes:
    header = _recv_exact(sock, 4)
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame too large: {length}")
    return _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


# ---------------------------------------------------------------------------
# Identity and queries


class TokenTable:
    def __init__(self, tokens: dict[str, str]):
        for role in tokens.values():
            if role not in TOKEN_ROLES:
                raise FederationError(f"unknown token role {role!r}")
        self._tokens = dict(tokens)

    def verify(self, token: Optional[str]) -> Optional[str]:
        """Return the role for a valid token, else None. Comparison is
        constant-time per candidate."""
        if not token:
            return None
        found = None
        for known, role in self._tokens.items():
            if hmac.compare_digest(known.encode(), token.encode()):
                found = role
        return found


@dataclass
class NodeDescriptor:
    node_id: str
    host: str = "127.0.0.1"
    port: int = 0
    role: str = "leaf"
    children: list[tuple[str, str]] = field(default_factory=list)  # (node_id, host:port)
    capabilities: list[str] = field(default_factory=list)
    tokens: dict[str, str] = field(default_factory=dict)  # token -> role

    def __post_init__(self):
        if self.role not in ROLES:
            raise FederationError(f"unknown node role {self.role!r}")
        if self.role == "leaf" and self.children:
            raise FederationError(f"leaf node {self.node_id} declares children")
        if self.role != "leaf" and not self.children:
            raise FederationError(f"{self.role} node {self.node_id} has no children")


@dataclass
class FederatedQuery:
    capability: str
    kind: str
    window: int = 1  # tumbling tuple-window applied at every hop
    scope: str | list[str] = "all"
    deadline_s: float = 5.0
    query_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        if self.kind not in aggregates.KINDS:
            raise QueryError(f"kind {self.kind!r} is not mergeable")
        if self.window < 1:
            raise QueryError("window must be >= 1")
        if self.deadline_s <= 0:
            raise QueryError("deadline must be > 0")


@dataclass
class EdgeTraffic:
    uplink_tuples: int = 0
    uplink_bytes: int = 0
    child_input_tuples: int = 0


@dataclass
class FederatedResult:
    query_id: str
    aggregate: Aggregate
    records: list[Aggregate]
    answered: int
    expected: int
    input_count: int
    hop_count: int

    @property
    def completeness(self) -> str:
        return f"{self.answered}/{self.expected}"


class _Partial:
    """One child's answer: its aggregate records plus accounting headers."""

    __slots__ = ("records", "input_count", "hop_count", "payload_bytes")

    def __init__(self, records, input_count, hop_count, payload_bytes):
        self.records = records
        self.input_count = input_count
        self.hop_count = hop_count
        self.payload_bytes = payload_bytes


# ---------------------------------------------------------------------------
# Child links


class LocalChild:
    """Direct in-process link; used by the property harness where TCP adds
    nothing but latency."""

    def __init__(self, node: "Node"):
        self.node_id = node.descriptor.node_id
        self.node = node

    def query(self, q: FederatedQuery, token: str, timeout: float) -> _Partial:
        records, input_count, hops = self.node.answer_query(q, token)
        body = "\n".join(r.csv_record() for r in records)
        return _Partial(records, input_count, hops, len(body.encode()))


class RemoteChild:
    """TCP link with a persistent pooled connection per child."""

    def __init__(self, node_id: str, address: str, token: str):
        self.node_id = node_id
        host, _, port = address.rpartition(":")
        self.addr = (host, int(port))
        self.token = token
        self._pool: list[socket.socket] = []
        self._lock = threading.Lock()

    def _checkout(self, timeout: float) -> socket.socket:
        with self._lock:
            if self._pool:
                sock = self._pool.pop()
                sock.settimeout(timeout)
                return sock
        sock = socket.create_connection(self.addr, timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def _checkin(self, sock: socket.socket) -> None:
        with self._lock:
            self._pool.append(sock)

    def query(self, q: FederatedQuery, token: Optional[str], timeout: float) -> _Partial:
        payload = encode_message(
            "QUERY",
            {
                "query-id": q.query_id,
                "token": token if token is not None else self.token,
                "node-id": "parent",
                "capability": q.capability,
                "kind": q.kind,
                "window": str(q.window),
                "deadline-ms": str(int(q.deadline_s * 1000)),
                "scope": q.scope if isinstance(q.scope, str) else ",".join(q.scope),
            },
        )
        sock = self._checkout(timeout)
        try:
            send_frame(sock, payload)
            reply = recv_frame(sock)
        except Exception:
            sock.close()
            raise
        self._checkin(sock)
        mtype, headers, body = decode_message(reply)
        if headers.get("query-id") != q.query_id:
            raise ProtocolError("reply query-id mismatch")
        if mtype == "ERROR":
            raise QueryError(headers.get("error", "remote error"))
        if mtype != "RESULT":
            raise ProtocolError(f"unexpected reply type {mtype}")
        records = [aggregates.parse_record(line) for line in body.splitlines() if line]
        return _Partial(
            records,
            int(headers.get("input-count", "0")),
            int(headers.get("hop-count", "1")),
            len(body.encode()),
        )

    def ping(self, token: str, timeout: float = 2.0) -> bool:
        payload = encode_message(
            "PING", {"query-id": uuid.uuid4().hex, "token": token, "node-id": "parent"}
        )
        sock = self._checkout(timeout)
        try:
            send_frame(sock, payload)
            mtype, _, _ = decode_message(recv_frame(sock))
        except Exception:
            sock.close()
            raise
        self._checkin(sock)
        return mtype == "PONG"

    def close(self):
        with self._lock:
            for sock in self._pool:
                sock.close()
            self._pool.clear()


# ---------------------------------------------------------------------------
# Node


class Node:
    def __init__(
        self,
        descriptor: NodeDescriptor,
        registry: Optional[Registry] = None,
        child_token: Optional[str] = None,
    ):
        self.descriptor = descriptor
        self.registry = registry if registry is not None else Registry(node_id=descriptor.node_id)
        self.scheduler = Scheduler(self.registry)
        self.metrics = MetricRegistry(descriptor.node_id)
        self.tokens = TokenTable(descriptor.tokens)
        # token this node presents when querying its children
        self._child_token = child_token if child_token is not None else _first_token(descriptor)
        self.children: list = [
            RemoteChild(cid, addr, self._child_token) for cid, addr in descriptor.children
        ]
        self.edge_traffic: dict[str, EdgeTraffic] = {}
        self.local_data: dict[str, list[tuple[int, float]]] = {}
        self._window_cache: dict[tuple[str, str, int], list[Aggregate]] = {}
        self._pool = ThreadPoolExecutor(max_workers=16, thread_name_prefix=descriptor.node_id)
        self._server: Optional[socketserver.ThreadingTCPServer] = None
        self._server_thread: Optional[threading.Thread] = None

    # -- data -------------------------------------------------------------

    def load_capability_data(self, capability: str, rows: list[tuple[int, float]]) -> None:
        self.local_data[capability] = list(rows)
        self._window_cache = {k: v for k, v in self._window_cache.items() if k[0] != capability}
        if capability not in self.descriptor.capabilities:
            self.descriptor.capabilities.append(capability)
        self.metrics.add("ingest", "tuples", len(rows))

    def attach_local_child(self, child: "Node") -> None:
        self.children.append(LocalChild(child))

    def measure_edge_traffic(self) -> dict[str, EdgeTraffic]:
        return dict(self.edge_traffic)

    def reset_edge_traffic(self) -> None:
        self.edge_traffic = {}

    def state_digest(self) -> str:
        """Hash of all externally mutable state; used to prove rejected
        messages mutate nothing."""
        h = hashlib.sha256()
        store = self.registry.store
        for gid in store.graphs():
            h.update(gid.iri.value.encode())
            for t in store.match(gid):
                h.update(f"{t.s.n3()} {t.p.n3()} {t.o.n3()}".encode())
        for sid in sorted(self.registry._services):
            rec = self.registry._services[sid]
            h.update(f"{sid}:{rec.status}".encode())
        for res in sorted(self.scheduler.reservations.active(), key=lambda r: r.id):
            h.update(f"{res.id}:{res.holder}".encode())
        for cap in sorted(self.local_data):
            h.update(f"{cap}:{len(self.local_data[cap])}".encode())
        for cid in sorted(self.edge_traffic):
            e = self.edge_traffic[cid]
            h.update(f"{cid}:{e.uplink_tuples}:{e.uplink_bytes}:{e.child_input_tuples}".encode())
        return h.hexdigest()

    # -- query execution --------------------------------------------------

    def execute_federated(self, q: FederatedQuery, token: Optional[str]) -> FederatedResult:
        role = self.tokens.verify(token)
        if role not in ("consumer", "admin"):
            raise AuthError("invalid token or insufficient role for QUERY")
        records, input_count, hops, answered, expected = self._gather(q, token)
        merged = aggregates.merge_all(q.kind, records)
        return FederatedResult(
            query_id=q.query_id,
            aggregate=merged,
            records=records,
            answered=answered,
            expected=expected,
            input_count=input_count,
            hop_count=hops,
        )

    def answer_query(self, q: FederatedQuery, token: Optional[str]):
        """The per-hop computation: fan out, gather partials, window the
        combined record stream. Returns (records, input_count, hop_count)."""
        role = self.tokens.verify(token)
        if role not in ("consumer", "admin"):
            raise AuthError("invalid token or insufficient role for QUERY")
        records, input_count, hops, _, _ = self._gather(q, token)
        return records, input_count, hops

    def _gather(self, q: FederatedQuery, token: Optional[str]):
        scoped = self._scoped_children(q)
        futures = [
            (link, self._pool.submit(link.query, q, self._child_token or token, q.deadline_s))
            for link in scoped
        ]
        partials: list[_Partial] = []
        answered = 0
        for link, fut in futures:
            try:
                partial = fut.result(timeout=q.deadline_s)
            except (FutureTimeout, Exception):
                continue
            partials.append(partial)
            answered += 1
            edge = self.edge_traffic.setdefault(link.node_id, EdgeTraffic())
            edge.uplink_tuples += len(partial.records)
            edge.uplink_bytes += partial.payload_bytes
            edge.child_input_tuples += partial.input_count
        self.metrics.add("federation", "queries")

        # local raw tuples are windowed once; child records (windowed by the
        # children already) are regrouped W-at-a-time, so every hop shrinks
        # its inflow by the window factor without double-counting
        local_records = self._local_windows(q)
        child_records = [r for p in partials for r in p.records]
        raw_count = len(self.local_data.get(q.capability, ()))
        input_count = raw_count + len(child_records)
        out = local_records + _regroup(child_records, q.kind, q.window)
        hops = 1 + max((p.hop_count for p in partials), default=0)
        return out, input_count, hops, answered, len(scoped)

    def _scoped_children(self, q: FederatedQuery):
        if q.scope == "all":
            return list(self.children)
        wanted = set(q.scope)
        return [link for link in self.children if link.node_id in wanted]

    def _local_windows(self, q: FederatedQuery) -> list[Aggregate]:
        rows = self.local_data.get(q.capability)
        if not rows:
            return []
        key = (q.capability, q.kind, q.window)
        cached = self._window_cache.get(key)
        if cached is None:
            spec = AnalyticOpSpec(kind=q.kind, window_tuples=q.window)
            cached = list(window_aggregate(rows, spec))
            self._window_cache[key] = cached
        return cached

    # -- wire dispatch ----------------------------------------------------

    def handle_remote(self, payload: bytes) -> bytes:
        """Decode one request and produce exactly one reply. Pure dispatch:
        shared by the TCP handler and direct tests."""
        try:
            mtype, headers, body = decode_message(payload)
        except ProtocolError as exc:
            return encode_message("ERROR", {"query-id": "?", "error": str(exc)})
        query_id = headers.get("query-id", "?")
        role = self.tokens.verify(headers.get("token"))
        if role is None:
            return encode_message(
                "ERROR", {"query-id": query_id, "error": "auth: invalid or missing token"}
            )
        try:
            if mtype == "PING":
                return encode_message("PONG", {"query-id": query_id, "node-id": self.descriptor.node_id})
            if mtype == "QUERY":
                return self._handle_query(query_id, headers)
            if mtype == "SUBMIT":
                return self._handle_submit(query_id, role, body)
            return encode_message(
                "ERROR", {"query-id": query_id, "error": f"unknown message type {mtype!r}"}
            )
        except AuthError as exc:
            return encode_message("ERROR", {"query-id": query_id, "error": f"auth: {exc}"})
        except Exception as exc:
            return encode_message("ERROR", {"query-id": query_id, "error": str(exc)})

    def _handle_query(self, query_id: str, headers: dict[str, str]) -> bytes:
        try:
            scope: str | list[str] = headers.get("scope", "all")
            if scope != "all":
                scope = [s for s in scope.split(",") if s]
            q = FederatedQuery(
                capability=headers["capability"],
                kind=headers["kind"],
                window=int(headers.get("window", "1")),
                scope=scope,
                deadline_s=int(headers.get("deadline-ms", "5000")) / 1000.0,
                query_id=query_id,
            )
        except (KeyError, ValueError, QueryError) as exc:
            raise ProtocolError(f"malformed query: {exc}") from exc
        # token already verified by handle_remote; children are queried with
        # this node's own child token
        records, input_count, hops, answered, expected = self._gather(q, None)
        body = "\n".join(r.csv_record() for r in records)
        return encode_message(
            "RESULT",
            {
                "query-id": query_id,
                "node-id": self.descriptor.node_id,
                "completeness": f"{answered}/{expected}",
                "input-count": str(input_count),
                "hop-count": str(hops),
            },
            body,
        )

    def _handle_submit(self, query_id: str, role: str, body: str) -> bytes:
        from . import osdspec

        spec = osdspec.parse_osdspec(body)
        instance = self.scheduler.submit_request(spec, role)
        self.metrics.add("scheduler", "submits")
        return encode_message(
            "RESULT",
            {
                "query-id": query_id,
                "node-id": self.descriptor.node_id,
                "service-id": instance.service_id,
                "state": instance.state,
                "reason": instance.failure_reason or "",
                "streams": str(len(instance.resolved_streams)),
            },
        )

    # -- serving ----------------------------------------------------------

    def serve(self) -> tuple[str, int]:
        """Bind and serve in a background thread; returns the bound address
        (useful with port 0)."""
        if self._server is not None:
            raise FederationError("node already serving")
        node = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                while True:
                    try:
                        payload = recv_frame(self.request)
                    except (ConnectionError, OSError):
                        return
                    except ProtocolError as exc:
                        try:
                            send_frame(
                                self.request,
                                encode_message("ERROR", {"query-id": "?", "error": str(exc)}),
                            )
                        except OSError:
                            pass
                        return  # close on framing violations
                    try:
                        send_frame(self.request, node.handle_remote(payload))
                    except OSError:
                        return

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True
            # hundreds of clients connect at once under load; the default
            # backlog of 5 turns the overflow into 1 s SYN retransmits
            request_queue_size = 1024

        self._server = Server((self.descriptor.host, self.descriptor.port), Handler)
        self.descriptor.port = self._server.server_address[1]
        self._server_thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._server_thread.start()
        return self._server.server_address[:2]

    def shutdown(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
            self._server_thread = None
        for link in self.children:
            if isinstance(link, RemoteChild):
                link.close()
        self._pool.shutdown(wait=False)


def _regroup(records: list[Aggregate], kind: str, window: int) -> list[Aggregate]:
    """Tumbling window over already-aggregated records: every `window`
    records merge into one. This is what shrinks uplink traffic at each hop."""
    if window <= 1:
        return list(records)
    out = []
    for i in range(0, len(records), window):
        out.append(aggregates.merge_all(kind, records[i : i + window]))
    return out


def _first_token(descriptor: NodeDescriptor) -> Optional[str]:
    for token, role in descriptor.tokens.items():
        if role == "consumer":
            return token
    return next(iter(descriptor.tokens), None)


# ---------------------------------------------------------------------------
# Topology config


def load_topology(text: str) -> dict[str, NodeDescriptor]:
    """Parse the topology config (INI-style, one `[node <id>]` section per
    node) and verify the child graph is acyclic."""
    import configparser

    parser = configparser.ConfigParser()
    parser.read_string(text)
    nodes: dict[str, NodeDescriptor] = {}
    for section in parser.sections():
        if not section.startswith("node "):
            raise FederationError(f"unexpected section [{section}]")
        node_id = section[len("node ") :].strip()
        opts = parser[section]
        address = opts.get("address", "127.0.0.1:0")
        host, _, port = address.rpartition(":")
        children = []
        for item in opts.get("children", "").split(","):
            item = item.strip()
            if not item:
                continue
            cid, _, caddr = item.partition("@")
            children.append((cid, caddr))
        tokens = {}
        for item in opts.get("tokens", "").split(","):
            item = item.strip()
            if not item:
                continue
            tok, _, role = item.partition(":")
            tokens[tok] = role
        capabilities = [c.strip() for c in opts.get("services", "").split(",") if c.strip()]
        nodes[node_id] = NodeDescriptor(
            node_id=node_id,
            host=host,
            port=int(port),
            role=opts.get("role", "leaf"),
            children=children,
            capabilities=capabilities,
            tokens=tokens,
        )
    _check_acyclic(nodes)
    return nodes


def _check_acyclic(nodes: dict[str, NodeDescriptor]) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in nodes}

    def visit(nid: str):
        color[nid] = GREY
        for cid, _ in nodes[nid].children:
            if cid not in nodes:
                continue  # child served elsewhere; nothing to check
            if color[cid] == GREY:
                raise FederationError(f"topology cycle through {cid}")
            if color[cid] == WHITE:
                visit(cid)
        color[nid] = BLACK

    for nid in nodes:
        if color[nid] == WHITE:
            visit(nid)
