import random
import socket

import pytest

from hierion import aggregates
from hierion.aggregates import of_values
from hierion.federation import (
    FederatedQuery,
    FederationError,
    LocalChild,
    Node,
    NodeDescriptor,
    ProtocolError,
    QueryError,
    RemoteChild,
    TokenTable,
    decode_message,
    encode_message,
    load_topology,
    recv_frame,
    send_frame,
)

TOKENS = {"tok-admin": "admin", "tok-consumer": "consumer"}


def leaf(node_id, data=None, capability="temp"):
    node = Node(NodeDescriptor(node_id=node_id, tokens=dict(TOKENS)))
    if data is not None:
        node.load_capability_data(capability, [(i * 1000, float(v)) for i, v in enumerate(data)])
    return node


def parent(node_id, children, role="root"):
    desc = NodeDescriptor(
        node_id=node_id,
        role=role,
        children=[("placeholder", "127.0.0.1:1")],
        tokens=dict(TOKENS),
    )
    node = Node(desc)
    node.children = []
    for child in children:
        node.attach_local_child(child)
    return node


class TestCodec:
    def test_message_round_trip(self):
        payload = encode_message("QUERY", {"query-id": "q1", "token": "t"}, "body\nlines")
        mtype, headers, body = decode_message(payload)
        assert mtype == "QUERY"
        assert headers == {"query-id": "q1", "token": "t"}
        assert body == "body\nlines"

    def test_missing_magic(self):
        with pytest.raises(ProtocolError):
            decode_message(b"QUERY q1")

    def test_newline_in_header_rejected(self):
        with pytest.raises(ProtocolError):
            encode_message("QUERY", {"k": "a\nb"})

    def test_frame_round_trip(self):
        a, b = socket.socketpair()
        try:
            send_frame(a, b"hello")
            assert recv_frame(b) == b"hello"
        finally:
            a.close()
            b.close()

    def test_oversized_frame_rejected(self):
        a, b = socket.socketpair()
        try:
            a.sendall((200 * 1024 * 1024).to_bytes(4, "big"))
            with pytest.raises(ProtocolError):
                recv_frame(b)
        finally:
            a.close()
            b.close()


class TestTokens:
    def test_roles(self):
        table = TokenTable(TOKENS)
        assert table.verify("tok-admin") == "admin"
        assert table.verify("tok-consumer") == "consumer"
        assert table.verify("tok-wrong") is None
        assert table.verify(None) is None
        assert table.verify("") is None

    def test_unknown_role_rejected(self):
        with pytest.raises(FederationError):
            TokenTable({"t": "superuser"})


class TestQueryValidation:
    def test_bad_kind(self):
        with pytest.raises(QueryError):
            FederatedQuery(capability="c", kind="median")

    def test_bad_window(self):
        with pytest.raises(QueryError):
            FederatedQuery(capability="c", kind="avg", window=0)

    def test_bad_deadline(self):
        with pytest.raises(QueryError):
            FederatedQuery(capability="c", kind="avg", deadline_s=0)


class TestFederatedMerge:
    def test_golden_two_leaf_average(self):
        # leaf A holds 3 values summing to 6, leaf B one value of 5:
        # the root must see (sum=11, count=4), average 2.75
        root = parent("root", [leaf("a", [1, 2, 3]), leaf("b", [5])])
        q = FederatedQuery(capability="temp", kind="avg", window=1)
        res = root.execute_federated(q, "tok-consumer")
        assert (res.aggregate.sum, res.aggregate.count) == (11.0, 4)
        assert res.aggregate.value() == 2.75
        assert res.completeness == "2/2"

    def test_three_level_tree_matches_flat_oracle(self):
        rng = random.Random(11)
        leaf_data = {n: [rng.uniform(-40, 40) for _ in range(rng.randrange(1, 80))] for n in "abcd"}
        mid1 = parent("m1", [leaf("a", leaf_data["a"]), leaf("b", leaf_data["b"])], role="intermediate")
        mid2 = parent("m2", [leaf("c", leaf_data["c"]), leaf("d", leaf_data["d"])], role="intermediate")
        root = parent("root", [mid1, mid2])
        flat = [v for vs in leaf_data.values() for v in vs]
        for kind in aggregates.KINDS:
            q = FederatedQuery(capability="temp", kind=kind, window=3)
            res = root.execute_federated(q, "tok-consumer")
            oracle = of_values(kind, flat)
            assert res.aggregate.count == oracle.count
            assert res.aggregate.sum == pytest.approx(oracle.sum, rel=1e-9)
            assert res.aggregate.min == oracle.min
            assert res.aggregate.max == oracle.max
        assert res.hop_count == 3

    def test_intermediate_with_own_data(self):
        mid = parent("mid", [leaf("a", [1.0, 3.0])], role="intermediate")
        mid.load_capability_data("temp", [(0, 10.0)])
        root = parent("root", [mid])
        q = FederatedQuery(capability="temp", kind="avg", window=1)
        res = root.execute_federated(q, "tok-consumer")
        assert (res.aggregate.sum, res.aggregate.count) == (14.0, 3)

    def test_scope_restricts_children(self):
        root = parent("root", [leaf("a", [1.0]), leaf("b", [100.0])])
        q = FederatedQuery(capability="temp", kind="sum", scope=["a"])
        res = root.execute_federated(q, "tok-consumer")
        assert res.aggregate.sum == 1.0
        assert res.completeness == "1/1"

    def test_bad_token_rejected(self):
        root = parent("root", [leaf("a", [1.0])])
        q = FederatedQuery(capability="temp", kind="avg")
        from hierion.scheduler import AuthError

        with pytest.raises(AuthError):
            root.execute_federated(q, "tok-wrong")


class TestEdgeTraffic:
    def test_uplink_is_windowed_count(self):
        child = leaf("a", range(600))
        root = parent("root", [child])
        q = FederatedQuery(capability="temp", kind="avg", window=300)
        root.execute_federated(q, "tok-consumer")
        edge = root.measure_edge_traffic()["a"]
        assert edge.uplink_tuples == 2  # ceil(600/300)
        assert edge.child_input_tuples == 600
        assert edge.uplink_bytes > 0

    def test_counters_accumulate_and_reset(self):
        root = parent("root", [leaf("a", [1.0, 2.0, 3.0])])
        q = FederatedQuery(capability="temp", kind="avg", window=1)
        root.execute_federated(q, "tok-consumer")
        root.execute_federated(q, "tok-consumer")
        assert root.measure_edge_traffic()["a"].uplink_tuples == 6
        root.reset_edge_traffic()
        assert root.measure_edge_traffic() == {}


class TestTcp:
    @pytest.fixture
    def served_leaf(self):
        node = leaf("remote-leaf", [2.0, 4.0, 6.0])
        host, port = node.serve()
        yield node, f"{host}:{port}"
        node.shutdown()

    def test_remote_query(self, served_leaf):
        _, addr = served_leaf
        link = RemoteChild("remote-leaf", addr, "tok-consumer")
        try:
            q = FederatedQuery(capability="temp", kind="avg", window=1)
            partial = link.query(q, None, timeout=5.0)
            merged = aggregates.merge_all("avg", partial.records)
            assert (merged.sum, merged.count) == (12.0, 3)
            assert partial.input_count == 3
        finally:
            link.close()

    def test_ping(self, served_leaf):
        _, addr = served_leaf
        link = RemoteChild("remote-leaf", addr, "tok-consumer")
        try:
            assert link.ping("tok-consumer") is True
        finally:
            link.close()

    def test_unauthorized_query_gets_error(self, served_leaf):
        _, addr = served_leaf
        link = RemoteChild("remote-leaf", addr, "tok-wrong")
        try:
            q = FederatedQuery(capability="temp", kind="avg")
            with pytest.raises(QueryError, match="auth"):
                link.query(q, None, timeout=5.0)
        finally:
            link.close()

    def test_unreachable_child_reduces_completeness(self):
        live = leaf("live", [1.0, 2.0])
        host, port = live.serve()
        desc = NodeDescriptor(
            node_id="root",
            role="root",
            children=[("live", f"{host}:{port}"), ("dead", "127.0.0.1:1")],
            tokens=dict(TOKENS),
        )
        root = Node(desc, child_token="tok-consumer")
        try:
            q = FederatedQuery(capability="temp", kind="sum", window=1, deadline_s=2.0)
            res = root.execute_federated(q, "tok-consumer")
            assert res.completeness == "1/2"
            assert res.aggregate.sum == 3.0
            assert "dead" not in root.measure_edge_traffic()
        finally:
            root.shutdown()
            live.shutdown()


class TestDispatch:
    def test_exactly_one_reply_per_request(self):
        node = leaf("n", [1.0])
        for payload in (
            encode_message("PING", {"query-id": "1", "token": "tok-consumer"}),
            encode_message("QUERY", {"query-id": "2", "token": "tok-consumer",
                                     "capability": "temp", "kind": "avg"}),
            encode_message("BOGUS", {"query-id": "3", "token": "tok-consumer"}),
            b"garbage",
        ):
            reply = node.handle_remote(payload)
            mtype, headers, _ = decode_message(reply)
            assert mtype in ("PONG", "RESULT", "ERROR")

    def test_malformed_query_is_error_not_crash(self):
        node = leaf("n", [1.0])
        payload = encode_message(
            "QUERY",
            {"query-id": "q", "token": "tok-consumer", "capability": "temp",
             "kind": "avg", "window": "zero"},
        )
        mtype, headers, _ = decode_message(node.handle_remote(payload))
        assert mtype == "ERROR"
        assert "malformed query" in headers["error"]

    def test_auth_checked_before_dispatch(self):
        node = leaf("n", [1.0])
        before = node.state_digest()
        for mtype in ("PING", "QUERY", "SUBMIT", "BOGUS"):
            reply = node.handle_remote(
                encode_message(mtype, {"query-id": "x", "token": "nope"})
            )
            rtype, headers, _ = decode_message(reply)
            assert rtype == "ERROR"
            assert "auth" in headers["error"]
        assert node.state_digest() == before


class TestTopology:
    def test_parse(self):
        text = """
[node root]
address = 127.0.0.1:9000
role = root
children = a@127.0.0.1:9001, b@127.0.0.1:9002
tokens = tok-admin:admin, tok-consumer:consumer

[node a]
address = 127.0.0.1:9001
services = temp

[node b]
address = 127.0.0.1:9002
"""
        nodes = load_topology(text)
        assert set(nodes) == {"root", "a", "b"}
        assert nodes["root"].children == [("a", "127.0.0.1:9001"), ("b", "127.0.0.1:9002")]
        assert nodes["root"].tokens == TOKENS
        assert nodes["a"].capabilities == ["temp"]
        assert nodes["a"].role == "leaf"

    def test_cycle_detected(self):
        text = """
[node a]
role = intermediate
children = b@127.0.0.1:1

[node b]
role = intermediate
children = a@127.0.0.1:2
"""
        with pytest.raises(FederationError, match="cycle"):
            load_topology(text)

    def test_leaf_with_children_rejected(self):
        with pytest.raises(FederationError):
            NodeDescriptor(node_id="x", role="leaf", children=[("c", "h:1")])
