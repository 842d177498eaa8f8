import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierion.store import (
    DEFAULT_GRAPH,
    Blank,
    GraphId,
    Iri,
    Literal,
    SnapshotError,
    TermValidationError,
    Triple,
    TripleStore,
)

G = GraphId("urn:test:g")


def t(s, p, o):
    return Triple(Iri(s), Iri(p), Iri(o))


class TestTermValidation:
    def test_iri_requires_scheme(self):
        with pytest.raises(TermValidationError):
            Iri("no-scheme")

    def test_iri_rejects_whitespace(self):
        with pytest.raises(TermValidationError):
            Iri("urn:has space")

    def test_iri_rejects_empty(self):
        with pytest.raises(TermValidationError):
            Iri("")

    def test_literal_subject_rejected(self):
        with pytest.raises(TermValidationError):
            Triple(Literal("x"), Iri("urn:p"), Iri("urn:o"))

    def test_empty_string_literal_allowed(self):
        assert Literal("").lexical == ""


class TestInsert:
    def test_empty_insert(self):
        assert TripleStore().insert(G, []) == 0

    def test_idempotent(self):
        store = TripleStore()
        triple = t("urn:s", "urn:p", "urn:o")
        assert store.insert(G, [triple]) == 1
        assert store.insert(G, [triple]) == 0
        assert store.count(G) == 1

    def test_count_after_three_distinct(self):
        store = TripleStore()
        store.insert(G, [t("urn:s", "urn:p", f"urn:o{i}") for i in range(3)])
        assert store.count(G) == 3


class TestMatch:
    def test_empty_store(self):
        assert TripleStore().match(G, None, None, None) == []

    def test_subject_anchor(self):
        store = TripleStore()
        triple = t("urn:s", "urn:p", "urn:o")
        store.insert(G, [triple])
        assert store.match(G, Iri("urn:s")) == [triple]

    def test_unknown_graph_flagged_not_error(self):
        store = TripleStore()
        assert store.match(GraphId("urn:test:nope")) == []
        assert any("urn:test:nope" in d for d in store.diagnostics)

    def test_default_graph_always_exists(self):
        store = TripleStore()
        assert store.match(DEFAULT_GRAPH) == []
        assert store.diagnostics == []

    def test_matches_equal_linear_scan(self):
        rng = random.Random(5)
        store = TripleStore()
        triples = [
            t(f"urn:s{rng.randrange(30)}", f"urn:p{rng.randrange(10)}", f"urn:o{rng.randrange(50)}")
            for _ in range(1000)
        ]
        store.insert(G, triples)
        universe = set(triples)
        for _ in range(100):
            s = Iri(f"urn:s{rng.randrange(30)}") if rng.random() < 0.6 else None
            p = Iri(f"urn:p{rng.randrange(10)}") if rng.random() < 0.6 else None
            o = Iri(f"urn:o{rng.randrange(50)}") if rng.random() < 0.6 else None
            oracle = {
                x
                for x in universe
                if (s is None or x.s == s) and (p is None or x.p == p) and (o is None or x.o == o)
            }
            assert set(store.match(G, s, p, o)) == oracle

    def test_deterministic_order(self):
        store = TripleStore()
        store.insert(G, [t("urn:s", "urn:p", f"urn:o{i}") for i in range(20)])
        assert store.match(G) == store.match(G)


@settings(max_examples=50, deadline=None)
@given(
    st.permutations(
        [
            ("urn:s1", "urn:p", "urn:o1"),
            ("urn:s1", "urn:p", "urn:o2"),
            ("urn:s2", "urn:p", "urn:o1"),
            ("urn:s1", "urn:p", "urn:o1"),  # duplicate
            ("urn:s3", "urn:q", "urn:o3"),
        ]
    )
)
def test_insertion_order_irrelevant(perm):
    store = TripleStore()
    for s, p, o in perm:
        store.insert(G, [t(s, p, o)])
    assert store.count(G) == 4
    assert [x for x in store.match(G)] == sorted(store.match(G), key=lambda x: (x.s.n3(), x.p.n3(), x.o.n3()))


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        store = TripleStore()
        store.insert(G, [t("urn:s", "urn:p", "urn:o")])
        store.insert(
            GraphId("urn:test:g2"),
            [
                Triple(Blank("b1"), Iri("urn:p"), Literal("hello\nworld")),
                Triple(Iri("urn:s"), Iri("urn:p"), Literal("3.5", datatype=Iri("urn:xsd:double"))),
                Triple(Iri("urn:s"), Iri("urn:p"), Literal("bonjour", lang="fr")),
            ],
        )
        path = tmp_path / "snap.nq"
        store.snapshot(str(path))
        restored = TripleStore.restore(str(path))
        for gid in store.graphs():
            assert restored.match(gid) == store.match(gid)
            assert restored.count(gid) == store.count(gid)

    def test_snapshot_deterministic(self, tmp_path):
        store = TripleStore()
        store.insert(G, [t("urn:s", "urn:p", f"urn:o{i}") for i in range(10)])
        a, b = tmp_path / "a.nq", tmp_path / "b.nq"
        store.snapshot(str(a))
        store.snapshot(str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_malformed_line_cites_line_number(self, tmp_path):
        path = tmp_path / "bad.nq"
        lines = ["# hierion snapshot v1"]
        lines += [f"<urn:s> <urn:p> <urn:o{i}> <urn:g> ." for i in range(5)]
        lines.append("<urn:s> <urn:p> garbage")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SnapshotError) as exc:
            TripleStore.restore(str(path))
        assert exc.value.line == 7

    def test_literal_subject_rejected_on_restore(self, tmp_path):
        path = tmp_path / "bad.nq"
        path.write_text('"lit" <urn:p> <urn:o> <urn:g> .\n')
        with pytest.raises(SnapshotError):
            TripleStore.restore(str(path))
