"""In-memory triple store with named graphs and three permutation indexes.

Substrate for the directory service. Set semantics per graph; snapshot to a
line-oriented quad format for diffable golden files.
"""

from __future__ import annotations

import threading
from typing import Iterable, Optional

RESERVED_DEFAULT_GRAPH = "urn:hierion:default"


class StoreError(Exception):
    pass


class TermValidationError(StoreError):
    pass


class SnapshotError(StoreError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class Iri:
    """An absolute IRI. Validation is syntactic: a scheme separator and no
    whitespace; nothing is ever dereferenced."""

    __slots__ = ("value", "_hash")

    def __init__(self, value: str):
        if not value:
            raise TermValidationError("empty IRI")
        if ":" not in value:
            raise TermValidationError(f"IRI lacks a scheme separator: {value!r}")
        if any(c.isspace() for c in value):
            raise TermValidationError(f"IRI contains whitespace: {value!r}")
        self.value = value
        self._hash = hash(("iri", value))

    def __eq__(self, other):
        return isinstance(other, Iri) and other.value == self.value

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Iri({self.value!r})"

    def n3(self) -> str:
        return f"<{self.value}>"


class Literal:
    """An RDF literal: lexical form plus optional datatype or language tag."""

    __slots__ = ("lexical", "datatype", "lang", "_hash")

    def __init__(self, lexical: str, datatype: Optional[Iri] = None, lang: Optional[str] = None):
        if datatype is not None and lang is not None:
            raise TermValidationError("literal cannot carry both datatype and language tag")
        self.lexical = lexical
        self.datatype = datatype
        self.lang = lang
        self._hash = hash(("lit", lexical, datatype, lang))

    def __eq__(self, other):
        return (
            isinstance(other, Literal)
            and other.lexical == self.lexical
            and other.datatype == self.datatype
            and other.lang == self.lang
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Literal({self.lexical!r}, {self.datatype!r}, {self.lang!r})"

    def n3(self) -> str:
        body = '"%s"' % _escape(self.lexical)
        if self.datatype is not None:
            return f"{body}^^{self.datatype.n3()}"
        if self.lang is not None:
            return f"{body}@{self.lang}"
        return body


class Blank:
    __slots__ = ("label", "_hash")

    def __init__(self, label: str):
        if not label:
            raise TermValidationError("empty blank node label")
        self.label = label
        self._hash = hash(("blank", label))

    def __eq__(self, other):
        return isinstance(other, Blank) and other.label == self.label

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Blank({self.label!r})"

    def n3(self) -> str:
        return f"_:{self.label}"


Term = Iri | Literal | Blank


class Triple:
    __slots__ = ("s", "p", "o", "_hash")

    def __init__(self, s: Term, p: Iri, o: Term):
        if isinstance(s, Literal):
            raise TermValidationError(f"literal subject: {s!r}")
        if not isinstance(p, Iri):
            raise TermValidationError(f"non-IRI predicate: {p!r}")
        self.s = s
        self.p = p
        self.o = o
        self._hash = hash((s, p, o))

    def __eq__(self, other):
        return (
            isinstance(other, Triple)
            and other.s == self.s
            and other.p == self.p
            and other.o == self.o
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"Triple({self.s!r}, {self.p!r}, {self.o!r})"


class GraphId:
    __slots__ = ("iri", "_hash")

    def __init__(self, iri: Iri | str):
        if isinstance(iri, str):
            iri = Iri(iri)
        self.iri = iri
        self._hash = hash(iri)

    def __eq__(self, other):
        return isinstance(other, GraphId) and other.iri == self.iri

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"GraphId({self.iri.value!r})"


DEFAULT_GRAPH = GraphId(RESERVED_DEFAULT_GRAPH)


class _RWLock:
    """Many readers, one writer. Writers wait for active readers to drain."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    def acquire_read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class _Graph:
    __slots__ = ("triples", "by_s", "by_p", "by_o")

    def __init__(self):
        self.triples: set[Triple] = set()
        self.by_s: dict[Term, set[Triple]] = {}
        self.by_p: dict[Iri, set[Triple]] = {}
        self.by_o: dict[Term, set[Triple]] = {}

    def add(self, t: Triple) -> bool:
        if t in self.triples:
            return False
        self.triples.add(t)
        self.by_s.setdefault(t.s, set()).add(t)
        self.by_p.setdefault(t.p, set()).add(t)
        self.by_o.setdefault(t.o, set()).add(t)
        return True


class TripleStore:
    """Named-graph triple store; safe for concurrent readers with a single
    exclusive writer. Lookups pick the index with the smallest candidate set."""

    def __init__(self):
        self._graphs: dict[GraphId, _Graph] = {}
        self._lock = _RWLock()
        self.diagnostics: list[str] = []

    def insert(self, graph: GraphId, triples: Iterable[Triple]) -> int:
        self._lock.acquire_write()
        try:
            g = self._graphs.get(graph)
            if g is None:
                g = self._graphs[graph] = _Graph()
            added = 0
            for t in triples:
                if not isinstance(t, Triple):
                    raise TermValidationError(f"not a triple: {t!r}")
                if g.add(t):
                    added += 1
            return added
        finally:
            self._lock.release_write()

    def match(
        self,
        graph: GraphId,
        s: Optional[Term] = None,
        p: Optional[Iri] = None,
        o: Optional[Term] = None,
    ) -> list[Triple]:
        self._lock.acquire_read()
        try:
            g = self._graphs.get(graph)
            if g is None:
                if graph != DEFAULT_GRAPH:
                    self.diagnostics.append(f"match on unknown graph {graph.iri.value}")
                return []
            candidates: set[Triple] | None = None
            if s is not None:
                candidates = g.by_s.get(s, set())
            if p is not None:
                byp = g.by_p.get(p, set())
                if candidates is None or len(byp) < len(candidates):
                    candidates = byp
            if o is not None:
                byo = g.by_o.get(o, set())
                if candidates is None or len(byo) < len(candidates):
                    candidates = byo
            if candidates is None:
                candidates = g.triples
            out = [
                t
                for t in candidates
                if (s is None or t.s == s) and (p is None or t.p == p) and (o is None or t.o == o)
            ]
            out.sort(key=_triple_key)
            return out
        finally:
            self._lock.release_read()

    def count(self, graph: GraphId) -> int:
        self._lock.acquire_read()
        try:
            g = self._graphs.get(graph)
            return 0 if g is None else len(g.triples)
        finally:
            self._lock.release_read()

    def graphs(self) -> list[GraphId]:
        self._lock.acquire_read()
        try:
            return sorted(self._graphs, key=lambda gid: gid.iri.value)
        finally:
            self._lock.release_read()

    def snapshot(self, path: str) -> None:
        """Write one `<s> <p> <o> <g> .` record per line, sorted for
        bit-exact golden comparisons."""
        self._lock.acquire_read()
        try:
            lines = []
            for gid in sorted(self._graphs, key=lambda g: g.iri.value):
                gterm = gid.iri.n3()
                for t in sorted(self._graphs[gid].triples, key=_triple_key):
                    lines.append(f"{t.s.n3()} {t.p.n3()} {t.o.n3()} {gterm} .\n")
        finally:
            self._lock.release_read()
        with open(path, "w", encoding="utf-8") as f:
            f.write("# hierion snapshot v1\n")
            f.writelines(lines)

    @classmethod
    def restore(cls, path: str) -> "TripleStore":
        store = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    s, p, o, g = _parse_quad(line)
                except (StoreError, ValueError) as exc:
                    raise SnapshotError(str(exc), lineno) from exc
                store.insert(GraphId(g), [Triple(s, p, o)])
        return store


def _triple_key(t: Triple):
    return (t.s.n3(), t.p.n3(), t.o.n3())


def _escape(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\r", "\\r")
        .replace("\t", "\\t")
    )


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\":
            if i + 1 >= len(text):
                raise ValueError("dangling escape")
            n = text[i + 1]
            out.append({"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}.get(n, n))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _read_term(line: str, pos: int):
    """Read one N-Quads-style term starting at pos; return (term, next_pos)."""
    while pos < len(line) and line[pos] == " ":
        pos += 1
    if pos >= len(line):
        raise ValueError("unexpected end of record")
    c = line[pos]
    if c == "<":
        end = line.find(">", pos)
        if end < 0:
            raise ValueError("unterminated IRI")
        return Iri(line[pos + 1 : end]), end + 1
    if c == "_" and line[pos : pos + 2] == "_:":
        end = pos + 2
        while end < len(line) and line[end] not in " ":
            end += 1
        return Blank(line[pos + 2 : end]), end
    if c == '"':
        end = pos + 1
        while end < len(line):
            if line[end] == "\\":
                end += 2
                continue
            if line[end] == '"':
                break
            end += 1
        if end >= len(line):
            raise ValueError("unterminated literal")
        lex = _unescape(line[pos + 1 : end])
        rest = end + 1
        if line[rest : rest + 2] == "^^":
            dt, rest = _read_term(line, rest + 2)
            if not isinstance(dt, Iri):
                raise ValueError("datatype must be an IRI")
            return Literal(lex, datatype=dt), rest
        if rest < len(line) and line[rest] == "@":
            end = rest + 1
            while end < len(line) and line[end] != " ":
                end += 1
            return Literal(lex, lang=line[rest + 1 : end]), end
        return Literal(lex), rest
    raise ValueError(f"unrecognised term at column {pos + 1}")


def _parse_quad(line: str):
    s, pos = _read_term(line, 0)
    p, pos = _read_term(line, pos)
    o, pos = _read_term(line, pos)
    g, pos = _read_term(line, pos)
    tail = line[pos:].strip()
    if tail != ".":
        raise ValueError("record does not end with '.'")
    if isinstance(s, Literal):
        raise ValueError("literal subject")
    if not isinstance(p, Iri):
        raise ValueError("non-IRI predicate")
    if not isinstance(g, Iri):
        raise ValueError("non-IRI graph id")
    return s, p, o, g.value
