"""Parser and evaluator for the discovery-query SPARQL subset.

Grammar: SELECT over basic graph patterns with an optional FROM graph and
FILTER expressions calling registered geospatial builtins. The `geo:` and
`bif:` prefixes are hardwired; everything else must be a full IRI in angle
brackets. See docs/query-grammar.ebnf.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .geo import GeoError, GeoPoint, parse_point, within_radius
from .store import Blank, GraphId, Iri, Literal, Term, TripleStore

GEO_NS = "http://www.w3.org/2003/01/geo/wgs84_pos#"

PREFIXES = {"geo": GEO_NS}

# name -> arity; checked at parse time
BUILTINS = {
    "bif:st_point": 2,
    "bif:st_intersects": 3,
}


class SparqlError(Exception):
    pass


class SparqlSyntaxError(SparqlError):
    def __init__(self, message: str, line: int, column: int, expected: tuple[str, ...] = ()):
        detail = f"{line}:{column}: {message}"
        if expected:
            detail += " (expected %s)" % ", ".join(expected)
        super().__init__(detail)
        self.line = line
        self.column = column
        self.expected = expected


class UnknownBuiltinError(SparqlError):
    pass


class SparqlEvalError(SparqlError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Var:
    name: str  # without the leading '?'


PatternTerm = Union[Var, Iri, Literal, Blank]


@dataclass(frozen=True)
class TriplePattern:
    s: PatternTerm
    p: PatternTerm
    o: PatternTerm


@dataclass(frozen=True)
class NumLit:
    value: float


@dataclass(frozen=True)
class StrLit:
    value: str


@dataclass(frozen=True)
class FuncCall:
    name: str
    args: tuple


@dataclass(frozen=True)
class Comparison:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    args: tuple


@dataclass(frozen=True)
class NotExpr:
    arg: object


@dataclass
class QueryAst:
    select_vars: list[str]
    from_graph: Optional[GraphId]
    patterns: list[TriplePattern]
    filters: list[object] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
      (?P<WS>\s+)
    | (?P<IRIREF><[^<>"{}|^`\\\x00-\x20]*>)
    | (?P<VAR>\?[A-Za-z0-9_]+)
    | (?P<NUMBER>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
    | (?P<STRING>"(?:[^"\\]|\\.)*")
    | (?P<PNAME>[A-Za-z][A-Za-z0-9_-]*:[A-Za-z0-9_][A-Za-z0-9_.-]*)
    | (?P<KW>[A-Za-z][A-Za-z0-9_]*)
    | (?P<OP><=|>=|!=|&&|\|\||[=<>!])
    | (?P<PUNCT>[{}(),.])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SparqlSyntaxError(f"unrecognised character {text[pos]!r}", line, col)
        kind = m.lastgroup
        lexeme = m.group()
        if kind != "WS":
            toks.append(_Tok(kind, lexeme, line, col))
        nl = lexeme.count("\n")
        if nl:
            line += nl
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    toks.append(_Tok("EOF", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def _err(self, message, *expected):
        t = self.cur
        raise SparqlSyntaxError(message, t.line, t.col, expected)

    def _kw(self, word: str) -> bool:
        t = self.cur
        if t.kind == "KW" and t.text.upper() == word:
            self.i += 1
            return True
        return False

    def _expect_kw(self, word: str):
        if not self._kw(word):
            self._err(f"got {self.cur.text!r}", word)

    def _punct(self, ch: str) -> bool:
        if self.cur.kind == "PUNCT" and self.cur.text == ch:
            self.i += 1
            return True
        return False

    def _expect_punct(self, ch: str):
        if not self._punct(ch):
            self._err(f"got {self.cur.text!r}", repr(ch))

    def parse(self) -> QueryAst:
        self._expect_kw("SELECT")
        select_vars = []
        while self.cur.kind == "VAR":
            select_vars.append(self.cur.text[1:])
            self.i += 1
        if not select_vars:
            self._err("SELECT needs at least one variable", "?var")
        from_graph = None
        if self._kw("FROM"):
            if self.cur.kind != "IRIREF":
                self._err("FROM needs an IRI", "<iri>")
            from_graph = GraphId(Iri(self.cur.text[1:-1]))
            self.i += 1
        self._expect_kw("WHERE")
        self._expect_punct("{")
        patterns: list[TriplePattern] = []
        filters: list[object] = []
        while not self._punct("}"):
            if self.cur.kind == "EOF":
                self._err("unterminated group", "}")
            if self._kw("FILTER"):
                self._expect_punct("(")
                filters.append(self._expr())
                self._expect_punct(")")
                self._punct(".")  # trailing dot after FILTER is optional
            else:
                s = self._pattern_term()
                p = self._pattern_term()
                o = self._pattern_term()
                self._expect_punct(".")
                patterns.append(TriplePattern(s, p, o))
        if self.cur.kind != "EOF":
            self._err(f"trailing input {self.cur.text!r}")
        ast = QueryAst(select_vars, from_graph, patterns, filters)
        pattern_vars = {t.name for pat in patterns for t in (pat.s, pat.p, pat.o) if isinstance(t, Var)}
        for v in select_vars:
            if v not in pattern_vars:
                raise SparqlSyntaxError(f"select variable ?{v} unbound by any pattern", 1, 1)
        return ast

    def _pattern_term(self) -> PatternTerm:
        t = self.cur
        if t.kind == "VAR":
            self.i += 1
            return Var(t.text[1:])
        if t.kind == "IRIREF":
            self.i += 1
            return Iri(t.text[1:-1])
        if t.kind == "PNAME":
            self.i += 1
            return Iri(_expand_pname(t.text, t.line, t.col))
        if t.kind == "NUMBER":
            self.i += 1
            return Literal(t.text)
        if t.kind == "STRING":
            self.i += 1
            return Literal(_unquote(t.text))
        self._err(f"got {t.text!r}", "term or variable")

    # expression precedence: || < && < ! < comparison < primary
    def _expr(self):
        left = self._and_expr()
        args = [left]
        while self.cur.kind == "OP" and self.cur.text == "||":
            self.i += 1
            args.append(self._and_expr())
        return args[0] if len(args) == 1 else BoolOp("or", tuple(args))

    def _and_expr(self):
        args = [self._unary_expr()]
        while self.cur.kind == "OP" and self.cur.text == "&&":
            self.i += 1
            args.append(self._unary_expr())
        return args[0] if len(args) == 1 else BoolOp("and", tuple(args))

    def _unary_expr(self):
        if self.cur.kind == "OP" and self.cur.text == "!":
            self.i += 1
            return NotExpr(self._unary_expr())
        return self._cmp_expr()

    def _cmp_expr(self):
        left = self._primary()
        if self.cur.kind == "OP" and self.cur.text in ("<", "<=", "=", ">=", ">", "!="):
            op = self.cur.text
            self.i += 1
            return Comparison(op, left, self._primary())
        return left

    def _primary(self):
        t = self.cur
        if t.kind == "VAR":
            self.i += 1
            return Var(t.text[1:])
        if t.kind == "NUMBER":
            self.i += 1
            return NumLit(float(t.text))
        if t.kind == "STRING":
            self.i += 1
            return StrLit(_unquote(t.text))
        if t.kind in ("IRIREF", "PNAME"):
            name = t.text[1:-1] if t.kind == "IRIREF" else t.text
            self.i += 1
            return self._call(name, t.line, t.col)
        if self._punct("("):
            inner = self._expr()
            self._expect_punct(")")
            return inner
        self._err(f"got {t.text!r}", "expression")

    def _call(self, name: str, line: int, col: int) -> FuncCall:
        if name not in BUILTINS:
            raise UnknownBuiltinError(f"{line}:{col}: unknown builtin function {name!r}")
        self._expect_punct("(")
        args = [self._expr()]
        while self._punct(","):
            args.append(self._expr())
        self._expect_punct(")")
        if len(args) != BUILTINS[name]:
            raise SparqlSyntaxError(
                f"{name} takes {BUILTINS[name]} arguments, got {len(args)}", line, col
            )
        return FuncCall(name, tuple(args))


def _expand_pname(pname: str, line: int, col: int) -> str:
    prefix, local = pname.split(":", 1)
    if prefix == "bif":
        return pname  # builtin namespace kept verbatim
    if prefix in PREFIXES:
        return PREFIXES[prefix] + local
    raise SparqlSyntaxError(f"unknown prefix {prefix!r}", line, col)


def _unquote(quoted: str) -> str:
    return quoted[1:-1].replace('\\"', '"').replace("\\\\", "\\")


def parse(text: str) -> QueryAst:
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Canonical serializer (round-trip anchor for parse determinism tests)


def serialize(ast: QueryAst) -> str:
    out = ["SELECT " + " ".join(f"?{v}" for v in ast.select_vars)]
    if ast.from_graph is not None:
        out.append(f"FROM <{ast.from_graph.iri.value}>")
    out.append("WHERE {")
    for pat in ast.patterns:
        out.append(f"  {_term_text(pat.s)} {_term_text(pat.p)} {_term_text(pat.o)} .")
    for f in ast.filters:
        out.append(f"  FILTER ({_expr_text(f)}) .")
    out.append("}")
    return "\n".join(out) + "\n"


def _term_text(t: PatternTerm) -> str:
    if isinstance(t, Var):
        return f"?{t.name}"
    return t.n3()


def _expr_text(e) -> str:
    if isinstance(e, Var):
        return f"?{e.name}"
    if isinstance(e, NumLit):
        return repr(e.value)
    if isinstance(e, StrLit):
        return '"%s"' % e.value.replace("\\", "\\\\").replace('"', '\\"')
    if isinstance(e, FuncCall):
        return "<%s>(%s)" % (e.name, ", ".join(_expr_text(a) for a in e.args))
    if isinstance(e, Comparison):
        return f"({_expr_text(e.left)} {e.op} {_expr_text(e.right)})"
    if isinstance(e, BoolOp):
        joiner = " && " if e.op == "and" else " || "
        return "(" + joiner.join(_expr_text(a) for a in e.args) + ")"
    if isinstance(e, NotExpr):
        return f"!({_expr_text(e.arg)})"
    raise SparqlError(f"unserialisable expression {e!r}")


# ---------------------------------------------------------------------------
# Builtins


def builtin_st_point(lon: float, lat: float) -> GeoPoint:
    try:
        return GeoPoint(float(lon), float(lat))
    except GeoError as exc:
        raise SparqlEvalError(f"st_point: {exc}") from exc


def builtin_st_intersects(geom, center, radius_km: float) -> bool:
    a = _as_point(geom, "st_intersects argument 1")
    b = _as_point(center, "st_intersects argument 2")
    if not isinstance(radius_km, (int, float)):
        raise SparqlEvalError("st_intersects: radius must be numeric")
    if radius_km < 0:
        raise SparqlEvalError(f"st_intersects: negative radius {radius_km}")
    return within_radius(a, b, float(radius_km))


def _as_point(value, what: str) -> GeoPoint:
    if isinstance(value, GeoPoint):
        return value
    if isinstance(value, Literal):
        value = value.lexical
    if isinstance(value, str):
        try:
            return parse_point(value)
        except GeoError as exc:
            raise SparqlEvalError(f"{what}: {exc}") from exc
    raise SparqlEvalError(f"{what}: cannot interpret {value!r} as a point")


# ---------------------------------------------------------------------------
# Evaluator


class BindingSet:
    """Ordered result rows, each binding exactly the select variables."""

    def __init__(self, variables: list[str], rows: list[dict[str, Term]]):
        self.variables = variables
        self.rows = rows

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, var: str) -> list[Term]:
        return [row[var] for row in self.rows]

    def as_tsv(self) -> str:
        lines = ["\t".join(f"?{v}" for v in self.variables)]
        for row in self.rows:
            lines.append("\t".join(row[v].n3() for v in self.variables))
        return "\n".join(lines) + "\n"


def evaluate(ast: QueryAst, store: TripleStore) -> BindingSet:
    """Left-to-right index-assisted join of all patterns, then filters, then
    projection. Row order is lexicographic by bound terms so results are
    stable for golden tests."""
    from .store import DEFAULT_GRAPH

    graph = ast.from_graph if ast.from_graph is not None else DEFAULT_GRAPH
    rows: list[dict[str, Term]] = [{}]
    for pat in ast.patterns:
        rows = _join_pattern(rows, pat, graph, store)
        if not rows:
            break
    for f in ast.filters:
        rows = [r for r in rows if _truth(_eval_expr(f, r))]
    projected = [{v: r[v] for v in ast.select_vars} for r in rows]
    projected.sort(key=lambda r: tuple(r[v].n3() for v in ast.select_vars))
    return BindingSet(list(ast.select_vars), projected)


def _join_pattern(rows, pat: TriplePattern, graph, store: TripleStore):
    out = []
    for row in rows:
        s = _bound(pat.s, row)
        p = _bound(pat.p, row)
        o = _bound(pat.o, row)
        if p is not None and not isinstance(p, Iri):
            continue  # bound predicate that is not an IRI can never match
        if isinstance(s, Literal):
            continue
        for t in store.match(graph, s, p, o):
            ext = _unify(pat, t, row)
            if ext is not None:
                out.append(ext)
    return out


def _bound(term: PatternTerm, row) -> Optional[Term]:
    if isinstance(term, Var):
        return row.get(term.name)
    return term


def _unify(pat: TriplePattern, t, row):
    ext = dict(row)
    for pos, val in ((pat.s, t.s), (pat.p, t.p), (pat.o, t.o)):
        if isinstance(pos, Var):
            if pos.name in ext and ext[pos.name] != val:
                return None
            ext[pos.name] = val
    return ext


def _eval_expr(e, row):
    if isinstance(e, Var):
        if e.name not in row:
            raise SparqlEvalError(f"filter references unbound variable ?{e.name}")
        return row[e.name]
    if isinstance(e, NumLit):
        return e.value
    if isinstance(e, StrLit):
        return e.value
    if isinstance(e, FuncCall):
        args = [_scalar(_eval_expr(a, row)) for a in e.args]
        if e.name == "bif:st_point":
            return builtin_st_point(*args)
        if e.name == "bif:st_intersects":
            return builtin_st_intersects(*args)
        raise UnknownBuiltinError(e.name)
    if isinstance(e, Comparison):
        left = _scalar(_eval_expr(e.left, row))
        right = _scalar(_eval_expr(e.right, row))
        return _compare(e.op, left, right, e)
    if isinstance(e, BoolOp):
        vals = (_truth(_eval_expr(a, row)) for a in e.args)
        return all(vals) if e.op == "and" else any(vals)
    if isinstance(e, NotExpr):
        return not _truth(_eval_expr(e.arg, row))
    raise SparqlEvalError(f"cannot evaluate {e!r}")


def _scalar(value):
    """Map terms to comparable Python values; numeric literals become floats."""
    if isinstance(value, Literal):
        try:
            return float(value.lexical)
        except ValueError:
            return value.lexical
    if isinstance(value, Iri):
        return value.value
    if isinstance(value, Blank):
        return "_:" + value.label
    return value


def _compare(op: str, left, right, expr) -> bool:
    numeric = isinstance(left, (int, float)) and isinstance(right, (int, float))
    textual = isinstance(left, str) and isinstance(right, str)
    if not numeric and not textual:
        raise SparqlEvalError(f"type error comparing {left!r} {op} {right!r} in {_expr_text(expr)}")
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == "=":
        return left == right
    if op == ">=":
        return left >= right
    if op == ">":
        return left > right
    return left != right


def _truth(value) -> bool:
    if isinstance(value, bool):
        return value
    raise SparqlEvalError(f"filter expression is not boolean: {value!r}")
