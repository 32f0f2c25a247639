"""Parser and evaluator for the SPARQL subset used by the query corpus.

Covers SELECT over basic graph patterns with FILTER boolean/comparison
expressions, COUNT with GROUP BY, ORDER BY, and LIMIT. Nothing else:
no OPTIONAL, UNION, paths, or updates.

evaluate() joins patterns most-selective-first over the store indexes;
evaluate_naive() is the brute-force nested-loop oracle that scans the
whole graph per pattern in written order. Both share only the leaf-level
term comparison semantics (numeric coercion rules), which is the behavior
under test rather than the join machinery.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .rdf import Graph, Term, TermKind, iri, literal
from .vocab import RDF_TYPE, XSD_INTEGER

# --- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class QVar:
    name: str

    def __repr__(self):
        return f"?{self.name}"


@dataclass(frozen=True)
class PName:
    prefix: str
    local: str


PatternTerm = Union[QVar, PName, Term]


@dataclass(frozen=True)
class TriplePattern:
    s: PatternTerm
    p: PatternTerm
    o: PatternTerm


@dataclass(frozen=True)
class Comparison:
    op: str  # = != < <= > >=
    left: Union[QVar, Term]
    right: Union[QVar, Term]


@dataclass(frozen=True)
class BoolExpr:
    op: str  # && || !
    operands: tuple


FilterExpr = Union[Comparison, BoolExpr]


@dataclass(frozen=True)
class Aggregate:
    func: str  # COUNT
    var: Optional[str]  # None for COUNT(*)
    alias: str


@dataclass
class QueryAst:
    prefixes: dict[str, str] = field(default_factory=dict)
    select: list[Union[str, Aggregate]] = field(default_factory=list)
    where: list[TriplePattern] = field(default_factory=list)
    filters: list[FilterExpr] = field(default_factory=list)
    group_by: Optional[str] = None
    order_by: Optional[tuple[str, str]] = None  # (var, "asc"|"desc")
    limit: Optional[int] = None


class SparqlSyntaxError(ValueError):
    def __init__(self, line: int, col: int, message: str, expected=()):
        hint = f"; expected one of {sorted(expected)}" if expected else ""
        super().__init__(f"{line}:{col}: {message}{hint}")
        self.line = line
        self.col = col
        self.expected = tuple(expected)


class SparqlEvalError(ValueError):
    pass


# --- tokenizer -----------------------------------------------------------------

_KEYWORDS = {"PREFIX", "SELECT", "WHERE", "FILTER", "GROUP", "BY", "ORDER",
             "ASC", "DESC", "LIMIT", "COUNT", "AS"}

_TOKEN_RE = re.compile(r"""
    (?P<WS>\s+)
  | (?P<COMMENT>\#[^\n]*)
  | (?P<IRIREF><[^<>\s"{}|^`\\]*>)
  | (?P<VAR>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<STRING>"(?:[^"\\]|\\.)*")
  | (?P<NUMBER>-?\d+(?:\.\d+)?)
  | (?P<PNAME>[A-Za-z_][A-Za-z0-9_\-]*:[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<PFX>[A-Za-z_][A-Za-z0-9_\-]*:)
  | (?P<NAME>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<OP>&&|\|\||!=|<=|>=|=|<|>|!)
  | (?P<PUNCT>[{}().,*])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Token:
    kind: str
    value: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SparqlSyntaxError(line, col, f"unexpected character {text[pos]!r}")
        raw = m.group()
        kind = m.lastgroup
        if kind == "NAME" and raw.upper() in _KEYWORDS:
            tokens.append(_Token(raw.upper(), raw, line, col))
        elif kind not in ("WS", "COMMENT"):
            tokens.append(_Token(kind, raw, line, col))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            col = len(raw) - raw.rfind("\n")
        else:
            col += len(raw)
        pos = m.end()
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# --- parser --------------------------------------------------------------------


class _QueryParser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def at(self, kind: str, value: Optional[str] = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (value is None or tok.value == value)

    def take(self, kind: str, value: Optional[str] = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (value is not None and tok.value != value):
            expected = {value or kind}
            raise SparqlSyntaxError(tok.line, tok.col,
                                    f"unexpected {tok.value or 'end of input'!r}",
                                    expected)
        self.i += 1
        return tok

    def parse(self) -> QueryAst:
        ast = QueryAst()
        while self.at("PREFIX"):
            self.take("PREFIX")
            pfx = self.take("PFX").value[:-1]
            ast.prefixes[pfx] = self.take("IRIREF").value[1:-1]
        self.take("SELECT")
        while True:
            if self.at("VAR"):
                ast.select.append(self.take("VAR").value[1:])
            elif self.at("PUNCT", "("):
                ast.select.append(self._aggregate())
            else:
                break
        if not ast.select:
            tok = self.peek()
            raise SparqlSyntaxError(tok.line, tok.col, "empty projection",
                                    {"?var", "(COUNT"})
        self.take("WHERE")
        self.take("PUNCT", "{")
        while not self.at("PUNCT", "}"):
            if self.at("FILTER"):
                self.take("FILTER")
                self.take("PUNCT", "(")
                ast.filters.append(self._or_expr())
                self.take("PUNCT", ")")
            else:
                s = self._pattern_term()
                p = self._pattern_term()
                o = self._pattern_term()
                ast.where.append(TriplePattern(s, p, o))
            if self.at("PUNCT", "."):
                self.take("PUNCT", ".")
        self.take("PUNCT", "}")
        if self.at("GROUP"):
            self.take("GROUP")
            self.take("BY")
            ast.group_by = self.take("VAR").value[1:]
        if self.at("ORDER"):
            self.take("ORDER")
            self.take("BY")
            if self.at("ASC") or self.at("DESC"):
                direction = self.take(self.peek().kind).kind.lower()
                self.take("PUNCT", "(")
                var = self.take("VAR").value[1:]
                self.take("PUNCT", ")")
            else:
                direction = "asc"
                var = self.take("VAR").value[1:]
            ast.order_by = (var, direction)
        if self.at("LIMIT"):
            self.take("LIMIT")
            ast.limit = int(self.take("NUMBER").value)
        self.take("EOF")
        self._validate(ast)
        return ast

    def _aggregate(self) -> Aggregate:
        self.take("PUNCT", "(")
        self.take("COUNT")
        self.take("PUNCT", "(")
        if self.at("PUNCT", "*"):
            self.take("PUNCT", "*")
            var = None
        else:
            var = self.take("VAR").value[1:]
        self.take("PUNCT", ")")
        self.take("AS")
        alias = self.take("VAR").value[1:]
        self.take("PUNCT", ")")
        return Aggregate("COUNT", var, alias)

    def _pattern_term(self) -> PatternTerm:
        tok = self.peek()
        if tok.kind == "VAR":
            return QVar(self.take("VAR").value[1:])
        if tok.kind == "IRIREF":
            return iri(self.take("IRIREF").value[1:-1])
        if tok.kind == "PNAME":
            pfx, local = self.take("PNAME").value.split(":", 1)
            return PName(pfx, local)
        if tok.kind == "NAME" and tok.value == "a":
            self.take("NAME")
            return iri(RDF_TYPE)
        if tok.kind == "STRING":
            return self._string_term()
        if tok.kind == "NUMBER":
            return self._number_term()
        raise SparqlSyntaxError(tok.line, tok.col,
                                f"unexpected {tok.value!r} in triple pattern",
                                {"?var", "<iri>", "pname", '"literal"', "number", "a"})

    def _string_term(self) -> Term:
        raw = self.take("STRING").value[1:-1]
        return Term(TermKind.LITERAL, raw.replace('\\"', '"').replace("\\\\", "\\"))

    def _number_term(self) -> Term:
        raw = self.take("NUMBER").value
        if "." in raw:
            return literal(float(raw))
        return literal(int(raw))

    def _or_expr(self) -> FilterExpr:
        left = self._and_expr()
        operands = [left]
        while self.at("OP", "||"):
            self.take("OP", "||")
            operands.append(self._and_expr())
        return operands[0] if len(operands) == 1 else BoolExpr("||", tuple(operands))

    def _and_expr(self) -> FilterExpr:
        operands = [self._unary_expr()]
        while self.at("OP", "&&"):
            self.take("OP", "&&")
            operands.append(self._unary_expr())
        return operands[0] if len(operands) == 1 else BoolExpr("&&", tuple(operands))

    def _unary_expr(self) -> FilterExpr:
        if self.at("OP", "!"):
            self.take("OP", "!")
            return BoolExpr("!", (self._unary_expr(),))
        if self.at("PUNCT", "("):
            self.take("PUNCT", "(")
            inner = self._or_expr()
            self.take("PUNCT", ")")
            return inner
        left = self._operand()
        tok = self.peek()
        if tok.kind == "OP" and tok.value in ("=", "!=", "<", "<=", ">", ">="):
            op = self.take("OP").value
            right = self._operand()
            return Comparison(op, left, right)
        raise SparqlSyntaxError(tok.line, tok.col,
                                f"expected comparison operator, got {tok.value!r}",
                                {"=", "!=", "<", "<=", ">", ">="})

    def _operand(self) -> Union[QVar, Term]:
        tok = self.peek()
        if tok.kind == "VAR":
            return QVar(self.take("VAR").value[1:])
        if tok.kind == "STRING":
            return self._string_term()
        if tok.kind == "NUMBER":
            return self._number_term()
        raise SparqlSyntaxError(tok.line, tok.col,
                                f"expected operand, got {tok.value!r}",
                                {"?var", '"literal"', "number"})

    def _validate(self, ast: QueryAst) -> None:
        where_vars = set()
        for pat in ast.where:
            for part in (pat.s, pat.p, pat.o):
                if isinstance(part, QVar):
                    where_vars.add(part.name)
        aliases = {item.alias for item in ast.select if isinstance(item, Aggregate)}
        plain = [item for item in ast.select if isinstance(item, str)]
        for name in plain:
            if name not in where_vars:
                raise SparqlSyntaxError(0, 0, f"projected ?{name} not in WHERE")
        if aliases and plain and ast.group_by is None:
            raise SparqlSyntaxError(0, 0,
                                    "aggregate mixed with plain variables needs GROUP BY")
        if ast.group_by is not None:
            for name in plain:
                if name != ast.group_by:
                    raise SparqlSyntaxError(
                        0, 0, f"?{name} projected but not the GROUP BY variable")


def parse_query(text: str) -> QueryAst:
    if not text.strip():
        raise SparqlSyntaxError(1, 1, "empty query")
    return _QueryParser(text).parse()


# --- shared comparison semantics ------------------------------------------------


_NUMERIC_DATATYPES = frozenset({
    XSD_INTEGER,
    "http://www.w3.org/2001/XMLSchema#decimal",
    "http://www.w3.org/2001/XMLSchema#double",
    "http://www.w3.org/2001/XMLSchema#float",
})


def _typed_number(term) -> Optional[float]:
    if not isinstance(term, Term) or term.kind is not TermKind.LITERAL:
        return None
    if term.datatype in _NUMERIC_DATATYPES:
        try:
            return float(term.value)
        except ValueError:
            return None
    return None


def _plain_number(term) -> Optional[float]:
    if (isinstance(term, Term) and term.kind is TermKind.LITERAL
            and term.datatype is None):
        try:
            return float(term.value)
        except ValueError:
            return None
    return None


def _numeric(term) -> Optional[float]:
    typed = _typed_number(term)
    return typed if typed is not None else _plain_number(term)


def compare_terms(op: str, a: Term, b: Term) -> bool:
    """Leaf comparison with the documented coercion rule.

    Numeric-typed literals compare numerically; a plain string that parses
    as a number coerces when facing a numeric-typed literal; any other
    numeric-vs-string pairing is false. Two plain strings (or two literals
    sharing a datatype) compare as strings, lexicographically for the
    ordered operators. IRIs support identity tests only.
    """
    a_typed, b_typed = _typed_number(a), _typed_number(b)
    if a_typed is not None and b_typed is not None:
        return _apply_op(op, a_typed, b_typed)
    if a_typed is not None or b_typed is not None:
        other = b if a_typed is not None else a
        coerced = _plain_number(other)
        if coerced is None:
            return False
        num = a_typed if a_typed is not None else b_typed
        left = num if a_typed is not None else coerced
        right = coerced if a_typed is not None else num
        return _apply_op(op, left, right)
    a_lit = isinstance(a, Term) and a.kind is TermKind.LITERAL
    b_lit = isinstance(b, Term) and b.kind is TermKind.LITERAL
    if not (a_lit and b_lit):
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        return False
    if op == "=":
        return a.value == b.value and a.datatype == b.datatype
    if op == "!=":
        return a.value != b.value or a.datatype != b.datatype
    if a.datatype != b.datatype:
        return False
    return _apply_op(op, a.value, b.value)


def _apply_op(op: str, a, b) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise SparqlEvalError(f"unknown operator {op}")


def eval_filter(expr: FilterExpr, binding: dict[str, Term]) -> bool:
    """Short-circuit boolean evaluation; coercion failures yield False."""
    if isinstance(expr, Comparison):
        left = _operand_value(expr.left, binding)
        right = _operand_value(expr.right, binding)
        if left is None or right is None:
            return False
        return compare_terms(expr.op, left, right)
    if expr.op == "!":
        return not eval_filter(expr.operands[0], binding)
    if expr.op == "&&":
        return all(eval_filter(e, binding) for e in expr.operands)
    if expr.op == "||":
        return any(eval_filter(e, binding) for e in expr.operands)
    raise SparqlEvalError(f"unknown boolean operator {expr.op}")


def _operand_value(operand, binding) -> Optional[Term]:
    if isinstance(operand, QVar):
        return binding.get(operand.name)
    return operand


# --- evaluation -------------------------------------------------------------------


@dataclass
class ResultTable:
    header: list[str]
    rows: list[tuple]

    def as_dicts(self) -> list[dict]:
        return [dict(zip(self.header, row)) for row in self.rows]

    def row_multiset(self) -> dict:
        counts: dict = {}
        for row in self.rows:
            counts[row] = counts.get(row, 0) + 1
        return counts


def _resolve_term(part: PatternTerm, prefixes: dict[str, str]) -> PatternTerm:
    if isinstance(part, PName):
        if part.prefix not in prefixes:
            raise SparqlEvalError(f"unknown prefix {part.prefix!r}")
        return iri(prefixes[part.prefix] + part.local)
    return part


def _resolved_patterns(ast: QueryAst) -> list[TriplePattern]:
    return [TriplePattern(*(_resolve_term(part, ast.prefixes)
                            for part in (pat.s, pat.p, pat.o)))
            for pat in ast.where]


def _selectivity(pat: TriplePattern, binding_vars: set[str]) -> int:
    score = 0
    for part in (pat.s, pat.p, pat.o):
        if isinstance(part, Term):
            score += 1
        elif isinstance(part, QVar) and part.name in binding_vars:
            score += 1
    return score


def _match_pattern(g: Graph, pat: TriplePattern, binding: dict[str, Term]):
    def concrete(part):
        if isinstance(part, QVar):
            return binding.get(part.name)
        return part

    s, p, o = concrete(pat.s), concrete(pat.p), concrete(pat.o)
    for t in g.match((s, p, o)):
        new = dict(binding)
        ok = True
        for part, value in ((pat.s, t.subject), (pat.p, t.predicate), (pat.o, t.object)):
            if isinstance(part, QVar):
                bound = new.get(part.name)
                if bound is None:
                    new[part.name] = value
                elif bound != value:
                    ok = False
                    break
        if ok:
            yield new


def _bgp_solutions(g: Graph, patterns: list[TriplePattern],
                   filters: list[FilterExpr], ordered: bool) -> list[dict]:
    remaining = list(patterns)
    solutions = [dict()]
    while remaining:
        if ordered:
            bound_vars = set(solutions[0].keys()) if solutions else set()
            remaining.sort(key=lambda p: -_selectivity(p, bound_vars))
        pat = remaining.pop(0)
        next_solutions = []
        for binding in solutions:
            next_solutions.extend(_match_pattern(g, pat, binding))
        solutions = next_solutions
        if not solutions:
            return []
    return [b for b in solutions
            if all(eval_filter(f, b) for f in filters)]


def _project(ast: QueryAst, solutions: list[dict]) -> ResultTable:
    header = [item if isinstance(item, str) else item.alias for item in ast.select]
    aggregates = [item for item in ast.select if isinstance(item, Aggregate)]

    if aggregates:
        if ast.group_by is not None:
            groups: dict[Term, list[dict]] = {}
            for sol in solutions:
                key = sol.get(ast.group_by)
                groups.setdefault(key, []).append(sol)
            rows = []
            for key in groups:
                row = []
                for item in ast.select:
                    if isinstance(item, str):
                        row.append(key)
                    else:
                        row.append(literal(len(groups[key])))
                rows.append(tuple(row))
        else:
            rows = [tuple(literal(len(solutions)) for _ in ast.select)]
    else:
        rows = [tuple(sol.get(name) for name in ast.select) for sol in solutions]

    table = ResultTable(header, rows)
    if ast.order_by is not None:
        var, direction = ast.order_by
        if var not in header:
            raise SparqlEvalError(f"ORDER BY ?{var} not projected")
        idx = header.index(var)
        table.rows.sort(key=lambda row: _sort_key(row[idx]),
                        reverse=(direction == "desc"))
    else:
        table.rows.sort(key=lambda row: tuple(_sort_key(v) for v in row))
    if ast.limit is not None:
        table.rows = table.rows[:ast.limit]
    return table


def _sort_key(term: Optional[Term]):
    if term is None:
        return (0, 0.0, "")
    num = _numeric(term)
    if num is not None:
        return (1, num, term.value)
    return (2, 0.0, f"{term.kind.value}:{term.value}")


def evaluate(ast: QueryAst, g: Graph) -> ResultTable:
    """Index-backed join, most-selective pattern first."""
    patterns = _resolved_patterns(ast)
    solutions = _bgp_solutions(g, patterns, ast.filters, ordered=True)
    return _project(ast, solutions)


def evaluate_naive(ast: QueryAst, g: Graph) -> ResultTable:
    """Oracle path: full-scan nested loops in written pattern order,
    with its own plain grouping/projection code."""
    patterns = _resolved_patterns(ast)
    all_triples = list(g)
    solutions = [dict()]
    for pat in patterns:
        next_solutions = []
        for binding in solutions:
            for t in all_triples:
                new = dict(binding)
                ok = True
                for part, value in ((pat.s, t.subject), (pat.p, t.predicate),
                                    (pat.o, t.object)):
                    if isinstance(part, QVar):
                        bound = new.get(part.name)
                        if bound is None:
                            new[part.name] = value
                        elif bound != value:
                            ok = False
                            break
                    elif part != value:
                        ok = False
                        break
                if ok:
                    next_solutions.append(new)
        solutions = next_solutions
    solutions = [b for b in solutions
                 if all(eval_filter(f, b) for f in ast.filters)]

    header = [item if isinstance(item, str) else item.alias for item in ast.select]
    has_aggregate = any(isinstance(item, Aggregate) for item in ast.select)
    rows: list[tuple] = []
    if has_aggregate and ast.group_by is not None:
        tallies: dict[Term, int] = {}
        for sol in solutions:
            key = sol.get(ast.group_by)
            tallies[key] = tallies.get(key, 0) + 1
        for key, count in tallies.items():
            rows.append(tuple(
                key if isinstance(item, str) else literal(count)
                for item in ast.select))
    elif has_aggregate:
        rows = [tuple(literal(len(solutions)) for _ in ast.select)]
    else:
        rows = [tuple(sol.get(name) for name in ast.select) for sol in solutions]

    table = ResultTable(header, rows)
    if ast.order_by is not None:
        var, direction = ast.order_by
        if var not in header:
            raise SparqlEvalError(f"ORDER BY ?{var} not projected")
        idx = header.index(var)
        table.rows.sort(key=lambda row: _sort_key(row[idx]),
                        reverse=(direction == "desc"))
    else:
        table.rows.sort(key=lambda row: tuple(_sort_key(v) for v in row))
    if ast.limit is not None:
        table.rows = table.rows[:ast.limit]
    return table


def run_query(text: str, g: Graph) -> ResultTable:
    return evaluate(parse_query(text), g)


def format_table(table: ResultTable) -> str:
    """Plain text table for CLI output."""
    header = table.header
    rows = [[_display(v) for v in row] for row in table.rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths)),
             "-+-".join("-" * w for w in widths)]
    for row in rows:
        lines.append(" | ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def _display(term: Optional[Term]) -> str:
    if term is None:
        return ""
    if term.kind is TermKind.IRI:
        return term.value
    if term.kind is TermKind.BLANK:
        return f"_:{term.value}"
    return term.value
