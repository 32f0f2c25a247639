"""In-memory RDF triple store with SPO/POS/OSP indexes and N-Triples I/O.

Patient observations map to triples in the fixed vocabulary; booleans
serialize as "Yes"/"No" plain literals so stored values line up with the
string comparisons used throughout the rule and query corpora.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator, Optional

from .ingest import PatientRecord
from .vocab import (
    CLINICAL_VOCAB,
    EX,
    PATIENT_CLASS,
    RDF_TYPE,
    SYMPTOM_KEYS,
    SYMPTOM_VOCAB,
    XSD_DATETIME,
    XSD_DECIMAL,
    XSD_INTEGER,
)


class TermKind(Enum):
    IRI = "iri"
    LITERAL = "literal"
    BLANK = "blank"


@dataclass(frozen=True)
class Term:
    kind: TermKind
    value: str
    datatype: Optional[str] = None

    def __post_init__(self):
        if self.kind is not TermKind.LITERAL and self.datatype is not None:
            raise ValueError("only literals carry a datatype")

    def is_literal(self) -> bool:
        return self.kind is TermKind.LITERAL

    def numeric_value(self) -> Optional[float]:
        """Numeric view of a literal; plain literals coerce when they parse."""
        if self.kind is not TermKind.LITERAL:
            return None
        if self.datatype in (XSD_INTEGER, XSD_DECIMAL) or self.datatype is None:
            try:
                return float(self.value)
            except ValueError:
                return None
        return None


def iri(value: str) -> Term:
    return Term(TermKind.IRI, value)


def literal(value, datatype: Optional[str] = None) -> Term:
    if isinstance(value, bool):
        return Term(TermKind.LITERAL, "Yes" if value else "No")
    if isinstance(value, int) and datatype is None:
        return Term(TermKind.LITERAL, str(value), XSD_INTEGER)
    if isinstance(value, float) and datatype is None:
        return Term(TermKind.LITERAL, repr(value), XSD_DECIMAL)
    return Term(TermKind.LITERAL, str(value), datatype)


def blank(label: str) -> Term:
    return Term(TermKind.BLANK, label)


@dataclass(frozen=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if self.predicate.kind is not TermKind.IRI:
            raise ValueError("predicate must be an IRI")
        if self.subject.kind is TermKind.LITERAL:
            raise ValueError("subject cannot be a literal")


Pattern = tuple[Optional[Term], Optional[Term], Optional[Term]]


class Graph:
    """Triple set with coherent SPO, POS, and OSP indexes.

    Single-writer / multi-reader contract: mutations take the writer lock;
    reads snapshot candidate sets before iterating so they never observe a
    half-applied insert.
    """

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: set[Triple] = set()
        self._spo: dict[Term, dict[Term, set[Term]]] = {}
        self._pos: dict[Term, dict[Term, set[Term]]] = {}
        self._osp: dict[Term, dict[Term, set[Term]]] = {}
        self._lock = threading.Lock()
        for t in triples:
            self.insert(t)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, t: Triple) -> bool:
        return t in self._triples

    def __iter__(self) -> Iterator[Triple]:
        return iter(set(self._triples))

    def __eq__(self, other) -> bool:
        return isinstance(other, Graph) and self._triples == other._triples

    def triples(self) -> set[Triple]:
        return set(self._triples)

    def insert(self, t: Triple) -> bool:
        with self._lock:
            if t in self._triples:
                return False
            self._triples.add(t)
            self._spo.setdefault(t.subject, {}).setdefault(t.predicate, set()).add(t.object)
            self._pos.setdefault(t.predicate, {}).setdefault(t.object, set()).add(t.subject)
            self._osp.setdefault(t.object, {}).setdefault(t.subject, set()).add(t.predicate)
            return True

    def insert_all(self, triples: Iterable[Triple]) -> int:
        return sum(1 for t in triples if self.insert(t))

    def remove(self, t: Triple) -> bool:
        with self._lock:
            if t not in self._triples:
                return False
            self._triples.discard(t)
            self._spo[t.subject][t.predicate].discard(t.object)
            self._pos[t.predicate][t.object].discard(t.subject)
            self._osp[t.object][t.subject].discard(t.predicate)
            return True

    def copy(self) -> "Graph":
        return Graph(self._triples)

    def match(self, pattern: Pattern) -> list[Triple]:
        """All triples agreeing with every bound position of the pattern."""
        s, p, o = pattern
        if s is not None and p is not None and o is not None:
            t = Triple(s, p, o)
            return [t] if t in self._triples else []
        if s is not None:
            return self._match_spo(pattern)
        if p is not None:
            return self._match_pos(pattern)
        if o is not None:
            return self._match_osp(pattern)
        return list(self._triples)

    # Per-index walks are exposed separately so coherence is testable.
    def _match_spo(self, pattern: Pattern) -> list[Triple]:
        s, p, o = pattern
        out = []
        subjects = [s] if s is not None else list(self._spo)
        for subj in subjects:
            by_pred = self._spo.get(subj)
            if by_pred is None:
                continue
            preds = [p] if p is not None else list(by_pred)
            for pred in preds:
                for obj in list(by_pred.get(pred, ())):
                    if o is None or obj == o:
                        out.append(Triple(subj, pred, obj))
        return out

    def _match_pos(self, pattern: Pattern) -> list[Triple]:
        s, p, o = pattern
        out = []
        preds = [p] if p is not None else list(self._pos)
        for pred in preds:
            by_obj = self._pos.get(pred)
            if by_obj is None:
                continue
            objs = [o] if o is not None else list(by_obj)
            for obj in objs:
                for subj in list(by_obj.get(obj, ())):
                    if s is None or subj == s:
                        out.append(Triple(subj, pred, obj))
        return out

    def _match_osp(self, pattern: Pattern) -> list[Triple]:
        s, p, o = pattern
        out = []
        objs = [o] if o is not None else list(self._osp)
        for obj in objs:
            by_subj = self._osp.get(obj)
            if by_subj is None:
                continue
            subjs = [s] if s is not None else list(by_subj)
            for subj in subjs:
                for pred in list(by_subj.get(subj, ())):
                    if p is None or pred == p:
                        out.append(Triple(subj, pred, obj))
        return out

    def match_via(self, index: str, pattern: Pattern) -> list[Triple]:
        """Force matching through one named index (test hook)."""
        return {"spo": self._match_spo, "pos": self._match_pos,
                "osp": self._match_osp}[index](pattern)

    def subjects(self, predicate: Term, obj: Term) -> set[Term]:
        return set(self._pos.get(predicate, {}).get(obj, set()))

    def objects(self, subject: Term, predicate: Term) -> set[Term]:
        return set(self._spo.get(subject, {}).get(predicate, set()))


# --- record conversion -----------------------------------------------------

def record_to_triples(rec: PatientRecord, ns: str = EX) -> list[Triple]:
    """Observation to triples: 1 type + 3 demographic/temporal + 13 symptoms.

    The observation hour is not materialized as its own triple (the full
    instant already carries it); the month is, because the trend queries
    group on it.
    """
    subj = iri(ns + rec.patient_id)
    out = [
        Triple(subj, iri(RDF_TYPE), iri(ns + PATIENT_CLASS)),
        Triple(subj, iri(ns + "hasGender"), literal(rec.gender)),
        Triple(subj, iri(ns + "hasObservedAt"),
               literal(rec.observed_at.isoformat(), XSD_DATETIME)),
        Triple(subj, iri(ns + "hasObservationMonth"), literal(rec.month)),
    ]
    for key in SYMPTOM_KEYS:
        _rule_prop, rdf_local = SYMPTOM_VOCAB[key]
        out.append(Triple(subj, iri(ns + rdf_local),
                          literal(bool(rec.symptoms[key]))))
    return out


_CLINICAL_RDF = {rule_prop: (rdf_local, kind)
                 for rule_prop, rdf_local, kind in CLINICAL_VOCAB.values()}


def clinical_to_triples(patient_id: str, facts: dict, ns: str = EX) -> list[Triple]:
    """Optional numeric/test facts (rule-property keyed) as typed triples."""
    subj = iri(ns + patient_id)
    out = []
    for rule_prop, value in facts.items():
        mapped = _CLINICAL_RDF.get(rule_prop)
        if mapped is None:
            out.append(Triple(subj, iri(ns + rule_prop), literal(value)))
            continue
        rdf_local, _kind = mapped
        out.append(Triple(subj, iri(ns + rdf_local), literal(value)))
    return out


# --- N-Triples -------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _escape(value: str) -> str:
    out = []
    for ch in value:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


_UNESCAPE_RE = re.compile(r"\\(u[0-9A-Fa-f]{4}|U[0-9A-Fa-f]{8}|.)")

_UNESCAPE_MAP = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}


def _unescape(value: str) -> str:
    def sub(m: re.Match) -> str:
        body = m.group(1)
        if body[0] in "uU":
            return chr(int(body[1:], 16))
        if body in _UNESCAPE_MAP:
            return _UNESCAPE_MAP[body]
        raise ValueError(f"bad escape \\{body}")
    return _UNESCAPE_RE.sub(sub, value)


def term_to_nt(term: Term) -> str:
    if term.kind is TermKind.IRI:
        return f"<{term.value}>"
    if term.kind is TermKind.BLANK:
        return f"_:{term.value}"
    if term.datatype:
        return f'"{_escape(term.value)}"^^<{term.datatype}>'
    return f'"{_escape(term.value)}"'


def serialize_ntriples(g: Graph, stream: IO | None = None) -> str | None:
    """One triple per line, terminated ' .'; sorted for reproducible files."""
    lines = sorted(
        f"{term_to_nt(t.subject)} {term_to_nt(t.predicate)} {term_to_nt(t.object)} ."
        for t in g
    )
    text = "\n".join(lines) + ("\n" if lines else "")
    if stream is None:
        return text
    stream.write(text)
    return None


class NTriplesError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


_IRI_RE = re.compile(r"<([^<>\s\"{}|^`\\]*)>")
_BLANK_RE = re.compile(r"_:([A-Za-z0-9][A-Za-z0-9_\-.]*)")
_LITERAL_RE = re.compile(r'"((?:[^"\\]|\\.)*)"(?:\^\^<([^<>\s\"{}|^`\\]*)>)?')


def _parse_term(text: str, pos: int, line_no: int) -> tuple[Term, int]:
    while pos < len(text) and text[pos] in " \t":
        pos += 1
    if pos >= len(text):
        raise NTriplesError(line_no, "unexpected end of line")
    ch = text[pos]
    if ch == "<":
        m = _IRI_RE.match(text, pos)
        if not m:
            raise NTriplesError(line_no, "malformed IRI")
        return iri(m.group(1)), m.end()
    if ch == "_":
        m = _BLANK_RE.match(text, pos)
        if not m:
            raise NTriplesError(line_no, "malformed blank node")
        return blank(m.group(1)), m.end()
    if ch == '"':
        m = _LITERAL_RE.match(text, pos)
        if not m:
            raise NTriplesError(line_no, "malformed literal")
        try:
            value = _unescape(m.group(1))
        except ValueError as exc:
            raise NTriplesError(line_no, str(exc))
        return Term(TermKind.LITERAL, value, m.group(2)), m.end()
    raise NTriplesError(line_no, f"unexpected character {ch!r}")


def parse_ntriples(data: str | bytes) -> Graph:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    g = Graph()
    for line_no, line in enumerate(data.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        s, pos = _parse_term(line, 0, line_no)
        p, pos = _parse_term(line, pos, line_no)
        o, pos = _parse_term(line, pos, line_no)
        rest = line[pos:].strip()
        if rest != ".":
            raise NTriplesError(line_no, "expected terminating ' .'")
        if p.kind is not TermKind.IRI:
            raise NTriplesError(line_no, "predicate must be an IRI")
        if s.kind is TermKind.LITERAL:
            raise NTriplesError(line_no, "subject cannot be a literal")
        g.insert(Triple(s, p, o))
    return g


def load_ntriples(path) -> Graph:
    with open(path, "rb") as fh:
        return parse_ntriples(fh.read())


def save_ntriples(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        serialize_ntriples(g, fh)


# --- statistics ------------------------------------------------------------

def store_stats(g: Graph) -> dict[str, int]:
    """Per-class link counts: triples whose subject or object has the class.

    Mirrors a link-density view of the store; classes of both endpoints are
    collected per triple and each class is credited once per triple.
    """
    rdf_type = iri(RDF_TYPE)
    classes_of: dict[Term, set[str]] = {}
    for t in g.match((None, rdf_type, None)):
        classes_of.setdefault(t.subject, set()).add(t.object.value)
    counts: dict[str, int] = {}
    for t in g:
        touched = set(classes_of.get(t.subject, ())) | set(classes_of.get(t.object, ()))
        for cls in touched:
            counts[cls] = counts.get(cls, 0) + 1
    return counts
