"""Pluggable reasoning layer: deterministic retrieval, response scoring,
templated alert explanations, and the semi-automatic ontology update loop.

The embedding is a hashed bag-of-tokens (FNV-1a into 256 buckets, L2
normalized), a deterministic stand-in for a sentence-embedding model so
the suite needs no weights; an external completion service can be plugged
in over HTTP for explanation generation, with the template as fallback.
Ontology updates follow extract -> suggest -> human approval (a JSON file
edit) -> apply-with-rollback.
"""

from __future__ import annotations

import json
import logging
import re
import string
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .bus import fnv1a_64
from .cep import Alert
from .metrics import consistency_check
from .rdf import Graph, Triple, iri
from .rules import load_rules
from .vocab import (
    EX,
    OWL_CLASS,
    OWL_DATATYPE_PROPERTY,
    OWL_OBJECT_PROPERTY,
    RDF_TYPE,
    RDFS_SUBCLASSOF,
)

logger = logging.getLogger(__name__)

EMBED_DIM = 256

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation if ch != "_"})


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation (underscores survive), squeeze spaces."""
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def tokenize(text: str) -> list[str]:
    return normalize_text(text).split()


# --- chunking / embedding ------------------------------------------------------

def chunk_documents(text: str, target_size: int, overlap: int = 0) -> list[str]:
    """Overlapping token windows of at most target_size tokens.

    Stride is target_size - overlap; concatenating chunks and dropping the
    overlapping prefixes reproduces the normalized text exactly.
    """
    if overlap < 0 or target_size <= overlap:
        raise ValueError("need target_size > overlap >= 0")
    tokens = tokenize(text)
    if not tokens:
        return []
    if len(tokens) <= target_size:
        return [" ".join(tokens)]
    stride = target_size - overlap
    chunks = []
    start = 0
    while start < len(tokens):
        chunks.append(" ".join(tokens[start:start + target_size]))
        if start + target_size >= len(tokens):
            break
        start += stride
    return chunks


def embed(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokenize(text):
        vec[fnv1a_64(token.encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class DocumentChunk:
    doc_id: str
    chunk_index: int
    text: str
    vector: np.ndarray = field(compare=False, repr=False)


class RetrievalIndex:
    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        self.chunks: list[DocumentChunk] = []
        self._matrix: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.chunks)

    def add_document(self, doc_id: str, text: str, target_size: int = 64,
                     overlap: int = 16) -> int:
        added = 0
        for idx, chunk_text in enumerate(chunk_documents(text, target_size, overlap)):
            self.chunks.append(DocumentChunk(doc_id, idx, chunk_text,
                                             embed(chunk_text, self.dim)))
            added += 1
        self._matrix = None
        return added

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if not self.chunks:
                self._matrix = np.zeros((0, self.dim))
            else:
                self._matrix = np.stack([c.vector for c in self.chunks])
        return self._matrix


def build_index(documents: dict[str, str], target_size: int = 64,
                overlap: int = 16, dim: int = EMBED_DIM) -> RetrievalIndex:
    index = RetrievalIndex(dim)
    for doc_id in sorted(documents):
        index.add_document(doc_id, documents[doc_id], target_size, overlap)
    return index


def retrieve_top_k(query: str, index: RetrievalIndex, k: int = 2
                   ) -> list[tuple[DocumentChunk, float]]:
    """The k most cosine-similar chunks, ties broken by (doc_id, index).

    Vectorized over the chunk matrix; retrieve_top_k_scan is the plain
    per-chunk oracle.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.chunks:
        raise ValueError("index is empty")
    if k > len(index.chunks):
        logger.warning("k=%d exceeds index size %d; returning all", k, len(index.chunks))
        k = len(index.chunks)
    q = embed(query, index.dim)
    scores = index.matrix() @ q  # rows are unit vectors, so this is cosine
    order = sorted(range(len(index.chunks)),
                   key=lambda i: (-scores[i], index.chunks[i].doc_id,
                                  index.chunks[i].chunk_index))
    return [(index.chunks[i], float(scores[i])) for i in order[:k]]


def retrieve_top_k_scan(query: str, index: RetrievalIndex, k: int = 2
                        ) -> list[tuple[DocumentChunk, float]]:
    """Exhaustive per-chunk cosine scan (test oracle)."""
    q = embed(query, index.dim)
    scored = [(chunk, cosine_similarity(chunk.vector, q)) for chunk in index.chunks]
    scored.sort(key=lambda cs: (-cs[1], cs[0].doc_id, cs[0].chunk_index))
    return scored[:min(k, len(scored))]


# --- response scoring -------------------------------------------------------------

@dataclass(frozen=True)
class ScoredResponse:
    precision: float
    recall: float
    f1: float


def score_response(prediction: str, reference: str) -> ScoredResponse:
    """Multiset token overlap: P against the prediction, R against the
    reference, F1 their harmonic mean. An empty prediction scores zero."""
    from collections import Counter

    pred = Counter(tokenize(prediction))
    ref = Counter(tokenize(reference))
    if not pred:
        return ScoredResponse(0.0, 0.0, 0.0)
    common = sum((pred & ref).values())
    precision = common / sum(pred.values())
    recall = common / sum(ref.values()) if ref else 0.0
    if precision + recall == 0.0:
        return ScoredResponse(precision, recall, 0.0)
    return ScoredResponse(precision, recall,
                          2 * precision * recall / (precision + recall))


# --- alert explanations -------------------------------------------------------------

HIGH_RISK_PRECAUTIONS = (
    "Schedule immediate sputum microscopy and chest X-ray. "
    "Initiate contact tracing for household members. "
    "Begin isolation protocols to prevent community transmission."
)

_SEVERITY_ADVICE = {
    "Critical": "Recommended precautions (severe-TB catalog, Table 6): "
                + HIGH_RISK_PRECAUTIONS,
    "Warning": "Recommended follow-up: order TB screening and schedule "
               "clinical review within 72 hours.",
    "Info": "Continue scheduled monitoring and record adherence.",
}


class CompletionService:
    """Minimal external completion endpoint: POST {prompt} -> {text}."""

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt}).encode("utf-8")
        request = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(request, timeout=self.timeout) as response:
            payload = json.loads(response.read().decode("utf-8"))
        return payload["text"]


def explain_alert(alert: Alert, context: Sequence[DocumentChunk] = (),
                  generator: Optional[CompletionService] = None) -> str:
    """Deterministic template explanation, or the external service's text.

    Service failures fall back to the template with a fallback marker so
    callers can tell the difference.
    """
    cite = f" ({alert.provenance})" if alert.provenance else ""
    lines = [
        f"{alert.severity} alert for patient {alert.patient}: "
        f"classification {alert.label}.",
        f"Triggered by rule {alert.rule_id}{cite} in window {alert.window_id}.",
    ]
    if context:
        joined = " / ".join(c.text[:80] for c in context[:2])
        lines.append(f"Guideline context: {joined}")
    lines.append(_SEVERITY_ADVICE.get(alert.severity, _SEVERITY_ADVICE["Info"]))
    stub = "\n".join(lines)
    if generator is None:
        return stub
    prompt = json.dumps({
        "patient": alert.patient, "label": alert.label, "rule": alert.rule_id,
        "severity": alert.severity, "context": [c.text for c in context],
    }, sort_keys=True)
    try:
        return generator.complete(prompt)
    except (urllib.error.URLError, OSError, ValueError, KeyError) as exc:
        logger.warning("completion service unavailable (%s); using template", exc)
        return "[fallback] " + stub


# --- term extraction / ontology updates ------------------------------------------------

class SuggestionKind(str, Enum):
    ADD_CLASS = "AddClass"
    ADD_PROPERTY = "AddProperty"
    ADD_RULE = "AddRule"


class SuggestionStatus(str, Enum):
    PENDING = "Pending"
    APPROVED = "Approved"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class ExtractedTerm:
    name: str
    kind: str  # "concept" | "property"
    snippet: str


@dataclass(frozen=True)
class UpdateSuggestion:
    kind: SuggestionKind
    payload: dict
    evidence_doc: str
    evidence_snippet: str
    status: SuggestionStatus = SuggestionStatus.PENDING

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "payload": self.payload,
            "evidence_doc": self.evidence_doc,
            "evidence_snippet": self.evidence_snippet,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UpdateSuggestion":
        return cls(
            kind=SuggestionKind(data["kind"]),
            payload=dict(data["payload"]),
            evidence_doc=data["evidence_doc"],
            evidence_snippet=data["evidence_snippet"],
            status=SuggestionStatus(data["status"]),
        )


_TERM_RE = re.compile(r"\b[A-Za-z][A-Za-z0-9]*(?:_[A-Za-z0-9]+)+\b")
_PROPERTY_PREFIXES = ("has_", "is_", "undergoes_")


def _classify_term(name: str) -> str:
    lowered = name.lower()
    if any(lowered.startswith(prefix) for prefix in _PROPERTY_PREFIXES):
        return "property"
    return "concept"


def load_lexicon(text: str) -> list[tuple[str, str, str]]:
    """Lines of `phrase -> Canonical_Name kind`; '#' comments allowed."""
    entries = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        phrase, _, rest = line.partition("->")
        name, _, kind = rest.strip().rpartition(" ")
        entries.append((normalize_text(phrase), name.strip(), kind.strip()))
    return entries


def extract_terms(text: str, lexicon: Optional[Sequence[tuple[str, str, str]]] = None
                  ) -> list[ExtractedTerm]:
    """Deterministic stand-in for model-driven concept extraction.

    Underscore-joined tokens are picked up directly (has_/is_/undergoes_
    prefixes classify as properties); normalized lexicon phrases map to
    their canonical names.
    """
    found: dict[str, ExtractedTerm] = {}
    for m in _TERM_RE.finditer(text):
        name = m.group()
        if name not in found:
            lo = max(0, m.start() - 40)
            snippet = text[lo:m.end() + 40].strip()
            found[name] = ExtractedTerm(name, _classify_term(name), snippet)
    if lexicon:
        normalized = normalize_text(text)
        for phrase, name, kind in lexicon:
            if name not in found and re.search(rf"\b{re.escape(phrase)}\b", normalized):
                found[name] = ExtractedTerm(name, kind, phrase)
    return sorted(found.values(), key=lambda t: t.name)


def known_ontology_names(g: Graph) -> set[str]:
    names = set()
    for cls_iri in (OWL_CLASS, OWL_OBJECT_PROPERTY, OWL_DATATYPE_PROPERTY):
        for t in g.match((None, iri(RDF_TYPE), iri(cls_iri))):
            value = t.subject.value
            names.add(value.rsplit("#", 1)[-1].rsplit("/", 1)[-1])
    return names


def suggest_updates(terms: Sequence[ExtractedTerm], g: Graph,
                    doc_id: str = "") -> list[UpdateSuggestion]:
    """Set difference against the declared vocabulary, one Pending
    suggestion per novel term."""
    known = known_ontology_names(g)
    out = []
    for term in terms:
        if term.name in known:
            continue
        kind = (SuggestionKind.ADD_PROPERTY if term.kind == "property"
                else SuggestionKind.ADD_CLASS)
        payload = {"name": term.name}
        out.append(UpdateSuggestion(kind, payload, doc_id, term.snippet))
    return out


class UpdateRollback(Exception):
    def __init__(self, report):
        super().__init__("update batch rolled back: "
                         + "; ".join(f"{k}: {d}" for k, d in report.violations))
        self.report = report


def apply_updates(approved: Sequence[UpdateSuggestion], g: Graph,
                  rule_texts: Optional[dict[str, str]] = None,
                  ns: str = EX) -> tuple[Graph, dict[str, str]]:
    """Apply an approved batch atomically.

    Classes and properties are asserted into a copy of the graph; AddRule
    payloads are parsed, validated, and appended to a copy of the rule
    file set. If the structural consistency check fails afterwards, the
    whole batch is discarded and UpdateRollback raised.
    """
    for suggestion in approved:
        if suggestion.status is not SuggestionStatus.APPROVED:
            raise ValueError(f"suggestion {suggestion.payload.get('name')!r} "
                             f"is {suggestion.status.value}, not Approved")
    updated = g.copy()
    new_rule_texts = dict(rule_texts or {})
    for suggestion in approved:
        payload = suggestion.payload
        if suggestion.kind is SuggestionKind.ADD_CLASS:
            subject = iri(ns + payload["name"])
            updated.insert(Triple(subject, iri(RDF_TYPE), iri(OWL_CLASS)))
            if payload.get("parent"):
                updated.insert(Triple(subject, iri(RDFS_SUBCLASSOF),
                                      iri(ns + payload["parent"])))
        elif suggestion.kind is SuggestionKind.ADD_PROPERTY:
            prop_kind = payload.get("property_kind", "data")
            owl_kind = (OWL_OBJECT_PROPERTY if prop_kind == "object"
                        else OWL_DATATYPE_PROPERTY)
            updated.insert(Triple(iri(ns + payload["name"]),
                                  iri(RDF_TYPE), iri(owl_kind)))
        elif suggestion.kind is SuggestionKind.ADD_RULE:
            rule_text = payload["rule_text"]
            load_rules(rule_text)  # parse + safety; raises on bad rules
            target = payload.get("file", "updates.swrlx")
            existing = new_rule_texts.get(target, "")
            new_rule_texts[target] = (existing + "\n\n" + rule_text).strip() + "\n"
    report = consistency_check(updated)
    if not report.consistent:
        raise UpdateRollback(report)
    return updated, new_rule_texts


def approve_all(suggestions: Sequence[UpdateSuggestion]) -> list[UpdateSuggestion]:
    return [replace(s, status=SuggestionStatus.APPROVED) for s in suggestions]


def save_suggestions(suggestions: Sequence[UpdateSuggestion], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([s.to_dict() for s in suggestions], fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_suggestions(path) -> list[UpdateSuggestion]:
    with open(path, encoding="utf-8") as fh:
        return [UpdateSuggestion.from_dict(item) for item in json.load(fh)]
