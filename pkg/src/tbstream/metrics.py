"""Schema counts and richness metrics over an ontology graph.

The four ratios (relationship richness, attribute richness, class
richness, average population) are computed exactly as fractions and
reported to three decimals, round-half-up. A structural consistency
report (subclass acyclicity, declared domains/ranges, disjointness
violations) backs the ontology-update workflow's accept/rollback gate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

from .rdf import Graph, Term, TermKind, iri
from .vocab import (
    OWL_ANNOTATION_PROPERTY,
    OWL_CLASS,
    OWL_DATATYPE_PROPERTY,
    OWL_DISJOINT_WITH,
    OWL_EQUIVALENT_CLASS,
    OWL_OBJECT_PROPERTY,
    RDF_TYPE,
    RDFS_DOMAIN,
    RDFS_RANGE,
    RDFS_SUBCLASSOF,
    XSD_NS,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchemaCounts:
    classes: int = 0
    object_properties: int = 0
    data_properties: int = 0
    individuals: int = 0
    subclass_axioms: int = 0
    classes_with_instances: int = 0
    equivalent_class_axioms: int = 0
    disjoint_class_axioms: int = 0
    annotation_properties: int = 0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.classes_with_instances > self.classes:
            raise ValueError("classes_with_instances exceeds classes")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def count_schema(g: Graph) -> SchemaCounts:
    rdf_type = iri(RDF_TYPE)
    declared_classes = {t.subject for t in g.match((None, rdf_type, iri(OWL_CLASS)))
                        if t.subject.kind is TermKind.IRI}
    obj_props = {t.subject for t in g.match((None, rdf_type, iri(OWL_OBJECT_PROPERTY)))}
    data_props = {t.subject for t in g.match((None, rdf_type, iri(OWL_DATATYPE_PROPERTY)))}
    ann_props = {t.subject for t in g.match((None, rdf_type, iri(OWL_ANNOTATION_PROPERTY)))}

    schema_entities = declared_classes | obj_props | data_props | ann_props

    subclass = 0
    for t in g.match((None, iri(RDFS_SUBCLASSOF), None)):
        if t.subject in declared_classes and t.object in declared_classes:
            subclass += 1

    individuals: set[Term] = set()
    instantiated: set[Term] = set()
    for t in g.match((None, rdf_type, None)):
        if t.object in declared_classes and t.subject not in schema_entities:
            individuals.add(t.subject)
            instantiated.add(t.object)

    equivalent = sum(1 for t in g.match((None, iri(OWL_EQUIVALENT_CLASS), None))
                     if t.subject in declared_classes and t.object in declared_classes)
    disjoint = sum(1 for t in g.match((None, iri(OWL_DISJOINT_WITH), None))
                   if t.subject in declared_classes and t.object in declared_classes)

    return SchemaCounts(
        classes=len(declared_classes),
        object_properties=len(obj_props),
        data_properties=len(data_props),
        individuals=len(individuals),
        subclass_axioms=subclass,
        classes_with_instances=len(instantiated),
        equivalent_class_axioms=equivalent,
        disjoint_class_axioms=disjoint,
        annotation_properties=len(ann_props),
    )


# --- richness metrics --------------------------------------------------------

def round3(value: Fraction) -> float:
    """Three decimals, round-half-up, matching the reporting convention."""
    dec = Decimal(value.numerator) / Decimal(value.denominator)
    return float(dec.quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def relationship_richness(c: SchemaCounts) -> Fraction:
    """Properties over subclass axioms plus properties.

    Properties count both kinds (data attributes and object relations).
    A zero denominator is reported as 0 with a warning.
    """
    props = c.object_properties + c.data_properties
    denom = c.subclass_axioms + props
    if denom == 0:
        logger.warning("relationship richness undefined (no axioms); using 0")
        return Fraction(0)
    return Fraction(props, denom)


def relationship_richness_object_only(c: SchemaCounts) -> Fraction:
    """Variant restricted to object properties, reported alongside the
    headline number because published figures are ambiguous between the
    two readings."""
    denom = c.subclass_axioms + c.object_properties
    if denom == 0:
        return Fraction(0)
    return Fraction(c.object_properties, denom)


def attribute_richness(c: SchemaCounts) -> Fraction:
    if c.classes == 0:
        raise ValueError("attribute richness undefined with zero classes")
    return Fraction(c.data_properties, c.classes)


def class_richness(c: SchemaCounts) -> Fraction:
    if c.classes == 0:
        raise ValueError("class richness undefined with zero classes")
    return Fraction(c.classes_with_instances, c.classes)


def average_population(c: SchemaCounts) -> Fraction:
    if c.classes == 0:
        raise ValueError("average population undefined with zero classes")
    return Fraction(c.individuals, c.classes)


@dataclass(frozen=True)
class MetricReport:
    attribute_richness: Fraction
    class_richness: Fraction
    average_population: Fraction
    relationship_richness: Fraction
    relationship_richness_object_only: Fraction

    def __post_init__(self):
        assert self.attribute_richness >= 0
        assert 0 <= self.class_richness <= 1
        assert self.average_population >= 0
        assert 0 <= self.relationship_richness <= 1

    def rounded(self) -> dict[str, float]:
        return {
            "attribute_richness": round3(self.attribute_richness),
            "class_richness": round3(self.class_richness),
            "average_population": round3(self.average_population),
            "relationship_richness": round3(self.relationship_richness),
            "relationship_richness_object_only":
                round3(self.relationship_richness_object_only),
        }


def metric_report(c: SchemaCounts) -> MetricReport:
    return MetricReport(
        attribute_richness=attribute_richness(c),
        class_richness=class_richness(c),
        average_population=average_population(c),
        relationship_richness=relationship_richness(c),
        relationship_richness_object_only=relationship_richness_object_only(c),
    )


# --- structural consistency -----------------------------------------------------


@dataclass
class ConsistencyReport:
    violations: list[tuple[str, str]] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.violations

    def add(self, kind: str, detail: str) -> None:
        self.violations.append((kind, detail))


def consistency_check(g: Graph) -> ConsistencyReport:
    """Structural checks run after ontology updates.

    Violations are data in the report, not exceptions: callers decide
    whether to roll back.
    """
    report = ConsistencyReport()
    rdf_type = iri(RDF_TYPE)
    declared_classes = {t.subject for t in g.match((None, rdf_type, iri(OWL_CLASS)))}

    # subclass cycles (over every subClassOf edge between IRIs)
    edges: dict[Term, set[Term]] = {}
    for t in g.match((None, iri(RDFS_SUBCLASSOF), None)):
        if t.subject.kind is TermKind.IRI and t.object.kind is TermKind.IRI:
            edges.setdefault(t.subject, set()).add(t.object)
    state: dict[Term, int] = {}

    def visit(node: Term, path: list[Term]) -> None:
        state[node] = 1
        for nxt in edges.get(node, ()):
            if state.get(nxt) == 1:
                cycle = path[path.index(nxt):] + [nxt] if nxt in path else [node, nxt]
                report.add("subclass_cycle",
                           " -> ".join(_local(n.value) for n in cycle))
            elif state.get(nxt) is None:
                visit(nxt, path + [nxt])
        state[node] = 2

    for node in list(edges):
        if state.get(node) is None:
            visit(node, [node])

    # domains and ranges must name declared classes (ranges may be XSD types)
    for t in g.match((None, iri(RDFS_DOMAIN), None)):
        if t.object not in declared_classes:
            report.add("undeclared_domain",
                       f"{_local(t.subject.value)} domain {_local(t.object.value)}")
    for t in g.match((None, iri(RDFS_RANGE), None)):
        if t.object in declared_classes:
            continue
        if t.object.kind is TermKind.IRI and t.object.value.startswith(XSD_NS):
            continue
        report.add("undeclared_range",
                   f"{_local(t.subject.value)} range {_local(t.object.value)}")

    # disjointness vs direct typing
    typed: dict[Term, set[Term]] = {}
    for t in g.match((None, rdf_type, None)):
        if t.object in declared_classes and t.subject not in declared_classes:
            typed.setdefault(t.subject, set()).add(t.object)
    for t in g.match((None, iri(OWL_DISJOINT_WITH), None)):
        a, b = t.subject, t.object
        for ind, classes in typed.items():
            if a in classes and b in classes:
                report.add("disjointness",
                           f"{_local(ind.value)} typed by disjoint "
                           f"{_local(a.value)} and {_local(b.value)}")
    return report


def _local(iri_value: str) -> str:
    for sep in ("#", "/"):
        if sep in iri_value:
            return iri_value.rsplit(sep, 1)[1]
    return iri_value
