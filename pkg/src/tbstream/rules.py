"""SWRL-style rule language: parser, safety validation, forward chaining.

The rule DSL mirrors the published clinical rule catalogs: conjunctive
antecedents joined by `^` (or the unicode wedge), an implication arrow,
`?var` variables, quoted string literals, bare numeric literals, and
`swrlb:` comparison builtins. A disjunction in an antecedent is expanded
into one conjunctive rule per disjunct at parse time.

Evaluation is semi-naive forward chaining to fixpoint. A deliberately
simple naive repeat-until-stable evaluator lives alongside it as the
correctness oracle and is kept free of the optimized engine's indexing
and delta machinery.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .ingest import PatientRecord
from .vocab import OBJECT_PROPERTIES, SYMPTOM_KEYS, SYMPTOM_VOCAB, classification_sort_key

Value = int | float | str

BUILTINS = frozenset({
    "greaterThan", "greaterThanOrEqualTo", "lessThan", "lessThanOrEqualTo", "equal",
})
# The catalogs print shortened comparison names in places; both spellings
# canonicalize to the closed builtin set.
BUILTIN_ALIASES = {
    "greaterThanOrEqual": "greaterThanOrEqualTo",
    "lessThanOrEqual": "lessThanOrEqualTo",
}


class AtomKind(Enum):
    CLASS = "class"
    DATA = "data"
    OBJECT = "object"
    BUILTIN = "builtin"


@dataclass(frozen=True)
class Var:
    name: str

    def __repr__(self):
        return f"?{self.name}"


@dataclass(frozen=True)
class Individual:
    name: str

    def __repr__(self):
        return self.name


Arg = Var | Individual | Value


@dataclass(frozen=True)
class Atom:
    kind: AtomKind
    predicate: str
    args: tuple

    def variables(self) -> set[str]:
        return {a.name for a in self.args if isinstance(a, Var)}

    def __repr__(self):
        inner = ", ".join(repr(a) if isinstance(a, (Var, Individual)) else
                          (f'"{a}"' if isinstance(a, str) else str(a))
                          for a in self.args)
        prefix = "swrlb:" if self.kind is AtomKind.BUILTIN else ""
        return f"{prefix}{self.predicate}({inner})"


@dataclass(frozen=True)
class Rule:
    id: str
    antecedent: tuple[Atom, ...]
    consequent: tuple[Atom, ...]
    provenance: str = ""

    def __repr__(self):
        body = " ^ ".join(map(repr, self.antecedent))
        head = " ^ ".join(map(repr, self.consequent))
        return f"[{self.id}] {body} -> {head}"


class RuleSyntaxError(ValueError):
    def __init__(self, message: str, position: int = -1, rule_id: str = ""):
        where = f" (rule {rule_id})" if rule_id else ""
        at = f" at offset {position}" if position >= 0 else ""
        super().__init__(f"{message}{at}{where}")
        self.position = position


class RuleSafetyError(ValueError):
    pass


# --- tokenizer / parser ----------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<WS>\s+)
  | (?P<ARROW>->|→)
  | (?P<AND>\^|∧)
  | (?P<OR>∨|\bOR\b)
  | (?P<VAR>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<STRING>"(?:[^"\\]|\\.)*")
  | (?P<NUMBER>-?\d+(?:\.\d+)?)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*(?::[A-Za-z_][A-Za-z0-9_]*)?)
  | (?P<LPAREN>\()
  | (?P<RPAREN>\))
  | (?P<COMMA>,)
""", re.VERBOSE)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "WS":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]], rule_id: str):
        self.tokens = tokens
        self.i = 0
        self.rule_id = rule_id

    def peek(self) -> Optional[str]:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def take(self, kind: str) -> str:
        if self.i >= len(self.tokens):
            raise RuleSyntaxError(f"expected {kind}, got end of rule", -1, self.rule_id)
        tk, value, pos = self.tokens[self.i]
        if tk != kind:
            raise RuleSyntaxError(f"expected {kind}, got {value!r}", pos, self.rule_id)
        self.i += 1
        return value

    def parse_implication(self) -> tuple[list[list[Atom]], list[Atom]]:
        """Antecedent disjuncts (each a conjunction) and the consequent."""
        disjuncts = [self._conjunction()]
        while self.peek() == "OR":
            self.take("OR")
            disjuncts.append(self._conjunction())
        self.take("ARROW")
        consequent = self._conjunction()
        if self.peek() is not None:
            _, value, pos = self.tokens[self.i]
            raise RuleSyntaxError(f"trailing input {value!r}", pos, self.rule_id)
        return disjuncts, consequent

    def _conjunction(self) -> list[Atom]:
        atoms = [self._atom()]
        while self.peek() == "AND":
            self.take("AND")
            atoms.append(self._atom())
        return atoms

    def _atom(self) -> Atom:
        name = self.take("IDENT")
        pos = self.tokens[self.i - 1][2]
        self.take("LPAREN")
        args = [self._term()]
        while self.peek() == "COMMA":
            self.take("COMMA")
            args.append(self._term())
        self.take("RPAREN")
        return self._classify_atom(name, tuple(args), pos)

    def _term(self) -> Arg:
        kind = self.peek()
        if kind == "VAR":
            return Var(self.take("VAR")[1:])
        if kind == "STRING":
            raw = self.take("STRING")[1:-1]
            return raw.replace('\\"', '"').replace("\\\\", "\\")
        if kind == "NUMBER":
            raw = self.take("NUMBER")
            return float(raw) if "." in raw else int(raw)
        if kind == "IDENT":
            name = self.take("IDENT")
            if name == "true":
                return "true"
            if name == "false":
                return "false"
            return Individual(name)
        tk = self.tokens[self.i] if self.i < len(self.tokens) else ("EOF", "", -1)
        raise RuleSyntaxError(f"expected a term, got {tk[1]!r}", tk[2], self.rule_id)

    def _classify_atom(self, name: str, args: tuple, pos: int) -> Atom:
        if name.startswith("swrlb:") or name in BUILTINS or name in BUILTIN_ALIASES:
            bare = name.split(":", 1)[-1]
            bare = BUILTIN_ALIASES.get(bare, bare)
            if bare not in BUILTINS:
                raise RuleSyntaxError(f"unknown builtin {name!r}", pos, self.rule_id)
            if len(args) != 2:
                raise RuleSyntaxError(f"builtin {bare} takes 2 arguments", pos, self.rule_id)
            return Atom(AtomKind.BUILTIN, bare, args)
        if ":" in name:
            raise RuleSyntaxError(f"unknown prefix in {name!r}", pos, self.rule_id)
        if len(args) == 1:
            return Atom(AtomKind.CLASS, name, args)
        if len(args) == 2:
            kind = AtomKind.OBJECT if name in OBJECT_PROPERTIES else AtomKind.DATA
            return Atom(kind, name, args)
        raise RuleSyntaxError(f"atom {name} has arity {len(args)}", pos, self.rule_id)


_HEADER_RE = re.compile(r'^@rule\s+(?P<id>[A-Za-z0-9_.\-]+)(?:\s+"(?P<cite>[^"]*)")?\s*$')


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    i = 0
    while i < len(line):
        ch = line[i]
        if ch == '"' and (i == 0 or line[i - 1] != "\\"):
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
        i += 1
    return "".join(out).rstrip()


def parse_rules(text: str) -> list[Rule]:
    """Parse a rule file; disjunctive antecedents expand to suffixed ids."""
    entries: list[tuple[str, str, str]] = []  # (id, cite, body text)
    current_id: Optional[str] = None
    current_cite = ""
    current_lines: list[str] = []
    auto = 0

    def flush():
        nonlocal current_id, current_cite, current_lines, auto
        body = " ".join(current_lines).strip()
        if not body:
            current_id, current_cite, current_lines = None, "", []
            return
        if current_id is None:
            auto += 1
            entries.append((f"rule_{auto}", "", body))
        else:
            entries.append((current_id, current_cite, body))
        current_id, current_cite, current_lines = None, "", []

    for raw_line in text.splitlines():
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        header = _HEADER_RE.match(line)
        if header:
            flush()
            current_id = header.group("id")
            current_cite = header.group("cite") or ""
            continue
        if current_id is None and current_lines and "->" in " ".join(current_lines):
            flush()
        current_lines.append(line)
    flush()

    rules: list[Rule] = []
    for rule_id, cite, body in entries:
        parser = _Parser(_tokenize(body), rule_id)
        disjuncts, consequent = parser.parse_implication()
        for atom in consequent:
            if atom.kind is AtomKind.BUILTIN:
                raise RuleSyntaxError("builtin atom not allowed in consequent",
                                      -1, rule_id)
        if len(disjuncts) == 1:
            rules.append(Rule(rule_id, tuple(disjuncts[0]), tuple(consequent), cite))
        else:
            for n, disjunct in enumerate(disjuncts):
                suffix = chr(ord("a") + n)
                rules.append(Rule(f"{rule_id}{suffix}", tuple(disjunct),
                                  tuple(consequent), cite))
    return rules


def validate_rule(rule: Rule) -> None:
    """Safety: every consequent/builtin variable is bound by a non-builtin
    antecedent atom. Raises RuleSafetyError naming the unsafe variable."""
    bound: set[str] = set()
    for atom in rule.antecedent:
        if atom.kind is not AtomKind.BUILTIN:
            bound |= atom.variables()
    for atom in rule.antecedent:
        if atom.kind is AtomKind.BUILTIN:
            for var in atom.variables():
                if var not in bound:
                    raise RuleSafetyError(
                        f"rule {rule.id}: builtin argument ?{var} is never bound")
    for atom in rule.consequent:
        for var in atom.variables():
            if var not in bound:
                raise RuleSafetyError(
                    f"rule {rule.id}: consequent variable ?{var} is never bound")


def load_rules(text: str) -> list[Rule]:
    rules = parse_rules(text)
    for rule in rules:
        validate_rule(rule)
    return rules


# --- fact base ---------------------------------------------------------------

def _norm_value(value) -> Value:
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


class FactBase:
    """Class, data-property, and object-property assertions (set semantics)."""

    def __init__(self):
        self.classes: set[tuple[str, str]] = set()
        self.data: set[tuple[str, str, Value]] = set()
        self.objects: set[tuple[str, str, str]] = set()
        self._by_class: dict[str, set[str]] = {}
        self._by_data_prop: dict[str, set[tuple[str, Value]]] = {}
        self._by_obj_prop: dict[str, set[tuple[str, str]]] = {}

    def __len__(self):
        return len(self.classes) + len(self.data) + len(self.objects)

    def copy(self) -> "FactBase":
        fb = FactBase()
        for ind, cls in self.classes:
            fb.add_class(ind, cls)
        for ind, prop, value in self.data:
            fb.add_data(ind, prop, value)
        for ind, prop, other in self.objects:
            fb.add_object(ind, prop, other)
        return fb

    def add_class(self, individual: str, cls: str) -> bool:
        key = (individual, cls)
        if key in self.classes:
            return False
        self.classes.add(key)
        self._by_class.setdefault(cls, set()).add(individual)
        return True

    def add_data(self, individual: str, prop: str, value) -> bool:
        value = _norm_value(value)
        key = (individual, prop, value)
        if key in self.data:
            return False
        self.data.add(key)
        self._by_data_prop.setdefault(prop, set()).add((individual, value))
        return True

    def add_object(self, individual: str, prop: str, other: str) -> bool:
        key = (individual, prop, other)
        if key in self.objects:
            return False
        self.objects.add(key)
        self._by_obj_prop.setdefault(prop, set()).add((individual, other))
        return True

    def class_members(self, cls: str) -> set[str]:
        return self._by_class.get(cls, set())

    def data_pairs(self, prop: str) -> set[tuple[str, Value]]:
        return self._by_data_prop.get(prop, set())

    def object_pairs(self, prop: str) -> set[tuple[str, str]]:
        return self._by_obj_prop.get(prop, set())

    def snapshot(self) -> tuple[frozenset, frozenset, frozenset]:
        return (frozenset(self.classes), frozenset(self.data), frozenset(self.objects))


@dataclass(frozen=True)
class DerivedAtom:
    """One asserted consequent atom, in fact-base terms."""

    kind: str  # "class" | "data" | "object"
    individual: str
    predicate: str
    value: Optional[Value] = None

    def __repr__(self):
        if self.kind == "class":
            return f"{self.predicate}({self.individual})"
        if self.kind == "data" and isinstance(self.value, str):
            return f'{self.predicate}({self.individual}, "{self.value}")'
        return f"{self.predicate}({self.individual}, {self.value})"


@dataclass(frozen=True)
class Classification:
    patient: str
    label: str
    triggering_rule: str
    derived_actions: tuple[DerivedAtom, ...] = ()
    provenance: str = ""


# --- builtins ----------------------------------------------------------------

def builtin_eval(name: str, a, b) -> bool:
    """Comparison builtins; ordered forms are numeric-only (else False)."""
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if name == "equal":
        if a_num and b_num:
            return a == b
        return str(a) == str(b)
    if not (a_num and b_num):
        return False
    if name == "greaterThan":
        return a > b
    if name == "greaterThanOrEqualTo":
        return a >= b
    if name == "lessThan":
        return a < b
    if name == "lessThanOrEqualTo":
        return a <= b
    raise ValueError(f"unknown builtin {name}")


# --- evaluation --------------------------------------------------------------

def _ordered_atoms(rule: Rule) -> list[Atom]:
    non_builtin = [a for a in rule.antecedent if a.kind is not AtomKind.BUILTIN]
    builtins = [a for a in rule.antecedent if a.kind is AtomKind.BUILTIN]
    return non_builtin + builtins


def _resolve(arg: Arg, binding: dict):
    if isinstance(arg, Var):
        return binding[arg.name]
    return arg


def _match_atom(atom: Atom, base: FactBase, binding: dict,
                restrict: Optional[Iterable] = None):
    """Yield extended bindings for one non-builtin atom.

    `restrict` optionally narrows candidate facts (semi-naive delta)."""
    if atom.kind is AtomKind.CLASS:
        arg = atom.args[0]
        candidates = restrict if restrict is not None else base.class_members(atom.predicate)
        if isinstance(arg, Var) and arg.name in binding:
            arg = binding[arg.name]
        if isinstance(arg, Var):
            for ind in candidates:
                new = dict(binding)
                new[arg.name] = Individual(ind)
                yield new
        else:
            name = arg.name if isinstance(arg, Individual) else str(arg)
            if name in base.class_members(atom.predicate) and (
                    restrict is None or name in candidates):
                yield binding
        return

    a1, a2 = atom.args
    if atom.kind is AtomKind.DATA:
        candidates = restrict if restrict is not None else base.data_pairs(atom.predicate)
    else:
        candidates = restrict if restrict is not None else base.object_pairs(atom.predicate)
    for ind, second in candidates:
        new = _try_bind(a1, Individual(ind), binding)
        if new is None:
            continue
        if atom.kind is AtomKind.OBJECT:
            second_term = Individual(second)
        else:
            second_term = second
        new = _try_bind(a2, second_term, new)
        if new is not None:
            yield new


def _try_bind(arg: Arg, fact_value, binding: dict) -> Optional[dict]:
    if isinstance(arg, Var):
        if arg.name in binding:
            return binding if _terms_equal(binding[arg.name], fact_value) else None
        new = dict(binding)
        new[arg.name] = fact_value
        return new
    return binding if _terms_equal(arg, fact_value) else None


def _terms_equal(a, b) -> bool:
    if isinstance(a, Individual) or isinstance(b, Individual):
        a_name = a.name if isinstance(a, Individual) else a
        b_name = b.name if isinstance(b, Individual) else b
        return a_name == b_name
    return a == b


def _instantiate(atom: Atom, binding: dict) -> DerivedAtom:
    if atom.kind is AtomKind.CLASS:
        ind = _resolve(atom.args[0], binding)
        return DerivedAtom("class", _ind_name(ind), atom.predicate)
    first = _ind_name(_resolve(atom.args[0], binding))
    second = _resolve(atom.args[1], binding)
    if atom.kind is AtomKind.OBJECT:
        return DerivedAtom("object", first, atom.predicate, _ind_name(second))
    value = second.name if isinstance(second, Individual) else _norm_value(second)
    return DerivedAtom("data", first, atom.predicate, value)


def _ind_name(value) -> str:
    return value.name if isinstance(value, Individual) else str(value)


def _check_builtins(atoms: Sequence[Atom], binding: dict) -> bool:
    for atom in atoms:
        if atom.kind is AtomKind.BUILTIN:
            a = _resolve(atom.args[0], binding)
            b = _resolve(atom.args[1], binding)
            if isinstance(a, Individual) or isinstance(b, Individual):
                return False
            if not builtin_eval(atom.predicate, a, b):
                return False
    return True


def _add_derived(base: FactBase, derived: DerivedAtom) -> bool:
    if derived.kind == "class":
        return base.add_class(derived.individual, derived.predicate)
    if derived.kind == "data":
        return base.add_data(derived.individual, derived.predicate, derived.value)
    return base.add_object(derived.individual, derived.predicate, derived.value)


def apply_rules(facts: FactBase, rules: Sequence[Rule]
                ) -> tuple[FactBase, list[Classification]]:
    """Semi-naive forward chaining to the unique least fixpoint.

    Returns the augmented fact base plus one Classification per newly
    derived assertion on an individual (first deriving rule attributed).
    """
    base = facts.copy()
    classifications: list[Classification] = []

    ordered = [(rule, _ordered_atoms(rule)) for rule in rules]

    # Round deltas per atom family, keyed the same way the indexes are.
    delta_class = {cls: set(members) for cls, members in base._by_class.items()}
    delta_data = {p: set(pairs) for p, pairs in base._by_data_prop.items()}
    delta_obj = {p: set(pairs) for p, pairs in base._by_obj_prop.items()}

    while delta_class or delta_data or delta_obj:
        pending: list[tuple[Rule, list[DerivedAtom]]] = []
        seen_firings: set = set()
        for rule, atoms in ordered:
            non_builtin = [a for a in atoms if a.kind is not AtomKind.BUILTIN]
            for pivot in range(len(non_builtin)):
                pivot_atom = non_builtin[pivot]
                if pivot_atom.kind is AtomKind.CLASS:
                    restrict = delta_class.get(pivot_atom.predicate)
                elif pivot_atom.kind is AtomKind.DATA:
                    restrict = delta_data.get(pivot_atom.predicate)
                else:
                    restrict = delta_obj.get(pivot_atom.predicate)
                if not restrict:
                    continue
                bindings = [{}]
                for idx, atom in enumerate(non_builtin):
                    next_bindings = []
                    narrowed = restrict if idx == pivot else None
                    for binding in bindings:
                        next_bindings.extend(_match_atom(atom, base, binding, narrowed))
                    bindings = next_bindings
                    if not bindings:
                        break
                for binding in bindings:
                    if not _check_builtins(atoms, binding):
                        continue
                    key = (rule.id, tuple(sorted(
                        (k, _ind_name(v) if isinstance(v, Individual) else v)
                        for k, v in binding.items())))
                    if key in seen_firings:
                        continue
                    seen_firings.add(key)
                    derived = [_instantiate(atom, binding) for atom in rule.consequent]
                    pending.append((rule, derived))

        delta_class, delta_data, delta_obj = {}, {}, {}
        for rule, derived_atoms in pending:
            actions = tuple(d for d in derived_atoms if d.kind != "class")
            for derived in derived_atoms:
                if not _add_derived(base, derived):
                    continue
                if derived.kind == "class":
                    delta_class.setdefault(derived.predicate, set()).add(derived.individual)
                elif derived.kind == "data":
                    delta_data.setdefault(derived.predicate, set()).add(
                        (derived.individual, derived.value))
                else:
                    delta_obj.setdefault(derived.predicate, set()).add(
                        (derived.individual, derived.value))
                classifications.append(Classification(
                    patient=derived.individual,
                    label=derived.predicate,
                    triggering_rule=rule.id,
                    derived_actions=actions,
                    provenance=rule.provenance,
                ))
    return base, classifications


def naive_apply_rules(facts: FactBase, rules: Sequence[Rule]
                      ) -> tuple[FactBase, list[Classification]]:
    """Oracle: repeat full-base passes until nothing new derives.

    Scans raw fact sets in written-atom order with no indexes or deltas.
    """
    base = facts.copy()
    classifications: list[Classification] = []
    changed = True
    while changed:
        changed = False
        pending: list[tuple[Rule, list[DerivedAtom]]] = []
        for rule in rules:
            bindings = [{}]
            for atom in rule.antecedent:
                if atom.kind is AtomKind.BUILTIN:
                    continue
                next_bindings = []
                for binding in bindings:
                    if atom.kind is AtomKind.CLASS:
                        facts_iter = [(ind,) for ind, cls in base.classes
                                      if cls == atom.predicate]
                    elif atom.kind is AtomKind.DATA:
                        facts_iter = [(ind, v) for ind, p, v in base.data
                                      if p == atom.predicate]
                    else:
                        facts_iter = [(ind, o) for ind, p, o in base.objects
                                      if p == atom.predicate]
                    for fact in facts_iter:
                        if atom.kind is AtomKind.CLASS:
                            new = _try_bind(atom.args[0], Individual(fact[0]), binding)
                        else:
                            new = _try_bind(atom.args[0], Individual(fact[0]), binding)
                            if new is not None:
                                second = (Individual(fact[1])
                                          if atom.kind is AtomKind.OBJECT else fact[1])
                                new = _try_bind(atom.args[1], second, new)
                        if new is not None:
                            next_bindings.append(new)
                bindings = next_bindings
                if not bindings:
                    break
            for binding in bindings:
                if not _check_builtins(rule.antecedent, binding):
                    continue
                pending.append((rule, [_instantiate(a, binding)
                                       for a in rule.consequent]))
        for rule, derived_atoms in pending:
            actions = tuple(d for d in derived_atoms if d.kind != "class")
            for derived in derived_atoms:
                if _add_derived(base, derived):
                    changed = True
                    classifications.append(Classification(
                        patient=derived.individual,
                        label=derived.predicate,
                        triggering_rule=rule.id,
                        derived_actions=actions,
                        provenance=rule.provenance,
                    ))
    return base, classifications


# --- patient classification --------------------------------------------------

def record_to_facts(rec: PatientRecord, extra: Optional[dict] = None,
                    base: Optional[FactBase] = None) -> FactBase:
    """Build (or extend) a fact base from a validated observation."""
    fb = base if base is not None else FactBase()
    fb.add_class(rec.patient_id, "Patient")
    for key in SYMPTOM_KEYS:
        rule_prop, _rdf = SYMPTOM_VOCAB[key]
        fb.add_data(rec.patient_id, rule_prop, "Yes" if rec.symptoms[key] else "No")
    for prop, value in (extra or {}).items():
        fb.add_data(rec.patient_id, prop, value)
    return fb


def classify_patient(rec: PatientRecord, extra: Optional[dict],
                     rules: Sequence[Rule],
                     engine=apply_rules) -> list[Classification]:
    """Run the rule set over one patient; most severe stages sort first."""
    facts = record_to_facts(rec, extra)
    _, classifications = engine(facts, rules)
    return sorted(classifications,
                  key=lambda c: (classification_sort_key(c.label),
                                 c.triggering_rule, c.patient))
