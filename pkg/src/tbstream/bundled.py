"""Access to the packaged data files: rule catalogs, query corpus,
ontology skeleton, and the clinical-term lexicon."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

RULE_FILES = ("stage.swrlx", "suspected.swrlx", "pulmonary.swrlx", "severe.swrlx")
QUERY_FILES = tuple(f"q{i}.rq" for i in range(1, 8))


def _data_root():
    return resources.files("tbstream") / "data"


def read_rule_file(name: str) -> str:
    return (_data_root() / "rules" / name).read_text(encoding="utf-8")


def load_rule_corpus(names=RULE_FILES) -> dict[str, list]:
    """Parse and validate every bundled rule catalog, keyed by file name."""
    from .rules import load_rules

    return {name: load_rules(read_rule_file(name)) for name in names}


def all_rules(names=RULE_FILES) -> list:
    out = []
    for rules in load_rule_corpus(names).values():
        out.extend(rules)
    return out


def read_query(name: str) -> str:
    return (_data_root() / "queries" / name).read_text(encoding="utf-8")


def skeleton_ntriples() -> str:
    return (_data_root() / "onto" / "tb_skeleton.nt").read_text(encoding="utf-8")


def skeleton_manifest() -> str:
    return (_data_root() / "onto" / "manifest.json").read_text(encoding="utf-8")


def lexicon_text() -> str:
    return (_data_root() / "lexicon" / "clinical_terms.txt").read_text(encoding="utf-8")


def rules_dir_path() -> Path:
    """Filesystem path of the bundled rules (for CLI defaults)."""
    return Path(str(_data_root() / "rules"))
