"""Error pattern catalog: 35 known failure modes of T2I models, each with a
refinement tactic, matched against detected errors to steer candidate proposal."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import yaml

from ..analysis.types import Aspect, ErrorRecord
from ..textutil import words

CATALOG_PATH = Path(__file__).with_name("catalog.yaml")
EXPECTED_COUNT = 35
TACTICS = frozenset(
    """exact_adverb repeat_attribute emphasis_adverb intensify_attribute precise_relation
    repeat_relation explicit_exclusion strong_exclusion detail_attribute repeat_noun""".split()
)


class SchemaError(ValueError):
    pass


class CountMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PatternEntry:
    id: int
    name: str
    categories: Tuple[Aspect, ...]
    keywords: frozenset
    strategy_text: str
    example_pair: Tuple[str, str]
    tactics: Tuple[str, ...] = ()
    tags: Tuple[str, ...] = field(default=())

    @property
    def category(self) -> Aspect:
        return self.categories[0]


def _entry(raw, pos: int) -> PatternEntry:
    where = f"entry #{pos + 1}"
    if not isinstance(raw, dict):
        raise SchemaError(f"{where}: expected a mapping")
    for key in ("id", "name", "categories", "keywords", "strategy", "example"):
        if key not in raw:
            raise SchemaError(f"{where}: missing {key!r}")
    if not isinstance(raw["id"], int) or not 1 <= raw["id"] <= EXPECTED_COUNT:
        raise SchemaError(f"{where}: id must be an integer in 1..{EXPECTED_COUNT}")
    name = raw["name"]
    strategy = raw["strategy"]
    if not isinstance(name, str) or not name.strip():
        raise SchemaError(f"{where}: empty name")
    if not isinstance(strategy, str) or not strategy.strip():
        raise SchemaError(f"{where}: empty strategy")
    cats = raw["categories"]
    if not isinstance(cats, list) or not cats:
        raise SchemaError(f"{where}: categories must be a non-empty list")
    try:
        categories = tuple(Aspect(c) for c in cats)
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None
    kws = raw["keywords"]
    if not isinstance(kws, list) or not all(isinstance(k, str) and k.strip() for k in kws):
        raise SchemaError(f"{where}: keywords must be a list of words")
    ex = raw["example"]
    if not isinstance(ex, dict) or not all(isinstance(ex.get(k), str) for k in ("before", "after")):
        raise SchemaError(f"{where}: example needs 'before' and 'after' strings")
    tactics = tuple(raw.get("tactics") or ())
    unknown = set(tactics) - TACTICS
    if unknown:
        raise SchemaError(f"{where}: unknown tactics {sorted(unknown)}")
    return PatternEntry(
        id=raw["id"],
        name=name.strip(),
        categories=categories,
        keywords=frozenset(k.strip().lower() for k in kws),
        strategy_text=strategy.strip(),
        example_pair=(ex["before"], ex["after"]),
        tactics=tactics,
        tags=tuple(raw.get("tags") or ()),
    )


def load_catalog(path=CATALOG_PATH) -> List[PatternEntry]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("patterns"), list):
        raise SchemaError(f"{path}: expected a mapping with a 'patterns' list")
    if doc.get("version") != 1:
        raise SchemaError(f"{path}: unsupported catalog version {doc.get('version')!r}")
    entries = [_entry(raw, i) for i, raw in enumerate(doc["patterns"])]
    if len(entries) != EXPECTED_COUNT:
        raise CountMismatch(f"{path}: {len(entries)} patterns, expected {EXPECTED_COUNT}")
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate pattern ids")
    return sorted(entries, key=lambda e: e.id)


@lru_cache(maxsize=1)
def default_catalog() -> Tuple[PatternEntry, ...]:
    return tuple(load_catalog())


def match_patterns(error: ErrorRecord, catalog: Optional[Sequence[PatternEntry]] = None) -> List[PatternEntry]:
    """Entries covering the error's category with at least one shared keyword.

    Ranked by primary-category match, then keyword overlap (both descending), then id.
    """
    catalog = default_catalog() if catalog is None else catalog
    vocab = set(words(error.explanation))
    scored = []
    for e in catalog:
        if error.category not in e.categories:
            continue
        overlap = len(vocab & e.keywords)
        if overlap:
            scored.append((-(e.category is error.category), -overlap, e.id, e))
    return [s[-1] for s in sorted(scored, key=lambda s: s[:3])]


def strategy_hints(error: ErrorRecord, limit: int = 3, catalog=None) -> List[str]:
    return [f"{e.name}: {e.strategy_text}" for e in match_patterns(error, catalog)[:limit]]
