from __future__ import annotations

import re
from typing import List, Set

_WORD = re.compile(r"[a-z0-9]+")
_SENTENCE_END = re.compile(r"(?<=[.!?;])\s+")

STOPWORDS = frozenset(
    """
    a an the and or but of to in on at by for with from as is are was were be been being
    it its this that these those there here which who whom whose into onto over under
    very so such than then too also just only some any each every all both either neither
    not no nor do does did has have had having can could should would may might must will
    shall i you he she we they them his her their our your my me us
    """.split()
)

RELATION_WORDS = frozenset(
    """
    on in under behind beside next above below near inside atop holding between front
    left right beneath around against across along top within outside toward towards
    """.split()
)

BACKGROUND_WORDS = frozenset(
    """
    background backdrop scene setting style atmosphere mood lighting sky landscape
    scenery environment surroundings
    """.split()
)


def normalize_ws(text: str) -> str:
    return " ".join(text.split())


def words(text: str) -> List[str]:
    return _WORD.findall(text.lower())


def content_words(text: str) -> List[str]:
    return [w for w in words(text) if w not in STOPWORDS]


def content_set(text: str) -> Set[str]:
    return set(content_words(text))


def split_sentences(text: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_END.split(text.strip()) if s.strip()]


def contains_normalized(haystack: str, needle: str) -> bool:
    """Case- and whitespace-insensitive substring test."""
    return normalize_ws(needle).lower() in normalize_ws(haystack).lower()


def classify_piece(text: str) -> str:
    """Heuristic kind for a prompt piece: Background, Relationship or Object."""
    ws = words(text)
    if any(w in BACKGROUND_WORDS for w in ws):
        return "Background"
    if any(w in RELATION_WORDS for w in ws):
        return "Relationship"
    return "Object"


def chunk_sentences(text: str, max_chars: int) -> List[str]:
    """Group whole sentences into chunks of at most ``max_chars`` (a single longer
    sentence becomes its own chunk)."""
    chunks: List[str] = []
    cur = ""
    for s in split_sentences(text):
        if cur and len(cur) + 1 + len(s) > max_chars:
            chunks.append(cur)
            cur = s
        else:
            cur = f"{cur} {s}" if cur else s
    if cur:
        chunks.append(cur)
    return chunks
