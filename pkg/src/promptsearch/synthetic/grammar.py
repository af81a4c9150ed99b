"""Parser for the synthetic prompt grammar.

A prompt is a sequence of sentences. Inside a sentence:

* a noun phrase is ``[count] [attribute words] noun`` where the count is a number
  word or digits and attributes come from the colour/shape/texture/state lists;
  ``a``/``an`` or a singular noun mean one;
* ``no X`` / ``without (any) X`` / ``free of (any) X`` exclude X from the image;
* two noun phrases joined by a predicate phrase (``on top of``, ``next to``, ``in``,
  ...) state a relation; the predicate closest to the second noun wins;
* a background word (``kitchen``, ``forest``, ...) anywhere sets the background.

Any other word is ignored, so refined prompts with emphasis and filler still parse.
Repeated mentions merge; the first stated value of each attribute wins.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from ..textutil import split_sentences
from . import lexicon as lx

_TOKEN = re.compile(r"[a-z0-9]+")
LOOKBACK = 6


class GrammarError(ValueError):
    pass


@dataclass
class Mention:
    noun: str
    plural: bool
    sentence: int
    pos: int
    count: Optional[int] = None
    count_word: str = ""
    attrs: Dict[str, str] = field(default_factory=dict)
    exact: Set[str] = field(default_factory=set)
    intensified: Set[str] = field(default_factory=set)
    excluded: bool = False
    strong: bool = False


@dataclass
class RelationMention:
    subject: str
    predicate: str
    obj: str
    sentence: int
    qualifiers: Set[str] = field(default_factory=set)


@dataclass
class BackgroundMention:
    word: str
    sentence: int
    detailed: bool = False


@dataclass
class Parse:
    sentences: List[List[str]]
    mentions: List[Mention]
    relations: List[RelationMention]
    backgrounds: List[BackgroundMention]

    def emphasis(self, sentence: int) -> Tuple[str, ...]:
        return tuple(sorted({t for t in self.sentences[sentence] if t in lx.EMPHASIS_ADVERBS}))

    def objects(self) -> List[str]:
        """Asserted (non-excluded) nouns in order of first mention."""
        return list(dict.fromkeys(m.noun for m in self.mentions if not m.excluded))

    def excluded(self) -> List[str]:
        asserted = set(self.objects())
        return list(dict.fromkeys(m.noun for m in self.mentions if m.excluded and m.noun not in asserted))

    def mentions_of(self, noun: str, excluded: bool = False) -> List[Mention]:
        return [m for m in self.mentions if m.noun == noun and m.excluded == excluded]

    def relation_map(self) -> Dict[Tuple[str, str], RelationMention]:
        out: Dict[Tuple[str, str], RelationMention] = {}
        for r in self.relations:
            out.setdefault((r.subject, r.obj), r)
        return out


def tokenize(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


def _match_predicate(tokens: List[str], i: int) -> Optional[str]:
    for phrase in lx.PREDICATE_TOKENS:
        if tuple(tokens[i:i + len(phrase)]) == phrase:
            return " ".join(phrase)
    return None


def _mention(tokens: List[str], pos: int, sentence: int) -> Mention:
    word = tokens[pos]
    noun = lx.singular(word)
    m = Mention(noun=noun, plural=word != noun or _plural_context(tokens, pos), sentence=sentence, pos=pos)
    j = pos - 1
    steps = 0
    prev = word
    while j >= 0 and steps < LOOKBACK:
        t = tokens[j]
        if lx.singular(t) or t in lx.PREDICATE_WORDS:
            break
        if t in lx.EXCLUSION_MARKERS or (t == "of" and j > 0 and tokens[j - 1] == "free"):
            m.excluded = True
            if j > 0 and tokens[j - 1] in lx.STRONG_EXCLUSION:
                m.strong = True
            break
        if t == "of":
            break
        kind = lx.ATTRIBUTE_OF.get(t)
        if kind and kind not in m.attrs:
            m.attrs[kind] = t
        elif lx.count_value(t) is not None and m.count is None:
            m.count = lx.count_value(t)
            m.count_word = t
        elif t in lx.EXACT_WORDS and m.count is not None:
            m.exact.add(t)
        elif t in lx.INTENSIFIERS:
            if prev in lx.ATTRIBUTE_OF:
                m.intensified.add(prev)
        prev = t
        j -= 1
        steps += 1
    # trailing "at all" strengthens an exclusion
    if m.excluded and tokens[pos + 1:pos + 3] == ["at", "all"]:
        m.strong = True
    if m.count is None and not m.excluded and not m.plural:
        m.count = 1
    return m


def _plural_context(tokens: List[str], pos: int) -> bool:
    # nouns whose plural equals the singular (baozi) are plural after a count above one
    for t in reversed(tokens[max(0, pos - LOOKBACK):pos]):
        v = lx.count_value(t)
        if v is not None:
            return v > 1
    return False


def parse_prompt(text: str, require_noun: bool = True) -> Parse:
    sentences = [tokenize(s) for s in split_sentences(text)]
    sentences = [s for s in sentences if s]
    mentions: List[Mention] = []
    relations: List[RelationMention] = []
    backgrounds: List[BackgroundMention] = []
    for si, toks in enumerate(sentences):
        local: List[Mention] = []
        for i, t in enumerate(toks):
            if lx.singular(t):
                local.append(_mention(toks, i, si))
            elif t in lx.BACKGROUNDS:
                detailed = i > 0 and toks[i - 1] in lx.INTENSIFIERS
                backgrounds.append(BackgroundMention(t, si, detailed))
        mentions.extend(local)
        asserted = [m for m in local if not m.excluded]
        for a, b in zip(asserted, asserted[1:]):
            if a.noun == b.noun:
                continue
            pred, qual = None, set()
            i = a.pos + 1
            while i < b.pos:
                p = _match_predicate(toks, i)
                if p:
                    pred = p
                    qual = {toks[i - 1]} & set(lx.RELATION_QUALIFIERS) if i > 0 else set()
                    i += len(p.split())
                else:
                    i += 1
            if pred:
                relations.append(RelationMention(a.noun, pred, b.noun, si, qual))
    if require_noun and not any(not m.excluded for m in mentions):
        raise GrammarError(f"no known object noun in prompt {text[:80]!r}")
    return Parse(sentences, mentions, relations, backgrounds)
