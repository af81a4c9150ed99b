"""Sentence rewrites that add mitigation features for one constraint.

Each tactic takes a sentence (with its final punctuation), a :class:`Target` and a
``random.Random`` and returns the rewritten sentence, or the input unchanged when
the tactic does not apply.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

from ..textutil import split_sentences
from . import lexicon as lx
from .grammar import parse_prompt, tokenize
from .scene import constraints, stated_count

COUNT_TAILS = ("altogether", "all told", "as a full set")
ATTR_INTENSIFIERS = {"color": ("vivid", "deep", "bright", "pure")}
DETAIL_WORDS = ("finely", "richly", "unmistakably")


@dataclass(frozen=True)
class Target:
    kind: str  # count exist color shape texture state relation exclusion background
    noun: Optional[str] = None
    other: Optional[str] = None


APPLICABLE: Dict[str, tuple] = {
    "count": ("exact_adverb", "repeat_attribute", "emphasis_adverb"),
    "exist": ("repeat_noun", "emphasis_adverb"),
    "attribute": ("intensify_attribute", "detail_attribute", "repeat_attribute", "emphasis_adverb"),
    "relation": ("precise_relation", "repeat_relation", "emphasis_adverb"),
    "exclusion": ("explicit_exclusion", "strong_exclusion", "emphasis_adverb"),
    "background": ("detail_attribute", "repeat_attribute", "emphasis_adverb"),
}


def applicable(kind: str) -> tuple:
    return APPLICABLE["attribute" if kind in lx.ATTRIBUTE_KINDS else kind]


def _split_end(sentence: str):
    s = sentence.rstrip()
    if s and s[-1] in ".!?;":
        return s[:-1].rstrip(), s[-1]
    return s, "."


def _append(sentence: str, tail: str) -> str:
    body, end = _split_end(sentence)
    return f"{body}, {tail}{end}"


def _word_re(word: str) -> re.Pattern:
    return re.compile(rf"\b{re.escape(word)}\b", re.I)


def _insert_before(sentence: str, match_start: int, word: str) -> str:
    if match_start == 0:
        return word.capitalize() + " " + sentence[0].lower() + sentence[1:]
    return sentence[:match_start] + word + " " + sentence[match_start:]


def _noun_form(sentence: str, noun: str) -> str:
    plural = lx.plural(noun)
    return plural if _word_re(plural).search(sentence) and plural != noun else noun


def _value(sentence_parse, target: Target) -> Optional[str]:
    for m in sentence_parse.mentions_of(target.noun):
        if target.kind in m.attrs:
            return m.attrs[target.kind]
    return None


# -- individual tactics ------------------------------------------------------

def exact_adverb(sentence: str, target: Target, rng: random.Random) -> str:
    n = stated_count(parse_prompt(sentence, require_noun=False), target.noun)
    if n is None:
        return sentence
    words = [w for w in (lx.number_word(n), str(n)) if _word_re(w).search(sentence)]
    if not words:
        return sentence
    m = _word_re(words[0]).search(sentence)
    before = tokenize(sentence[:m.start()])[-2:]
    missing = [w for w in lx.EXACT_WORDS if w not in before]
    if not missing:
        return sentence
    word = missing[0] if len(missing) == 2 and rng.random() < 0.7 else missing[-1]
    if len(missing) == 1 and before and before[-1] in lx.EXACT_WORDS:
        # "exactly six" -> "precisely exactly six" reads badly; put the new word first
        pos = sentence.lower().rfind(before[-1], 0, m.start())
        return _insert_before(sentence, pos, word)
    return _insert_before(sentence, m.start(), word)


def repeat_count(sentence: str, target: Target, rng: random.Random) -> str:
    n = stated_count(parse_prompt(sentence, require_noun=False), target.noun)
    if n is None:
        return sentence
    return _append(sentence, f"{lx.number_word(n)} {lx.plural(target.noun)} {rng.choice(COUNT_TAILS)}")


def emphasis_adverb(sentence: str, target: Target, rng: random.Random) -> str:
    present = [w for w in lx.EMPHASIS_ADVERBS if _word_re(w).search(sentence)]
    if present:
        # swap the adverb for another one
        old = present[0]
        new = rng.choice([w for w in lx.EMPHASIS_ADVERBS if w not in present])
        m = _word_re(old).search(sentence)
        repl = new.capitalize() if sentence[m.start()].isupper() else new
        return sentence[:m.start()] + repl + sentence[m.end():]
    adverb = rng.choice(lx.EMPHASIS_ADVERBS)
    return adverb.capitalize() + ", " + sentence[0].lower() + sentence[1:]


def intensify_attribute(sentence: str, target: Target, rng: random.Random) -> str:
    if target.kind == "background":
        return detail_background(sentence, target, rng)
    value = _value(parse_prompt(sentence, require_noun=False), target)
    if value is None:
        return sentence
    m = _word_re(value).search(sentence)
    if not m:
        return sentence
    before = tokenize(sentence[:m.start()])[-1:]
    if before and before[0] in lx.INTENSIFIERS:
        return sentence
    pool = ATTR_INTENSIFIERS.get(target.kind, DETAIL_WORDS)
    return _insert_before(sentence, m.start(), rng.choice(pool))


def detail_attribute(sentence: str, target: Target, rng: random.Random) -> str:
    if target.kind == "background":
        return detail_background(sentence, target, rng)
    value = _value(parse_prompt(sentence, require_noun=False), target)
    if value is None:
        return sentence
    m = _word_re(value).search(sentence)
    before = tokenize(sentence[:m.start()])[-1:] if m else []
    if not m or (before and before[0] in lx.INTENSIFIERS):
        return sentence
    return _insert_before(sentence, m.start(), rng.choice(DETAIL_WORDS))


def repeat_attribute(sentence: str, target: Target, rng: random.Random) -> str:
    if target.kind == "count":
        return repeat_count(sentence, target, rng)
    if target.kind == "background":
        return repeat_background(sentence, target, rng)
    value = _value(parse_prompt(sentence, require_noun=False), target)
    if value is None:
        return sentence
    form = _noun_form(sentence, target.noun)
    lead = "truly" if form != target.noun else "a truly"
    return _append(sentence, f"{lead} {value} {form}")


def repeat_noun(sentence: str, target: Target, rng: random.Random) -> str:
    return _append(sentence, f"the {target.noun} {rng.choice(['plainly shown', 'fully shown', 'easy to spot'])}")


def precise_relation(sentence: str, target: Target, rng: random.Random) -> str:
    parse = parse_prompt(sentence, require_noun=False)
    rel = parse.relation_map().get((target.noun, target.other))
    if rel is None:
        return sentence
    missing = [q for q in lx.RELATION_QUALIFIERS if q not in rel.qualifiers]
    if not missing:
        return sentence
    subj = _word_re(_noun_form(sentence, target.noun)).search(sentence)
    start = subj.end() if subj else 0
    m = re.compile(rf"\b{re.escape(rel.predicate)}\b", re.I).search(sentence, start)
    if not m:
        return sentence
    before = tokenize(sentence[:m.start()])[-1:]
    if before and before[0] in lx.RELATION_QUALIFIERS:
        pos = sentence.lower().rfind(before[0], 0, m.start())
        return _insert_before(sentence, pos, missing[0])
    return _insert_before(sentence, m.start(), missing[0])


def repeat_relation(sentence: str, target: Target, rng: random.Random) -> str:
    parse = parse_prompt(sentence, require_noun=False)
    rel = parse.relation_map().get((target.noun, target.other))
    if rel is None:
        return sentence
    qual = "directly " if "directly" in rel.qualifiers else ""
    return _append(sentence, f"with the {target.noun} {qual}{rel.predicate} the {target.other}")


def explicit_exclusion(sentence: str, target: Target, rng: random.Random) -> str:
    pl = lx.plural(target.noun)
    if re.search(rf"\bno {re.escape(pl)}\b", sentence, re.I):
        return _append(sentence, f"without any {pl}")
    return _append(sentence, f"with no {pl}")


def strong_exclusion(sentence: str, target: Target, rng: random.Random) -> str:
    pl = lx.plural(target.noun)
    m = re.search(rf"\b(?<!absolutely )no {re.escape(pl)}\b", sentence, re.I)
    if m:
        return _insert_before(sentence, m.start(), "absolutely")
    m = re.search(rf"\bwithout any {re.escape(pl)}\b(?! at all)", sentence, re.I)
    if m:
        return sentence[:m.end()] + " at all" + sentence[m.end():]
    return _append(sentence, f"absolutely no {pl}")


def detail_background(sentence: str, target: Target, rng: random.Random) -> str:
    word = next((t for t in tokenize(sentence) if t in lx.BACKGROUNDS), None)
    if word is None:
        return sentence
    m = _word_re(word).search(sentence)
    before = tokenize(sentence[:m.start()])[-1:]
    if before and before[0] in lx.INTENSIFIERS:
        return sentence
    return _insert_before(sentence, m.start(), "detailed")


def repeat_background(sentence: str, target: Target, rng: random.Random) -> str:
    word = next((t for t in tokenize(sentence) if t in lx.BACKGROUNDS), None)
    if word is None:
        return sentence
    return _append(sentence, f"a {word} all around")


TACTICS: Dict[str, Callable[[str, Target, random.Random], str]] = {
    "exact_adverb": exact_adverb,
    "repeat_attribute": repeat_attribute,
    "emphasis_adverb": emphasis_adverb,
    "intensify_attribute": intensify_attribute,
    "detail_attribute": detail_attribute,
    "precise_relation": precise_relation,
    "repeat_relation": repeat_relation,
    "explicit_exclusion": explicit_exclusion,
    "strong_exclusion": strong_exclusion,
    "repeat_noun": repeat_noun,
}


def apply_tactic(sentence: str, target: Target, name: str, rng: random.Random) -> str:
    if name not in applicable(target.kind):
        return sentence
    return TACTICS[name](sentence, target, rng)


def add_filler(sentence: str, rng: random.Random) -> str:
    return _append(sentence, rng.choice(lx.FILLERS))


def target_for(kind: str, noun: Optional[str], other: Optional[str] = None) -> Target:
    return Target(kind, noun, other)


def full_mitigation(prompt: str, seed: int = 0) -> str:
    """Every applicable tactic for every constraint, applied in its first sentence.

    Emphasis is added once per sentence; this is the reachability witness used to
    check that a task's target scene can be produced at all.
    """
    rng = random.Random(f"full:{seed}")
    sentences = split_sentences(prompt)
    parse = parse_prompt(prompt)
    for c in constraints(parse):
        t = Target(c.kind, c.noun, c.other)
        for i, s in enumerate(sentences):
            if c.id in {lc.id for lc in constraints(parse_prompt(s, require_noun=False))}:
                for name in applicable(c.kind):
                    if name == "emphasis_adverb":
                        continue
                    sentences[i] = apply_tactic(sentences[i], t, name, rng)
                break
    out = []
    for s in sentences:
        if not any(w in tokenize(s) for w in lx.EMPHASIS_ADVERBS):
            s = emphasis_adverb(s, Target("exist"), rng)
        out.append(s)
    return " ".join(out)


def neutral_rewrite(sentence: str, rng: random.Random) -> str:
    """Paraphrase-level change: a filler phrase that carries no grammar meaning."""
    body, end = _split_end(sentence)
    for f in lx.FILLERS:
        suffix = ", " + f
        if body.endswith(suffix):
            body = body[: -len(suffix)]
            break
    return f"{body}, {rng.choice(lx.FILLERS)}{end}"


def tactics_in_order(names: Sequence[str]) -> List[str]:
    return list(dict.fromkeys(names))
