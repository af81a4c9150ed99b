"""Exact question answering, captioning and caption comparison over scenes.

Questions use a small set of canonical phrasings:

    Is there at least one <noun> in the image?
    Are there exactly <count> <plural> in the image?
    Is the <noun> <attribute>?           (colour, shape, texture or state)
    Is the <a> <predicate> the <b>?
    Is the image free of any <plural>?
    Is the background a <place>?
"""
from __future__ import annotations

import re
from typing import Any, Dict, List, Optional, Tuple

from ..analysis.types import Aspect, QuestionItem
from . import lexicon as lx
from .grammar import Parse, parse_prompt, tokenize
from .scene import SceneSpec, constraints, intended_scene, stated_count


class UnsupportedAspect(ValueError):
    pass


def _article(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


# -- canonical questions -------------------------------------------------------

def questions_for_piece(piece: str, seen: Optional[set] = None) -> List[Tuple[str, str]]:
    """(aspect, question) pairs for the constraints a piece states first.

    ``seen`` collects constraint ids already asked about in earlier pieces.
    """
    seen = set() if seen is None else seen
    try:
        parse = parse_prompt(piece, require_noun=False)
    except ValueError:
        return []
    out = []
    for c in constraints(parse):
        if c.id in seen:
            continue
        seen.add(c.id)
        if c.kind == "count":
            n = stated_count(parse, c.noun)
            out.append(("Existence", f"Is there at least one {c.noun} in the image?"))
            out.append(("Number", f"Are there exactly {lx.number_word(n)} {lx.plural(c.noun)} in the image?"))
        elif c.kind == "exist":
            out.append(("Existence", f"Is there at least one {c.noun} in the image?"))
        elif c.kind in lx.ATTRIBUTE_KINDS:
            value = next(m.attrs[c.kind] for m in parse.mentions_of(c.noun) if c.kind in m.attrs)
            out.append((lx.ATTRIBUTE_ASPECT[c.kind], f"Is the {c.noun} {value}?"))
        elif c.kind == "relation":
            pred = parse.relation_map()[(c.noun, c.other)].predicate
            out.append((c.aspect, f"Is the {c.noun} {pred} the {c.other}?"))
        elif c.kind == "exclusion":
            out.append(("Existence", f"Is the image free of any {lx.plural(c.noun)}?"))
        elif c.kind == "background":
            bg = parse.backgrounds[0].word
            out.append(("Background", f"Is the background {_article(bg)} {bg}?"))
    if not out and parse.objects():
        # a piece that only repeats known objects still gets a check
        noun = parse.objects()[0]
        out.append(("Existence", f"Is there at least one {noun} in the image?"))
    return out


# -- answering -----------------------------------------------------------------

_PRED_ALT = "|".join(sorted((re.escape(p) for p in lx.PREDICATES), key=len, reverse=True))
_Q_EXIST = re.compile(r"^is there at least one (\w+) in the image$")
_Q_COUNT = re.compile(r"^are there exactly (\w+) (\w+) in the image$")
_Q_FREE = re.compile(r"^is the image free of any (\w+)$")
_Q_BG = re.compile(r"^is the background an? (\w+)$")
_Q_BG_MATCH = re.compile(r"^does the background match")
_Q_REL = re.compile(rf"^(?:is|are) the (\w+) ({_PRED_ALT}) the (\w+)$")
_Q_ATTR = re.compile(r"^(?:is|are) the (\w+) (\w+)$")


def _norm_question(text: str) -> str:
    return " ".join(tokenize(text))


def _noun(word: str) -> str:
    noun = lx.singular(word)
    if noun is None:
        raise UnsupportedAspect(f"unknown object {word!r}")
    return noun


def mock_vqa_answer(scene: SceneSpec, question: QuestionItem) -> Tuple[bool, str]:
    """Exact check of one canonical question; NO answers state observed vs expected."""
    if question.aspect is Aspect.STYLE:
        raise UnsupportedAspect("the synthetic grammar has no style attribute")
    q = _norm_question(question.question_text)
    m = _Q_EXIST.match(q)
    if m:
        noun = _noun(m.group(1))
        if scene.count_of(noun) > 0:
            return True, ""
        return False, f"The {noun} is missing: observed 0, expected at least one."
    m = _Q_COUNT.match(q)
    if m:
        noun = _noun(m.group(2))
        want = lx.count_value(m.group(1))
        got = scene.count_of(noun)
        if want is None:
            raise UnsupportedAspect(f"unreadable count {m.group(1)!r}")
        if got == want:
            return True, ""
        return False, f"Number of {lx.plural(noun)}: observed {got}, expected {want}."
    m = _Q_FREE.match(q)
    if m:
        noun = _noun(m.group(1))
        got = scene.count_of(noun)
        if got == 0:
            return True, ""
        return False, f"An unwanted {noun} appears although the prompt excludes {lx.plural(noun)}: observed {got}, expected 0."
    m = _Q_BG.match(q)
    if m and m.group(1) in lx.BACKGROUNDS:
        want = m.group(1)
        if scene.background == want:
            return True, ""
        return False, f"Background: observed {scene.background or 'none'}, expected {want}."
    if _Q_BG_MATCH.match(q):
        want = next((t for t in q.split() if t in lx.BACKGROUNDS), None)
        if want is None or scene.background == want:
            return True, ""
        return False, f"Background: observed {scene.background or 'none'}, expected {want}."
    m = _Q_REL.match(q)
    if m:
        a, pred, b = _noun(m.group(1)), m.group(2), _noun(m.group(3))
        for noun in (a, b):
            if scene.count_of(noun) == 0:
                return False, f"Relation between the {a} and the {b}: the {noun} is missing, expected {pred}."
        got = scene.relation(a, b)
        if got == pred:
            return True, ""
        return False, f"Relation between the {a} and the {b}: observed {got or 'unrelated'}, expected {pred}."
    m = _Q_ATTR.match(q)
    if m and m.group(2) in lx.ATTRIBUTE_OF:
        noun, value = _noun(m.group(1)), m.group(2)
        kind = lx.ATTRIBUTE_OF[value]
        obj = scene.find(noun)
        if obj is None or obj.count == 0:
            return False, f"{kind.capitalize()} of the {noun}: the {noun} is missing, expected {value}."
        if obj.attr(kind) == value:
            return True, ""
        return False, f"{kind.capitalize()} of the {noun}: observed {obj.attr(kind)}, expected {value}."
    raise UnsupportedAspect(f"question outside the synthetic grammar: {question.question_text!r}")


def vqa_reply(scene: SceneSpec, question: QuestionItem) -> str:
    yes, explanation = mock_vqa_answer(scene, question)
    return "YES" if yes else f"NO. {explanation}"


# -- rubric rating -----------------------------------------------------------

_OBS = re.compile(r"observed (\d+), expected (\d+)")


def rate_finding(aspect: str, answer: str, explanation: str) -> int:
    """5 satisfied; 3 count off by one or background wrong; 1 object missing; else 2."""
    if answer.strip().upper().startswith("YES"):
        return 5
    if aspect == "Existence" and "observed 0" in explanation:
        return 1
    if aspect == "Number":
        m = _OBS.search(explanation)
        if m and abs(int(m.group(1)) - int(m.group(2))) == 1:
            return 3
        return 2
    if aspect == "Background":
        return 3
    return 2


# -- captioning and comparison ---------------------------------------------------

def caption_scene(scene: SceneSpec) -> str:
    """Grammar-conformant description. States are not described (a caption blind
    spot the question branch covers)."""
    phrases = []
    for o in scene.objects:
        if o.count == 0:
            continue
        words = [w for w in (o.color, o.shape, o.texture) if w]
        if o.count == 1:
            head = " ".join(words + [o.noun])
            phrases.append(f"{_article(head)} {head}")
        else:
            phrases.append(" ".join([lx.number_word(o.count)] + words + [lx.plural(o.noun)]))
    if not phrases:
        body = "The image shows nothing recognisable."
    elif len(phrases) == 1:
        body = f"The image shows {phrases[0]}."
    else:
        body = f"The image shows {', '.join(phrases[:-1])} and {phrases[-1]}."
    parts = [body]
    for s, pred, o in scene.relations:
        a, b = scene.objects[s], scene.objects[o]
        if a.count and b.count:
            verb = "are" if a.count > 1 else "is"
            subject = lx.plural(a.noun) if a.count > 1 else a.noun
            parts.append(f"The {subject} {verb} {pred} the {b.noun}.")
    if scene.background:
        parts.append(f"The background is {_article(scene.background)} {scene.background}.")
    return " ".join(parts)


def _mentions_nothing(caption: str) -> bool:
    return not any(lx.singular(t) for t in tokenize(caption))


def compare_caption(prompt: str, caption: str) -> List[Dict[str, str]]:
    """Discrepancies between what ``prompt`` asks for and what ``caption`` says."""
    want_parse = parse_prompt(prompt)
    want = intended_scene(want_parse)
    seen: Optional[Parse] = None if _mentions_nothing(caption) else parse_prompt(caption, require_noun=False)
    got = intended_scene(seen) if seen else SceneSpec()
    errors = []
    for c in constraints(want_parse):
        if c.kind in ("count", "exist"):
            n_want = want.count_of(c.noun)
            n_got = got.count_of(c.noun)
            if n_got == 0:
                errors.append({"type": "Existence",
                               "explanation": f"The caption does not mention any {c.noun}, which the prompt asks for."})
            elif c.kind == "count" and n_got != n_want:
                lead = "Only " if n_got < n_want else ""
                errors.append({"type": "Number", "explanation":
                               f"{lead}{n_got} {lx.plural(c.noun)} are described instead of {lx.number_word(n_want)}."})
        elif c.kind in ("color", "shape", "texture"):
            w, g = want.find(c.noun), got.find(c.noun)
            if g is not None and g.attr(c.kind) != w.attr(c.kind):
                errors.append({"type": lx.ATTRIBUTE_ASPECT[c.kind], "explanation":
                               f"The caption describes the {c.noun} as {g.attr(c.kind) or 'plain'} instead of {w.attr(c.kind)}."})
        elif c.kind == "relation":
            if got.count_of(c.noun) and got.count_of(c.other):
                pw, pg = want.relation(c.noun, c.other), got.relation(c.noun, c.other)
                if pw != pg:
                    errors.append({"type": c.aspect, "explanation":
                                   f"The caption places the {c.noun} {pg or 'apart from'} the {c.other} instead of {pw} it."})
        elif c.kind == "exclusion":
            if got.count_of(c.noun):
                errors.append({"type": "Existence", "explanation":
                               f"The caption mentions a {c.noun} although the prompt excludes {lx.plural(c.noun)}."})
        elif c.kind == "background":
            if got.background != want.background:
                errors.append({"type": "Background", "explanation":
                               f"The caption describes {_article(got.background or 'x')} {got.background or 'unclear'} "
                               f"background instead of {_article(want.background)} {want.background}."})
    return errors


def nouns_in(text: str) -> List[str]:
    return sorted({lx.singular(t) for t in tokenize(text) if lx.singular(t)})


def defect_key(category: str, explanation: str) -> Tuple[str, Tuple[str, ...]]:
    """Identity of a defect independent of phrasing: (category, nouns named)."""
    return category, tuple(nouns_in(explanation))
