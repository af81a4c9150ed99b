"""Scenes, constraints and the seeded corruption rule of the mock T2I model.

A prompt asserts constraints (counts, attributes, relations, exclusions, the
background). Rendering starts from the scene the prompt asks for and corrupts each
constraint independently:

    corrupted  iff  u(seed, constraint id, signature) < susceptibility * product(multipliers)

``u`` is a sha256-derived number in [0, 1). The signature holds only the grammar
features that bear on that constraint (its value, mitigation words, repetitions,
sentence emphasis), so neutral rewording never changes a rendered scene while
adding, removing or swapping a mitigation feature re-draws it. Multipliers are all
below one, so adding a feature never raises the corruption probability.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from . import lexicon as lx
from .grammar import Parse, parse_prompt

# base susceptibility per constraint kind (count is computed from the count itself)
BASE = {
    "exist": 0.15,
    "color": 0.5,
    "shape": 0.5,
    "texture": 0.6,
    "state": 0.5,
    "relation": 0.6,
    "exclusion": 0.6,
    "background": 0.4,
}

# mitigation multipliers
M_EXACT = 0.3  # "exactly" / "precisely" bound to the count, each
M_COUNT_REPEAT = 0.4  # count phrase stated at least twice
M_EMPHASIS = 0.6  # emphasis adverb in the anchor sentence
M_ATTR_REPEAT = 0.4  # attribute bound to the noun at least twice
M_INTENSIFIER = 0.5  # intensifier/detail word right before the attribute
M_REL_QUALIFIER = 0.3  # "directly" / "precisely" before the predicate, each
M_REL_REPEAT = 0.4
M_NOUN_REPEAT = 0.4  # object named at least twice
M_EXCL_REPEAT = 0.5  # exclusion stated at least twice
M_EXCL_STRONG = 0.3  # "absolutely no" / "... at all"
M_BG_REPEAT = 0.4
M_BG_DETAIL = 0.5

KINDS = ("count", "exist", "color", "shape", "texture", "state", "relation", "exclusion", "background")


def count_susceptibility(n: int) -> float:
    """Larger counts are harder: 0.9 * min(1, (n - 1) / 4 + 0.1)."""
    return 0.9 * min(1.0, (n - 1) / 4.0 + 0.1)


@dataclass
class ObjectSpec:
    noun: str
    count: int = 1
    color: Optional[str] = None
    shape: Optional[str] = None
    state: Optional[str] = None
    texture: Optional[str] = None

    def attr(self, kind: str) -> Optional[str]:
        return getattr(self, kind)


@dataclass
class SceneSpec:
    objects: List[ObjectSpec] = field(default_factory=list)
    relations: List[Tuple[int, str, int]] = field(default_factory=list)
    background: Optional[str] = None
    style: Optional[str] = None

    def __post_init__(self):
        for o in self.objects:
            if o.count < 0:
                raise ValueError("object counts must be >= 0")
        for s, _, o in self.relations:
            if not (0 <= s < len(self.objects) and 0 <= o < len(self.objects)):
                raise ValueError("relation index out of range")

    def find(self, noun: str) -> Optional[ObjectSpec]:
        for o in self.objects:
            if o.noun == noun:
                return o
        return None

    def index(self, noun: str) -> Optional[int]:
        for i, o in enumerate(self.objects):
            if o.noun == noun:
                return i
        return None

    def count_of(self, noun: str) -> int:
        o = self.find(noun)
        return o.count if o else 0

    def relation(self, a: str, b: str) -> Optional[str]:
        ia, ib = self.index(a), self.index(b)
        for s, p, o in self.relations:
            if s == ia and o == ib:
                return p
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "objects": [dict(vars(o)) for o in self.objects],
            "relations": [list(r) for r in self.relations],
            "background": self.background,
            "style": self.style,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SceneSpec":
        return cls(
            [ObjectSpec(**o) for o in d["objects"]],
            [(int(s), p, int(o)) for s, p, o in d["relations"]],
            d.get("background"),
            d.get("style"),
        )


@dataclass(frozen=True)
class Constraint:
    id: str
    kind: str
    aspect: str
    noun: Optional[str] = None
    other: Optional[str] = None  # relation object


@dataclass
class SyntheticTask:
    id: str
    prompt: str
    ground_truth: SceneSpec
    corruption_profile: Dict[str, float]
    seed: int
    focus: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "ground_truth": self.ground_truth.to_dict(),
            "corruption_profile": dict(self.corruption_profile),
            "seed": self.seed,
            "focus": self.focus,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SyntheticTask":
        return cls(d["id"], d["prompt"], SceneSpec.from_dict(d["ground_truth"]), dict(d["corruption_profile"]),
                   int(d["seed"]), d.get("focus", ""))


def default_profile(level: float = 1.0) -> Dict[str, float]:
    return {k: level for k in KINDS}


# -- from prompt to intended scene -------------------------------------------

def _first(values):
    for v in values:
        if v is not None:
            return v
    return None


def stated_count(parse: Parse, noun: str) -> Optional[int]:
    return _first(m.count for m in parse.mentions_of(noun) if m.count_word)


def intended_scene(parse: Parse) -> SceneSpec:
    objects = []
    for noun in parse.objects():
        ms = parse.mentions_of(noun)
        count = stated_count(parse, noun)
        if count is None:
            count = 2 if any(m.plural for m in ms) else 1
        attrs = {k: _first(m.attrs.get(k) for m in ms) for k in lx.ATTRIBUTE_KINDS}
        objects.append(ObjectSpec(noun, count, **attrs))
    index = {o.noun: i for i, o in enumerate(objects)}
    relations = [(index[a], r.predicate, index[b]) for (a, b), r in parse.relation_map().items()]
    bg = parse.backgrounds[0].word if parse.backgrounds else None
    return SceneSpec(objects, relations, bg)


def constraints(parse: Parse) -> List[Constraint]:
    out: List[Constraint] = []
    for noun in parse.objects():
        n = stated_count(parse, noun)
        if n is not None and n >= 2:
            out.append(Constraint(f"count:{noun}", "count", "Number", noun))
        elif n is None and any(m.plural for m in parse.mentions_of(noun)):
            pass  # "some apples": nothing checkable beyond the object itself
        else:
            out.append(Constraint(f"exist:{noun}", "exist", "Existence", noun))
        for kind in lx.ATTRIBUTE_KINDS:
            if any(kind in m.attrs for m in parse.mentions_of(noun)):
                out.append(Constraint(f"{kind}:{noun}", kind, lx.ATTRIBUTE_ASPECT[kind], noun))
    for (a, b), r in parse.relation_map().items():
        out.append(Constraint(f"rel:{a}:{b}", "relation", lx.PREDICATES[r.predicate], a, b))
    for noun in parse.excluded():
        out.append(Constraint(f"excl:{noun}", "exclusion", "Existence", noun))
    if parse.backgrounds:
        out.append(Constraint("background", "background", "Background"))
    return out


# -- mitigation features -----------------------------------------------------

def features(parse: Parse, c: Constraint) -> Tuple[float, List[Any], Dict[str, Any]]:
    """(base susceptibility, hash signature, human-readable feature flags)."""
    if c.kind == "count":
        ms = parse.mentions_of(c.noun)
        n = stated_count(parse, c.noun)
        word_ms = [m for m in ms if m.count == n and m.count_word]
        exact = sorted(set().union(*(m.exact for m in word_ms)))
        reps = len(word_ms)
        emph = parse.emphasis(word_ms[0].sentence)
        mult = (M_EXACT ** len(exact)) * (M_COUNT_REPEAT if reps >= 2 else 1) * (M_EMPHASIS if emph else 1)
        flags = {"exact": exact, "repeats": reps, "emphasis": list(emph)}
        return count_susceptibility(n) * mult, [n, exact, min(reps, 3), list(emph)], flags
    if c.kind == "exist":
        ms = parse.mentions_of(c.noun)
        emph = parse.emphasis(ms[0].sentence)
        mult = (M_NOUN_REPEAT if len(ms) >= 2 else 1) * (M_EMPHASIS if emph else 1)
        return BASE["exist"] * mult, [min(len(ms), 3), list(emph)], {"repeats": len(ms), "emphasis": list(emph)}
    if c.kind in lx.ATTRIBUTE_KINDS:
        ms = parse.mentions_of(c.noun)
        value = _first(m.attrs.get(c.kind) for m in ms)
        bound = [m for m in ms if m.attrs.get(c.kind) == value]
        intens = any(value in m.intensified for m in bound)
        emph = parse.emphasis(bound[0].sentence)
        mult = (M_ATTR_REPEAT if len(bound) >= 2 else 1) * (M_INTENSIFIER if intens else 1) * (M_EMPHASIS if emph else 1)
        flags = {"repeats": len(bound), "intensified": intens, "emphasis": list(emph)}
        return BASE[c.kind] * mult, [value, min(len(bound), 3), intens, list(emph)], flags
    if c.kind == "relation":
        first = parse.relation_map()[(c.noun, c.other)]
        same = [r for r in parse.relations if (r.subject, r.predicate, r.obj) == (c.noun, first.predicate, c.other)]
        quals = sorted(set().union(*(r.qualifiers for r in same)))
        emph = parse.emphasis(first.sentence)
        mult = (M_REL_QUALIFIER ** len(quals)) * (M_REL_REPEAT if len(same) >= 2 else 1) * (M_EMPHASIS if emph else 1)
        flags = {"qualifiers": quals, "repeats": len(same), "emphasis": list(emph)}
        return BASE["relation"] * mult, [first.predicate, quals, min(len(same), 3), list(emph)], flags
    if c.kind == "exclusion":
        ms = parse.mentions_of(c.noun, excluded=True)
        strong = any(m.strong for m in ms)
        emph = parse.emphasis(ms[0].sentence)
        mult = (M_EXCL_STRONG if strong else 1) * (M_EXCL_REPEAT if len(ms) >= 2 else 1) * (M_EMPHASIS if emph else 1)
        flags = {"strong": strong, "repeats": len(ms), "emphasis": list(emph)}
        return BASE["exclusion"] * mult, [strong, min(len(ms), 3), list(emph)], flags
    if c.kind == "background":
        bgs = parse.backgrounds
        word = bgs[0].word
        same = [b for b in bgs if b.word == word]
        detailed = any(b.detailed for b in same)
        emph = parse.emphasis(same[0].sentence)
        mult = (M_BG_REPEAT if len(same) >= 2 else 1) * (M_BG_DETAIL if detailed else 1) * (M_EMPHASIS if emph else 1)
        flags = {"repeats": len(same), "detailed": detailed, "emphasis": list(emph)}
        return BASE["background"] * mult, [word, min(len(same), 3), detailed, list(emph)], flags
    raise ValueError(f"unknown constraint kind {c.kind!r}")


def _unit(*parts) -> float:
    blob = json.dumps(list(parts), sort_keys=True, separators=(",", ":"))
    return int(hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16], 16) / 2.0 ** 64


def corruption_probability(prompt: str, task: Optional[SyntheticTask], constraint_id: str) -> float:
    parse = parse_prompt(prompt)
    for c in constraints(parse):
        if c.id == constraint_id:
            base, _, _ = features(parse, c)
            weight = (task.corruption_profile if task else default_profile()).get(c.kind, 1.0)
            return min(1.0, base * weight)
    raise KeyError(f"prompt has no constraint {constraint_id!r}")


# -- rendering ---------------------------------------------------------------

def _other(options, current, u) -> str:
    choices = [o for o in options if o != current]
    return choices[int(u * len(choices)) % len(choices)]


def render_scene(prompt: str, task: Optional[SyntheticTask], seed: int) -> SceneSpec:
    """Deterministic mock rendering of ``prompt`` (see module docstring)."""
    if not prompt or not prompt.strip():
        raise ValueError("prompt must be non-empty")
    parse = parse_prompt(prompt)
    scene = intended_scene(parse)
    profile = task.corruption_profile if task else default_profile()
    for c in constraints(parse):
        base, sig, flags = features(parse, c)
        p = min(1.0, base * profile.get(c.kind, 1.0))
        if _unit(seed, c.id, sig) >= p:
            continue
        u2 = _unit(seed, c.id, sig, "value")
        if c.kind == "count":
            obj = scene.find(c.noun)
            # mitigated counts miss by less: up to 3 with no feature, 2 with one, else 1
            used = len(flags["exact"]) + (flags["repeats"] >= 2) + bool(flags["emphasis"])
            max_delta = max(1, 3 - used)
            obj.count = max(1, obj.count - (1 + int(u2 * max_delta)))
        elif c.kind == "exist":
            scene.find(c.noun).count = 0
        elif c.kind in lx.ATTRIBUTE_KINDS:
            obj = scene.find(c.noun)
            setattr(obj, c.kind, _other(lx.ATTRIBUTE_KINDS[c.kind], obj.attr(c.kind), u2))
        elif c.kind == "relation":
            ia, ib = scene.index(c.noun), scene.index(c.other)
            for k, (s, pr, o) in enumerate(scene.relations):
                if (s, o) == (ia, ib):
                    scene.relations[k] = (s, _other(list(lx.PREDICATES), pr, u2), o)
        elif c.kind == "exclusion":
            scene.objects.append(ObjectSpec(c.noun, 1))
        elif c.kind == "background":
            scene.background = _other(lx.BACKGROUNDS, scene.background, u2)
    return scene


def task_from_prompt(prompt: str, seed: int = 0, profile: Optional[Dict[str, float]] = None) -> SyntheticTask:
    """Wrap an arbitrary grammar prompt as a task with the default profile."""
    scene = intended_scene(parse_prompt(prompt))
    return SyntheticTask("adhoc", prompt, scene, profile or default_profile(), seed)
