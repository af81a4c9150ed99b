"""Deterministic synthetic task generator.

Tasks cycle through six focus aspects (count, colour binding, spatial relation,
exclusion, texture, state) and three difficulty levels: the corruption profile
scales every susceptibility by 0.6, 0.8 or 1.0, advancing one level per full
cycle of foci. Every task carries a background sentence.

Each task's render seed is chosen so the fully mitigated prompt renders exactly
the ground truth, i.e. the search target is reachable.
"""
from __future__ import annotations

import random
from typing import List

from . import lexicon as lx
from .grammar import parse_prompt
from .scene import SyntheticTask, default_profile, intended_scene, render_scene
from .tactics import full_mitigation

FOCI = ("count", "color", "relation", "exclusion", "texture", "state")
LEVELS = (0.6, 0.8, 1.0)
MAX_SEED_TRIES = 1000

BAOZI_PROMPT = (
    "Six white round baozi sit in a bamboo steamer. "
    "The steamer rests on a wooden table. "
    "The background is a kitchen."
)
# object-level details are rendered reliably; the count is the fragile part
BAOZI_PROFILE = dict(default_profile(0.25), count=1.0)


def _a(word: str) -> str:
    return ("An " if word[0] in "aeiou" else "A ") + word


def _nouns(rng: random.Random, k: int, exclude=()) -> List[str]:
    pool = [n for n in lx.NOUNS if n not in exclude and n != "baozi"]
    return rng.sample(pool, k)


def _prompt(focus: str, rng: random.Random) -> str:
    bg = rng.choice(lx.BACKGROUNDS)
    tail = f" The background is {'an' if bg[0] in 'aeiou' else 'a'} {bg}."
    if focus == "count":
        n1, n2 = _nouns(rng, 2)
        count = rng.randint(3, 9)
        return (f"{lx.number_word(count).capitalize()} {rng.choice(lx.COLORS)} {lx.plural(n1)} sit on "
                f"a {rng.choice(lx.TEXTURES)} {n2}.{tail}")
    if focus == "color":
        n1, n2 = _nouns(rng, 2)
        c1, c2 = rng.sample(lx.COLORS, 2)
        return f"{_a(c1)} {n1} stands next to a {c2} {n2}.{tail}"
    if focus == "relation":
        n1, n2, n3 = _nouns(rng, 3)
        return f"{_a(n1)} is on top of a {n2}. {_a(rng.choice(lx.COLORS))} {n3} is behind the {n2}.{tail}"
    if focus == "exclusion":
        n1, n2, n3 = _nouns(rng, 3)
        return f"{_a(rng.choice(lx.COLORS))} {n1} rests on a {n2}, without any {lx.plural(n3)}.{tail}"
    if focus == "texture":
        n1, n2 = _nouns(rng, 2)
        return f"{_a(rng.choice(lx.TEXTURES))} {n1} sits under a {rng.choice(lx.SHAPES)} {n2}.{tail}"
    if focus == "state":
        n1, n2 = _nouns(rng, 2)
        return f"{_a(rng.choice(lx.STATES))} {n1} stands beside a {rng.choice(lx.COLORS)} {n2}.{tail}"
    raise ValueError(f"unknown focus {focus!r}")


def reachable_seed(prompt: str, profile, start: int) -> int:
    """First seed >= start at which the fully mitigated prompt renders the ground truth."""
    truth = intended_scene(parse_prompt(prompt))
    witness = full_mitigation(prompt)
    probe = SyntheticTask("probe", prompt, truth, profile, start)
    for s in range(start, start + MAX_SEED_TRIES):
        if render_scene(witness, probe, s) == truth:
            return s
    raise RuntimeError(f"no reachable seed for {prompt!r}")


def make_task(task_id: str, prompt: str, profile, seed: int, focus: str = "", check: bool = True) -> SyntheticTask:
    truth = intended_scene(parse_prompt(prompt))
    if check:
        seed = reachable_seed(prompt, profile, seed)
    return SyntheticTask(task_id, prompt, truth, dict(profile), seed, focus)


def generate_tasks(count: int, seed: int) -> List[SyntheticTask]:
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for i in range(count):
        rng = random.Random(f"task:{seed}:{i}")
        focus = FOCI[i % len(FOCI)]
        level = LEVELS[(i // len(FOCI)) % len(LEVELS)]
        prompt = _prompt(focus, rng)
        out.append(make_task(f"t{i:03d}", prompt, default_profile(level), rng.randrange(1 << 30), focus))
    return out


def baozi_task(seed: int = 7) -> SyntheticTask:
    """Six baozi in a bamboo steamer: the count is the error that needs fixing."""
    return SyntheticTask("baozi", BAOZI_PROMPT, intended_scene(parse_prompt(BAOZI_PROMPT)),
                         dict(BAOZI_PROFILE), seed, "count")
