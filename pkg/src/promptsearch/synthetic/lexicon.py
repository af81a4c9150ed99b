"""Closed vocabulary of the synthetic prompt grammar."""
from __future__ import annotations

from typing import Dict, Optional, Tuple

NOUNS: Dict[str, str] = {
    "baozi": "baozi",
    "steamer": "steamers",
    "table": "tables",
    "apple": "apples",
    "cat": "cats",
    "dog": "dogs",
    "cup": "cups",
    "book": "books",
    "lamp": "lamps",
    "vase": "vases",
    "chair": "chairs",
    "bird": "birds",
    "box": "boxes",
    "ball": "balls",
    "candle": "candles",
    "bowl": "bowls",
    "bench": "benches",
    "plate": "plates",
    "clock": "clocks",
    "bottle": "bottles",
}
SINGULAR: Dict[str, str] = {}
for _s, _p in NOUNS.items():
    SINGULAR[_s] = _s
    SINGULAR[_p] = _s

COUNT_WORDS: Dict[str, int] = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
}
NUMBER_NAMES = {v: k for k, v in COUNT_WORDS.items()}

COLORS = ("red", "blue", "green", "yellow", "white", "black", "pink", "purple", "orange", "brown", "silver", "gray")
SHAPES = ("round", "square", "oval", "triangular", "tall", "hexagonal")
TEXTURES = ("wooden", "bamboo", "metallic", "glass", "furry", "frosty", "marble", "woven", "velvet", "ceramic")
STATES = ("lit", "open", "closed", "broken", "sleeping", "steaming", "ripe", "empty", "melting", "folded")
BACKGROUNDS = ("kitchen", "forest", "beach", "desert", "garden", "library", "meadow", "studio", "classroom", "harbor")

ATTRIBUTE_KINDS: Dict[str, Tuple[str, ...]] = {
    "color": COLORS,
    "shape": SHAPES,
    "texture": TEXTURES,
    "state": STATES,
}
ATTRIBUTE_ASPECT = {"color": "Color", "shape": "Shape", "texture": "Texture", "state": "State"}
ATTRIBUTE_OF: Dict[str, str] = {v: kind for kind, values in ATTRIBUTE_KINDS.items() for v in values}

# Predicate phrases, matched longest first. Value is the question aspect.
PREDICATES: Dict[str, str] = {
    "on top of": "Relation",
    "in front of": "Position",
    "next to": "Position",
    "left of": "Position",
    "right of": "Position",
    "behind": "Position",
    "beside": "Position",
    "inside": "Relation",
    "under": "Relation",
    "on": "Relation",
    "in": "Relation",
}
PREDICATE_TOKENS = tuple(tuple(p.split()) for p in sorted(PREDICATES, key=lambda p: -len(p.split())))
PREDICATE_WORDS = frozenset(w for p in PREDICATES for w in p.split()) - {"of"}

# Mitigation vocabulary.
EXACT_WORDS = ("exactly", "precisely")
EMPHASIS_ADVERBS = ("remarkably", "clearly", "distinctly", "visibly")
INTENSIFIERS = ("vivid", "deep", "bright", "pure", "richly", "detailed", "finely", "unmistakably")
RELATION_QUALIFIERS = ("directly", "precisely")
STRONG_EXCLUSION = ("absolutely",)
EXCLUSION_MARKERS = ("no", "without")

# Neutral phrasing used for paraphrase-level variation; none of these words carry
# meaning in the grammar, so they never change a rendered scene.
FILLERS = (
    "shown with care",
    "with gentle framing",
    "as a calm composition",
    "seen from eye level",
    "with a soft focus feel",
    "as a quiet still life",
    "drawn with a steady hand",
    "with balanced framing",
)

# Colour of each cell in the placeholder PNG.
RGB = {
    "red": (220, 40, 40), "blue": (40, 70, 220), "green": (40, 170, 60), "yellow": (240, 220, 40),
    "white": (245, 245, 245), "black": (20, 20, 20), "pink": (240, 150, 190), "purple": (130, 50, 170),
    "orange": (245, 140, 30), "brown": (130, 80, 40), "silver": (190, 190, 200), "gray": (128, 128, 128),
}
DEFAULT_RGB = (160, 160, 120)


def singular(word: str) -> Optional[str]:
    return SINGULAR.get(word)


def plural(noun: str) -> str:
    return NOUNS[noun]


def count_value(word: str) -> Optional[int]:
    if word.isdigit():
        return int(word)
    return COUNT_WORDS.get(word)


def number_word(n: int) -> str:
    return NUMBER_NAMES.get(n, str(n))
