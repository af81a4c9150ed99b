"""Agent instruction templates.

Each ``<name>.txt`` holds a ``### system`` section and a ``### user`` section.
``{{placeholder}}`` fields are substituted verbatim at render time. Point the
``PROMPTSEARCH_TEMPLATE_DIR`` environment variable at a directory of same-named
files to override any of them.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Tuple

_PLACEHOLDER = re.compile(r"\{\{\s*([a-zA-Z_][a-zA-Z0-9_]*)\s*\}\}")
_HERE = Path(__file__).parent

AGENTS = (
    "decompose",
    "questions",
    "vqa",
    "caption",
    "compare",
    "integrate",
    "map",
    "refine",
    "merge",
    "score_vqa",
    "rate",
    "summarize",
)


@dataclass(frozen=True)
class Template:
    name: str
    system: str
    user: str

    @property
    def placeholders(self) -> set:
        return set(_PLACEHOLDER.findall(self.system)) | set(_PLACEHOLDER.findall(self.user))

    def render(self, **values) -> Tuple[str, str]:
        missing = self.placeholders - set(values)
        if missing:
            raise KeyError(f"template {self.name!r} missing values for {sorted(missing)}")

        def sub(m):
            return str(values[m.group(1)])

        return _PLACEHOLDER.sub(sub, self.system).strip(), _PLACEHOLDER.sub(sub, self.user).strip()


def parse_template(name: str, text: str) -> Template:
    parts: Dict[str, list] = {"system": [], "user": []}
    current = None
    for line in text.splitlines():
        header = line.strip().lower()
        if header in ("### system", "### user"):
            current = header[4:]
            continue
        if current is None:
            if line.strip():
                raise ValueError(f"template {name!r}: text before the first section header")
            continue
        parts[current].append(line)
    if not "".join(parts["user"]).strip():
        raise ValueError(f"template {name!r} has an empty user section")
    return Template(name, "\n".join(parts["system"]).strip(), "\n".join(parts["user"]).strip())


@lru_cache(maxsize=None)
def _load(name: str, override_dir: str) -> Template:
    path = Path(override_dir) / f"{name}.txt" if override_dir else None
    if path is None or not path.exists():
        path = _HERE / f"{name}.txt"
    return parse_template(name, path.read_text(encoding="utf-8"))


def load_template(name: str) -> Template:
    return _load(name, os.environ.get("PROMPTSEARCH_TEMPLATE_DIR", ""))


def render(name: str, **values) -> Tuple[str, str]:
    return load_template(name).render(**values)
