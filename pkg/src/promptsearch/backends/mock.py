"""Deterministic in-process stand-ins for the T2I and embedding services."""
from __future__ import annotations

import hashlib
import io
import math
import re
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .store import ArtifactStore, text_hash
from .types import EmbeddingVector, ImageRef, Provenance

_TOKEN = re.compile(r"[a-z0-9]+")


def tokens(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


def placeholder_png(cells: Sequence[Tuple[int, int, int]], cell_px: int = 8, columns: int = 8) -> bytes:
    """Encode a list of RGB cells as a small PNG grid."""
    cells = list(cells) or [(0, 0, 0)]
    rows = math.ceil(len(cells) / columns)
    img = Image.new("RGB", (columns * cell_px, rows * cell_px), (255, 255, 255))
    for i, rgb in enumerate(cells):
        r, c = divmod(i, columns)
        img.paste(rgb, (c * cell_px, r * cell_px, (c + 1) * cell_px, (r + 1) * cell_px))
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


class HashImageBackend:
    """Mock T2I: the picture is a colour grid derived from sha256(prompt, seed)."""

    backend_id = "mock-t2i"

    def __init__(self, store: ArtifactStore):
        self.store = store

    def generate(self, prompt: str, seed: int) -> ImageRef:
        if not prompt or not prompt.strip():
            raise ValueError("prompt must be non-empty")
        digest = hashlib.sha256(f"{seed}\x00{prompt}".encode("utf-8")).digest()
        cells = [tuple(digest[i:i + 3]) for i in range(0, 30, 3)]
        data = placeholder_png(cells)
        return self.store.put_image(data, "image/png", Provenance.HTTP, prompt_id=text_hash(prompt)[:16])


def token_direction(token: str, dim: int) -> np.ndarray:
    """Fixed pseudo-random direction for a token: shake_256 bytes mapped to [-1, 1]."""
    raw = hashlib.shake_256(token.encode("utf-8")).digest(4 * dim)
    ints = np.frombuffer(raw, dtype="<u4").astype(np.float64)
    return ints / 2147483647.5 - 1.0


class HashEmbedder:
    """Bag-of-tokens hash projection.

    Each lowercase alphanumeric token contributes ``token_direction(token)`` once per
    occurrence; the sum is L2-normalised. Identical texts give identical vectors.
    """

    backend_id = "mock-embed"

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed_one(self, text: str) -> EmbeddingVector:
        toks = tokens(text) or [text]
        vec = np.zeros(self.dim)
        for tok in toks:
            vec += token_direction(tok, self.dim)
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return EmbeddingVector(tuple(float(v) for v in vec), text_hash(text))

    def embed(self, texts: List[str]) -> List[EmbeddingVector]:
        if not texts or any(not t for t in texts):
            raise ValueError("embed needs a non-empty list of non-empty texts")
        return [self.embed_one(t) for t in texts]
