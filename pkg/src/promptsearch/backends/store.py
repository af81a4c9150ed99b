"""Content-addressed storage for generated images and synthetic scenes."""
from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path
from typing import Any, Dict, Optional

from .types import ImageRef, Provenance


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def text_hash(text: str) -> str:
    return sha256_hex(text.encode("utf-8"))


class ArtifactStore:
    """Images live under ``root/images/<hash>.<ext>`` and scenes under
    ``root/scenes/<id>.json``. With ``root=None`` everything stays in memory."""

    _EXT = {"image/png": "png", "image/jpeg": "jpg", "image/webp": "webp"}

    def __init__(self, root: Optional[Path | str] = None):
        self.root = Path(root) if root is not None else None
        self._images: Dict[str, bytes] = {}
        self._scenes: Dict[str, str] = {}
        self._lock = threading.Lock()
        if self.root is not None:
            (self.root / "images").mkdir(parents=True, exist_ok=True)
            (self.root / "scenes").mkdir(parents=True, exist_ok=True)

    def _image_path(self, content_hash: str, media_type: str) -> Path:
        assert self.root is not None
        return self.root / "images" / f"{content_hash}.{self._EXT.get(media_type, 'bin')}"

    def put_image(
        self,
        data: bytes,
        media_type: str,
        provenance: Provenance,
        prompt_id: str,
        scene_id: Optional[str] = None,
    ) -> ImageRef:
        if not data:
            raise ValueError("refusing to store empty image bytes")
        digest = sha256_hex(data)
        with self._lock:
            if self.root is None:
                self._images[digest] = data
            else:
                path = self._image_path(digest, media_type)
                if not path.exists():
                    tmp = path.with_suffix(path.suffix + ".tmp")
                    tmp.write_bytes(data)
                    tmp.replace(path)
        return ImageRef(
            content_hash=digest,
            media_type=media_type,
            byte_length=len(data),
            provenance=provenance,
            prompt_id=prompt_id,
            scene_id=scene_id,
        )

    def contains(self, ref: ImageRef) -> bool:
        if self.root is None:
            return ref.content_hash in self._images
        return self._image_path(ref.content_hash, ref.media_type).exists()

    def read(self, ref: ImageRef) -> bytes:
        if self.root is None:
            try:
                data = self._images[ref.content_hash]
            except KeyError:
                raise FileNotFoundError(ref.content_hash) from None
        else:
            data = self._image_path(ref.content_hash, ref.media_type).read_bytes()
        if sha256_hex(data) != ref.content_hash:
            raise ValueError(f"stored bytes for {ref.content_hash[:12]} fail hash check")
        return data

    def put_scene(self, scene: Dict[str, Any]) -> str:
        blob = json.dumps(scene, sort_keys=True, separators=(",", ":"))
        scene_id = text_hash(blob)[:32]
        with self._lock:
            if self.root is None:
                self._scenes[scene_id] = blob
            else:
                path = self.root / "scenes" / f"{scene_id}.json"
                if not path.exists():
                    path.write_text(blob, encoding="utf-8")
        return scene_id

    def get_scene(self, scene_id: str) -> Dict[str, Any]:
        if self.root is None:
            blob = self._scenes[scene_id]
        else:
            blob = (self.root / "scenes" / f"{scene_id}.json").read_text(encoding="utf-8")
        return json.loads(blob)
