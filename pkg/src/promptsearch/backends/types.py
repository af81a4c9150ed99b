from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union


class BackendError(Exception):
    """Base class for failures raised by model backends."""


class TransportError(BackendError):
    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class AuthError(BackendError):
    pass


class MalformedReply(BackendError):
    pass


class ContentRejected(BackendError):
    pass


class DimMismatch(BackendError):
    pass


class ResponseHint(str, Enum):
    FREE_TEXT = "FreeText"
    STRICT_JSON = "StrictJson"


class Provenance(str, Enum):
    HTTP = "Http"
    SYNTHETIC = "Synthetic"


@dataclass(frozen=True)
class ImageRef:
    content_hash: str
    media_type: str
    byte_length: int
    provenance: Provenance
    prompt_id: str
    scene_id: Optional[str] = None

    def __post_init__(self):
        if self.byte_length <= 0:
            raise ValueError("ImageRef.byte_length must be positive")
        if self.provenance is Provenance.SYNTHETIC and not self.scene_id:
            raise ValueError("synthetic ImageRef requires a scene_id")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "content_hash": self.content_hash,
            "media_type": self.media_type,
            "byte_length": self.byte_length,
            "provenance": self.provenance.value,
            "prompt_id": self.prompt_id,
            "scene_id": self.scene_id,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ImageRef":
        return cls(
            content_hash=data["content_hash"],
            media_type=data["media_type"],
            byte_length=int(data["byte_length"]),
            provenance=Provenance(data["provenance"]),
            prompt_id=data["prompt_id"],
            scene_id=data.get("scene_id"),
        )


UserPart = Union[str, ImageRef]


@dataclass
class ChatRequest:
    """One agent invocation.

    ``agent`` names the role (decompose, vqa, rate, ...) and ``context`` carries the
    structured inputs the template was expanded from. HTTP backends only send the
    rendered text; in-process agents may read ``context`` directly.
    """

    system_text: str
    user_parts: List[UserPart]
    temperature: float = 0.0
    max_tokens: int = 1024
    response_hint: ResponseHint = ResponseHint.FREE_TEXT
    agent: str = ""
    context: Dict[str, Any] = field(default_factory=dict)

    def validate(self, store=None) -> None:
        if not self.user_parts:
            raise ValueError("ChatRequest needs at least one user part")
        if not math.isfinite(self.temperature) or not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if store is not None:
            for part in self.user_parts:
                if isinstance(part, ImageRef) and not store.contains(part):
                    raise ValueError(f"image {part.content_hash[:12]} is not in the artifact store")

    def texts(self) -> List[str]:
        return [p for p in self.user_parts if isinstance(p, str)]

    def images(self) -> List[ImageRef]:
        return [p for p in self.user_parts if isinstance(p, ImageRef)]


@dataclass
class ChatResponse:
    text: str
    usage: Tuple[int, int] = (0, 0)
    backend_id: str = ""
    attempts: int = 1
    parsed: Optional[Dict[str, Any]] = None


@dataclass(frozen=True)
class EmbeddingVector:
    values: Tuple[float, ...]
    source_text_hash: str

    def __post_init__(self):
        if not self.values:
            raise ValueError("empty embedding")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding has non-finite components")

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    initial_backoff_ms: int = 500
    multiplier: float = 2.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")
        if self.initial_backoff_ms < 0:
            raise ValueError("initial_backoff_ms must be >= 0")

    def delays(self) -> List[float]:
        """Sleep durations (seconds) between consecutive attempts."""
        return [
            self.initial_backoff_ms / 1000.0 * self.multiplier**i
            for i in range(self.max_attempts - 1)
        ]


@dataclass
class BackendConfig:
    base_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    model_name: str = ""
    max_concurrency: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout_ms: int = 60_000
    # T2I only: "openai" posts to {base_url}/images/generations; "template" posts
    # request_template to base_url with the prompt written into prompt_field.
    image_mode: str = "openai"
    request_template: Optional[Dict[str, Any]] = None
    prompt_field: str = "prompt"
    b64_path: str = "data.0.b64_json"
    image_size: str = "1024x1024"

    def __post_init__(self):
        if isinstance(self.retry, dict):
            self.retry = RetryPolicy(**self.retry)
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.image_mode not in ("openai", "template"):
            raise ValueError(f"unknown image_mode {self.image_mode!r}")

    def to_dict(self) -> Dict[str, Any]:
        """Serializable snapshot. Holds the env var *name* only, never its value."""
        return {
            "base_url": self.base_url,
            "api_key_env": self.api_key_env,
            "model_name": self.model_name,
            "max_concurrency": self.max_concurrency,
            "retry": {
                "max_attempts": self.retry.max_attempts,
                "initial_backoff_ms": self.retry.initial_backoff_ms,
                "multiplier": self.retry.multiplier,
            },
            "timeout_ms": self.timeout_ms,
            "image_mode": self.image_mode,
            "request_template": self.request_template,
            "prompt_field": self.prompt_field,
            "b64_path": self.b64_path,
            "image_size": self.image_size,
        }
