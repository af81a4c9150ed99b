from .chat import (
    CallRecorder,
    ChatClient,
    ChatTransport,
    RoutedChat,
    ScriptedChat,
    parse_json_object,
    strip_code_fences,
)
from .http import HttpChatTransport, HttpEmbedder, HttpImageBackend, build_chat_body
from .mock import HashEmbedder, HashImageBackend, placeholder_png, tokens
from .store import ArtifactStore, sha256_hex, text_hash
from .types import (
    AuthError,
    BackendConfig,
    BackendError,
    ChatRequest,
    ChatResponse,
    ContentRejected,
    DimMismatch,
    EmbeddingVector,
    ImageRef,
    MalformedReply,
    Provenance,
    ResponseHint,
    RetryPolicy,
    TransportError,
)

__all__ = [name for name in dir() if not name.startswith("_")]
