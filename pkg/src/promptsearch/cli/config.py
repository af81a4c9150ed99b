"""Settings file, environment overrides and backend construction.

The settings file is YAML::

    backend: mock            # or http
    pipeline:                # RunConfig fields
      n_candidates: 20
      k_clusters: 5
    chat:  {base_url: ..., model_name: ..., api_key_env: OPENAI_API_KEY}
    t2i:   {base_url: ..., model_name: ..., image_mode: openai}
    embed: {base_url: ..., model_name: ...}

``PROMPTSEARCH_<SECTION>_<KEY>`` environment variables override file values (for
example ``PROMPTSEARCH_PIPELINE_N_CANDIDATES=10``; ``PROMPTSEARCH_BACKEND=http``
sets the top-level key). Command-line flags override both.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from ..backends import (
    ArtifactStore,
    BackendConfig,
    CallRecorder,
    ChatClient,
    HashEmbedder,
    HttpChatTransport,
    HttpEmbedder,
    HttpImageBackend,
)
from ..optimizer import Backends, RunConfig
from ..synthetic import SyntheticAgents, SyntheticT2I

ENV_PREFIX = "PROMPTSEARCH_"
SECTIONS = ("pipeline", "chat", "t2i", "embed")
BACKENDS = ("mock", "http")


class ConfigError(ValueError):
    pass


@dataclass
class Settings:
    backend: str = "mock"
    pipeline: Dict[str, Any] = field(default_factory=dict)
    chat: Dict[str, Any] = field(default_factory=dict)
    t2i: Dict[str, Any] = field(default_factory=dict)
    embed: Dict[str, Any] = field(default_factory=dict)

    def run_config(self, **overrides) -> RunConfig:
        values = dict(self.pipeline)
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return RunConfig.from_dict(values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"pipeline settings: {exc}") from None

    def backend_config(self, section: str) -> BackendConfig:
        try:
            return BackendConfig(**getattr(self, section))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section} settings: {exc}") from None

    def snapshot(self) -> Dict[str, Any]:
        """Persistable view: backend configs hold env var names, never key values."""
        out: Dict[str, Any] = {"backend": self.backend, "pipeline": dict(self.pipeline)}
        if self.backend == "http":
            for s in ("chat", "t2i", "embed"):
                out[s] = self.backend_config(s).to_dict()
        return out


def _env_value(raw: str) -> Any:
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def load_settings(path: Optional[str] = None, environ: Optional[Mapping[str, str]] = None) -> Settings:
    data: Dict[str, Any] = {}
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
    unknown = set(data) - set(SECTIONS) - {"backend"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    settings = Settings(backend=str(data.get("backend", "mock")),
                        **{s: dict(data.get(s) or {}) for s in SECTIONS})
    env = os.environ if environ is None else environ
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        if rest == "backend":
            settings.backend = env[name]
            continue
        section, _, key = rest.partition("_")
        if section in SECTIONS and key:
            getattr(settings, section)[key] = _env_value(env[name])
    if settings.backend not in BACKENDS:
        raise ConfigError(f"backend must be one of {BACKENDS}, got {settings.backend!r}")
    return settings


def build_backends(settings: Settings, store: ArtifactStore, recorder: Optional[CallRecorder] = None,
                   task=None, embed_dim: int = 64) -> Backends:
    """Mock backends answer from the synthetic environment; ``task`` pins its render rules."""
    if settings.backend == "mock":
        chat = ChatClient(SyntheticAgents(store), store=store, recorder=recorder)
        return Backends(chat, SyntheticT2I(store, task), HashEmbedder(embed_dim))
    chat_cfg = settings.backend_config("chat")
    chat = ChatClient(HttpChatTransport(chat_cfg, store), chat_cfg, store=store, recorder=recorder)
    return Backends(chat, HttpImageBackend(settings.backend_config("t2i"), store),
                    HttpEmbedder(settings.backend_config("embed")))
