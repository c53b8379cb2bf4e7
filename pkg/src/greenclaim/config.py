"""Run configuration: flags > environment > config file > defaults."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .docstore import TOP_M
from .embeddings import EmbedderConfig
from .grounding import MERGE_THRESHOLD
from .retrieval import MAX_HOPS, SIMILARITY_THRESHOLD, TOP_N, RetrievalParams

ENV_PROVIDER_ENDPOINT = "GREENCLAIM_PROVIDER_ENDPOINT"
ENV_PROVIDER_MODEL = "GREENCLAIM_PROVIDER_MODEL"
ENV_API_KEY = "GREENCLAIM_API_KEY"
ENV_EMBEDDER_ENDPOINT = "GREENCLAIM_EMBEDDER_ENDPOINT"

_PATH_KEYS = ("schema", "graph", "docstore", "sidecar", "examples", "definitions")


@dataclass
class RunConfig:
    schema: Path | None = None
    graph: Path | None = None
    docstore: Path | None = None
    sidecar: Path | None = None
    examples: Path | None = None
    definitions: Path | None = None
    provider: dict[str, Any] = field(default_factory=lambda: {"kind": "mock"})
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    top_n: int = TOP_N
    threshold: float = SIMILARITY_THRESHOLD
    k: int = MAX_HOPS
    top_m: int = TOP_M
    merge_threshold: float = MERGE_THRESHOLD
    prompt_mode: str = "zero-shot"
    width: int = 1
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def retrieval(self) -> RetrievalParams:
        return RetrievalParams(self.top_n, self.threshold, self.k)

    def require(self, *names: str) -> None:
        """Raise FileNotFoundError unless the named paths are set and exist."""
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise FileNotFoundError(f"no {name} path configured")
            if not Path(path).exists():
                raise FileNotFoundError(f"{name} file not found: {path}")


def _resolve(value: Any, base: Path) -> Path | None:
    if value in (None, ""):
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None,
                overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig.

    Relative paths in the config file resolve against the file's directory;
    relative paths given as overrides resolve against the working directory.
    ``None`` override values are ignored.
    """
    env = os.environ if env is None else env
    config = RunConfig()
    if path is not None:
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        config = _apply(config, data, path.parent.resolve())
        config.base_dir = path.parent.resolve()

    provider = dict(config.provider)
    if env.get(ENV_PROVIDER_ENDPOINT):
        provider.update(kind="http", endpoint=env[ENV_PROVIDER_ENDPOINT])
    if env.get(ENV_PROVIDER_MODEL):
        provider["model"] = env[ENV_PROVIDER_MODEL]
    if env.get(ENV_API_KEY):
        provider["api_key"] = env[ENV_API_KEY]
    config.provider = provider
    if env.get(ENV_EMBEDDER_ENDPOINT):
        config.embedder = replace(config.embedder, kind="remote", endpoint=env[ENV_EMBEDDER_ENDPOINT],
                                  api_key=config.embedder.api_key or env.get(ENV_API_KEY))

    if overrides:
        config = _apply(config, {k: v for k, v in overrides.items() if v is not None}, Path.cwd())
    config.retrieval  # validates
    return config


def _apply(config: RunConfig, data: Mapping[str, Any], base: Path) -> RunConfig:
    updates: dict[str, Any] = {}
    for key, value in data.items():
        if key in _PATH_KEYS:
            updates[key] = _resolve(value, base)
        elif key == "provider":
            provider = dict(value)
            if "script" in provider and provider["script"]:
                provider["script"] = str(_resolve(provider["script"], base))
            updates[key] = provider
        elif key == "embedder":
            updates[key] = EmbedderConfig(**value) if isinstance(value, Mapping) else value
        elif key in ("top_n", "k", "top_m", "width"):
            updates[key] = int(value)
        elif key in ("threshold", "merge_threshold"):
            updates[key] = float(value)
        elif key == "prompt_mode":
            updates[key] = str(value)
        else:
            raise ValueError(f"unknown configuration key {key!r}")
    return replace(config, **updates)
