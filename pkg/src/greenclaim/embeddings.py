"""Text embedders and cosine similarity."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, ProviderError, RemoteEmbedderUnavailable

DEFAULT_DIMENSION = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_TOKEN_RE = re.compile(r"[^\W_]+")


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


def normalize(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector)
    if norm == 0:
        return np.zeros_like(vector, dtype=float)
    return vector / norm


def _frozen(vector: np.ndarray) -> np.ndarray:
    vector.flags.writeable = False
    return vector


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "deterministic"
    dimension: int = DEFAULT_DIMENSION
    endpoint: str | None = None
    model: str | None = None
    api_key: str | None = None
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        if self.kind not in ("deterministic", "remote"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")


class HashingEmbedder:
    """Bag-of-tokens feature hashing with 64-bit FNV-1a buckets.

    Fully deterministic across processes and platforms. Returned vectors are
    read-only and unit length, or all-zero for text without tokens.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._cached = lru_cache(maxsize=65536)(self._embed)

    def _embed(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dimension)
        for token in tokenize(text):
            counts[fnv1a_64(token.encode("utf-8")) % self.dimension] += 1.0
        return _frozen(normalize(counts))

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)

    def __repr__(self) -> str:
        return f"HashingEmbedder(dimension={self.dimension})"


class RemoteEmbedder:
    """Embedder backed by an HTTP service.

    Request body ``{"texts": [...]}``, response ``{"vectors": [[...], ...]}``.
    """

    def __init__(self, endpoint: str, dimension: int, api_key: str | None = None, model: str | None = None,
                 timeout: float = 30.0):
        self.endpoint = endpoint
        self.dimension = dimension
        self.api_key = api_key
        self.model = model
        self.timeout = timeout

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        from .llm_provider import post_json

        payload: dict = {"texts": list(texts)}
        if self.model:
            payload["model"] = self.model
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            body = post_json(self.endpoint, payload, headers=headers, timeout=self.timeout)
            vectors = body["vectors"]
        except (ProviderError, KeyError, TypeError) as exc:
            raise RemoteEmbedderUnavailable(f"embedding request failed: {exc}") from exc
        if len(vectors) != len(texts):
            raise RemoteEmbedderUnavailable("embedding service returned the wrong number of vectors")
        out = []
        for values in vectors:
            vector = np.asarray(values, dtype=float)
            if vector.shape != (self.dimension,):
                raise DimensionMismatch(f"expected {self.dimension} values, got {vector.shape}")
            out.append(_frozen(normalize(vector)))
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def make_embedder(config: EmbedderConfig) -> Embedder:
    if config.kind == "deterministic":
        return HashingEmbedder(config.dimension)
    if not config.endpoint:
        raise RemoteEmbedderUnavailable("remote embedder requires an endpoint")
    return RemoteEmbedder(config.endpoint, config.dimension, config.api_key, config.model, config.timeout)


def embed_text(config: EmbedderConfig | Embedder, text: str) -> np.ndarray:
    embedder = make_embedder(config) if isinstance(config, EmbedderConfig) else config
    return embedder.embed(text)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0 if either is all-zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
