"""Chunked document store with company-filtered similarity search."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .embeddings import Embedder, cosine_similarity
from .errors import InvalidWindow, ParseError, StoreSealed

CHUNK_SIZE = 250
CHUNK_OVERLAP = 50
TOP_M = 8


@dataclass(frozen=True)
class Chunk:
    report_id: str
    company: str
    year: int
    chunk_id: int
    page_number: int
    text: str
    embedding: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def key(self) -> tuple[str, int]:
        return (self.report_id, self.chunk_id)

    @property
    def ref(self) -> str:
        return f"{self.report_id}#{self.chunk_id}@p{self.page_number}"

    def to_record(self) -> dict[str, Any]:
        return {
            "report_id": self.report_id,
            "company": self.company,
            "year": self.year,
            "chunk_id": self.chunk_id,
            "page_number": self.page_number,
            "text": self.text,
            "embedding": None if self.embedding is None else [float(x) for x in self.embedding],
        }


def window_bounds(n_tokens: int, size: int = CHUNK_SIZE, overlap: int = CHUNK_OVERLAP) -> list[tuple[int, int]]:
    """Half-open token ranges of a sliding window with stride ``size - overlap``."""
    if size <= overlap or overlap < 0:
        raise InvalidWindow(f"need size > overlap >= 0, got size={size}, overlap={overlap}")
    stride = size - overlap
    bounds = []
    start = 0
    while start < n_tokens:
        end = min(start + size, n_tokens)
        bounds.append((start, end))
        if end == n_tokens:
            break
        start += stride
    return bounds


def chunk_document(
    spans: Sequence[Sequence[Any]],
    size: int = CHUNK_SIZE,
    overlap: int = CHUNK_OVERLAP,
    *,
    report_id: str = "",
    company: str = "",
    year: int = 0,
) -> list[Chunk]:
    """Split ``(text, page, ...)`` spans into overlapping whitespace-token windows.

    A chunk's page is the page of its first token.
    """
    tokens: list[str] = []
    pages: list[int] = []
    for span in spans:
        text, page = span[0], span[1]
        words = text.split()
        tokens.extend(words)
        pages.extend([page] * len(words))
    return [
        Chunk(
            report_id=report_id,
            company=company,
            year=year,
            chunk_id=i,
            page_number=pages[start],
            text=" ".join(tokens[start:end]),
        )
        for i, (start, end) in enumerate(window_bounds(len(tokens), size, overlap))
    ]


class DocStore:
    """Linear-scan vector store keyed by ``(report_id, chunk_id)``."""

    def __init__(self) -> None:
        self._chunks: dict[tuple[str, int], Chunk] = {}
        self._sealed = False

    def __len__(self) -> int:
        return len(self._chunks)

    def __iter__(self):
        return iter(self.chunks())

    def chunks(self) -> list[Chunk]:
        return [self._chunks[k] for k in sorted(self._chunks)]

    def companies(self) -> set[str]:
        return {c.company for c in self._chunks.values()}

    def seal(self) -> DocStore:
        self._sealed = True
        return self

    @property
    def sealed(self) -> bool:
        return self._sealed

    def add(self, chunk: Chunk) -> bool:
        if self._sealed:
            raise StoreSealed("document store is sealed")
        if chunk.embedding is None:
            raise ValueError("chunk must carry an embedding")
        if chunk.key in self._chunks:
            return False
        self._chunks[chunk.key] = chunk
        return True

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for chunk in self.chunks():
                fh.write(json.dumps(chunk.to_record(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> DocStore:
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    chunk = Chunk(
                        report_id=str(rec["report_id"]),
                        company=rec["company"],
                        year=int(rec["year"]),
                        chunk_id=int(rec["chunk_id"]),
                        page_number=int(rec["page_number"]),
                        text=rec["text"],
                        embedding=np.asarray(rec["embedding"], dtype=float),
                    )
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(f"bad chunk record: {exc}", lineno) from exc
                store.add(chunk)
        return store


def index_chunks(store: DocStore, chunks: Iterable[Chunk], embedder: Embedder) -> int:
    """Embed and store ``chunks``; re-indexing the same chunks is a no-op.

    Returns the number of distinct input chunks now held by the store.
    """
    keys = set()
    for chunk in chunks:
        keys.add(chunk.key)
        if chunk.key not in store._chunks:
            store.add(replace(chunk, embedding=embedder.embed(chunk.text)))
    return len(keys)


def retrieve_chunks(
    store: DocStore, claim_text: str, company: str, embedder: Embedder, top_m: int = TOP_M
) -> list[tuple[Chunk, float]]:
    """Top-``top_m`` chunks of ``company`` by cosine similarity to the claim."""
    query = embedder.embed(claim_text)
    scored = [
        (chunk, cosine_similarity(query, chunk.embedding))
        for chunk in store._chunks.values()
        if chunk.company == company
    ]
    scored.sort(key=lambda cs: (-cs[1], cs[0].report_id, cs[0].chunk_id))
    return scored[:top_m]
