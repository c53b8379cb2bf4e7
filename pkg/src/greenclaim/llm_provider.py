"""Model providers: an HTTP chat-completions client and a scripted mock.

All network traffic in the package goes through this module.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

import httpx

from .errors import NonJsonResponse, ProviderUnavailable, ScriptExhausted

logger = logging.getLogger(__name__)

TAGS = frozenset({"extract", "ground", "classify", "judge", "ilora"})


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: str = ""
    temperature: float = 0.0
    tag: str = "classify"

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.tag not in TAGS:
            raise ValueError(f"unknown request tag {self.tag!r}")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    provider_meta: Mapping[str, Any] = field(default_factory=dict)


class Provider(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def complete(provider: Provider, request: ChatRequest) -> ChatResponse:
    return provider.complete(request)


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def post_json(url: str, payload: Mapping[str, Any], headers: Mapping[str, str] | None = None,
              timeout: float = 30.0) -> Any:
    try:
        response = httpx.post(url, json=dict(payload), headers=dict(headers or {}), timeout=timeout)
        response.raise_for_status()
    except httpx.HTTPError as exc:
        raise ProviderUnavailable(f"request to {url} failed: {exc}") from exc
    try:
        return response.json()
    except ValueError as exc:
        raise NonJsonResponse(f"{url} returned a non-JSON body") from exc


class HttpProvider:
    """Client for an OpenAI-style ``/chat/completions`` endpoint."""

    def __init__(self, endpoint: str, model: str = "", api_key: str | None = None,
                 timeout: float = 60.0, max_concurrency: int = 4):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def complete(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        payload = {"model": self.model, "messages": messages, "temperature": request.temperature}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        with self._slots:
            body = post_json(self.endpoint, payload, headers=headers, timeout=self.timeout)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise NonJsonResponse("response lacks choices[0].message.content") from exc
        if not isinstance(text, str):
            raise NonJsonResponse("message content is not a string")
        return ChatResponse(text=text, provider_meta={"model": body.get("model", self.model), "tag": request.tag})


_HASH_RE = re.compile(r"^[0-9a-f]{64}$")


@dataclass
class ScriptEntry:
    response: str
    tag: str | None = None
    match: str | None = None

    def matches(self, request: ChatRequest) -> bool:
        if self.tag is not None and self.tag != request.tag:
            return False
        if self.match is None:
            return False
        if self.match == "*":
            return True
        if _HASH_RE.match(self.match):
            return self.match == text_hash(request.user_text)
        return self.match in request.user_text


class MockProvider:
    """Scripted provider for offline, reproducible runs.

    Each script entry has a ``response`` plus optional ``tag`` and ``match``.
    ``match`` is either the SHA-256 hex digest of the request's user text, a
    substring of it, or ``"*"`` for a catch-all. Matching entries are reusable
    and checked in script order, with hash and substring entries ahead of
    catch-alls. Entries without ``match`` form a queue that is consumed once,
    oldest first, when nothing matches.
    """

    def __init__(self, entries: Iterable[ScriptEntry | Mapping[str, Any]] = ()):
        self._keyed: list[ScriptEntry] = []
        self._fallback: list[ScriptEntry] = []
        self._queue: list[ScriptEntry] = []
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []
        for entry in entries:
            self.add(entry)

    def add(self, entry: ScriptEntry | Mapping[str, Any]) -> None:
        if not isinstance(entry, ScriptEntry):
            entry = ScriptEntry(response=entry["response"], tag=entry.get("tag"), match=entry.get("match"))
        if entry.match is None:
            self._queue.append(entry)
        elif entry.match == "*":
            self._fallback.append(entry)
        else:
            self._keyed.append(entry)

    @classmethod
    def from_file(cls, path: str | Path) -> MockProvider:
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entries.append(json.loads(line))
        return cls(entries)

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
            for entry in self._keyed:
                if entry.matches(request):
                    return ChatResponse(entry.response, {"source": "match"})
            for i, entry in enumerate(self._queue):
                if entry.tag is None or entry.tag == request.tag:
                    del self._queue[i]
                    return ChatResponse(entry.response, {"source": "queue"})
            for entry in self._fallback:
                if entry.matches(request):
                    return ChatResponse(entry.response, {"source": "fallback"})
        raise ScriptExhausted(f"no scripted response for tag {request.tag!r}")

    def calls_for(self, tag: str) -> list[ChatRequest]:
        return [c for c in self.calls if c.tag == tag]


class UnavailableProvider:
    """Provider that always fails; stands in when nothing is configured."""

    def complete(self, request: ChatRequest) -> ChatResponse:
        raise ProviderUnavailable("no model provider configured")


def make_provider(config: Mapping[str, Any], base_dir: Path | None = None) -> Provider:
    kind = config.get("kind", "mock")
    if kind == "http":
        if not config.get("endpoint"):
            raise ProviderUnavailable("http provider requires an endpoint")
        return HttpProvider(
            endpoint=config["endpoint"],
            model=config.get("model", ""),
            api_key=config.get("api_key"),
            timeout=float(config.get("timeout", 60.0)),
            max_concurrency=int(config.get("max_concurrency", 4)),
        )
    if kind == "mock":
        script = config.get("script")
        if script is None:
            return MockProvider()
        path = Path(script)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return MockProvider.from_file(path)
    if kind == "none":
        return UnavailableProvider()
    raise ValueError(f"unknown provider kind {kind!r}")


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)


def extract_json(text: str) -> Any:
    """Parse the first JSON value found in a model response.

    Accepts bare JSON, fenced code blocks, or JSON embedded in prose.
    Raises ``ValueError`` when none is found.
    """
    candidates = [text.strip()]
    candidates += [m.strip() for m in _FENCE_RE.findall(text)]
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except ValueError:
            pass
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "[{":
            try:
                value, _ = decoder.raw_decode(text, i)
                return value
            except ValueError:
                continue
    raise ValueError("no JSON value in response")
