"""Chat-completion and embedding providers with record/replay cassettes.

Every model-dependent pipeline stage goes through a ChatProvider. In replay
mode a recorded cassette answers each request by fingerprint, so whole
pipeline runs are deterministic and network-free. Cassette files are
line-delimited JSON: {"fingerprint", "request_tag", "reply"}.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import (
    AuthMissingError,
    CassetteMissError,
    DimensionMismatchError,
    EmptyReplyError,
    ProviderError,
)

API_KEY_ENV = "FORGE_API_KEY"
API_BASE_ENV = "FORGE_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com/v1"

MAX_ATTEMPTS = 3
BACKOFF_BASE_S = 0.5

# Temperature policy: classification-like calls (matching, routing) run cold
# for determinism; generative calls (task/sim/test authoring) run warm.
TEMP_CLASSIFY = 0.0
TEMP_GENERATE = 0.7


def _hash_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class MessagePart:
    """One part of a chat message: text or an image reference.

    Image parts are identified by content hash, never by path, so replay is
    insensitive to where the file lives.
    """

    kind: str  # "text" | "image"
    text: str | None = None
    image_path: str | None = None
    image_sha256: str | None = None

    @classmethod
    def from_text(cls, text: str) -> "MessagePart":
        return cls(kind="text", text=text)

    @classmethod
    def from_image(cls, path: str | Path) -> "MessagePart":
        return cls(kind="image", image_path=str(path), image_sha256=_hash_file(path))

    def fingerprint_key(self):
        if self.kind == "text":
            return ["text", self.text]
        return ["image", self.image_sha256]


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[MessagePart, ...]

    @classmethod
    def user(cls, *parts: MessagePart) -> "ChatMessage":
        return cls(role="user", parts=tuple(parts))

    @classmethod
    def user_text(cls, text: str) -> "ChatMessage":
        return cls.user(MessagePart.from_text(text))


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = TEMP_CLASSIFY
    max_tokens: int = 2048
    request_tag: str = "untagged"

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")


def fingerprint(req: ChatRequest) -> str:
    """Stable request identity: model, message contents, temperature, tag."""
    payload = {
        "model": req.model,
        "temperature": req.temperature,
        "request_tag": req.request_tag,
        "messages": [
            {"role": m.role, "parts": [p.fingerprint_key() for p in m.parts]}
            for m in req.messages
        ],
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ChatProvider(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


class TransientProviderError(ProviderError):
    """Retryable transport failure (connection error, 429, 5xx)."""


def _with_retries(fn, request_tag: str, sleep=time.sleep) -> str:
    last: Exception | None = None
    for attempt in range(MAX_ATTEMPTS):
        try:
            return fn()
        except TransientProviderError as exc:
            last = exc
            if attempt + 1 < MAX_ATTEMPTS:
                sleep(BACKOFF_BASE_S * (2**attempt))
    raise ProviderError(str(last), attempts=MAX_ATTEMPTS, request_tag=request_tag)


class LiveChatProvider:
    """OpenAI-compatible chat completion client.

    Reads the key from FORGE_API_KEY and the endpoint from FORGE_API_BASE.
    Retries transient failures with exponential backoff.
    """

    def __init__(self, api_key: str | None = None, api_base: str | None = None, timeout: float = 120.0):
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        self.api_base = (api_base or os.environ.get(API_BASE_ENV) or DEFAULT_API_BASE).rstrip("/")
        self.timeout = timeout
        if not self.api_key:
            raise AuthMissingError(f"set {API_KEY_ENV} to use the live provider")

    def _encode_part(self, part: MessagePart) -> dict:
        if part.kind == "text":
            return {"type": "text", "text": part.text}
        import base64

        data = base64.b64encode(Path(part.image_path).read_bytes()).decode("ascii")
        return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}

    def complete(self, req: ChatRequest) -> str:
        import requests

        body = {
            "model": req.model,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "messages": [
                {"role": m.role, "content": [self._encode_part(p) for p in m.parts]}
                for m in req.messages
            ],
        }

        def attempt() -> str:
            try:
                resp = requests.post(
                    f"{self.api_base}/chat/completions",
                    json=body,
                    headers={"Authorization": f"Bearer {self.api_key}"},
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                raise TransientProviderError(str(exc), request_tag=req.request_tag) from exc
            if resp.status_code == 429 or resp.status_code >= 500:
                raise TransientProviderError(
                    f"HTTP {resp.status_code}: {resp.text[:200]}", request_tag=req.request_tag
                )
            if resp.status_code != 200:
                raise ProviderError(
                    f"HTTP {resp.status_code}: {resp.text[:200]}", request_tag=req.request_tag
                )
            reply = resp.json()["choices"][0]["message"]["content"]
            if not reply or not reply.strip():
                raise EmptyReplyError("provider returned an empty reply", request_tag=req.request_tag)
            return reply

        return _with_retries(attempt, req.request_tag)


class ScriptedChatProvider:
    """Deterministic in-memory provider for offline runs and fixtures.

    Replies are queued per request_tag; a queue that runs out keeps
    returning its last entry. Useful both directly and as the inner
    provider when recording a cassette.
    """

    def __init__(self, replies_by_tag: dict[str, list[str]] | None = None, default: str | None = None):
        self._queues = {tag: list(replies) for tag, replies in (replies_by_tag or {}).items()}
        self._cursor: dict[str, int] = {}
        self._default = default
        self.calls: list[ChatRequest] = []

    def complete(self, req: ChatRequest) -> str:
        self.calls.append(req)
        queue = self._queues.get(req.request_tag)
        if queue is None:
            if self._default is not None:
                return self._default
            raise ProviderError(
                f"no scripted reply for tag {req.request_tag!r}", request_tag=req.request_tag
            )
        i = self._cursor.get(req.request_tag, 0)
        reply = queue[min(i, len(queue) - 1)]
        self._cursor[req.request_tag] = i + 1
        if not reply.strip():
            raise EmptyReplyError("provider returned an empty reply", request_tag=req.request_tag)
        return reply


def load_cassette(path: Path | str) -> dict[str, str]:
    """Read a cassette file into a fingerprint -> reply map."""
    entries: dict[str, str] = {}
    p = Path(path)
    if not p.exists():
        return entries
    for line in p.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        entries[record["fingerprint"]] = record["reply"]
    return entries


class CassetteRecorder:
    """Wraps a provider and appends every exchange to a cassette file."""

    def __init__(self, inner: ChatProvider, path: Path | str):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def complete(self, req: ChatRequest) -> str:
        reply = self.inner.complete(req)
        record = {"fingerprint": fingerprint(req), "request_tag": req.request_tag, "reply": reply}
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return reply


class CassetteReplayer:
    """Answers requests from a recorded cassette; never touches the network."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.entries = load_cassette(self.path)

    def complete(self, req: ChatRequest) -> str:
        fp = fingerprint(req)
        if fp not in self.entries:
            raise CassetteMissError(
                f"cassette {self.path} has no reply for fingerprint {fp[:12]}...",
                request_tag=req.request_tag,
            )
        reply = self.entries[fp]
        if not reply.strip():
            raise EmptyReplyError("recorded reply is empty", request_tag=req.request_tag)
        return reply


def open_provider(
    mode: str,
    cassette: Path | str | None = None,
    inner: ChatProvider | None = None,
) -> ChatProvider:
    """Build the provider for --llm live|record|replay."""
    if mode == "live":
        return inner or LiveChatProvider()
    if mode == "record":
        if cassette is None:
            raise ValueError("record mode needs a cassette path")
        return CassetteRecorder(inner or LiveChatProvider(), cassette)
    if mode == "replay":
        if cassette is None:
            raise ValueError("replay mode needs a cassette path")
        return CassetteReplayer(cassette)
    raise ValueError(f"unknown llm mode {mode!r}")


def normalize_embedding(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0 or not np.isfinite(norm):
        raise DimensionMismatchError("cannot normalize a zero or non-finite vector")
    return v / norm


class EmbeddingSource(Protocol):
    def embed(self, inputs: Sequence[str]) -> list[np.ndarray]: ...


@dataclass
class PrecomputedEmbeddings:
    """Embeddings loaded from a JSON file mapping key -> vector.

    Keys are caller-chosen strings (crop ids, render paths). Vectors are
    renormalized on load; mixed dimensions are rejected.
    """

    table: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path | str) -> "PrecomputedEmbeddings":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        table: dict[str, np.ndarray] = {}
        dim: int | None = None
        for key, vec in raw.items():
            v = normalize_embedding(vec)
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise DimensionMismatchError(
                    f"embedding for {key!r} has dimension {v.shape[0]}, expected {dim}"
                )
            table[key] = v
        return cls(table=table)

    def embed(self, inputs: Sequence[str]) -> list[np.ndarray]:
        out = []
        for key in inputs:
            if key not in self.table:
                raise ProviderError(f"no precomputed embedding for key {key!r}")
            out.append(self.table[key])
        return out
