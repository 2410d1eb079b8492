"""Deterministic offline stand-ins for the three provider roles.

These are pure functions of their inputs and replay state, which makes
construction and retrieval runs exactly reproducible: replaying the same
script over the same stream yields a bit-identical hypergraph.
"""

from __future__ import annotations

import hashlib
import json
import threading

import numpy as np

from ..errors import ScriptExhaustedError
from ..text import tokenize
from .base import ChatRequest, ChatTransport, EmbeddingProvider, RawCompletion, RerankProvider


def _usage(prompt: str, text: str) -> tuple[int, int]:
    return len(prompt.split()), len(text.split())


class ScriptedChatTransport(ChatTransport):
    """Replays canned responses from per-template queues.

    Script values may be dicts (serialized to JSON) or raw strings. Running a
    queue dry raises ScriptExhaustedError so a misaligned test fails loudly
    instead of improvising. Template ids in echo_templates bypass the queues
    and return the rendered prompt itself, which is useful when a judge needs
    to see the full context an answer was generated from.
    """

    def __init__(self, script: dict[str, list] | None = None,
                 echo_templates: set[str] | None = None):
        self._script = {tid: list(entries) for tid, entries in (script or {}).items()}
        self._queues = {tid: list(entries) for tid, entries in self._script.items()}
        self._echo = set(echo_templates or ())
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str]] = []  # (template_id, rendered prompt)

    def complete(self, prompt: str, request: ChatRequest) -> RawCompletion:
        with self._lock:
            self.calls.append((request.template_id, prompt))
            if request.template_id in self._echo:
                text = prompt
            else:
                queue = self._queues.get(request.template_id)
                if not queue:
                    raise ScriptExhaustedError(
                        f"no scripted response left for template {request.template_id!r}")
                entry = queue.pop(0)
                text = json.dumps(entry) if isinstance(entry, dict) else str(entry)
        pt, ct = _usage(prompt, text)
        return RawCompletion(text=text, prompt_tokens=pt, completion_tokens=ct)

    def reset(self) -> None:
        with self._lock:
            self._queues = {tid: list(entries) for tid, entries in self._script.items()}
            self.calls = []

    def remaining(self) -> dict[str, int]:
        return {tid: len(q) for tid, q in self._queues.items()}


class EchoChatTransport(ChatTransport):
    """Returns the rendered prompt verbatim. Handy for context-sensitive judging."""

    def complete(self, prompt: str, request: ChatRequest) -> RawCompletion:
        pt, ct = _usage(prompt, prompt)
        return RawCompletion(text=prompt, prompt_tokens=pt, completion_tokens=ct)


class HashEmbedding(EmbeddingProvider):
    """Content-hash embedding: deterministic across processes, no model needed.

    Each token maps to a pseudo-random unit vector seeded from a content hash;
    a text embeds as the normalized mean of its token vectors. Texts sharing
    tokens therefore land measurably closer than disjoint ones. A text with no
    tokens embeds as the zero vector, which downstream cosine scores as 0.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        super().__init__()
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self._dim = dimension
        self._seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self._seed}:{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vec = rng.standard_normal(self._dim)
            vec /= np.linalg.norm(vec)
            self._token_cache[token] = vec
        return vec

    def _embed_raw(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            tokens = tokenize(text)
            if not tokens:
                out.append(np.zeros(self._dim))
                continue
            mean = np.mean([self._token_vector(t) for t in tokens], axis=0)
            norm = np.linalg.norm(mean)
            out.append(mean / norm if norm > 0 else np.zeros(self._dim))
        return out


class OverlapReranker(RerankProvider):
    """Scores each document as |shared tokens| / |query tokens| (token sets)."""

    def _rerank_raw(self, query: str, documents: list[tuple[str, str]]) -> dict[str, float]:
        query_tokens = set(tokenize(query))
        if not query_tokens:
            return {doc_id: 0.0 for doc_id, _ in documents}
        return {
            doc_id: len(query_tokens & set(tokenize(text))) / len(query_tokens)
            for doc_id, text in documents
        }


class FailingReranker(RerankProvider):
    """Always fails; exercises the rank-fusion fallback path."""

    def _rerank_raw(self, query: str, documents: list[tuple[str, str]]) -> dict[str, float]:
        from ..errors import ProviderError
        raise ProviderError("reranker unavailable")
