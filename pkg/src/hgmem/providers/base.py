"""Provider contracts: chat, embedding, rerank.

A chat transport turns a rendered prompt into raw text; the ChatClient on top
of it owns template rendering, retries, and structured-output parsing, so
every concrete transport (HTTP, scripted mock, echo) stays trivial.

Embedding and rerank providers validate their own outputs here in the base
class: callers can rely on finite vectors of a stable dimension and on rerank
results being a fully scored, deterministically ordered permutation.
"""

from __future__ import annotations

import abc
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ProviderError, SchemaParseError, TransportError
from .templates import TemplateRegistry, parse_payload

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 3

# Appended when the pipeline re-prompts after a parse failure.
REPROMPT_SUFFIX = "\n\nReturn only the structured block."


def with_retries(fn, max_attempts: int = MAX_ATTEMPTS, backoff: float = 0.5):
    """Call fn(), retrying on TransportError with exponential backoff."""
    for attempt in range(max_attempts):
        try:
            return fn()
        except TransportError:
            if attempt == max_attempts - 1:
                raise
            delay = backoff * (2 ** attempt)
            logger.warning("transport error, retrying in %.2fs (attempt %d/%d)",
                           delay, attempt + 2, max_attempts)
            if delay > 0:
                time.sleep(delay)
    raise AssertionError("unreachable")


@dataclass
class ChatRequest:
    """One chat call: a template id plus its bindings and decoding options."""

    template_id: str
    variables: dict = field(default_factory=dict)
    temperature: float | None = None
    max_tokens: int | None = None


@dataclass
class RawCompletion:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass
class ChatResponse:
    text: str
    payload: dict | None
    prompt_tokens: int
    completion_tokens: int
    attempts: int = 1


class ChatTransport(abc.ABC):
    """Turns a rendered prompt into raw model text."""

    @abc.abstractmethod
    def complete(self, prompt: str, request: ChatRequest) -> RawCompletion:
        ...

    def reset(self) -> None:
        """Rewind any internal replay state; a no-op for real transports."""


class ChatClient:
    """Template rendering, retry, and structured parsing around a transport."""

    def __init__(self, transport: ChatTransport, registry: TemplateRegistry | None = None,
                 temperature: float = 0.0, max_attempts: int = MAX_ATTEMPTS,
                 backoff: float = 0.5):
        self.transport = transport
        self.registry = registry if registry is not None else TemplateRegistry()
        self.temperature = temperature
        self.max_attempts = max_attempts
        self.backoff = backoff

    def complete(self, request: ChatRequest, retry_parse: bool = False) -> ChatResponse:
        """Render, call the transport (with retries), and parse the payload.

        Parse failures are never swallowed: with retry_parse the call is
        re-issued once with an instruction suffix, otherwise SchemaParseError
        propagates with the raw text attached.
        """
        template = self.registry.get(request.template_id)
        prompt = template.render(request.variables)
        if request.temperature is None:
            request.temperature = self.temperature
        try:
            return self._attempt(prompt, request, template.schema)
        except SchemaParseError:
            if not retry_parse:
                raise
            logger.warning("unparseable %s response, re-prompting once", request.template_id)
            return self._attempt(prompt + REPROMPT_SUFFIX, request, template.schema)

    def _attempt(self, prompt: str, request: ChatRequest, schema) -> ChatResponse:
        attempts = 0

        def call():
            nonlocal attempts
            attempts += 1
            return self.transport.complete(prompt, request)

        raw = with_retries(call, self.max_attempts, self.backoff)
        payload = parse_payload(raw.text, schema) if schema else None
        return ChatResponse(text=raw.text, payload=payload,
                            prompt_tokens=raw.prompt_tokens,
                            completion_tokens=raw.completion_tokens,
                            attempts=attempts)


class EmbeddingProvider(abc.ABC):
    """Order-preserving batch text embedding with a session-stable dimension."""

    def __init__(self):
        self._dimension: int | None = None

    @abc.abstractmethod
    def _embed_raw(self, texts: list[str]) -> list[np.ndarray]:
        ...

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ProviderError("embed() requires a non-empty list of texts")
        vectors = [np.asarray(v, dtype=np.float64) for v in self._embed_raw(list(texts))]
        if len(vectors) != len(texts):
            raise ProviderError(
                f"embedding count mismatch: {len(vectors)} vectors for {len(texts)} texts")
        for vec in vectors:
            if vec.ndim != 1:
                raise ProviderError("embedding vectors must be one-dimensional")
            if not np.all(np.isfinite(vec)):
                raise ProviderError("embedding contains non-finite entries")
            if self._dimension is None:
                self._dimension = int(vec.shape[0])
            elif vec.shape[0] != self._dimension:
                raise ProviderError(
                    f"embedding dimension drift: got {vec.shape[0]}, expected {self._dimension}")
        return vectors

    @property
    def dimension(self) -> int | None:
        return self._dimension


@dataclass(frozen=True)
class RerankScore:
    doc_id: str
    score: float


class RerankProvider(abc.ABC):
    """Scores documents against a query; output order is score-desc, id-asc."""

    @abc.abstractmethod
    def _rerank_raw(self, query: str, documents: list[tuple[str, str]]) -> dict[str, float]:
        """Return a score for every input document id."""

    def rerank(self, query: str, documents: list[tuple[str, str]]) -> list[RerankScore]:
        if not documents:
            raise ProviderError("rerank() requires a non-empty document list")
        ids = [doc_id for doc_id, _ in documents]
        if len(set(ids)) != len(ids):
            raise ProviderError("duplicate document ids in rerank input")
        scores = self._rerank_raw(query, list(documents))
        if set(scores) != set(ids):
            raise ProviderError("reranker must score every input document exactly once")
        for doc_id, score in scores.items():
            if not np.isfinite(score):
                raise ProviderError(f"non-finite rerank score for {doc_id}")
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return [RerankScore(doc_id, float(score)) for doc_id, score in ordered]
