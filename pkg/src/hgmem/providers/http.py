"""HTTP-backed providers speaking the common chat/embeddings/rerank wire shapes.

Endpoint, model, and credential come from configuration (see config module
for the environment variables). Connection problems, timeouts, 429 and 5xx
responses map to TransportError and are retried by the caller; other HTTP
errors are permanent ProviderErrors.
"""

from __future__ import annotations

import logging

import requests

from ..errors import ProviderError, TransportError
from .base import (
    ChatRequest,
    ChatTransport,
    EmbeddingProvider,
    RawCompletion,
    RerankProvider,
    with_retries,
)

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0


class _HttpEndpoint:
    def __init__(self, url: str, model: str, api_key: str | None = None,
                 timeout: float = DEFAULT_TIMEOUT, session: requests.Session | None = None):
        self.url = url
        self.model = model
        self.timeout = timeout
        self.session = session or requests.Session()
        self.headers = {"Content-Type": "application/json"}
        if api_key:
            self.headers["Authorization"] = f"Bearer {api_key}"

    def post(self, body: dict) -> dict:
        try:
            response = self.session.post(self.url, json=body, headers=self.headers,
                                         timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"request to {self.url} failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(f"{self.url} returned {response.status_code}")
        if response.status_code >= 400:
            raise ProviderError(f"{self.url} returned {response.status_code}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise ProviderError(f"non-JSON response from {self.url}") from exc


class HttpChatTransport(ChatTransport):
    """Chat-completions endpoint: messages in, first choice text out."""

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 timeout: float = DEFAULT_TIMEOUT, session: requests.Session | None = None):
        self._endpoint = _HttpEndpoint(url, model, api_key, timeout, session)

    def complete(self, prompt: str, request: ChatRequest) -> RawCompletion:
        body: dict = {
            "model": self._endpoint.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature if request.temperature is not None else 0.0,
        }
        if request.max_tokens is not None:
            body["max_tokens"] = request.max_tokens
        data = self._endpoint.post(body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {exc}") from None
        usage = data.get("usage") or {}
        return RawCompletion(
            text=text or "",
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


class HttpEmbedding(EmbeddingProvider):
    """Embeddings endpoint: batched input texts, one vector per text."""

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 timeout: float = DEFAULT_TIMEOUT, session: requests.Session | None = None,
                 batch_size: int = 128, backoff: float = 0.5):
        super().__init__()
        self._endpoint = _HttpEndpoint(url, model, api_key, timeout, session)
        self._batch_size = batch_size
        self._backoff = backoff

    def _embed_raw(self, texts: list[str]):
        vectors = []
        for start in range(0, len(texts), self._batch_size):
            batch = texts[start:start + self._batch_size]
            data = with_retries(
                lambda b=batch: self._endpoint.post({"model": self._endpoint.model, "input": b}),
                backoff=self._backoff)
            try:
                rows = sorted(data["data"], key=lambda row: row["index"])
                vectors.extend(row["embedding"] for row in rows)
            except (KeyError, TypeError) as exc:
                raise ProviderError(f"malformed embedding response: {exc}") from None
        return vectors


class HttpReranker(RerankProvider):
    """Rerank endpoint: query plus documents, relevance score per document."""

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 timeout: float = DEFAULT_TIMEOUT, session: requests.Session | None = None,
                 backoff: float = 0.5):
        self._endpoint = _HttpEndpoint(url, model, api_key, timeout, session)
        self._backoff = backoff

    def _rerank_raw(self, query: str, documents: list[tuple[str, str]]) -> dict[str, float]:
        body = {
            "model": self._endpoint.model,
            "query": query,
            "documents": [text for _, text in documents],
        }
        data = with_retries(lambda: self._endpoint.post(body), backoff=self._backoff)
        try:
            results = data["results"]
            scores = {
                documents[row["index"]][0]: float(row["relevance_score"])
                for row in results
            }
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed rerank response: {exc}") from None
        return scores
