"""Provider layer: chat, embedding, and rerank backends plus offline mocks."""

from .base import (
    ChatClient,
    ChatRequest,
    ChatResponse,
    ChatTransport,
    EmbeddingProvider,
    RawCompletion,
    RerankProvider,
    RerankScore,
    with_retries,
)
from .http import HttpChatTransport, HttpEmbedding, HttpReranker
from .mocks import (
    EchoChatTransport,
    FailingReranker,
    HashEmbedding,
    OverlapReranker,
    ScriptedChatTransport,
)
from .templates import SCHEMAS, Template, TemplateRegistry, extract_structured_block, parse_payload

__all__ = [
    "ChatClient",
    "ChatRequest",
    "ChatResponse",
    "ChatTransport",
    "EchoChatTransport",
    "EmbeddingProvider",
    "FailingReranker",
    "HashEmbedding",
    "HttpChatTransport",
    "HttpEmbedding",
    "HttpReranker",
    "OverlapReranker",
    "RawCompletion",
    "RerankProvider",
    "RerankScore",
    "SCHEMAS",
    "ScriptedChatTransport",
    "Template",
    "TemplateRegistry",
    "extract_structured_block",
    "parse_payload",
    "with_retries",
]
