"""Hypergraph-structured long-term memory for conversational agents.

Dialogue turns are segmented into episodes, episodes are aggregated into
evolving topics, and facts are distilled per topic — three node levels tied
together by weighted hyperedges. Retrieval walks the hierarchy coarse to
fine with fused lexical and embedding rankings, and an evaluation harness
scores end-to-end question answering over dialogue corpora.
"""

from .errors import (
    CacheStaleError,
    ConfigError,
    CorpusFormatError,
    DuplicateNodeError,
    HgmemError,
    ProviderError,
    SchemaParseError,
    ScriptExhaustedError,
    StoreFormatError,
    TemplateError,
    TransportError,
    UnknownNodeError,
    ValidationError,
)
from .graph import (
    DialogueTurn,
    EdgeKind,
    EpisodeNode,
    FactNode,
    Hyperedge,
    MemoryHypergraph,
    NodeId,
    NodeKind,
    TopicNode,
    file_digest,
)
from .indexing import (
    AggMode,
    Bm25Index,
    IndexState,
    LexicalIndex,
    build_index,
    cosine,
    edge_embedding,
    load_index_cache,
    node_document,
    propagate,
    save_index_cache,
    softmax_weights,
)
from .retrieval import (
    ContextMode,
    FactProvenance,
    RetrievalConfig,
    RetrievalResult,
    ScoredNode,
    TokenLedger,
    answer,
    compose_context,
    hybrid_candidates,
    retrieve,
    rrf_fuse,
)
from .construction import (
    AggregationCase,
    AggregationOutcome,
    BoundaryDecision,
    IngestSummary,
    MemoryBuilder,
)
from .harness import (
    Category,
    DialogueStream,
    ExactMatchJudge,
    ItemResult,
    LlmJudge,
    ProviderBundle,
    QaItem,
    RunReport,
    SubstringJudge,
    ablation_matrix,
    format_report,
    load_corpus,
    run,
)
from .config import Settings, load_settings
from .synthetic import (
    SyntheticCorpus,
    build_synthetic,
    load_script_file,
    partition_script,
    simple_turns,
)
from .providers import (
    ChatClient,
    ChatRequest,
    ChatResponse,
    ChatTransport,
    EchoChatTransport,
    EmbeddingProvider,
    HashEmbedding,
    HttpChatTransport,
    HttpEmbedding,
    HttpReranker,
    OverlapReranker,
    RerankProvider,
    RerankScore,
    ScriptedChatTransport,
    Template,
    TemplateRegistry,
)

__version__ = "0.1.0"

__all__ = [
    "AggMode", "AggregationCase", "AggregationOutcome", "Bm25Index",
    "BoundaryDecision", "CacheStaleError", "Category", "ChatClient",
    "ChatRequest", "ChatResponse", "ChatTransport", "ConfigError",
    "ContextMode", "CorpusFormatError", "DialogueStream", "DialogueTurn",
    "DuplicateNodeError", "EchoChatTransport", "EdgeKind", "EmbeddingProvider",
    "EpisodeNode", "ExactMatchJudge", "FactNode", "FactProvenance",
    "HashEmbedding", "HgmemError", "HttpChatTransport", "HttpEmbedding",
    "HttpReranker", "Hyperedge", "IndexState", "IngestSummary", "ItemResult",
    "LexicalIndex", "LlmJudge", "MemoryBuilder", "MemoryHypergraph", "NodeId",
    "NodeKind", "OverlapReranker", "ProviderBundle", "ProviderError", "QaItem",
    "RerankProvider", "RerankScore", "RetrievalConfig", "RetrievalResult",
    "RunReport", "SchemaParseError", "ScoredNode", "ScriptExhaustedError",
    "ScriptedChatTransport", "Settings", "StoreFormatError", "SubstringJudge",
    "SyntheticCorpus", "Template", "TemplateError", "TemplateRegistry",
    "TokenLedger", "TopicNode", "TransportError", "UnknownNodeError",
    "ValidationError", "ablation_matrix", "answer", "build_index",
    "build_synthetic", "compose_context", "cosine", "edge_embedding",
    "file_digest", "format_report", "hybrid_candidates", "load_corpus",
    "load_index_cache", "load_script_file", "load_settings", "node_document",
    "partition_script", "propagate", "retrieve", "rrf_fuse", "run",
    "save_index_cache", "simple_turns", "softmax_weights",
]
