"""Coarse-to-fine retrieval over the memory hypergraph.

Stage 1 scores all topics and keeps the best k_topics. Stage 2 expands the
retained topics into their member episodes through episode-level hyperedges
and keeps the best k_episodes. Stage 3 expands those into member facts
through fact-level hyperedges and keeps the best k_facts.

Every stage scores the same way: a BM25 ranking and a cosine ranking (against
propagated embeddings) are truncated to candidate_pool each and fused with
reciprocal-rank scores 1 / (rrf_k + rank); candidates scoring zero on both
signals never enter the fused list, and the fused survivors are reordered by
a cross-encoder reranker. If the reranker fails, the fused order stands and a
warning is logged. Ties break toward the lower node ordinal in fusion and the
lower document id in reranking.

Ablation switches: bypass_topic starts Stage 2 over all episodes;
bypass_topic plus bypass_episode scores all facts flat.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ProviderError
from .graph import EdgeKind, MemoryHypergraph, NodeId, NodeKind
from .indexing import IndexState, cosine, node_document
from .providers.base import ChatClient, ChatRequest, EmbeddingProvider, RerankProvider
from .text import estimate_tokens, format_instant, tokenize

logger = logging.getLogger(__name__)

DEFAULT_RRF_K = 60.0
EMPTY_CONTEXT_NOTE = "(no memories retrieved)"


class ContextMode(str, Enum):
    FACT_ONLY = "fact_only"
    EPISODE_ONLY = "episode_only"
    EPISODE_PLUS_FACT = "episode_plus_fact"


@dataclass
class RetrievalConfig:
    k_topics: int = 10
    k_episodes: int = 10
    k_facts: int = 30
    candidate_pool: int = 100
    rrf_k: float = DEFAULT_RRF_K
    context_mode: ContextMode = ContextMode.EPISODE_PLUS_FACT
    bypass_topic: bool = False
    bypass_episode: bool = False

    def validate(self) -> None:
        for name in ("k_topics", "k_episodes", "k_facts", "candidate_pool"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rrf_k <= 0:
            raise ValueError("rrf_k must be > 0")
        for name in ("k_topics", "k_episodes", "k_facts"):
            if getattr(self, name) > self.candidate_pool:
                raise ValueError(f"{name} must not exceed candidate_pool")

    def snapshot(self) -> dict:
        return {
            "k_topics": self.k_topics,
            "k_episodes": self.k_episodes,
            "k_facts": self.k_facts,
            "candidate_pool": self.candidate_pool,
            "rrf_k": self.rrf_k,
            "context_mode": self.context_mode.value,
            "bypass_topic": self.bypass_topic,
            "bypass_episode": self.bypass_episode,
        }


@dataclass(frozen=True)
class ScoredNode:
    node: NodeId
    fused: float
    rerank: float | None


@dataclass(frozen=True)
class FactProvenance:
    episodes: tuple[NodeId, ...]
    topics: tuple[NodeId, ...]


@dataclass
class RetrievalResult:
    query: str
    topics: list[ScoredNode]
    episodes: list[ScoredNode]
    facts: list[ScoredNode]
    provenance: dict[NodeId, FactProvenance]
    context: str
    token_estimate: int
    config: dict


class TokenLedger:
    """Thread-safe accumulator for token accounting across a run."""

    def __init__(self):
        self._lock = threading.Lock()
        self.context_tokens = 0
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.chat_calls = 0

    def add_context(self, estimate: int) -> None:
        with self._lock:
            self.context_tokens += estimate

    def add_chat(self, prompt_tokens: int, completion_tokens: int) -> None:
        with self._lock:
            self.prompt_tokens += prompt_tokens
            self.completion_tokens += completion_tokens
            self.chat_calls += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "context_tokens": self.context_tokens,
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "chat_calls": self.chat_calls,
            }


def _order_key(item):
    return item.sort_key() if isinstance(item, NodeId) else item


def rrf_fuse(rankings: Sequence[Sequence], rrf_k: float = DEFAULT_RRF_K) -> list[tuple]:
    """Fuse rankings by summing 1 / (rrf_k + rank) with 1-based ranks.

    An id absent from a ranking contributes nothing for that ranker. Output
    is (id, fused score) sorted by score descending, ties toward the lower
    ordinal.
    """
    if not rankings:
        raise ValueError("rrf_fuse requires at least one ranking")
    if rrf_k <= 0:
        raise ValueError("rrf_k must be > 0")
    scores: dict = {}
    for ranking in rankings:
        for rank, item in enumerate(ranking, start=1):
            scores[item] = scores.get(item, 0.0) + 1.0 / (rrf_k + rank)
    return sorted(scores.items(), key=lambda kv: (-kv[1], _order_key(kv[0])))


def hybrid_candidates(query_text: str, query_vec: np.ndarray, node_ids: list[NodeId],
                      state: IndexState, rrf_k: float, pool: int) -> list[tuple[NodeId, float]]:
    """RRF-fused BM25 and cosine rankings over a node set, truncated to the pool.

    Candidates with zero lexical score and zero cosine appear in neither
    ranking, so they are dropped from the fused list by construction.
    """
    if not node_ids:
        return []
    query_tokens = tokenize(query_text)
    bm25 = state.lexical.scores(query_tokens, node_ids)
    cos = {nid: cosine(query_vec, state.propagated[nid])
           for nid in node_ids if nid in state.propagated}
    lex_ranking = [nid for nid, _ in sorted(
        ((nid, s) for nid, s in bm25.items() if s > 0.0),
        key=lambda kv: (-kv[1], kv[0].sort_key()))][:pool]
    sem_ranking = [nid for nid, _ in sorted(
        ((nid, s) for nid, s in cos.items() if s != 0.0),
        key=lambda kv: (-kv[1], kv[0].sort_key()))][:pool]
    if not lex_ranking and not sem_ranking:
        return []
    return rrf_fuse([lex_ranking, sem_ranking], rrf_k)[:pool]


def score_level(query_text: str, query_vec: np.ndarray, node_ids: list[NodeId],
                graph: MemoryHypergraph, state: IndexState, config: RetrievalConfig,
                reranker: RerankProvider | None) -> list[ScoredNode]:
    """Score one hierarchy level: fuse the two signals, then rerank the survivors."""
    fused = hybrid_candidates(query_text, query_vec, node_ids, state,
                              config.rrf_k, config.candidate_pool)
    if not fused:
        return []
    fused_by_id = {nid: score for nid, score in fused}
    if reranker is not None:
        docs = [(str(nid), node_document(graph.get_node(nid))) for nid, _ in fused]
        try:
            ranked = reranker.rerank(query_text, docs)
        except ProviderError as exc:
            logger.warning("reranker failed (%s); falling back to fused order", exc)
        else:
            return [ScoredNode(NodeId.parse(r.doc_id), fused_by_id[NodeId.parse(r.doc_id)],
                               r.score) for r in ranked]
    return [ScoredNode(nid, score, None) for nid, score in fused]


def retrieve(query: str, graph: MemoryHypergraph, state: IndexState,
             config: RetrievalConfig, embedder: EmbeddingProvider,
             reranker: RerankProvider | None = None) -> RetrievalResult:
    """Run the three-stage cascade and compose the answer context."""
    config.validate()
    query_vec = embedder.embed([query])[0]

    if config.bypass_topic:
        topic_results: list[ScoredNode] = []
        episode_candidates = graph.nodes_of_kind(NodeKind.EPISODE)
    else:
        all_topics = graph.nodes_of_kind(NodeKind.TOPIC)
        topic_results = score_level(query, query_vec, all_topics, graph, state,
                                    config, reranker)[:config.k_topics]
        seen: set[NodeId] = set()
        episode_candidates = []
        for scored in topic_results:
            for ep in graph.get_episodes_of_topic(scored.node):
                if ep not in seen:
                    seen.add(ep)
                    episode_candidates.append(ep)
        episode_candidates.sort(key=NodeId.sort_key)

    if config.bypass_episode:
        episode_results: list[ScoredNode] = []
        retained_episodes = list(episode_candidates)
        if config.bypass_topic:
            fact_candidates = graph.nodes_of_kind(NodeKind.FACT)
        else:
            fact_candidates = _facts_of_episodes(graph, retained_episodes)
    else:
        episode_results = score_level(query, query_vec, episode_candidates, graph, state,
                                      config, reranker)[:config.k_episodes]
        retained_episodes = [s.node for s in episode_results]
        fact_candidates = _facts_of_episodes(graph, retained_episodes)

    fact_results = score_level(query, query_vec, fact_candidates, graph, state,
                               config, reranker)[:config.k_facts]

    provenance = _provenance(graph, fact_results, retained_episodes,
                             [s.node for s in topic_results], config)
    result = RetrievalResult(
        query=query,
        topics=topic_results,
        episodes=episode_results,
        facts=fact_results,
        provenance=provenance,
        context="",
        token_estimate=0,
        config=config.snapshot(),
    )
    result.context = compose_context(result, graph, config.context_mode)
    result.token_estimate = estimate_tokens(result.context)
    return result


def _facts_of_episodes(graph: MemoryHypergraph, episodes: list[NodeId]) -> list[NodeId]:
    seen: set[NodeId] = set()
    out: list[NodeId] = []
    for ep in episodes:
        for fact in graph.get_facts_of_episode(ep):
            if fact not in seen:
                seen.add(fact)
                out.append(fact)
    out.sort(key=NodeId.sort_key)
    return out


def _provenance(graph: MemoryHypergraph, facts: list[ScoredNode],
                retained_episodes: list[NodeId], retained_topics: list[NodeId],
                config: RetrievalConfig) -> dict[NodeId, FactProvenance]:
    """Chain each returned fact back through the edges it was reached by."""
    episode_set = set(retained_episodes)
    if config.bypass_topic:
        topic_pool = graph.nodes_of_kind(NodeKind.TOPIC)
    else:
        topic_pool = retained_topics
    out: dict[NodeId, FactProvenance] = {}
    for scored in facts:
        fact = graph.get_node(scored.node)
        if config.bypass_topic and config.bypass_episode:
            eps = sorted(fact.source_episodes, key=NodeId.sort_key)
        else:
            eps = [ep for ep in sorted(episode_set, key=NodeId.sort_key)
                   if scored.node in graph.get_facts_of_episode(ep)]
        topics = []
        for topic in topic_pool:
            edge = graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, topic)
            if edge is not None and any(ep in edge.members for ep in eps):
                topics.append(topic)
        topics.sort(key=NodeId.sort_key)
        out[scored.node] = FactProvenance(episodes=tuple(eps), topics=tuple(topics))
    return out


def _fact_time_span(graph: MemoryHypergraph, fact_id: NodeId,
                    provenance: dict[NodeId, FactProvenance]) -> tuple:
    fact = graph.get_node(fact_id)
    prov = provenance.get(fact_id)
    eps = list(prov.episodes) if prov is not None and prov.episodes else \
        sorted(fact.source_episodes, key=NodeId.sort_key)
    starts = [graph.get_node(ep).start_time for ep in eps]
    ends = [graph.get_node(ep).end_time for ep in eps]
    return min(starts), max(ends)


def compose_context(result: RetrievalResult, graph: MemoryHypergraph,
                    mode: ContextMode) -> str:
    """Render retrieved memories as answer context.

    Fact lines appear in rank order, each prefixed with the time span of the
    episodes the fact is grounded in. The episode section lists distinct
    source-episode summaries ordered by start time. No facts means an empty
    context in every mode.
    """
    if not result.facts:
        return ""
    fact_lines = []
    for scored in result.facts:
        start, end = _fact_time_span(graph, scored.node, result.provenance)
        content = graph.get_node(scored.node).content
        fact_lines.append(f"[{format_instant(start)} - {format_instant(end)}] {content}")
    if mode is ContextMode.FACT_ONLY:
        return "\n".join(fact_lines)

    episode_ids: set[NodeId] = set()
    for scored in result.facts:
        prov = result.provenance.get(scored.node)
        if prov is not None and prov.episodes:
            episode_ids.update(prov.episodes)
        else:
            episode_ids.update(graph.get_node(scored.node).source_episodes)
    ordered = sorted(episode_ids, key=lambda e: (graph.get_node(e).start_time, e.ordinal))
    episode_lines = []
    for ep_id in ordered:
        ep = graph.get_node(ep_id)
        episode_lines.append(
            f"- [{format_instant(ep.start_time)} - {format_instant(ep.end_time)}] "
            f"{ep.title}: {ep.summary}")
    episode_section = "Episodes:\n" + "\n".join(episode_lines)
    if mode is ContextMode.EPISODE_ONLY:
        return episode_section
    return episode_section + "\n\nFacts:\n" + "\n".join(fact_lines)


def answer(query: str, context: str, client: ChatClient,
           ledger: TokenLedger | None = None) -> str:
    """Generate an answer from composed context via the answer template."""
    bound = context if context.strip() else EMPTY_CONTEXT_NOTE
    response = client.complete(ChatRequest(
        template_id="answer_generation",
        variables={"query": query, "context": bound},
    ))
    if ledger is not None:
        ledger.add_chat(response.prompt_tokens, response.completion_tokens)
    return response.text
