"""Streaming construction of the memory hypergraph from dialogue turns.

Turns accumulate in a buffer until the boundary detector (an LLM call per
incoming turn) ends the episode; a second call generates the episode's title
and summary. Each new episode is then aggregated into the topic level: the
most similar historical episodes are retrieved with the same hybrid ranking
retrieval uses, and an LLM decides whether the episode starts a new topic or
updates existing ones. Fact extraction runs per topic over all its episodes
and anchors every fact to the episodes it came from.

Provider failures propagate with the buffer unchanged, so re-ingesting the
failed turn is always safe. All LLM outputs are validated defensively:
weights are clamped into [0, 1] with a logged warning, unknown episode ids
are dropped, and a fact whose sources cannot be resolved is anchored to all
of the topic's episodes rather than lost.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum

from .errors import SchemaParseError, ValidationError
from .graph import (
    DialogueTurn,
    EdgeKind,
    EpisodeNode,
    FactNode,
    MemoryHypergraph,
    NodeId,
    NodeKind,
    TopicNode,
)
from .indexing import (
    AggMode,
    DEFAULT_B,
    DEFAULT_K1,
    DEFAULT_LAMBDA,
    IndexState,
    node_document,
)
from .providers.base import ChatClient, ChatRequest, EmbeddingProvider
from .retrieval import DEFAULT_RRF_K, hybrid_candidates
from .text import describe_gap, format_instant

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATE_LIMIT = 20
DEFAULT_MAX_BUFFER_TURNS = 50

META_EXTRACTED = "extracted_revisions"


@dataclass(frozen=True)
class BoundaryDecision:
    """Verdict of the boundary detector for one incoming turn."""

    should_end: bool
    should_wait: bool
    confidence: float
    topic_summary: str


class AggregationCase(str, Enum):
    INITIALIZATION = "initialization"
    NEW_TOPIC = "new_topic"
    UPDATE = "update"


@dataclass
class AggregationOutcome:
    case: AggregationCase
    topics: list[NodeId]
    episode_weights: dict[NodeId, float] = field(default_factory=dict)


@dataclass
class IngestSummary:
    episode_ids: list[NodeId]
    outcomes: list[AggregationOutcome]
    new_fact_ids: list[NodeId]
    counts: dict[str, int]


def render_turns(turns: list[DialogueTurn]) -> str:
    if not turns:
        return "(none)"
    return "\n".join(f"[{format_instant(t.timestamp)}] {t.speaker}: {t.text}" for t in turns)


def _clamp_weight(value, label: str, default: float = 0.5) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        logger.warning("%s: non-numeric weight %r, using %.1f", label, value, default)
        return default
    w = float(value)
    if w < 0.0 or w > 1.0:
        clamped = min(1.0, max(0.0, w))
        logger.warning("%s: weight %s outside [0, 1], clamped to %s", label, w, clamped)
        return clamped
    return w


class MemoryBuilder:
    """Drives the three construction stages against one hypergraph.

    Single-threaded by design: one builder owns one graph plus a working
    episode index used for topic aggregation. The working index only ever
    holds episode nodes; the full index over all three levels is built after
    ingestion by indexing.build_index.
    """

    def __init__(self, graph: MemoryHypergraph, chat: ChatClient,
                 embedder: EmbeddingProvider, *,
                 candidate_limit: int = DEFAULT_CANDIDATE_LIMIT,
                 max_buffer_turns: int = DEFAULT_MAX_BUFFER_TURNS,
                 candidate_pool: int = 100,
                 rrf_k: float = DEFAULT_RRF_K,
                 lam: float = DEFAULT_LAMBDA,
                 agg_mode: AggMode = AggMode.MEAN,
                 k1: float = DEFAULT_K1, b: float = DEFAULT_B,
                 retry_parse: bool = True):
        if max_buffer_turns < 1:
            raise ValueError("max_buffer_turns must be >= 1")
        if candidate_limit < 1:
            raise ValueError("candidate_limit must be >= 1")
        self.graph = graph
        self.chat = chat
        self.embedder = embedder
        self.candidate_limit = candidate_limit
        self.max_buffer_turns = max_buffer_turns
        self.candidate_pool = candidate_pool
        self.rrf_k = rrf_k
        self.retry_parse = retry_parse
        self.buffer: list[DialogueTurn] = []
        self.boundary_log: list[BoundaryDecision] = []
        self._session_last: dict[str, datetime] = {}
        self._prev_timestamp: datetime | None = None
        self._index = IndexState.empty(lam=lam, agg_mode=agg_mode, k1=k1, b=b)
        self._seed_working_index()

    def _seed_working_index(self) -> None:
        episodes = self.graph.nodes_of_kind(NodeKind.EPISODE)
        if not episodes:
            return
        docs = [node_document(self.graph.get_node(nid)) for nid in episodes]
        vectors = self.embedder.embed(docs)
        for nid, doc, vec in zip(episodes, docs, vectors):
            self._index.lexical.add_document(nid, doc)
            self._index.base[nid] = vec
        self._index.dimension = int(vectors[0].shape[0])

    # ------------------------------------------------------------- stage one

    def ingest_turn(self, turn: DialogueTurn) -> EpisodeNode | None:
        """Feed one turn through boundary detection.

        Returns the finished episode when this turn closes one, else None.
        The buffer and watermarks are only advanced after every provider call
        has succeeded, so a failed call can simply be re-ingested.
        """
        watermark = self._session_last.get(turn.session_id)
        if watermark is not None and turn.timestamp < watermark:
            raise ValidationError(
                "timestamp",
                f"turn at {format_instant(turn.timestamp)} precedes session "
                f"{turn.session_id!r} watermark {format_instant(watermark)}")
        gap: timedelta | None = None
        if self._prev_timestamp is not None:
            gap = turn.timestamp - self._prev_timestamp
        decision = self._detect_boundary(self.buffer, turn, gap)
        self.boundary_log.append(decision)
        episode: EpisodeNode | None = None
        forced = len(self.buffer) + 1 >= self.max_buffer_turns
        if decision.should_end or forced:
            if forced and not decision.should_end:
                logger.warning("forcing episode boundary at %d buffered turns",
                               len(self.buffer) + 1)
            episode = self._finish_episode(self.buffer + [turn])
            self.buffer = []
        else:
            self.buffer.append(turn)
        self._session_last[turn.session_id] = turn.timestamp
        self._prev_timestamp = turn.timestamp
        return episode

    def flush(self) -> EpisodeNode | None:
        """Close any buffered turns into a final episode. No-op when empty."""
        if not self.buffer:
            return None
        episode = self._finish_episode(self.buffer)
        self.buffer = []
        return episode

    def _detect_boundary(self, history: list[DialogueTurn], turn: DialogueTurn,
                         gap: timedelta | None) -> BoundaryDecision:
        response = self.chat.complete(ChatRequest(
            template_id="episode_boundary",
            variables={
                "history": render_turns(history),
                "time_gap": describe_gap(gap),
                "new_messages": render_turns([turn]),
            },
        ), retry_parse=self.retry_parse)
        payload = response.payload
        confidence = payload["confidence"]
        if confidence < 0.0 or confidence > 1.0:
            clamped = min(1.0, max(0.0, confidence))
            logger.warning("boundary confidence %s outside [0, 1], clamped", confidence)
            confidence = clamped
        return BoundaryDecision(
            should_end=payload["should_end"],
            should_wait=payload["should_wait"],
            confidence=confidence,
            topic_summary=payload["topic_summary"],
        )

    def _finish_episode(self, turns: list[DialogueTurn]) -> EpisodeNode:
        span = f"{format_instant(turns[0].timestamp)} - {format_instant(turns[-1].timestamp)}"
        response = self.chat.complete(ChatRequest(
            template_id="episode_metadata",
            variables={"dialogue": render_turns(turns), "time_span": span},
        ), retry_parse=self.retry_parse)
        payload = response.payload
        episode = EpisodeNode.from_dialogue(list(turns), payload["title"], payload["summary"])
        self.graph.add_node(episode)
        self._index.add_node(self.graph, episode.id, self.embedder)
        return episode

    # ------------------------------------------------------------- stage two

    def aggregate_topic(self, episode: EpisodeNode) -> AggregationOutcome:
        """Attach a freshly created episode to the topic level.

        Candidate episodes come from hybrid ranking over all other episodes
        in the working index; zero-signal candidates are never proposed. The
        LLM then either matches existing topics (update) or describes a new
        one. With no candidates at all this is the initialization case.
        """
        if episode.id is None or not self.graph.has_node(episode.id):
            raise ValidationError("episode", "aggregate_topic requires a stored episode")
        others = [nid for nid in self.graph.nodes_of_kind(NodeKind.EPISODE)
                  if nid != episode.id]
        candidates: list[NodeId] = []
        if others:
            self._index.recompute_derived(self.graph)
            fused = hybrid_candidates(
                node_document(episode), self._index.base[episode.id], others,
                self._index, self.rrf_k, self.candidate_pool)
            candidates = [nid for nid, _ in fused[:self.candidate_limit]]
        candidate_topics = self._topics_of(candidates)
        payload = self._aggregation_call(episode, candidates, candidate_topics)
        if not candidates:
            topic_id, weights = self._create_topic(payload, episode.id, set())
            return AggregationOutcome(AggregationCase.INITIALIZATION, [topic_id], weights)
        matched = self._parse_matched_topics(payload, candidate_topics)
        if not matched:
            topic_id, weights = self._create_topic(payload, episode.id, set(candidates))
            return AggregationOutcome(AggregationCase.NEW_TOPIC, [topic_id], weights)
        applied: dict[NodeId, float] = {}
        for topic_id in matched:
            applied.update(self._update_topic(topic_id, payload, episode.id, set(candidates)))
        return AggregationOutcome(AggregationCase.UPDATE, matched, applied)

    def _topics_of(self, episodes: list[NodeId]) -> list[NodeId]:
        out: set[NodeId] = set()
        for ep in episodes:
            for eid in self.graph.incident_hyperedges(ep):
                edge = self.graph.edge(eid)
                if edge.kind is EdgeKind.EPISODE_LEVEL and ep in edge.members:
                    out.add(edge.anchor)
        return sorted(out, key=NodeId.sort_key)

    def _aggregation_call(self, episode: EpisodeNode, candidates: list[NodeId],
                          candidate_topics: list[NodeId]) -> dict:
        history = "\n".join(self._episode_brief(nid) for nid in candidates) or "(none)"
        topics = "\n".join(self._topic_brief(nid) for nid in candidate_topics) or "(none)"
        response = self.chat.complete(ChatRequest(
            template_id="topic_aggregation",
            variables={
                "new_episode": self._episode_brief(episode.id),
                "history_episodes": history,
                "existing_topics": topics,
            },
        ), retry_parse=self.retry_parse)
        return response.payload

    def _episode_brief(self, episode_id: NodeId) -> str:
        ep = self.graph.get_node(episode_id)
        return (f"[{episode_id}] {ep.title} ({format_instant(ep.start_time)} - "
                f"{format_instant(ep.end_time)}): {ep.summary}")

    def _topic_brief(self, topic_id: NodeId) -> str:
        topic = self.graph.get_node(topic_id)
        keywords = ", ".join(topic.keywords) if topic.keywords else "-"
        return f"[{topic_id}] {topic.title}: {topic.summary} (keywords: {keywords})"

    def _parse_matched_topics(self, payload: dict, candidate_topics: list[NodeId]
                              ) -> list[NodeId]:
        allowed = set(candidate_topics)
        matched: list[NodeId] = []
        for raw in payload["matched_topics"]:
            try:
                tid = NodeId.parse(str(raw))
            except ValidationError:
                logger.warning("aggregation: unparseable topic id %r dropped", raw)
                continue
            if tid not in allowed:
                logger.warning("aggregation: topic %s not among candidates, dropped", tid)
                continue
            if tid not in matched:
                matched.append(tid)
        return matched

    def _listed_weights(self, payload: dict, scope: set[NodeId]) -> dict[NodeId, float]:
        """Episode weights the LLM explicitly listed, filtered to known episodes."""
        out: dict[NodeId, float] = {}
        for raw, value in payload["episode_weights"].items():
            try:
                nid = NodeId.parse(str(raw))
            except ValidationError:
                logger.warning("aggregation: unparseable episode id %r dropped", raw)
                continue
            if nid not in scope:
                logger.warning("aggregation: episode %s outside scope, dropped", nid)
                continue
            out[nid] = _clamp_weight(value, f"episode weight {nid}")
        return out

    def _create_topic(self, payload: dict, episode_id: NodeId,
                      candidates: set[NodeId]) -> tuple[NodeId, dict[NodeId, float]]:
        topic = TopicNode(
            title=payload["title"],
            summary=payload["summary"],
            keywords=[str(k) for k in payload["keywords"]],
        )
        self.graph.add_node(topic)
        listed = self._listed_weights(payload, candidates | {episode_id})
        members = {episode_id} | set(listed)
        weights = {m: listed.get(m, 0.5) for m in members}
        self.graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, topic.id, members, weights)
        return topic.id, weights

    def _update_topic(self, topic_id: NodeId, payload: dict, episode_id: NodeId,
                      candidates: set[NodeId]) -> dict[NodeId, float]:
        topic = self.graph.get_node(topic_id)
        if str(payload["title"]).strip():
            topic.title = payload["title"]
        else:
            logger.warning("aggregation: empty regenerated title for %s kept old", topic_id)
        if str(payload["summary"]).strip():
            topic.summary = payload["summary"]
        topic.keywords = [str(k) for k in payload["keywords"]]
        topic.revision += 1
        self.graph.touch(topic_id)
        edge = self.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, topic_id)
        prev_members = set(edge.members) if edge else set()
        prev_weights = dict(edge.weights) if edge else {}
        listed = self._listed_weights(payload, candidates | prev_members | {episode_id})
        members = prev_members | {episode_id} | set(listed)
        weights = {m: listed.get(m, prev_weights.get(m, 0.5)) for m in members}
        self.graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, topic_id, members, weights)
        return weights

    # ----------------------------------------------------------- stage three

    def extract_facts(self, topic_id: NodeId) -> list[FactNode]:
        """Extract facts for one topic and rewire its episodes' fact edges.

        Append-only: facts already anchored under this topic are kept, and a
        newly extracted fact whose content exactly matches an existing one is
        suppressed.
        """
        episodes = self.graph.get_episodes_of_topic(topic_id)
        if not episodes:
            raise ValidationError("topic", f"{topic_id} has no episodes to extract from")
        topic = self.graph.get_node(topic_id)
        response = self.chat.complete(ChatRequest(
            template_id="fact_extraction",
            variables={
                "topic": self._topic_brief(topic_id),
                "episodes": "\n\n".join(self._episode_detail(nid) for nid in episodes),
            },
        ), retry_parse=self.retry_parse)
        entries = response.payload["facts"]
        episode_set = set(episodes)
        existing_contents = {
            self.graph.get_node(fid).content
            for ep in episodes for fid in self.graph.facts_anchored_to(ep)
        }
        new_facts: list[FactNode] = []
        new_weights: dict[NodeId, float] = {}
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict) or not str(entry.get("content", "")).strip():
                raise SchemaParseError(f"fact entry {i} has no content", response.text)
            content = str(entry["content"])
            if content in existing_contents:
                logger.info("fact extraction: duplicate content suppressed: %.60s", content)
                continue
            sources = self._resolve_sources(entry.get("source_episodes", []),
                                            episode_set, content)
            weight = entry.get("importance_weight")
            if weight is None:
                logger.warning("fact extraction: missing importance_weight, using 0.5")
                weight = 0.5
            fact = FactNode(
                content=content,
                potential=str(entry.get("potential", "")),
                keywords=[str(k) for k in entry.get("keywords", [])],
                source_episodes=frozenset(sources),
            )
            self.graph.add_node(fact)
            existing_contents.add(content)
            new_facts.append(fact)
            new_weights[fact.id] = _clamp_weight(weight, f"importance of {fact.id}")
        for ep in episodes:
            anchored = self.graph.facts_anchored_to(ep)
            if not anchored:
                continue
            edge = self.graph.edge_for_anchor(EdgeKind.FACT_LEVEL, ep)
            prev_weights = dict(edge.weights) if edge else {}
            weights = {f: new_weights.get(f, prev_weights.get(f, 0.5)) for f in anchored}
            self.graph.upsert_hyperedge(EdgeKind.FACT_LEVEL, ep, set(anchored), weights)
        self.graph.meta.setdefault(META_EXTRACTED, {})[str(topic_id)] = topic.revision
        return new_facts

    def _episode_detail(self, episode_id: NodeId) -> str:
        ep = self.graph.get_node(episode_id)
        return (f"{self._episode_brief(episode_id)}\n"
                f"Dialogue:\n{render_turns(ep.dialogue)}")

    def _resolve_sources(self, raw_sources, episode_set: set[NodeId],
                         content: str) -> set[NodeId]:
        resolved: set[NodeId] = set()
        if isinstance(raw_sources, list):
            for raw in raw_sources:
                if isinstance(raw, int) and not isinstance(raw, bool):
                    nid = NodeId(NodeKind.EPISODE, raw)
                else:
                    try:
                        nid = NodeId.parse(str(raw))
                    except ValidationError:
                        logger.warning("fact extraction: unparseable source %r dropped", raw)
                        continue
                if nid in episode_set:
                    resolved.add(nid)
                else:
                    logger.warning("fact extraction: source %s outside topic, dropped", nid)
        if not resolved:
            logger.warning("fact extraction: no resolvable source for %.60s; "
                           "anchoring to all %d topic episodes", content, len(episode_set))
            return set(episode_set)
        return resolved

    def re_extract_on_update(self, topic_id: NodeId) -> list[FactNode]:
        """Run extraction only when the topic changed since its last extraction."""
        topic = self.graph.get_node(topic_id)
        recorded = self.graph.meta.get(META_EXTRACTED, {}).get(str(topic_id))
        if recorded is not None and recorded == topic.revision:
            return []
        return self.extract_facts(topic_id)

    # ------------------------------------------------------------ end to end

    def ingest_stream(self, turns: list[DialogueTurn]) -> IngestSummary:
        """Run the full pipeline over a turn stream: episodes, topics, facts."""
        episode_ids: list[NodeId] = []
        outcomes: list[AggregationOutcome] = []
        for turn in turns:
            episode = self.ingest_turn(turn)
            if episode is not None:
                episode_ids.append(episode.id)
                outcomes.append(self.aggregate_topic(episode))
        episode = self.flush()
        if episode is not None:
            episode_ids.append(episode.id)
            outcomes.append(self.aggregate_topic(episode))
        new_fact_ids: list[NodeId] = []
        for topic_id in self.graph.nodes_of_kind(NodeKind.TOPIC):
            new_fact_ids.extend(f.id for f in self.re_extract_on_update(topic_id))
        return IngestSummary(
            episode_ids=episode_ids,
            outcomes=outcomes,
            new_fact_ids=new_fact_ids,
            counts=self.graph.counts(),
        )
