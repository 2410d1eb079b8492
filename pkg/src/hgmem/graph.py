"""Three-level memory hypergraph: topics, episodes, facts.

Two hyperedge families tie the levels together. An episode-level edge is
anchored at a topic and spans the episodes that belong to it; a fact-level
edge is anchored at an episode and spans the facts grounded in it. A node may
appear in any number of edges, there is at most one edge per (kind, anchor),
and adjacency is maintained as the exact inverse of membership.

The graph is single-writer, multi-reader: mutations take an internal lock,
reads are safe once construction has finished. Every mutation bumps a
revision counter that downstream index caches key on.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum

from .errors import (
    DuplicateNodeError,
    StoreFormatError,
    UnknownNodeError,
    ValidationError,
)
from .text import format_instant, normalize_instant, parse_instant

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class NodeKind(str, Enum):
    TOPIC = "topic"
    EPISODE = "episode"
    FACT = "fact"


class EdgeKind(str, Enum):
    EPISODE_LEVEL = "episode_level"
    FACT_LEVEL = "fact_level"


_KIND_PREFIX = {NodeKind.TOPIC: "T", NodeKind.EPISODE: "E", NodeKind.FACT: "F"}
_PREFIX_KIND = {v: k for k, v in _KIND_PREFIX.items()}
_KIND_RANK = {NodeKind.TOPIC: 0, NodeKind.EPISODE: 1, NodeKind.FACT: 2}

# Which node kind an edge family anchors on / spans over.
_EDGE_ANCHOR_KIND = {EdgeKind.EPISODE_LEVEL: NodeKind.TOPIC, EdgeKind.FACT_LEVEL: NodeKind.EPISODE}
_EDGE_MEMBER_KIND = {EdgeKind.EPISODE_LEVEL: NodeKind.EPISODE, EdgeKind.FACT_LEVEL: NodeKind.FACT}


@dataclass(frozen=True)
class NodeId:
    """Stable node identifier: kind plus a per-kind ordinal, rendered as e.g. "E12"."""

    kind: NodeKind
    ordinal: int

    def __str__(self) -> str:
        return f"{_KIND_PREFIX[self.kind]}{self.ordinal}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        if not text or text[0] not in _PREFIX_KIND or not text[1:].isdigit():
            raise ValidationError("node_id", f"not a node id: {text!r}")
        return cls(_PREFIX_KIND[text[0]], int(text[1:]))

    def sort_key(self) -> tuple[int, int]:
        return (_KIND_RANK[self.kind], self.ordinal)


@dataclass(frozen=True)
class DialogueTurn:
    """One utterance in a conversation stream.

    Timestamps are normalized to aware UTC at second resolution on
    construction so that persistence round-trips are exact.
    """

    speaker: str
    text: str
    timestamp: datetime
    session_id: str

    def __post_init__(self):
        if not self.speaker.strip():
            raise ValidationError("speaker", "must be non-empty")
        if not self.text.strip():
            raise ValidationError("text", "must be non-empty")
        if not self.session_id.strip():
            raise ValidationError("session_id", "must be non-empty")
        object.__setattr__(self, "timestamp", normalize_instant(self.timestamp))

    def to_dict(self) -> dict:
        return {
            "speaker": self.speaker,
            "text": self.text,
            "timestamp": format_instant(self.timestamp),
            "session_id": self.session_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DialogueTurn":
        return cls(
            speaker=data["speaker"],
            text=data["text"],
            timestamp=parse_instant(data["timestamp"]),
            session_id=data["session_id"],
        )


@dataclass
class EpisodeNode:
    """A coherent span of consecutive dialogue turns with generated metadata."""

    dialogue: list[DialogueTurn]
    title: str
    summary: str
    start_time: datetime
    end_time: datetime
    id: NodeId | None = None

    def __post_init__(self):
        if not self.dialogue:
            raise ValidationError("dialogue", "episode must contain at least one turn")
        if not self.title.strip():
            raise ValidationError("title", "must be non-empty")
        if not self.summary.strip():
            raise ValidationError("summary", "must be non-empty")
        self.start_time = normalize_instant(self.start_time)
        self.end_time = normalize_instant(self.end_time)
        if self.start_time != self.dialogue[0].timestamp:
            raise ValidationError("start_time", "must equal the first turn's timestamp")
        if self.end_time != self.dialogue[-1].timestamp:
            raise ValidationError("end_time", "must equal the last turn's timestamp")

    @classmethod
    def from_dialogue(cls, dialogue: list[DialogueTurn], title: str, summary: str,
                      id: NodeId | None = None) -> "EpisodeNode":
        return cls(
            dialogue=list(dialogue),
            title=title,
            summary=summary,
            start_time=dialogue[0].timestamp if dialogue else normalize_instant(datetime.min),
            end_time=dialogue[-1].timestamp if dialogue else normalize_instant(datetime.min),
            id=id,
        )


@dataclass
class TopicNode:
    """A recurring situation grouping related episodes; metadata is regenerated on update."""

    title: str
    summary: str
    keywords: list[str]
    revision: int = 0
    id: NodeId | None = None

    def __post_init__(self):
        if not self.title.strip():
            raise ValidationError("title", "must be non-empty")
        if not self.summary.strip():
            raise ValidationError("summary", "must be non-empty")
        if self.revision < 0:
            raise ValidationError("revision", "must be >= 0")


@dataclass
class FactNode:
    """An atomic, queryable statement grounded in one or more episodes."""

    content: str
    potential: str
    keywords: list[str]
    source_episodes: frozenset[NodeId]
    id: NodeId | None = None

    def __post_init__(self):
        if not self.content.strip():
            raise ValidationError("content", "must be non-empty")
        self.source_episodes = frozenset(self.source_episodes)
        if not self.source_episodes:
            raise ValidationError("source_episodes", "must reference at least one episode")
        for ep in self.source_episodes:
            if ep.kind is not NodeKind.EPISODE:
                raise ValidationError("source_episodes", f"{ep} is not an episode id")


@dataclass
class Hyperedge:
    """A weighted many-to-many link from an anchor node to a member set."""

    id: str
    kind: EdgeKind
    anchor: NodeId
    members: frozenset[NodeId]
    weights: dict[NodeId, float]

    def __post_init__(self):
        self.members = frozenset(self.members)
        if not self.members:
            raise ValidationError("members", "hyperedge must have at least one member")
        if set(self.weights) != self.members:
            raise ValidationError("weights", "weight keys must cover exactly the member set")
        for node, w in self.weights.items():
            if not (0.0 <= w <= 1.0):
                raise ValidationError("weights", f"weight for {node} out of [0, 1]: {w}")


AnyNode = TopicNode | EpisodeNode | FactNode

_NODE_KIND_OF = {TopicNode: NodeKind.TOPIC, EpisodeNode: NodeKind.EPISODE, FactNode: NodeKind.FACT}


class MemoryHypergraph:
    """Mutable store for the three node levels and their hyperedges."""

    def __init__(self):
        self._lock = threading.RLock()
        self._nodes: dict[NodeId, AnyNode] = {}
        self._edges: dict[str, Hyperedge] = {}
        # (kind, anchor) -> edge id; enforces at most one edge per anchor and kind
        self._edge_by_anchor: dict[tuple[EdgeKind, NodeId], str] = {}
        self._adjacency: dict[NodeId, set[str]] = {}
        self._counters: dict[NodeKind, int] = {k: 0 for k in NodeKind}
        self._edge_counter = 0
        self.revision = 0
        self.meta: dict = {}

    # ------------------------------------------------------------------ nodes

    def add_node(self, node: AnyNode) -> NodeId:
        """Insert a node, assigning the next per-kind ordinal when it has no id."""
        kind = _NODE_KIND_OF[type(node)]
        with self._lock:
            if node.id is None:
                node.id = NodeId(kind, self._counters[kind])
            elif node.id.kind is not kind:
                raise ValidationError("id", f"{node.id} does not match node kind {kind.value}")
            elif node.id in self._nodes:
                raise DuplicateNodeError(f"node {node.id} already present")
            if isinstance(node, FactNode):
                for ep in node.source_episodes:
                    if ep not in self._nodes:
                        raise UnknownNodeError(f"source episode {ep} not in graph")
            self._nodes[node.id] = node
            self._adjacency.setdefault(node.id, set())
            self._counters[kind] = max(self._counters[kind], node.id.ordinal + 1)
            self.revision += 1
            return node.id

    def has_node(self, node_id: NodeId) -> bool:
        return node_id in self._nodes

    def get_node(self, node_id: NodeId) -> AnyNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"no node {node_id}") from None

    def nodes_of_kind(self, kind: NodeKind) -> list[NodeId]:
        """All node ids of one kind in ascending ordinal order."""
        ids = [nid for nid in self._nodes if nid.kind is kind]
        ids.sort(key=NodeId.sort_key)
        return ids

    def touch(self, node_id: NodeId) -> None:
        """Record an in-place node mutation (e.g. regenerated topic metadata)."""
        if node_id not in self._nodes:
            raise UnknownNodeError(f"no node {node_id}")
        with self._lock:
            self.revision += 1

    # ------------------------------------------------------------------ edges

    def upsert_hyperedge(self, kind: EdgeKind, anchor: NodeId, members: set[NodeId],
                         weights: dict[NodeId, float]) -> str:
        """Create or replace the single edge of this kind anchored at `anchor`.

        Replacement swaps the full member set and weight map but keeps the
        edge id, so references held elsewhere stay valid.
        """
        if anchor not in self._nodes:
            raise UnknownNodeError(f"anchor {anchor} not in graph")
        if anchor.kind is not _EDGE_ANCHOR_KIND[kind]:
            raise ValidationError("anchor", f"{kind.value} edge cannot anchor on {anchor}")
        member_kind = _EDGE_MEMBER_KIND[kind]
        for m in members:
            if m not in self._nodes:
                raise UnknownNodeError(f"member {m} not in graph")
            if m.kind is not member_kind:
                raise ValidationError("members", f"{kind.value} edge cannot span {m}")
        with self._lock:
            key = (kind, anchor)
            edge_id = self._edge_by_anchor.get(key)
            if edge_id is None:
                edge_id = f"H{self._edge_counter}"
                self._edge_counter += 1
            else:
                for old_member in self._edges[edge_id].members:
                    self._adjacency[old_member].discard(edge_id)
                self._adjacency[anchor].discard(edge_id)
            edge = Hyperedge(id=edge_id, kind=kind, anchor=anchor,
                             members=frozenset(members), weights=dict(weights))
            self._edges[edge_id] = edge
            self._edge_by_anchor[key] = edge_id
            self._adjacency[anchor].add(edge_id)
            for m in edge.members:
                self._adjacency[m].add(edge_id)
            self.revision += 1
            return edge_id

    def edge(self, edge_id: str) -> Hyperedge:
        try:
            return self._edges[edge_id]
        except KeyError:
            raise UnknownNodeError(f"no hyperedge {edge_id}") from None

    def edge_for_anchor(self, kind: EdgeKind, anchor: NodeId) -> Hyperedge | None:
        edge_id = self._edge_by_anchor.get((kind, anchor))
        return self._edges[edge_id] if edge_id is not None else None

    def edges(self) -> list[Hyperedge]:
        return [self._edges[eid] for eid in sorted(self._edges, key=lambda e: int(e[1:]))]

    def incident_hyperedges(self, node_id: NodeId) -> list[str]:
        """Edge ids touching a node (as anchor or member), in stable order."""
        if node_id not in self._nodes:
            raise UnknownNodeError(f"no node {node_id}")
        return sorted(self._adjacency.get(node_id, ()), key=lambda e: int(e[1:]))

    # ------------------------------------------------------------- traversals

    def get_episodes_of_topic(self, topic_id: NodeId) -> list[NodeId]:
        """Member episodes of the topic's edge, ordered by start time then ordinal."""
        if topic_id.kind is not NodeKind.TOPIC:
            raise ValidationError("topic_id", f"{topic_id} is not a topic id")
        edge = self.edge_for_anchor(EdgeKind.EPISODE_LEVEL, topic_id)
        if edge is None:
            return []
        members = list(edge.members)
        members.sort(key=lambda nid: (self._nodes[nid].start_time, nid.ordinal))
        return members

    def get_facts_of_episode(self, episode_id: NodeId) -> list[NodeId]:
        """Member facts of the episode's edge, ordered by fact ordinal."""
        if episode_id.kind is not NodeKind.EPISODE:
            raise ValidationError("episode_id", f"{episode_id} is not an episode id")
        edge = self.edge_for_anchor(EdgeKind.FACT_LEVEL, episode_id)
        if edge is None:
            return []
        return sorted(edge.members, key=NodeId.sort_key)

    def facts_anchored_to(self, episode_id: NodeId) -> list[NodeId]:
        """Facts whose source set includes the episode, by ordinal."""
        out = [nid for nid, node in self._nodes.items()
               if nid.kind is NodeKind.FACT and episode_id in node.source_episodes]
        out.sort(key=NodeId.sort_key)
        return out

    # ------------------------------------------------------------------ stats

    def counts(self) -> dict[str, int]:
        return {
            "topics": len(self.nodes_of_kind(NodeKind.TOPIC)),
            "episodes": len(self.nodes_of_kind(NodeKind.EPISODE)),
            "facts": len(self.nodes_of_kind(NodeKind.FACT)),
            "hyperedges": len(self._edges),
        }

    def edge_size_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for edge in self._edges.values():
            hist[len(edge.members)] = hist.get(len(edge.members), 0) + 1
        return dict(sorted(hist.items()))

    # ------------------------------------------------------------- validation

    def validate(self) -> None:
        """Check structural invariants; raises ValidationError on the first breach."""
        rebuilt: dict[NodeId, set[str]] = {nid: set() for nid in self._nodes}
        for edge in self._edges.values():
            if edge.anchor not in self._nodes:
                raise ValidationError("anchor", f"edge {edge.id} anchor {edge.anchor} missing")
            rebuilt[edge.anchor].add(edge.id)
            for m in edge.members:
                if m not in self._nodes:
                    raise ValidationError("members", f"edge {edge.id} member {m} missing")
                rebuilt[m].add(edge.id)
        for nid, incident in self._adjacency.items():
            if incident != rebuilt.get(nid, set()):
                raise ValidationError("adjacency", f"adjacency of {nid} out of sync")
        for nid in self.nodes_of_kind(NodeKind.FACT):
            fact = self._nodes[nid]
            for ep in fact.source_episodes:
                if ep not in self._nodes:
                    raise ValidationError("source_episodes", f"{nid} references missing {ep}")
                edge = self.edge_for_anchor(EdgeKind.FACT_LEVEL, ep)
                if edge is None or nid not in edge.members:
                    raise ValidationError(
                        "source_episodes",
                        f"{nid} anchored to {ep} but absent from its fact-level edge")

    # ------------------------------------------------------------ persistence

    def save(self, path: str | os.PathLike) -> None:
        """Write the graph as line-delimited records via a temp file and atomic rename.

        Requires a consistent graph; call sites that build partial graphs must
        finish wiring edges before saving.
        """
        with self._lock:
            self.validate()
            lines = [self._header_record()]
            for nid in self.nodes_of_kind(NodeKind.TOPIC):
                lines.append(self._topic_record(self._nodes[nid]))
            for nid in self.nodes_of_kind(NodeKind.EPISODE):
                lines.append(self._episode_record(self._nodes[nid]))
            for nid in self.nodes_of_kind(NodeKind.FACT):
                lines.append(self._fact_record(self._nodes[nid]))
            for edge in self.edges():
                lines.append(self._edge_record(edge))
            payload = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in lines)
            tmp_path = f"{os.fspath(path)}.tmp.{os.getpid()}"
            with open(tmp_path, "w", encoding="utf-8") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp_path, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MemoryHypergraph":
        """Rebuild a graph from disk; raises StoreFormatError with a byte offset on corruption."""
        graph = cls()
        offset = 0
        header: dict | None = None
        path_str = os.fspath(path)
        with open(path, "rb") as fh:
            for raw in fh:
                line_offset = offset
                offset += len(raw)
                stripped = raw.strip()
                if not stripped:
                    continue
                try:
                    record = json.loads(stripped.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise StoreFormatError(path_str, line_offset, f"bad record: {exc}") from None
                try:
                    if record.get("record") == "header":
                        if record.get("format_version") != FORMAT_VERSION:
                            raise ValueError(
                                f"unsupported format_version {record.get('format_version')}")
                        header = record
                        graph.meta = dict(record.get("meta", {}))
                    elif header is None:
                        raise ValueError(f"record type {record.get('record')!r} before header")
                    else:
                        graph._apply_record(record)
                except StoreFormatError:
                    raise
                except Exception as exc:
                    raise StoreFormatError(path_str, line_offset, str(exc)) from None
        if header is None:
            raise StoreFormatError(path_str, 0, "missing header record")
        # Persisted counters and revision are authoritative over the bumps made
        # while re-adding records.
        graph.revision = int(header["revision"])
        for kind_name, value in header.get("counters", {}).items():
            kind = NodeKind(kind_name)
            graph._counters[kind] = max(graph._counters[kind], int(value))
        graph._edge_counter = max(graph._edge_counter, int(header.get("edge_counter", 0)))
        graph.validate()
        return graph

    # Record builders keep the on-disk shape in one place.

    def _header_record(self) -> dict:
        return {
            "record": "header",
            "format_version": FORMAT_VERSION,
            "revision": self.revision,
            "counters": {k.value: v for k, v in self._counters.items()},
            "edge_counter": self._edge_counter,
            "meta": self.meta,
        }

    @staticmethod
    def _topic_record(node: TopicNode) -> dict:
        return {
            "record": "topic",
            "id": str(node.id),
            "title": node.title,
            "summary": node.summary,
            "keywords": list(node.keywords),
            "revision": node.revision,
        }

    @staticmethod
    def _episode_record(node: EpisodeNode) -> dict:
        return {
            "record": "episode",
            "id": str(node.id),
            "title": node.title,
            "summary": node.summary,
            "start_time": format_instant(node.start_time),
            "end_time": format_instant(node.end_time),
            "dialogue": [t.to_dict() for t in node.dialogue],
        }

    @staticmethod
    def _fact_record(node: FactNode) -> dict:
        return {
            "record": "fact",
            "id": str(node.id),
            "content": node.content,
            "potential": node.potential,
            "keywords": list(node.keywords),
            "source_episodes": sorted(str(e) for e in node.source_episodes),
        }

    @staticmethod
    def _edge_record(edge: Hyperedge) -> dict:
        return {
            "record": "hyperedge",
            "id": edge.id,
            "kind": edge.kind.value,
            "anchor": str(edge.anchor),
            "members": sorted((str(m) for m in edge.members),
                              key=lambda s: NodeId.parse(s).sort_key()),
            "weights": {str(m): edge.weights[m] for m in
                        sorted(edge.weights, key=NodeId.sort_key)},
        }

    def _apply_record(self, record: dict) -> None:
        rtype = record.get("record")
        if rtype == "topic":
            node = TopicNode(
                title=record["title"], summary=record["summary"],
                keywords=list(record["keywords"]), revision=int(record["revision"]),
                id=NodeId.parse(record["id"]))
            self.add_node(node)
        elif rtype == "episode":
            dialogue = [DialogueTurn.from_dict(t) for t in record["dialogue"]]
            node = EpisodeNode(
                dialogue=dialogue, title=record["title"], summary=record["summary"],
                start_time=parse_instant(record["start_time"]),
                end_time=parse_instant(record["end_time"]),
                id=NodeId.parse(record["id"]))
            self.add_node(node)
        elif rtype == "fact":
            node = FactNode(
                content=record["content"], potential=record["potential"],
                keywords=list(record["keywords"]),
                source_episodes=frozenset(NodeId.parse(e) for e in record["source_episodes"]),
                id=NodeId.parse(record["id"]))
            self.add_node(node)
        elif rtype == "hyperedge":
            kind = EdgeKind(record["kind"])
            anchor = NodeId.parse(record["anchor"])
            members = {NodeId.parse(m) for m in record["members"]}
            weights = {NodeId.parse(m): float(w) for m, w in record["weights"].items()}
            edge_id = self.upsert_hyperedge(kind, anchor, members, weights)
            if edge_id != record["id"]:
                # Ids are assigned in file order; keep the persisted id authoritative.
                edge = self._edges.pop(edge_id)
                edge.id = record["id"]
                self._edges[record["id"]] = edge
                self._edge_by_anchor[(kind, anchor)] = record["id"]
                for nid in self._adjacency:
                    if edge_id in self._adjacency[nid]:
                        self._adjacency[nid].discard(edge_id)
                        self._adjacency[nid].add(record["id"])
        else:
            raise ValueError(f"unknown record type {rtype!r}")


def file_digest(path: str | os.PathLike) -> str:
    """Content hash used to detect re-ingestion of the same source file."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
