"""Dual-route indexing over the memory hypergraph.

Each node contributes one retrievable document: a topic is its title, summary
and keywords; an episode is its title and summary (raw dialogue stays out of
the index); a fact is its content, anticipated-query text and keywords.

The lexical route is Okapi BM25 with per-kind corpus statistics. The semantic
route embeds node documents, derives one embedding per hyperedge as the
softmax-weighted sum of its members' embeddings (softmax over the stored
membership weights), then runs a single propagation pass
h'_v = h_v + lambda * Agg(edge embeddings incident to v). Nodes with no
incident edges keep their base embedding. The propagated vectors are what
retrieval scores with cosine.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CacheStaleError, StoreFormatError
from .graph import (
    EpisodeNode,
    FactNode,
    Hyperedge,
    MemoryHypergraph,
    NodeId,
    NodeKind,
    TopicNode,
)
from .text import tokenize

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_LAMBDA = 0.5


class AggMode(str, Enum):
    MEAN = "mean"
    SUM = "sum"


def node_document(node: TopicNode | EpisodeNode | FactNode) -> str:
    """The text a node is indexed under, single-space joined."""
    if isinstance(node, TopicNode):
        parts = [node.title, node.summary, *node.keywords]
    elif isinstance(node, EpisodeNode):
        parts = [node.title, node.summary]
    else:
        parts = [node.content, node.potential, *node.keywords]
    return " ".join(p for p in parts if p)


class Bm25Index:
    """Okapi BM25 over one corpus: inverted postings plus length statistics.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), which keeps scores
    non-negative; a query term absent from a document contributes 0 and a
    query sharing no tokens with a document scores it 0 overall. Query terms
    are treated as a bag, so repeating a term never lowers a score.
    """

    def __init__(self, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.k1 = k1
        self.b = b
        self._postings: dict[str, dict[NodeId, int]] = defaultdict(dict)
        self._doc_lengths: dict[NodeId, int] = {}
        self._total_length = 0

    def add(self, doc_id: NodeId, tokens: list[str]) -> None:
        if doc_id in self._doc_lengths:
            raise ValueError(f"document {doc_id} already indexed")
        self._doc_lengths[doc_id] = len(tokens)
        self._total_length += len(tokens)
        for token in tokens:
            freqs = self._postings[token]
            freqs[doc_id] = freqs.get(doc_id, 0) + 1

    def __contains__(self, doc_id: NodeId) -> bool:
        return doc_id in self._doc_lengths

    def __len__(self) -> int:
        return len(self._doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        return self._total_length / len(self._doc_lengths) if self._doc_lengths else 0.0

    def idf(self, token: str) -> float:
        df = len(self._postings.get(token, ()))
        if df == 0:
            return 0.0
        n = len(self._doc_lengths)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def score(self, query_tokens: list[str], doc_id: NodeId) -> float:
        scores = self.scores(query_tokens, {doc_id})
        return scores.get(doc_id, 0.0)

    def scores(self, query_tokens: list[str], doc_ids: set[NodeId] | None = None
               ) -> dict[NodeId, float]:
        """Accumulated BM25 scores; documents scoring 0 are simply absent."""
        if not self._doc_lengths:
            return {}
        avgdl = self.avg_doc_length
        acc: dict[NodeId, float] = {}
        for token in query_tokens:
            freqs = self._postings.get(token)
            if not freqs:
                continue
            idf = self.idf(token)
            for doc_id, tf in freqs.items():
                if doc_ids is not None and doc_id not in doc_ids:
                    continue
                dl = self._doc_lengths[doc_id]
                denom = tf + self.k1 * (1.0 - self.b + self.b * dl / avgdl)
                acc[doc_id] = acc.get(doc_id, 0.0) + idf * tf * (self.k1 + 1.0) / denom
        return acc

    def postings_snapshot(self) -> tuple[dict, dict]:
        postings = {
            token: {str(doc): tf for doc, tf in sorted(freqs.items(),
                                                       key=lambda kv: kv[0].sort_key())}
            for token, freqs in sorted(self._postings.items())
        }
        lengths = {str(doc): n for doc, n in sorted(self._doc_lengths.items(),
                                                    key=lambda kv: kv[0].sort_key())}
        return postings, lengths

    @classmethod
    def from_snapshot(cls, postings: dict, lengths: dict, k1: float, b: float) -> "Bm25Index":
        index = cls(k1=k1, b=b)
        for doc, n in lengths.items():
            doc_id = NodeId.parse(doc)
            index._doc_lengths[doc_id] = int(n)
            index._total_length += int(n)
        for token, freqs in postings.items():
            index._postings[token] = {NodeId.parse(d): int(tf) for d, tf in freqs.items()}
        return index


class LexicalIndex:
    """Per-kind BM25 indexes so corpus statistics stay level-local."""

    def __init__(self, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.k1 = k1
        self.b = b
        self._by_kind: dict[NodeKind, Bm25Index] = {k: Bm25Index(k1, b) for k in NodeKind}

    def add_document(self, node_id: NodeId, text: str) -> None:
        self._by_kind[node_id.kind].add(node_id, tokenize(text))

    def __contains__(self, node_id: NodeId) -> bool:
        return node_id in self._by_kind[node_id.kind]

    def index_for(self, kind: NodeKind) -> Bm25Index:
        return self._by_kind[kind]

    def scores(self, query_tokens: list[str], node_ids: list[NodeId]) -> dict[NodeId, float]:
        out: dict[NodeId, float] = {}
        by_kind: dict[NodeKind, set[NodeId]] = defaultdict(set)
        for nid in node_ids:
            by_kind[nid.kind].add(nid)
        for kind, ids in by_kind.items():
            out.update(self._by_kind[kind].scores(query_tokens, ids))
        return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors score 0 by convention."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def softmax_weights(weights: dict[NodeId, float]) -> dict[NodeId, float]:
    """Normalize stored membership weights into attention coefficients."""
    if not weights:
        raise ValueError("softmax over an empty weight map")
    exps = {nid: math.exp(w) for nid, w in weights.items()}
    total = sum(exps.values())
    return {nid: e / total for nid, e in exps.items()}


def edge_embedding(edge: Hyperedge, base: dict[NodeId, np.ndarray]) -> np.ndarray | None:
    """Softmax-weighted sum of member embeddings; None if any member lacks one."""
    if any(m not in base for m in edge.members):
        return None
    alphas = softmax_weights(edge.weights)
    members = sorted(edge.members, key=NodeId.sort_key)
    total = np.zeros_like(base[members[0]])
    for m in members:
        total = total + alphas[m] * base[m]
    return total


def propagate(graph: MemoryHypergraph, base: dict[NodeId, np.ndarray],
              edge_vecs: dict[str, np.ndarray], lam: float,
              agg_mode: AggMode = AggMode.MEAN) -> dict[NodeId, np.ndarray]:
    """One propagation pass: h'_v = h_v + lambda * Agg over incident edges.

    Runs over every node that has a base embedding; a node with no usable
    incident edge keeps its base embedding unchanged.
    """
    out: dict[NodeId, np.ndarray] = {}
    for nid, h in base.items():
        incident = [edge_vecs[eid] for eid in graph.incident_hyperedges(nid)
                    if eid in edge_vecs]
        if not incident:
            out[nid] = h.copy()
            continue
        stacked = np.stack(incident)
        agg = stacked.mean(axis=0) if agg_mode is AggMode.MEAN else stacked.sum(axis=0)
        out[nid] = h + lam * agg
    return out


@dataclass
class IndexState:
    """Lexical and semantic indexes over one hypergraph snapshot."""

    lexical: LexicalIndex
    base: dict[NodeId, np.ndarray] = field(default_factory=dict)
    edge_vecs: dict[str, np.ndarray] = field(default_factory=dict)
    propagated: dict[NodeId, np.ndarray] = field(default_factory=dict)
    lam: float = DEFAULT_LAMBDA
    agg_mode: AggMode = AggMode.MEAN
    graph_revision: int = 0
    dimension: int | None = None

    @classmethod
    def empty(cls, lam: float = DEFAULT_LAMBDA, agg_mode: AggMode = AggMode.MEAN,
              k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> "IndexState":
        return cls(lexical=LexicalIndex(k1=k1, b=b), lam=lam, agg_mode=agg_mode)

    def add_node(self, graph: MemoryHypergraph, node_id: NodeId, embedder) -> None:
        """Index one node incrementally (lexical posting plus base embedding)."""
        doc = node_document(graph.get_node(node_id))
        if node_id not in self.lexical:
            self.lexical.add_document(node_id, doc)
        if node_id not in self.base:
            vec = embedder.embed([doc])[0]
            self.base[node_id] = vec
            self.dimension = int(vec.shape[0])
        self.graph_revision = graph.revision

    def recompute_derived(self, graph: MemoryHypergraph) -> None:
        """Refresh edge embeddings and the propagation pass from current base vectors."""
        self.edge_vecs = {}
        for edge in graph.edges():
            vec = edge_embedding(edge, self.base)
            if vec is not None:
                self.edge_vecs[edge.id] = vec
        self.propagated = propagate(graph, self.base, self.edge_vecs, self.lam, self.agg_mode)
        self.graph_revision = graph.revision


def build_index(graph: MemoryHypergraph, embedder, lam: float = DEFAULT_LAMBDA,
                agg_mode: AggMode = AggMode.MEAN, k1: float = DEFAULT_K1,
                b: float = DEFAULT_B) -> IndexState:
    """Index every node in the graph and run the propagation pass."""
    state = IndexState.empty(lam=lam, agg_mode=agg_mode, k1=k1, b=b)
    node_ids: list[NodeId] = []
    for kind in (NodeKind.TOPIC, NodeKind.EPISODE, NodeKind.FACT):
        node_ids.extend(graph.nodes_of_kind(kind))
    if node_ids:
        docs = [node_document(graph.get_node(nid)) for nid in node_ids]
        vectors = embedder.embed(docs)
        for nid, doc, vec in zip(node_ids, docs, vectors):
            state.lexical.add_document(nid, doc)
            state.base[nid] = vec
        state.dimension = int(vectors[0].shape[0])
    state.recompute_derived(graph)
    state.graph_revision = graph.revision
    return state


# --------------------------------------------------------------------- cache

def save_index_cache(state: IndexState, path: str | os.PathLike) -> None:
    """Persist the index alongside the store; keyed to the graph revision."""
    records: list[dict] = [{
        "record": "header",
        "format_version": CACHE_FORMAT_VERSION,
        "kind": "index_cache",
        "graph_revision": state.graph_revision,
        "lambda": state.lam,
        "agg_mode": state.agg_mode.value,
        "dimension": state.dimension,
        "k1": state.lexical.k1,
        "b": state.lexical.b,
    }]
    for scope, table in (("base", state.base), ("propagated", state.propagated)):
        for nid in sorted(table, key=NodeId.sort_key):
            records.append({"record": "embedding", "scope": scope, "id": str(nid),
                            "values": [float(x) for x in table[nid]]})
    for eid in sorted(state.edge_vecs, key=lambda e: int(e[1:])):
        records.append({"record": "embedding", "scope": "edge", "id": eid,
                        "values": [float(x) for x in state.edge_vecs[eid]]})
    for kind in NodeKind:
        postings, lengths = state.lexical.index_for(kind).postings_snapshot()
        records.append({"record": "postings", "node_kind": kind.value,
                        "postings": postings, "doc_lengths": lengths})
    payload = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in records)
    tmp_path = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp_path, "w", encoding="utf-8") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp_path, path)


def load_index_cache(path: str | os.PathLike, graph: MemoryHypergraph) -> IndexState:
    """Load a cached index; CacheStaleError when it predates the current graph."""
    path_str = os.fspath(path)
    offset = 0
    header: dict | None = None
    embeddings: dict[tuple[str, str], list[float]] = {}
    postings_by_kind: dict[str, dict] = {}
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
            rtype = record.get("record")
            if rtype == "header":
                if record.get("format_version") != CACHE_FORMAT_VERSION:
                    raise StoreFormatError(path_str, line_offset, "unsupported cache version")
                header = record
            elif rtype == "embedding":
                embeddings[(record["scope"], record["id"])] = record["values"]
            elif rtype == "postings":
                postings_by_kind[record["node_kind"]] = record
            else:
                raise StoreFormatError(path_str, line_offset, f"unknown record type {rtype!r}")
    if header is None:
        raise StoreFormatError(path_str, 0, "missing header record")
    if int(header["graph_revision"]) != graph.revision:
        raise CacheStaleError(
            f"cache at revision {header['graph_revision']}, graph at {graph.revision}")
    lexical = LexicalIndex(k1=float(header["k1"]), b=float(header["b"]))
    for kind in NodeKind:
        record = postings_by_kind.get(kind.value)
        if record is not None:
            lexical._by_kind[kind] = Bm25Index.from_snapshot(
                record["postings"], record["doc_lengths"],
                k1=float(header["k1"]), b=float(header["b"]))
    state = IndexState(
        lexical=lexical,
        lam=float(header["lambda"]),
        agg_mode=AggMode(header["agg_mode"]),
        graph_revision=int(header["graph_revision"]),
        dimension=header["dimension"],
    )
    for (scope, ident), values in embeddings.items():
        vec = np.asarray(values, dtype=np.float64)
        if scope == "base":
            state.base[NodeId.parse(ident)] = vec
        elif scope == "propagated":
            state.propagated[NodeId.parse(ident)] = vec
        elif scope == "edge":
            state.edge_vecs[ident] = vec
        else:
            raise StoreFormatError(path_str, 0, f"unknown embedding scope {scope!r}")
    return state
