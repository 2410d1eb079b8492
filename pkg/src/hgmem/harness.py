"""End-to-end evaluation: construct memory from streams, answer questions.

A corpus is a JSONL file of two record types sharing a conversation_id:
``turn`` records carry the dialogue (speaker, text, timestamp, session_id)
and ``qa`` records carry questions with gold answers and a category label.
Each conversation is processed independently: its turns are ingested through
the full construction pipeline, a fresh index is built, and every question
runs retrieval, answer generation, and judging.

Items whose pipeline raises are excluded from accuracy and reported
separately — an error is never silently scored as a wrong (or right)
answer. Repeats re-run the whole pipeline with providers reset, and
report averaged accuracies.
"""

from __future__ import annotations

import json
import logging
import re
import statistics
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .construction import MemoryBuilder
from .errors import CorpusFormatError
from .graph import DialogueTurn, MemoryHypergraph
from .indexing import AggMode, DEFAULT_LAMBDA, build_index
from .providers.base import (
    ChatClient,
    ChatRequest,
    ChatTransport,
    EmbeddingProvider,
    RerankProvider,
)
from .providers.templates import TemplateRegistry
from .retrieval import RetrievalConfig, TokenLedger, answer, retrieve

logger = logging.getLogger(__name__)


class Category(str, Enum):
    SINGLE_HOP = "single-hop"
    MULTI_HOP = "multi-hop"
    TEMPORAL = "temporal"
    OPEN_DOMAIN = "open-domain"

    @classmethod
    def parse(cls, label: str) -> "Category":
        key = re.sub(r"[^a-z]", "", label.lower())
        try:
            return _CATEGORY_ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown question category {label!r}") from None


_CATEGORY_ALIASES = {
    "singlehop": Category.SINGLE_HOP,
    "multihop": Category.MULTI_HOP,
    "temporal": Category.TEMPORAL,
    "opendomain": Category.OPEN_DOMAIN,
}

CATEGORY_ORDER = (Category.SINGLE_HOP, Category.MULTI_HOP,
                  Category.TEMPORAL, Category.OPEN_DOMAIN)


@dataclass(frozen=True)
class QaItem:
    id: str
    question: str
    gold: str
    category: Category


@dataclass
class DialogueStream:
    conversation_id: str
    turns: list[DialogueTurn]
    qa: list[QaItem]


def load_corpus(path: str | Path) -> list[DialogueStream]:
    """Parse a JSONL corpus into per-conversation streams.

    Within a conversation, sessions are ordered by their first timestamp and
    turns keep file order inside each session.
    """
    path = Path(path)
    turns: dict[str, list[tuple[int, DialogueTurn]]] = {}
    qa: dict[str, list[QaItem]] = {}
    order: list[str] = []
    with path.open("r", encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(str(path), index, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(str(path), index, "record must be an object")
            kind = record.get("type")
            conv = record.get("conversation_id")
            if not isinstance(conv, str) or not conv:
                raise CorpusFormatError(str(path), index, "missing conversation_id")
            if conv not in turns:
                turns[conv] = []
                qa[conv] = []
                order.append(conv)
            try:
                if kind == "turn":
                    turn = DialogueTurn(
                        speaker=record["speaker"], text=record["text"],
                        timestamp=record["timestamp"], session_id=record["session_id"])
                    turns[conv].append((index, turn))
                elif kind == "qa":
                    item = QaItem(
                        id=str(record.get("id", f"item{index}")),
                        question=record["question"], gold=record["gold"],
                        category=Category.parse(record["category"]))
                    if not item.question or not isinstance(item.gold, str):
                        raise ValueError("question and gold must be non-empty strings")
                    qa[conv].append(item)
                else:
                    raise ValueError(f"unknown record type {kind!r}")
            except CorpusFormatError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(str(path), index, str(exc)) from exc
    streams = []
    for conv in order:
        sessions: dict[str, list[tuple[int, DialogueTurn]]] = {}
        for pair in turns[conv]:
            sessions.setdefault(pair[1].session_id, []).append(pair)
        ordered_sessions = sorted(
            sessions.values(), key=lambda pairs: (pairs[0][1].timestamp, pairs[0][0]))
        flat = [turn for pairs in ordered_sessions for _, turn in pairs]
        streams.append(DialogueStream(conversation_id=conv, turns=flat, qa=qa[conv]))
    return streams


# --------------------------------------------------------------------- judges

class ExactMatchJudge:
    """Correct iff the candidate equals the gold after whitespace/case folding."""

    name = "exact"

    @staticmethod
    def _norm(text: str) -> str:
        return " ".join(text.lower().split())

    def judge(self, question: str, gold: str, candidate: str) -> bool:
        return self._norm(candidate) == self._norm(gold)


class SubstringJudge:
    """Correct iff every ' | '-separated gold part occurs in the candidate."""

    name = "substring"

    def judge(self, question: str, gold: str, candidate: str) -> bool:
        folded = candidate.lower()
        parts = [part.strip().lower() for part in gold.split(" | ")]
        return all(part in folded for part in parts if part)


class LlmJudge:
    """Delegates the verdict to a chat model through the judge template."""

    name = "llm"

    def __init__(self, client: ChatClient):
        self.client = client

    def judge(self, question: str, gold: str, candidate: str) -> bool:
        response = self.client.complete(ChatRequest(
            template_id="judge",
            variables={"question": question, "gold": gold, "candidate": candidate},
        ), retry_parse=True)
        return response.payload["correct"]


# ------------------------------------------------------------------ providers

@dataclass
class ProviderBundle:
    """Everything the pipeline needs, resettable between runs."""

    chat_transport: ChatTransport
    embedder: EmbeddingProvider
    judge: object
    reranker: RerankProvider | None = None
    registry: TemplateRegistry | None = None

    def client(self) -> ChatClient:
        return ChatClient(self.chat_transport, registry=self.registry)

    def reset(self) -> None:
        self.chat_transport.reset()
        for provider in (self.embedder, self.reranker, self.judge):
            reset = getattr(provider, "reset", None)
            if callable(reset):
                reset()


# -------------------------------------------------------------------- results

@dataclass
class ItemResult:
    item: QaItem
    correct: bool | None
    answer: str | None
    error: str | None
    context_tokens: int = 0


@dataclass
class RunReport:
    label: str
    repeats: int
    config: dict
    overall: float
    per_category: dict[Category, float]
    answered: int
    errored: int
    per_run_overall: list[float]
    tokens: dict[str, int]
    items: list[ItemResult] = field(repr=False, default_factory=list)


def _mean(values: list[float]) -> float:
    return statistics.fmean(values) if values else 0.0


def run(streams: list[DialogueStream], bundle: ProviderBundle,
        config: RetrievalConfig | None = None, *, repeats: int = 1,
        label: str = "full", lam: float = DEFAULT_LAMBDA,
        agg_mode: AggMode = AggMode.MEAN) -> RunReport:
    """Evaluate one configuration over a corpus, repeated with fresh providers."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    config = config or RetrievalConfig()
    config.validate()
    run_overall: list[float] = []
    run_categories: list[dict[Category, float]] = []
    tokens = {"context": 0, "prompt": 0, "completion": 0}
    answered = errored = 0
    last_items: list[ItemResult] = []
    for repeat in range(repeats):
        bundle.reset()
        items: list[ItemResult] = []
        for stream in streams:
            items.extend(_run_stream(stream, bundle, config, lam, agg_mode))
        scored = [r for r in items if r.error is None]
        run_overall.append(_mean([1.0 if r.correct else 0.0 for r in scored]))
        by_cat: dict[Category, float] = {}
        for cat in CATEGORY_ORDER:
            cat_items = [r for r in scored if r.item.category is cat]
            if cat_items:
                by_cat[cat] = _mean([1.0 if r.correct else 0.0 for r in cat_items])
        run_categories.append(by_cat)
        answered += len(scored)
        errored += len(items) - len(scored)
        for result in items:
            tokens["context"] += result.context_tokens
        last_items = items
    per_category: dict[Category, float] = {}
    for cat in CATEGORY_ORDER:
        values = [rc[cat] for rc in run_categories if cat in rc]
        if values:
            per_category[cat] = _mean(values)
    return RunReport(
        label=label, repeats=repeats, config=config.snapshot(),
        overall=_mean(run_overall), per_category=per_category,
        answered=answered, errored=errored, per_run_overall=run_overall,
        tokens=tokens, items=last_items,
    )


def _run_stream(stream: DialogueStream, bundle: ProviderBundle,
                config: RetrievalConfig, lam: float,
                agg_mode: AggMode) -> list[ItemResult]:
    client = bundle.client()
    ledger = TokenLedger()
    try:
        graph = MemoryHypergraph()
        builder = MemoryBuilder(graph, client, bundle.embedder,
                                lam=lam, agg_mode=agg_mode)
        builder.ingest_stream(stream.turns)
        state = build_index(graph, bundle.embedder, lam=lam, agg_mode=agg_mode)
    except Exception as exc:  # noqa: BLE001 - a broken stream must not sink the run
        logger.warning("conversation %s failed during construction: %s",
                       stream.conversation_id, exc)
        message = f"construction failed: {exc}"
        return [ItemResult(item=item, correct=None, answer=None, error=message)
                for item in stream.qa]
    results = []
    for item in stream.qa:
        try:
            retrieved = retrieve(item.question, graph, state, config,
                                 bundle.embedder, bundle.reranker)
            text = answer(item.question, retrieved.context, client, ledger=ledger)
            verdict = bundle.judge.judge(item.question, item.gold, text)
            results.append(ItemResult(item=item, correct=verdict, answer=text,
                                      error=None,
                                      context_tokens=retrieved.token_estimate))
        except Exception as exc:  # noqa: BLE001 - item errors are reported, not fatal
            logger.warning("item %s failed: %s", item.id, exc)
            results.append(ItemResult(item=item, correct=None, answer=None,
                                      error=str(exc)))
    return results


# ------------------------------------------------------------------ ablations

ABLATIONS: list[tuple[str, dict]] = [
    ("full", {}),
    ("w/o FC", {"context_mode": "episode_only"}),
    ("w/o EC", {"context_mode": "fact_only"}),
    ("w/o TR", {"bypass_topic": True}),
    ("w/o TR&FC", {"bypass_topic": True, "context_mode": "episode_only"}),
    ("w/o TR&EC", {"bypass_topic": True, "context_mode": "fact_only"}),
    ("w/o TR&ER", {"bypass_topic": True, "bypass_episode": True}),
]


def ablation_matrix(streams: list[DialogueStream], bundle: ProviderBundle,
                    base_config: RetrievalConfig | None = None, *,
                    repeats: int = 1, lam: float = DEFAULT_LAMBDA,
                    agg_mode: AggMode = AggMode.MEAN) -> list[RunReport]:
    """Run the full configuration plus the six standard ablations."""
    from .retrieval import ContextMode

    base = base_config or RetrievalConfig()
    reports = []
    for label, overrides in ABLATIONS:
        fields = dict(overrides)
        if "context_mode" in fields:
            fields["context_mode"] = ContextMode(fields["context_mode"])
        cfg = replace(base, **fields)
        reports.append(run(streams, bundle, cfg, repeats=repeats, label=label,
                           lam=lam, agg_mode=agg_mode))
    return reports


def format_report(reports: list[RunReport]) -> str:
    """Fixed-width accuracy table, one row per configuration."""
    headers = ["config"] + [c.value for c in CATEGORY_ORDER] + ["overall", "answered", "errors"]
    rows = []
    for report in reports:
        row = [report.label]
        for cat in CATEGORY_ORDER:
            value = report.per_category.get(cat)
            row.append("-" if value is None else f"{value:.3f}")
        row.append(f"{report.overall:.3f}")
        row.append(str(report.answered))
        row.append(str(report.errored))
        rows.append(row)
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) if rows else len(headers[i])
              for i in range(len(headers))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)
