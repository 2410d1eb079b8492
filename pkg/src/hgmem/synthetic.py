"""Deterministic synthetic corpora for exercising the full pipeline offline.

A synthetic corpus bundles three aligned artifacts:

* turn and QA records in the evaluation corpus format,
* a per-template script that drives ScriptedChatTransport through the exact
  sequence of construction calls the stream produces (two turns per episode,
  episodes interleaved round-robin across topics so every aggregation case
  occurs: the first episode initializes, the rest of wave zero open new
  topics, later waves update existing ones),
* a plan detailed enough to materialize the same hypergraph directly,
  bypassing the construction pipeline, so both build paths can be compared
  byte for byte.

Vocabulary is synthetic and collision-free: every topic owns disjoint
tokens, so lexical and embedding rankings are analyzable. With ``decoys``
greater than zero the corpus adds decoy topics engineered to flood *flat*
fact retrieval on multi-hop queries while staying invisible to hierarchical
retrieval: decoy facts carry all the multi-hop query tokens, but decoy
episode summaries share no tokens with any query, so the episode stage
filters them out. Single-hop answers stay retrievable either way, which
separates the retrieval modes by query category.

Gold strings are dedicated answer tokens that never appear in any question,
so a correct answer requires the relevant memory to be retrieved.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .construction import META_EXTRACTED
from .graph import (
    DialogueTurn,
    EdgeKind,
    EpisodeNode,
    FactNode,
    MemoryHypergraph,
    TopicNode,
)
from .providers.mocks import ScriptedChatTransport
from .text import format_instant, tokenize

BASE_TIME = datetime(2025, 1, 6, 9, 0, 0, tzinfo=timezone.utc)
WEIGHT_FIRST = 0.9
WEIGHT_LATER = 0.8
WEIGHT_FACT = 0.7
ECHO_TEMPLATES = ("answer_generation",)

MH_TOKENS = ("mhalpha", "mhbeta", "mhgamma")
EPISODE_TURNS = 2


@dataclass(frozen=True)
class _EpisodePlan:
    index: int
    column: int
    wave: int
    turns: tuple[DialogueTurn, ...]
    title: str
    summary: str


@dataclass
class SyntheticCorpus:
    conversation_id: str
    topics: int
    episodes_per_topic: int
    facts_per_episode: int
    decoys: int
    seed: int
    records: list[dict]
    script: dict[str, list]
    echo_templates: tuple[str, ...]
    answer_facts: dict[str, list[str]]
    vocabulary: list[str]
    _episodes: list[_EpisodePlan] = field(repr=False, default_factory=list)

    @property
    def qa_records(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "qa"]

    @property
    def turn_records(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "turn"]

    def turns(self) -> list[DialogueTurn]:
        return [DialogueTurn(speaker=r["speaker"], text=r["text"],
                             timestamp=r["timestamp"], session_id=r["session_id"])
                for r in self.turn_records]

    def transport(self) -> ScriptedChatTransport:
        return ScriptedChatTransport(self.script, echo_templates=self.echo_templates)

    def materialize_graph(self) -> MemoryHypergraph:
        """Build the expected hypergraph directly, without any chat calls.

        Mirrors the construction pipeline mutation for mutation, so a graph
        built by MemoryBuilder from the scripted stream serializes to the
        same bytes.
        """
        graph = MemoryHypergraph()
        topic_of_column: dict[int, TopicNode] = {}
        for plan in self._episodes:
            episode = EpisodeNode.from_dialogue(list(plan.turns), plan.title, plan.summary)
            graph.add_node(episode)
            payload = self.script["topic_aggregation"][plan.index]
            if plan.column not in topic_of_column:
                topic = TopicNode(title=payload["title"], summary=payload["summary"],
                                  keywords=list(payload["keywords"]))
                graph.add_node(topic)
                topic_of_column[plan.column] = topic
                graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, topic.id,
                                       {episode.id}, {episode.id: WEIGHT_FIRST})
            else:
                topic = topic_of_column[plan.column]
                topic.title = payload["title"]
                topic.summary = payload["summary"]
                topic.keywords = list(payload["keywords"])
                topic.revision += 1
                graph.touch(topic.id)
                edge = graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, topic.id)
                members = set(edge.members) | {episode.id}
                weights = dict(edge.weights)
                weights[episode.id] = WEIGHT_LATER
                graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, topic.id, members, weights)
        for column in sorted(topic_of_column):
            topic = topic_of_column[column]
            payload = self.script["fact_extraction"][column]
            episodes = graph.get_episodes_of_topic(topic.id)
            new_weights = {}
            for entry in payload["facts"]:
                fact = FactNode(content=entry["content"], potential=entry["potential"],
                                keywords=list(entry["keywords"]),
                                source_episodes=frozenset(
                                    _parse_ids(entry["source_episodes"])))
                graph.add_node(fact)
                new_weights[fact.id] = entry["importance_weight"]
            for ep in episodes:
                anchored = graph.facts_anchored_to(ep)
                if not anchored:
                    continue
                weights = {f: new_weights.get(f, WEIGHT_FACT) for f in anchored}
                graph.upsert_hyperedge(EdgeKind.FACT_LEVEL, ep, set(anchored), weights)
            graph.meta.setdefault(META_EXTRACTED, {})[str(topic.id)] = topic.revision
        return graph

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        """Write corpus.jsonl and script.json under a directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        corpus_path = directory / "corpus.jsonl"
        with corpus_path.open("w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        script_path = directory / "script.json"
        payload = {"echo": list(self.echo_templates), "templates": self.script}
        script_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
        return corpus_path, script_path


def _parse_ids(raw: list) -> set:
    from .graph import NodeId
    return {NodeId.parse(str(r)) for r in raw}


def load_script_file(path: str | Path) -> tuple[dict[str, list], tuple[str, ...]]:
    """Read a script.json produced by SyntheticCorpus.write."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "templates" not in data:
        raise ValueError(f"{path}: expected an object with a 'templates' key")
    echo = tuple(data.get("echo", []))
    return data["templates"], echo


def build_synthetic(topics: int = 10, episodes_per_topic: int = 3,
                    facts_per_episode: int = 4, decoys: int = 0,
                    seed: int = 0, conversation_id: str = "conv0") -> SyntheticCorpus:
    """Generate a deterministic corpus, construction script, and QA set."""
    if topics < 1 or episodes_per_topic < 1 or facts_per_episode < 1:
        raise ValueError("topics, episodes_per_topic, facts_per_episode must be >= 1")
    if decoys > 0 and facts_per_episode < 2:
        raise ValueError("decoy corpora need at least two fact slots per episode")
    rng = random.Random(seed)
    columns = topics + decoys
    total_eps = columns * episodes_per_topic

    script: dict[str, list] = {
        "episode_boundary": [],
        "episode_metadata": [],
        "topic_aggregation": [],
        "fact_extraction": [],
    }
    records: list[dict] = []
    plans: list[_EpisodePlan] = []
    fact_payloads: list[list[dict]] = [[] for _ in range(columns)]

    for index in range(total_eps):
        wave, column = divmod(index, columns)
        e = wave
        decoy = column >= topics
        t0 = BASE_TIME + timedelta(hours=index)
        t1 = t0 + timedelta(seconds=90)
        session = f"day{wave}"
        ep_ref = f"E{index}"

        if not decoy:
            topic_tok = f"topic{column}"
            rare = f"rare{column}x{e}"
            cat0, cat1 = f"cat{column}x0", f"cat{column}x1"
            if decoys > 0:
                uniq = [f"uniq{column}x{e}"]
                ans = [f"ans{column}x{e}"]
                piece = f"piece{column}x{e}"
                fillers = [f"fill{column}x{e}x{s}" for s in range(facts_per_episode - 2)]
                text_a = (f"Starting my diary for {topic_tok}: {rare} happened today. "
                          f"Remember {uniq[0]} and the outcome {ans[0]}.")
                text_b = (f"Logged {MH_TOKENS[0]} {MH_TOKENS[1]} {piece} alongside "
                          f"{' '.join(fillers) or 'the basics'} ({cat0} {cat1}).")
                summary = (f"diary entry about {topic_tok}: {rare} with {uniq[0]} "
                           f"leading to {ans[0]} plus {cat0} {cat1}.")
                entries = [{
                    "content": f"{topic_tok} {rare} {uniq[0]} {ans[0]} {cat0} {cat1}",
                    "potential": f"May matter for future {topic_tok} plans.",
                    "keywords": [uniq[0]],
                    "importance_weight": WEIGHT_FACT,
                    "source_episodes": [ep_ref],
                }, {
                    "content": f"{MH_TOKENS[0]} {MH_TOKENS[1]} {piece}",
                    "potential": "Part of a longer chain.",
                    "keywords": [piece],
                    "importance_weight": WEIGHT_FACT,
                    "source_episodes": [ep_ref],
                }]
                for filler in fillers:
                    entries.append({
                        "content": f"{topic_tok} {rare} {filler} {cat0} {cat1}",
                        "potential": "Background detail.",
                        "keywords": [filler],
                        "importance_weight": WEIGHT_FACT,
                        "source_episodes": [ep_ref],
                    })
            else:
                uniq = [f"uniq{column}x{e}x{s}" for s in range(facts_per_episode)]
                ans = [f"ans{column}x{e}x{s}" for s in range(facts_per_episode)]
                text_a = f"Let's review {topic_tok}: {rare} came up today."
                text_b = (f"Noted {rare}. Key points: {' '.join(uniq)} with outcomes "
                          f"{' '.join(ans)} ({cat0} {cat1}).")
                summary = (f"Discussion of {topic_tok} {rare} covering {' '.join(uniq)} "
                           f"and outcomes {' '.join(ans)} plus {cat0} {cat1}.")
                entries = [{
                    "content": f"{topic_tok} {rare} {uniq[s]} {ans[s]} {cat0} {cat1}",
                    "potential": f"May matter for future {topic_tok} plans.",
                    "keywords": [uniq[s]],
                    "importance_weight": WEIGHT_FACT,
                    "source_episodes": [ep_ref],
                } for s in range(facts_per_episode)]
            title = f"Episode {rare}"
            boundary_summary = f"{topic_tok} {rare}"
            topic_payload = {
                "title": f"Topic {topic_tok}",
                "summary": f"Ongoing notes on {topic_tok} {cat0} {cat1}.",
                "keywords": [topic_tok, cat0, cat1],
            }
        else:
            d = column - topics
            dtopic = f"dtopic{d}"
            drare = f"drare{d}x{e}"
            notes = [f"dec{d}x{e}x{s}" for s in range(facts_per_episode)]
            text_a = (f"Archive sync {dtopic}: {drare}. Please store "
                      f"{' '.join(MH_TOKENS)} diary {notes[0]}.")
            text_b = f"Stored {drare} items: {' '.join(notes)}."
            title = f"Episode {drare}"
            summary = f"archive log of {dtopic}: {drare} with dnote{d}x{e}."
            boundary_summary = f"{dtopic} {drare}"
            topic_payload = {
                "title": f"Topic {dtopic}",
                "summary": f"Archive of {dtopic} dcat{d}x0.",
                "keywords": [dtopic, f"dcat{d}x0"],
            }
            entries = [{
                "content": f"{' '.join(MH_TOKENS)} diary {note}",
                "potential": "Archived miscellany.",
                "keywords": [note],
                "importance_weight": WEIGHT_FACT,
                "source_episodes": [ep_ref],
            } for note in notes]

        turns = (
            DialogueTurn(speaker="user", text=text_a, timestamp=t0, session_id=session),
            DialogueTurn(speaker="assistant", text=text_b, timestamp=t1, session_id=session),
        )
        for turn in turns:
            records.append({
                "type": "turn", "conversation_id": conversation_id,
                "speaker": turn.speaker, "text": turn.text,
                "timestamp": format_instant(turn.timestamp),
                "session_id": turn.session_id,
            })
        script["episode_boundary"].append({
            "should_end": False, "should_wait": False,
            "confidence": 0.35, "topic_summary": boundary_summary,
        })
        script["episode_boundary"].append({
            "should_end": True, "should_wait": False,
            "confidence": 0.9, "topic_summary": boundary_summary,
        })
        script["episode_metadata"].append({"title": title, "summary": summary})
        aggregation = dict(topic_payload)
        aggregation["matched_topics"] = [] if wave == 0 else [f"T{column}"]
        aggregation["episode_weights"] = {
            ep_ref: WEIGHT_FIRST if wave == 0 else WEIGHT_LATER}
        script["topic_aggregation"].append(aggregation)
        fact_payloads[column].extend(entries)
        plans.append(_EpisodePlan(index=index, column=column, wave=wave,
                                  turns=turns, title=title, summary=summary))

    for column in range(columns):
        script["fact_extraction"].append({"facts": fact_payloads[column]})

    def fact_ref(column: int, e: int, slot: int) -> str:
        ordinal = column * episodes_per_topic * facts_per_episode + e * facts_per_episode + slot
        return f"F{ordinal}"

    qa: list[dict] = []
    answer_facts: dict[str, list[str]] = {}

    def add_item(question: str, gold: str, category: str, facts: list[str]) -> None:
        qid = f"q{len(qa)}"
        qa.append({"type": "qa", "conversation_id": conversation_id, "id": qid,
                   "question": question, "gold": gold, "category": category})
        answer_facts[qid] = facts

    def singlehop_category(e: int) -> str:
        return "temporal" if episodes_per_topic >= 2 and e == episodes_per_topic - 1 \
            else "single-hop"

    if decoys == 0:
        combos = [(t, e, s) for t in range(topics)
                  for e in range(episodes_per_topic)
                  for s in range(facts_per_episode)]
        chosen = rng.sample(combos, min(100, len(combos)))
        for i, (t, e, s) in enumerate(chosen):
            question = f"Recall: uniq{t}x{e}x{s} rare{t}x{e} topic{t} qs{i}"
            category = "open-domain" if i == len(chosen) - 1 else singlehop_category(e)
            add_item(question, f"ans{t}x{e}x{s}", category, [fact_ref(t, e, s)])
    else:
        for t in range(topics):
            for e in range(episodes_per_topic):
                i = len(qa)
                question = f"Recall: uniq{t}x{e} rare{t}x{e} topic{t} cat{t}x0 qs{i}"
                add_item(question, f"ans{t}x{e}", singlehop_category(e),
                         [fact_ref(t, e, 0)])
        for t in range(topics):
            i = len(qa)
            question = f"Recall: {' '.join(MH_TOKENS)} diary topic{t} qm{i}"
            gold = " | ".join(f"piece{t}x{e}" for e in range(episodes_per_topic))
            add_item(question, gold, "multi-hop",
                     [fact_ref(t, e, 1) for e in range(episodes_per_topic)])
        add_item("Recall: uniq0x0 rare0x0 topic0 cat0x0 qod", "ans0x0",
                 "open-domain", [fact_ref(0, 0, 0)])

    records.extend(qa)

    vocab: set[str] = set()
    for plan in plans:
        vocab.update(tokenize(plan.title))
        vocab.update(tokenize(plan.summary))
    for payload in script["topic_aggregation"]:
        vocab.update(tokenize(payload["title"]))
        vocab.update(tokenize(payload["summary"]))
        for kw in payload["keywords"]:
            vocab.update(tokenize(kw))
    for payload in script["fact_extraction"]:
        for entry in payload["facts"]:
            vocab.update(tokenize(entry["content"]))
            vocab.update(tokenize(entry["potential"]))

    return SyntheticCorpus(
        conversation_id=conversation_id,
        topics=topics, episodes_per_topic=episodes_per_topic,
        facts_per_episode=facts_per_episode, decoys=decoys, seed=seed,
        records=records, script=script, echo_templates=ECHO_TEMPLATES,
        answer_facts=answer_facts, vocabulary=sorted(vocab),
        _episodes=plans,
    )


def partition_script(sizes: list[int], rng: random.Random | None = None) -> dict[str, list]:
    """Boundary and metadata script entries that split a stream into episodes
    of the given sizes. should_wait and confidence are randomized when an rng
    is supplied; both are advisory and must not change the partition."""
    boundary: list[dict] = []
    metadata: list[dict] = []
    for j, size in enumerate(sizes):
        if size < 1:
            raise ValueError("episode sizes must be >= 1")
        for i in range(size):
            last = i == size - 1
            boundary.append({
                "should_end": last,
                "should_wait": (rng.random() < 0.3) if rng and not last else False,
                "confidence": round(rng.uniform(0.1, 0.99), 3) if rng else 0.9,
                "topic_summary": f"segment {j}",
            })
        metadata.append({"title": f"Episode {j}", "summary": f"Auto summary {j}."})
    return {"episode_boundary": boundary, "episode_metadata": metadata}


def simple_turns(count: int, session_id: str = "s0",
                 start: datetime = BASE_TIME, step_seconds: int = 60) -> list[DialogueTurn]:
    """A plain alternating user/assistant stream for partition tests."""
    return [
        DialogueTurn(
            speaker="user" if i % 2 == 0 else "assistant",
            text=f"message {i}",
            timestamp=start + timedelta(seconds=i * step_seconds),
            session_id=session_id,
        )
        for i in range(count)
    ]
