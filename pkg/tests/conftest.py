"""Shared fixtures: small graphs and turn streams built by hand."""

from __future__ import annotations

import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hgmem import (
    DialogueTurn,
    EdgeKind,
    EpisodeNode,
    FactNode,
    MemoryHypergraph,
    TopicNode,
)

T0 = datetime(2025, 3, 10, 8, 0, 0, tzinfo=timezone.utc)


def make_turns(count: int, start: datetime = T0, session_id: str = "s0",
               step_seconds: int = 60, prefix: str = "turn") -> list[DialogueTurn]:
    return [
        DialogueTurn(
            speaker="user" if i % 2 == 0 else "assistant",
            text=f"{prefix} {i}",
            timestamp=start + timedelta(seconds=i * step_seconds),
            session_id=session_id,
        )
        for i in range(count)
    ]


def make_episode(graph: MemoryHypergraph, title: str, summary: str,
                 start: datetime, n_turns: int = 2) -> EpisodeNode:
    episode = EpisodeNode.from_dialogue(make_turns(n_turns, start=start), title, summary)
    graph.add_node(episode)
    return episode


@pytest.fixture
def tiny_graph() -> MemoryHypergraph:
    """Two topics, three episodes, four facts, fully wired."""
    graph = MemoryHypergraph()
    e0 = make_episode(graph, "Garden visit", "planted tomato seedlings", T0)
    e1 = make_episode(graph, "Garden watering", "watering schedule for tomato", T0 + timedelta(hours=2))
    e2 = make_episode(graph, "Band practice", "rehearsed the drum solo", T0 + timedelta(days=1))
    garden = TopicNode(title="Gardening", summary="tomato garden work", keywords=["tomato", "garden"])
    music = TopicNode(title="Music", summary="band practice notes", keywords=["drum", "band"])
    graph.add_node(garden)
    graph.add_node(music)
    graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, garden.id, {e0.id, e1.id},
                           {e0.id: 0.9, e1.id: 0.7})
    graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, music.id, {e2.id}, {e2.id: 0.8})
    f0 = FactNode(content="planted tomato seedlings in the north bed",
                  potential="garden layout", keywords=["tomato"],
                  source_episodes=frozenset({e0.id}))
    f1 = FactNode(content="tomatoes need watering every two days",
                  potential="schedule", keywords=["watering"],
                  source_episodes=frozenset({e0.id, e1.id}))
    f2 = FactNode(content="drip irrigation starts saturday",
                  potential="schedule", keywords=["irrigation"],
                  source_episodes=frozenset({e1.id}))
    f3 = FactNode(content="drum solo needs a faster tempo",
                  potential="practice", keywords=["drum"],
                  source_episodes=frozenset({e2.id}))
    for fact in (f0, f1, f2, f3):
        graph.add_node(fact)
    graph.upsert_hyperedge(EdgeKind.FACT_LEVEL, e0.id, {f0.id, f1.id},
                           {f0.id: 0.9, f1.id: 0.6})
    graph.upsert_hyperedge(EdgeKind.FACT_LEVEL, e1.id, {f1.id, f2.id},
                           {f1.id: 0.6, f2.id: 0.8})
    graph.upsert_hyperedge(EdgeKind.FACT_LEVEL, e2.id, {f3.id}, {f3.id: 0.7})
    graph.validate()
    return graph


def random_graph(rng) -> MemoryHypergraph:
    """A small random but always-valid three-level graph."""
    from datetime import timedelta

    graph = MemoryHypergraph()
    episodes = [make_episode(graph, f"ep {i}", f"summary {i} tok{rng.randint(0, 9)}",
                             T0 + timedelta(hours=i), n_turns=rng.randint(1, 4))
                for i in range(rng.randint(1, 5))]
    for t in range(rng.randint(1, 3)):
        topic = TopicNode(title=f"topic {t}", summary="s", keywords=["k"])
        graph.add_node(topic)
        members = {e.id for e in rng.sample(episodes, rng.randint(1, len(episodes)))}
        graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, topic.id, members,
                               {m: round(rng.random(), 3) for m in members})
    for f in range(rng.randint(0, 6)):
        sources = frozenset(e.id for e in rng.sample(episodes, rng.randint(1, len(episodes))))
        graph.add_node(FactNode(content=f"fact {f}", potential="p", keywords=[],
                                source_episodes=sources))
    for episode in episodes:
        anchored = set(graph.facts_anchored_to(episode.id))
        if anchored:
            graph.upsert_hyperedge(EdgeKind.FACT_LEVEL, episode.id, anchored,
                                   {m: round(rng.random(), 3) for m in anchored})
    graph.validate()
    return graph
