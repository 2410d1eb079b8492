"""Episode boundaries, topic aggregation, and fact extraction."""

from __future__ import annotations

from datetime import timedelta

import pytest

from hgmem import (
    AggregationCase,
    ChatClient,
    EdgeKind,
    HashEmbedding,
    MemoryBuilder,
    MemoryHypergraph,
    NodeId,
    NodeKind,
    SchemaParseError,
    ScriptExhaustedError,
    ScriptedChatTransport,
    TopicNode,
    ValidationError,
)
from hgmem.construction import META_EXTRACTED
from conftest import T0, make_episode, make_turns


def _boundary(end=False, wait=False, conf=0.5, summary="ongoing chat"):
    return {"should_end": end, "should_wait": wait, "confidence": conf,
            "topic_summary": summary}


def _meta(title, summary):
    return {"title": title, "summary": summary}


def _agg(matched=(), title="Garden topic", summary="garden work log",
         keywords=("garden",), weights=None):
    return {"matched_topics": list(matched), "title": title, "summary": summary,
            "keywords": list(keywords), "episode_weights": dict(weights or {})}


def _fact(content, sources=(), weight=0.7, potential="context", keywords=()):
    entry = {"content": content, "potential": potential,
             "keywords": list(keywords), "source_episodes": list(sources)}
    if weight is not None:
        entry["importance_weight"] = weight
    return entry


def make_builder(script, graph=None, **kwargs):
    graph = graph if graph is not None else MemoryHypergraph()
    transport = ScriptedChatTransport(script)
    builder = MemoryBuilder(graph, ChatClient(transport),
                            HashEmbedding(dimension=16), **kwargs)
    return builder, transport


# ------------------------------------------------------------------ boundaries

def test_two_episode_flow_with_flush():
    builder, transport = make_builder({
        "episode_boundary": [_boundary(), _boundary(end=True),
                             _boundary(), _boundary()],
        "episode_metadata": [_meta("First", "first episode"),
                             _meta("Second", "second episode")],
    })
    turns = make_turns(4)
    assert builder.ingest_turn(turns[0]) is None
    assert builder.buffer == [turns[0]]
    first = builder.ingest_turn(turns[1])
    assert first is not None and first.id == NodeId.parse("E0")
    assert first.dialogue == turns[:2]
    assert builder.buffer == []
    assert builder.ingest_turn(turns[2]) is None
    assert builder.ingest_turn(turns[3]) is None
    second = builder.flush()
    assert second.id == NodeId.parse("E1")
    assert second.dialogue == turns[2:]
    assert second.title == "Second"
    assert len(builder.boundary_log) == 4
    assert builder.flush() is None
    assert transport.remaining() == {"episode_boundary": 0, "episode_metadata": 0}


def test_forced_boundary_at_buffer_cap(caplog):
    builder, _ = make_builder({
        "episode_boundary": [_boundary(), _boundary(), _boundary()],
        "episode_metadata": [_meta("Long", "ran into the cap")],
    }, max_buffer_turns=3)
    turns = make_turns(3)
    assert builder.ingest_turn(turns[0]) is None
    assert builder.ingest_turn(turns[1]) is None
    with caplog.at_level("WARNING", logger="hgmem.construction"):
        episode = builder.ingest_turn(turns[2])
    assert episode is not None and len(episode.dialogue) == 3
    assert builder.buffer == []
    assert builder.boundary_log[-1].should_end is False  # detector said keep going
    assert any("forcing episode boundary" in rec.message for rec in caplog.records)


def test_boundary_failure_leaves_state_reingestable():
    builder, transport = make_builder({
        "episode_boundary": [_boundary()],
        "episode_metadata": [],
    })
    turns = make_turns(2)
    builder.ingest_turn(turns[0])
    with pytest.raises(ScriptExhaustedError):
        builder.ingest_turn(turns[1])
    assert builder.buffer == [turns[0]]  # failed turn was not committed
    assert builder.graph.counts()["episodes"] == 0
    transport.reset()
    assert builder.ingest_turn(turns[1]) is None
    assert builder.buffer == turns[:2]


def test_metadata_failure_leaves_state_reingestable():
    builder, _ = make_builder({
        "episode_boundary": [_boundary(end=True), _boundary(end=True)],
        "episode_metadata": ["not structured", "still not structured",
                             _meta("Recovered", "after the outage")],
    })
    (turn,) = make_turns(1)
    with pytest.raises(SchemaParseError):
        builder.ingest_turn(turn)
    assert builder.buffer == []
    assert builder.graph.counts()["episodes"] == 0
    episode = builder.ingest_turn(turn)  # same turn again, now it lands
    assert episode is not None and episode.title == "Recovered"
    assert episode.dialogue == [turn]


def test_rejects_backwards_timestamp_within_session():
    builder, _ = make_builder({
        "episode_boundary": [_boundary(), _boundary()],
        "episode_metadata": [],
    })
    turns = make_turns(2)
    builder.ingest_turn(turns[1])
    earlier = turns[0]
    with pytest.raises(ValidationError):
        builder.ingest_turn(earlier)
    # The same earlier timestamp is fine when it belongs to another session.
    other = make_turns(1, session_id="s9")[0]
    assert other.timestamp < turns[1].timestamp
    assert builder.ingest_turn(other) is None


def test_should_wait_is_advisory_only():
    builder, _ = make_builder({
        "episode_boundary": [_boundary(wait=True)],
        "episode_metadata": [],
    })
    (turn,) = make_turns(1)
    assert builder.ingest_turn(turn) is None
    assert builder.buffer == [turn]
    assert builder.boundary_log[0].should_wait is True


def test_boundary_confidence_clamped(caplog):
    builder, _ = make_builder({
        "episode_boundary": [_boundary(conf=1.4)],
        "episode_metadata": [],
    })
    with caplog.at_level("WARNING", logger="hgmem.construction"):
        builder.ingest_turn(make_turns(1)[0])
    assert builder.boundary_log[0].confidence == 1.0
    assert any("clamped" in rec.message for rec in caplog.records)


# ----------------------------------------------------------------- aggregation

def _ingest_episode(builder, turns, title, summary):
    """Push one two-turn episode through a builder primed for it."""
    builder.ingest_turn(turns[0])
    return builder.ingest_turn(turns[1])


def test_initialization_case_creates_first_topic():
    builder, _ = make_builder({
        "episode_boundary": [_boundary(), _boundary(end=True)],
        "episode_metadata": [_meta("Garden day", "planted seedlings")],
        "topic_aggregation": [_agg(weights={"E0": 0.9})],
    })
    episode = _ingest_episode(builder, make_turns(2), "Garden day", "planted")
    outcome = builder.aggregate_topic(episode)
    assert outcome.case is AggregationCase.INITIALIZATION
    assert outcome.topics == [NodeId.parse("T0")]
    edge = builder.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, NodeId.parse("T0"))
    assert edge.members == {episode.id}
    assert edge.weights[episode.id] == 0.9


def _builder_with_seed_topic(extra_script, shared_words=True):
    """One aggregated episode already in place, a second one finished."""
    second_summary = "garden beds watered" if shared_words else "drum kit tuned"
    script = {
        "episode_boundary": [_boundary(), _boundary(end=True),
                             _boundary(), _boundary(end=True)],
        "episode_metadata": [_meta("Garden day", "garden beds planted"),
                             _meta("Garden evening", second_summary)],
        "topic_aggregation": [_agg(weights={"E0": 0.9})] + list(extra_script),
    }
    builder, transport = make_builder(script)
    turns = make_turns(4)
    first = _ingest_episode(builder, turns[:2], "", "")
    builder.aggregate_topic(first)
    second = _ingest_episode(builder, turns[2:], "", "")
    return builder, transport, second


def test_new_topic_case_when_no_candidate_matches():
    builder, _, second = _builder_with_seed_topic(
        [_agg(matched=[], title="Evenings", summary="evening chores",
              weights={"E0": 0.4, "E1": 0.8})])
    outcome = builder.aggregate_topic(second)
    assert outcome.case is AggregationCase.NEW_TOPIC
    new_topic = NodeId.parse("T1")
    assert outcome.topics == [new_topic]
    edge = builder.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, new_topic)
    # The LLM listed a candidate episode too, so the new edge spans both.
    assert edge.members == {NodeId.parse("E0"), NodeId.parse("E1")}
    assert edge.weights == {NodeId.parse("E0"): 0.4, NodeId.parse("E1"): 0.8}


def test_update_case_regenerates_metadata_and_keeps_prev_weights():
    builder, _, second = _builder_with_seed_topic(
        [_agg(matched=["T0"], title="Garden care", summary="all garden work",
              keywords=["garden", "water"], weights={"E1": 0.85})])
    topic_id = NodeId.parse("T0")
    before = builder.graph.get_node(topic_id).revision
    outcome = builder.aggregate_topic(second)
    assert outcome.case is AggregationCase.UPDATE
    assert outcome.topics == [topic_id]
    topic = builder.graph.get_node(topic_id)
    assert topic.title == "Garden care"
    assert topic.keywords == ["garden", "water"]
    assert topic.revision == before + 1
    edge = builder.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, topic_id)
    assert edge.weights[NodeId.parse("E0")] == 0.9   # untouched previous weight
    assert edge.weights[NodeId.parse("E1")] == 0.85  # freshly listed


def test_update_case_unlisted_new_episode_defaults_to_half():
    builder, _, second = _builder_with_seed_topic(
        [_agg(matched=["T0"], weights={})])
    builder.aggregate_topic(second)
    edge = builder.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, NodeId.parse("T0"))
    assert edge.weights[NodeId.parse("E1")] == 0.5


def test_update_case_empty_title_keeps_old(caplog):
    builder, _, second = _builder_with_seed_topic(
        [_agg(matched=["T0"], title="   ", summary="still garden",
              weights={"E1": 0.6})])
    old_title = builder.graph.get_node(NodeId.parse("T0")).title
    with caplog.at_level("WARNING", logger="hgmem.construction"):
        builder.aggregate_topic(second)
    assert builder.graph.get_node(NodeId.parse("T0")).title == old_title
    assert any("kept old" in rec.message for rec in caplog.records)


def test_weight_values_clamped_and_defaulted(caplog):
    builder, _, second = _builder_with_seed_topic(
        [_agg(matched=["T0"], weights={"E1": 1.7, "E0": "very high"})])
    with caplog.at_level("WARNING", logger="hgmem.construction"):
        builder.aggregate_topic(second)
    edge = builder.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, NodeId.parse("T0"))
    assert edge.weights[NodeId.parse("E1")] == 1.0  # clamped from 1.7
    assert edge.weights[NodeId.parse("E0")] == 0.5  # non-numeric fell back
    assert sum("clamp" in rec.message for rec in caplog.records) >= 1


def test_bogus_ids_in_llm_output_are_dropped(caplog):
    builder, _, second = _builder_with_seed_topic(
        [_agg(matched=["T7", "banana", "T0"],
              weights={"E9": 0.9, "gibberish": 0.3, "E1": 0.7})])
    with caplog.at_level("WARNING", logger="hgmem.construction"):
        outcome = builder.aggregate_topic(second)
    assert outcome.topics == [NodeId.parse("T0")]  # only the real candidate
    edge = builder.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, NodeId.parse("T0"))
    assert NodeId.parse("E9") not in edge.weights
    assert any("dropped" in rec.message for rec in caplog.records)


def test_multiple_matched_topics_all_updated():
    script = {
        "episode_boundary": [_boundary(), _boundary(end=True)] * 3,
        "episode_metadata": [_meta("Garden one", "garden beds planted"),
                             _meta("Garden two", "garden rows weeded"),
                             _meta("Garden three", "garden paths swept")],
        "topic_aggregation": [
            _agg(title="Beds", weights={"E0": 0.9}),
            _agg(matched=[], title="Rows", weights={"E1": 0.9}),
            _agg(matched=["T0", "T1"], title="Garden", weights={"E2": 0.6}),
        ],
    }
    builder, _ = make_builder(script)
    turns = make_turns(6)
    for i in range(2):
        episode = _ingest_episode(builder, turns[2 * i:2 * i + 2], "", "")
        builder.aggregate_topic(episode)
    third = _ingest_episode(builder, turns[4:], "", "")
    outcome = builder.aggregate_topic(third)
    assert outcome.case is AggregationCase.UPDATE
    assert outcome.topics == [NodeId.parse("T0"), NodeId.parse("T1")]
    for tid in outcome.topics:
        edge = builder.graph.edge_for_anchor(EdgeKind.EPISODE_LEVEL, tid)
        assert third.id in edge.members
        assert edge.weights[third.id] == 0.6


def test_aggregate_requires_stored_episode():
    builder, _ = make_builder({})
    from hgmem import EpisodeNode
    stray = EpisodeNode.from_dialogue(make_turns(1), "Stray", "never added")
    with pytest.raises(ValidationError):
        builder.aggregate_topic(stray)


# ------------------------------------------------------------ fact extraction

def _graph_with_topic():
    graph = MemoryHypergraph()
    e0 = make_episode(graph, "Garden day", "planted seedlings", T0)
    e1 = make_episode(graph, "Garden evening", "watered the beds",
                      T0 + timedelta(hours=8))
    topic = TopicNode(title="Gardening", summary="garden work", keywords=["garden"])
    graph.add_node(topic)
    graph.upsert_hyperedge(EdgeKind.EPISODE_LEVEL, topic.id, {e0.id, e1.id},
                           {e0.id: 0.9, e1.id: 0.8})
    return graph, topic, e0, e1


def test_extract_facts_end_to_end(caplog):
    graph, topic, e0, e1 = _graph_with_topic()
    builder, _ = make_builder({
        "fact_extraction": [{"facts": [
            _fact("seedlings went into the north bed", sources=["E0"], weight=0.9),
            _fact("beds get watered at dusk", sources=[1], weight=0.8),
            _fact("soil is sandy", sources=["E7", "banana"], weight=None),
            _fact("seedlings went into the north bed", sources=["E0"]),
        ]}],
    }, graph=graph)
    with caplog.at_level("WARNING", logger="hgmem.construction"):
        facts = builder.extract_facts(topic.id)
    assert [f.content for f in facts] == [
        "seedlings went into the north bed",
        "beds get watered at dusk",
        "soil is sandy",
    ]  # the in-batch duplicate was suppressed
    assert facts[0].source_episodes == frozenset({e0.id})
    assert facts[1].source_episodes == frozenset({e1.id})  # integer id accepted
    assert facts[2].source_episodes == frozenset({e0.id, e1.id})  # fallback: all
    edge0 = graph.edge_for_anchor(EdgeKind.FACT_LEVEL, e0.id)
    assert edge0.weights[facts[0].id] == 0.9
    assert edge0.weights[facts[2].id] == 0.5  # missing weight defaulted
    edge1 = graph.edge_for_anchor(EdgeKind.FACT_LEVEL, e1.id)
    assert edge1.weights[facts[1].id] == 0.8
    assert graph.meta[META_EXTRACTED][str(topic.id)] == topic.revision
    messages = " | ".join(rec.message for rec in caplog.records)
    assert "outside topic" in messages and "anchoring to all" in messages


def test_extract_facts_second_pass_keeps_existing_weights():
    graph, topic, e0, e1 = _graph_with_topic()
    builder, _ = make_builder({
        "fact_extraction": [
            {"facts": [_fact("first fact", sources=["E0"], weight=0.9)]},
            {"facts": [_fact("first fact", sources=["E0"], weight=0.1),
                       _fact("second fact", sources=["E0"], weight=0.2)]},
        ],
    }, graph=graph)
    first = builder.extract_facts(topic.id)
    second = builder.extract_facts(topic.id)
    assert [f.content for f in second] == ["second fact"]  # duplicate suppressed
    edge = graph.edge_for_anchor(EdgeKind.FACT_LEVEL, e0.id)
    assert edge.weights[first[0].id] == 0.9  # NOT overwritten by the 0.1 retelling
    assert edge.weights[second[0].id] == 0.2


def test_extract_facts_entry_without_content_fails():
    graph, topic, _, _ = _graph_with_topic()
    builder, _ = make_builder({
        "fact_extraction": [{"facts": [{"potential": "no content here"}]},
                            {"facts": [{"potential": "still none"}]}],
    }, graph=graph)
    with pytest.raises(SchemaParseError) as info:
        builder.extract_facts(topic.id)
    assert info.value.raw_text


def test_extract_facts_requires_episodes():
    graph = MemoryHypergraph()
    topic = TopicNode(title="Empty", summary="nothing here", keywords=[])
    graph.add_node(topic)
    builder, _ = make_builder({}, graph=graph)
    with pytest.raises(ValidationError):
        builder.extract_facts(topic.id)


def test_re_extract_skips_unchanged_topic():
    graph, topic, _, _ = _graph_with_topic()
    builder, transport = make_builder({
        "fact_extraction": [
            {"facts": [_fact("one", sources=["E0"])]},
            {"facts": [_fact("two", sources=["E1"])]},
        ],
    }, graph=graph)
    assert len(builder.extract_facts(topic.id)) == 1
    before = transport.remaining()["fact_extraction"]
    assert builder.re_extract_on_update(topic.id) == []
    assert transport.remaining()["fact_extraction"] == before  # no provider call
    topic.revision += 1
    graph.touch(topic.id)
    refreshed = builder.re_extract_on_update(topic.id)
    assert [f.content for f in refreshed] == ["two"]
    assert transport.remaining()["fact_extraction"] == before - 1


# ------------------------------------------------------------------ end to end

def test_ingest_stream_summary():
    script = {
        "episode_boundary": [_boundary(), _boundary(end=True),
                             _boundary(), _boundary()],
        "episode_metadata": [_meta("Garden one", "garden beds planted"),
                             _meta("Garden two", "garden beds watered")],
        "topic_aggregation": [
            _agg(weights={"E0": 0.9}),
            _agg(matched=["T0"], weights={"E1": 0.8}),
        ],
        "fact_extraction": [{"facts": [
            _fact("beds live on the north side", sources=["E0"], weight=0.9),
            _fact("watering happens at dusk", sources=["E1"], weight=0.8),
        ]}],
    }
    builder, transport = make_builder(script)
    summary = builder.ingest_stream(make_turns(4))
    assert summary.episode_ids == [NodeId.parse("E0"), NodeId.parse("E1")]
    assert [o.case for o in summary.outcomes] == [
        AggregationCase.INITIALIZATION, AggregationCase.UPDATE]
    assert len(summary.new_fact_ids) == 2
    assert summary.counts == {"topics": 1, "episodes": 2, "facts": 2,
                              "hyperedges": 3}
    assert all(q == 0 for q in transport.remaining().values())
