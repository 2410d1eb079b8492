"""Templates, structured-output parsing, chat client retries, mock and HTTP providers."""

from __future__ import annotations

import json

import numpy as np
import pytest

from hgmem import (
    ChatClient,
    ChatRequest,
    EchoChatTransport,
    HashEmbedding,
    HttpChatTransport,
    HttpEmbedding,
    HttpReranker,
    OverlapReranker,
    ProviderError,
    SchemaParseError,
    ScriptedChatTransport,
    ScriptExhaustedError,
    Template,
    TemplateError,
    TemplateRegistry,
    TransportError,
)
from hgmem.providers.base import RawCompletion, with_retries
from hgmem.providers.mocks import FailingReranker
from hgmem.providers.templates import extract_structured_block, parse_payload

EXPECTED_TEMPLATES = {
    "episode_boundary", "episode_metadata", "topic_aggregation",
    "fact_extraction", "answer_generation", "judge",
}


# ------------------------------------------------------------------ templates

def test_registry_ships_all_templates():
    registry = TemplateRegistry()
    assert EXPECTED_TEMPLATES <= set(registry.ids())


def test_template_render_and_missing_binding():
    registry = TemplateRegistry()
    boundary = registry.get("episode_boundary")
    text = boundary.render({"history": "H", "time_gap": "2 hours", "new_messages": "N"})
    assert "2 hours" in text and "H" in text and "N" in text
    with pytest.raises(TemplateError):
        boundary.render({"history": "H"})


def test_registry_override_dir(tmp_path):
    (tmp_path / "episode_metadata.txt").write_text("custom {dialogue} {time_span}")
    registry = TemplateRegistry(override_dir=tmp_path)
    rendered = registry.get("episode_metadata").render(
        {"dialogue": "D", "time_span": "S"})
    assert rendered == "custom D S"
    # untouched templates still come from the packaged set
    assert "episode_boundary" in registry.ids()


def test_registry_register_custom():
    registry = TemplateRegistry()
    registry.register(Template(id="probe", text="hello {name}", schema=None))
    assert registry.get("probe").render({"name": "x"}) == "hello x"
    with pytest.raises(TemplateError):
        registry.get("nope")


def test_structured_templates_render_payload_example():
    # rendered prompts must keep a literal JSON example (escaped braces)
    registry = TemplateRegistry()
    text = registry.get("episode_boundary").render(
        {"history": "", "time_gap": "", "new_messages": ""})
    assert '"should_end"' in text


# ------------------------------------------------------------- block parsing

def test_extract_block_plain_json():
    assert extract_structured_block('{"a": 1}') == {"a": 1}


def test_extract_block_in_prose():
    text = 'Sure! Here is the result:\n{"should_end": true, "confidence": 0.9}\nDone.'
    assert extract_structured_block(text)["should_end"] is True


def test_extract_block_python_literal():
    assert extract_structured_block("{'a': True, 'b': None}") == {"a": True, "b": None}


def test_extract_block_braces_inside_strings():
    text = '{"a": "curly } inside", "b": 2}'
    assert extract_structured_block(text) == {"a": "curly } inside", "b": 2}


def test_extract_block_first_dict_wins():
    text = 'x {"first": 1} y {"second": 2}'
    assert extract_structured_block(text) == {"first": 1}


def test_extract_block_failure_keeps_raw():
    with pytest.raises(SchemaParseError) as err:
        extract_structured_block("no braces at all")
    assert err.value.raw_text == "no braces at all"


def test_parse_payload_types():
    schema = {"flag": "bool", "score": "float", "name": "str",
              "items": "list", "weights": "dict"}
    payload = parse_payload(
        '{"flag": false, "score": 3, "name": "n", "items": [], "weights": {}}', schema)
    assert payload["score"] == 3.0 and isinstance(payload["score"], float)
    with pytest.raises(SchemaParseError):
        parse_payload('{"flag": 1, "score": 1, "name": "n", "items": [], "weights": {}}',
                      schema)  # bool is strict
    with pytest.raises(SchemaParseError):
        parse_payload('{"score": 1}', schema)  # missing keys


# ------------------------------------------------------------------ transports

def test_scripted_transport_per_template_queues():
    transport = ScriptedChatTransport({
        "episode_metadata": [{"title": "a", "summary": "b"},
                             {"title": "c", "summary": "d"}],
    })
    client = ChatClient(transport)
    req = ChatRequest(template_id="episode_metadata",
                      variables={"dialogue": "x", "time_span": "y"})
    assert client.complete(req).payload["title"] == "a"
    assert client.complete(req).payload["title"] == "c"
    with pytest.raises(ScriptExhaustedError):
        client.complete(req)
    assert len(transport.calls) == 3


def test_scripted_transport_reset_restores_script():
    transport = ScriptedChatTransport({"episode_metadata": [{"title": "a", "summary": "b"}]})
    client = ChatClient(transport)
    req = ChatRequest(template_id="episode_metadata",
                      variables={"dialogue": "x", "time_span": "y"})
    client.complete(req)
    transport.reset()
    assert client.complete(req).payload["title"] == "a"


def test_scripted_transport_echo_templates():
    transport = ScriptedChatTransport({}, echo_templates=("answer_generation",))
    client = ChatClient(transport)
    response = client.complete(ChatRequest(
        template_id="answer_generation",
        variables={"context": "CTX-MARKER", "query": "Q"}))
    assert "CTX-MARKER" in response.text


def test_echo_transport_returns_prompt():
    client = ChatClient(EchoChatTransport())
    response = client.complete(ChatRequest(
        template_id="answer_generation", variables={"context": "ctx", "query": "why"}))
    assert "ctx" in response.text and "why" in response.text


def test_client_reprompts_once_on_parse_failure():
    transport = ScriptedChatTransport({
        "episode_metadata": ["garbage with no braces",
                             {"title": "ok", "summary": "s"}],
    })
    client = ChatClient(transport)
    req = ChatRequest(template_id="episode_metadata",
                      variables={"dialogue": "x", "time_span": "y"})
    response = client.complete(req, retry_parse=True)
    assert response.payload["title"] == "ok"
    assert "Return only the structured block." in transport.calls[-1][1]


def test_client_propagates_parse_failure_without_retry():
    transport = ScriptedChatTransport({"episode_metadata": ["garbage"]})
    client = ChatClient(transport)
    req = ChatRequest(template_id="episode_metadata",
                      variables={"dialogue": "x", "time_span": "y"})
    with pytest.raises(SchemaParseError):
        client.complete(req, retry_parse=False)


def test_with_retries_transient_then_success():
    attempts = []

    def flaky():
        attempts.append(1)
        if len(attempts) < 3:
            raise TransportError("blip")
        return "done"

    assert with_retries(flaky, max_attempts=3, backoff=0.0) == "done"
    assert len(attempts) == 3


def test_with_retries_gives_up():
    def always():
        raise TransportError("down")

    with pytest.raises(TransportError):
        with_retries(always, max_attempts=2, backoff=0.0)


def test_with_retries_does_not_retry_permanent_errors():
    attempts = []

    def broken():
        attempts.append(1)
        raise ProviderError("bad request")

    with pytest.raises(ProviderError):
        with_retries(broken, max_attempts=3, backoff=0.0)
    assert len(attempts) == 1


class _FlakyTransport(EchoChatTransport):
    def __init__(self):
        self.calls = 0

    def complete(self, prompt, request):
        self.calls += 1
        if self.calls == 1:
            raise TransportError("first try fails")
        return super().complete(prompt, request)


def test_chat_client_retries_transport_errors():
    transport = _FlakyTransport()
    client = ChatClient(transport, backoff=0.0)
    response = client.complete(ChatRequest(
        template_id="answer_generation", variables={"context": "c", "query": "q"}))
    assert transport.calls == 2 and response.text


# ----------------------------------------------------------------- embeddings

def test_hash_embedding_is_deterministic_and_normalized():
    emb = HashEmbedding(dimension=48, seed=3)
    [a] = emb.embed(["tomato garden plan"])
    [b] = HashEmbedding(dimension=48, seed=3).embed(["tomato garden plan"])
    np.testing.assert_allclose(a, b)
    assert a.shape == (48,)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9


def test_hash_embedding_seed_changes_vectors():
    [a] = HashEmbedding(dimension=16, seed=0).embed(["same text"])
    [b] = HashEmbedding(dimension=16, seed=1).embed(["same text"])
    assert not np.allclose(a, b)


def test_hash_embedding_empty_text_is_zero_vector():
    [v] = HashEmbedding(dimension=8).embed(["?!"])
    np.testing.assert_array_equal(v, np.zeros(8))


def test_hash_embedding_batch_matches_single():
    emb = HashEmbedding(dimension=24)
    batch = emb.embed(["alpha beta", "gamma"])
    [single] = HashEmbedding(dimension=24).embed(["gamma"])
    np.testing.assert_allclose(batch[1], single)


def test_embed_rejects_empty_input():
    with pytest.raises(ProviderError):
        HashEmbedding().embed([])


class _DriftingEmbedder(HashEmbedding):
    def __init__(self):
        super().__init__(dimension=4)
        self._count = 0

    def _embed_raw(self, texts):
        self._count += 1
        dim = 4 if self._count == 1 else 5
        return [np.ones(dim) for _ in texts]


def test_embedding_dimension_drift_is_rejected():
    emb = _DriftingEmbedder()
    emb.embed(["a"])
    with pytest.raises(ProviderError):
        emb.embed(["b"])


# ------------------------------------------------------------------- rerankers

def test_overlap_reranker_orders_by_token_overlap():
    ranked = OverlapReranker().rerank("tomato garden water", [
        ("d1", "water the tomato garden"), ("d2", "tomato"), ("d3", "drum solo")])
    assert [r.doc_id for r in ranked] == ["d1", "d2", "d3"]
    assert ranked[0].score == 1.0 and ranked[2].score == 0.0


def test_overlap_reranker_breaks_ties_by_doc_id():
    ranked = OverlapReranker().rerank("tomato", [("b", "tomato"), ("a", "tomato soup")])
    assert [r.doc_id for r in ranked] == ["a", "b"]


def test_rerank_rejects_duplicates_and_partial_coverage():
    with pytest.raises(ProviderError):
        OverlapReranker().rerank("q", [("a", "x"), ("a", "y")])

    class Partial(OverlapReranker):
        def _rerank_raw(self, query, documents):
            return {documents[0][0]: 1.0}

    with pytest.raises(ProviderError):
        Partial().rerank("q", [("a", "x"), ("b", "y")])


def test_failing_reranker_raises():
    with pytest.raises(ProviderError):
        FailingReranker().rerank("q", [("a", "x")])


# ------------------------------------------------------------------ http layer

class _FakeResponse:
    def __init__(self, status_code: int, payload=None, text: str = ""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or json.dumps(payload)

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class _FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        result = self.responses.pop(0)
        if isinstance(result, Exception):
            raise result
        return result


def test_http_chat_success_and_auth_header():
    session = _FakeSession([_FakeResponse(200, {
        "choices": [{"message": {"content": '{"title": "t", "summary": "s"}'}}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3},
    })])
    transport = HttpChatTransport("http://llm.test/v1/chat", "m1",
                                  api_key="sekrit", session=session)
    raw = transport.complete("hello", ChatRequest(template_id="episode_metadata",
                                                  variables={}))
    assert isinstance(raw, RawCompletion)
    assert raw.prompt_tokens == 7 and raw.completion_tokens == 3
    sent = session.requests[0]
    assert sent["headers"]["Authorization"] == "Bearer sekrit"
    assert sent["json"]["model"] == "m1"


def test_http_status_mapping():
    t500 = HttpChatTransport("http://x", "m", session=_FakeSession([_FakeResponse(500, {})]))
    with pytest.raises(TransportError):
        t500.complete("p", ChatRequest(template_id="t", variables={}))
    t429 = HttpChatTransport("http://x", "m", session=_FakeSession([_FakeResponse(429, {})]))
    with pytest.raises(TransportError):
        t429.complete("p", ChatRequest(template_id="t", variables={}))
    t404 = HttpChatTransport("http://x", "m",
                             session=_FakeSession([_FakeResponse(404, {}, text="nope")]))
    with pytest.raises(ProviderError) as err:
        t404.complete("p", ChatRequest(template_id="t", variables={}))
    assert not isinstance(err.value, TransportError)


def test_http_embedding_orders_by_index():
    session = _FakeSession([_FakeResponse(200, {
        "data": [{"index": 1, "embedding": [0.0, 1.0]},
                 {"index": 0, "embedding": [1.0, 0.0]}],
    })])
    emb = HttpEmbedding("http://emb.test", "m", session=session)
    vectors = emb.embed(["first", "second"])
    np.testing.assert_array_equal(vectors[0], np.array([1.0, 0.0]))
    np.testing.assert_array_equal(vectors[1], np.array([0.0, 1.0]))


def test_http_reranker_scores_by_index():
    session = _FakeSession([_FakeResponse(200, {
        "results": [{"index": 1, "relevance_score": 0.9},
                    {"index": 0, "relevance_score": 0.2}],
    })])
    rr = HttpReranker("http://rr.test", "m", session=session)
    ranked = rr.rerank("q", [("a", "text a"), ("b", "text b")])
    assert [r.doc_id for r in ranked] == ["b", "a"]
