import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import numpy as np
import pytest

from semuq.clients import (
    API_KEY_ENV,
    CachedEmbedder,
    CachedEntailer,
    CachedGenerator,
    ClientError,
    EndpointConfig,
    HttpEmbeddingClient,
    HttpEntailmentClient,
    HttpGenerationClient,
    LogprobsUnsupported,
    MockEmbedder,
    MockEntailer,
    MockLlm,
    TransportError,
    containment_rule,
)
from semuq.dataset import SamplingConfig
from semuq.entropy import EntailmentLabel
from semuq.geometry import cosine


def cfg(**kw):
    kw.setdefault("api_key", "sk-secret")
    return EndpointConfig("http://llm.test", **kw)


def chat_body(texts, logprobs=True):
    choices = []
    for i, t in enumerate(texts):
        c = {"index": i, "message": {"role": "assistant", "content": t}}
        if logprobs:
            c["logprobs"] = {"content": [{"token": w, "logprob": -0.1} for w in t.split()]}
        choices.append(c)
    return {"choices": choices}


def test_generation_request_shape_and_parse():
    seen = {}

    def handler(req):
        seen["path"] = req.url.path
        seen["auth"] = req.headers.get("authorization")
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json=chat_body(["Paris", "Paris France"]))

    client = HttpGenerationClient(cfg(), httpx.MockTransport(handler))
    gen = client.generate("Q?", SamplingConfig(m=2, model_id="llama"), "q1")
    assert seen["path"] == "/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-secret"
    assert seen["body"]["n"] == 2 and seen["body"]["logprobs"] is True and seen["body"]["model"] == "llama"
    assert gen.texts == ["Paris", "Paris France"]
    assert gen.responses[1].token_logprobs == (-0.1, -0.1)


def test_generation_count_mismatch():
    t = httpx.MockTransport(lambda r: httpx.Response(200, json=chat_body(["a", "b", "c"])))
    with pytest.raises(ClientError, match="expected 5 samples, received 3"):
        HttpGenerationClient(cfg(), t).generate("Q?", SamplingConfig(m=5))


def test_logprobs_unsupported():
    t = httpx.MockTransport(lambda r: httpx.Response(200, json=chat_body(["a", "b"], logprobs=False)))
    with pytest.raises(LogprobsUnsupported, match="logprobs unsupported"):
        HttpGenerationClient(cfg(), t).generate("Q?", SamplingConfig(m=2))
    gen = HttpGenerationClient(cfg(), t, require_logprobs=False).generate("Q?", SamplingConfig(m=2))
    assert gen.texts == ["a", "b"] and gen.responses[0].tokens == ()


def test_retries_then_transport_error_with_attempts():
    sleeps = []

    def handler(req):
        raise httpx.ReadTimeout("timed out", request=req)

    client = HttpEntailmentClient(cfg(max_retries=3), httpx.MockTransport(handler), sleep=sleeps.append)
    with pytest.raises(TransportError, match="after 4 attempts") as err:
        client.judge("a", "b")
    assert err.value.attempts == 4
    assert sleeps == [1.0, 2.0, 4.0]
    assert client.calls == 4


def test_retry_on_429_and_5xx_then_success():
    codes = iter([429, 503, 200])

    def handler(req):
        code = next(codes)
        return httpx.Response(code, json={"label": "neutral"} if code == 200 else {})

    client = HttpEntailmentClient(cfg(), httpx.MockTransport(handler), sleep=lambda s: None)
    assert client.judge("a", "b") is EntailmentLabel.NEUTRAL
    assert client.calls == 3


def test_client_error_not_retried():
    client = HttpEntailmentClient(cfg(), httpx.MockTransport(lambda r: httpx.Response(400, text="bad")),
                                  sleep=lambda s: None)
    with pytest.raises(ClientError, match="HTTP 400"):
        client.judge("a", "b")
    assert client.calls == 1


def test_entailment_label_normalized():
    seen = {}

    def handler(req):
        seen.update(json.loads(req.content))
        return httpx.Response(200, json={"label": "ENTAILMENT"})

    client = HttpEntailmentClient(cfg(), httpx.MockTransport(handler))
    assert client.judge("Paris", "paris", question="Capital?") is EntailmentLabel.ENTAILMENT
    assert seen == {"premise": "Question: Capital? Answer: Paris", "hypothesis": "Question: Capital? Answer: paris"}


def test_entailment_unknown_label():
    t = httpx.MockTransport(lambda r: httpx.Response(200, json={"label": "maybe"}))
    with pytest.raises(ValueError, match="'maybe'"):
        HttpEntailmentClient(cfg(), t).judge("a", "b")


def test_concurrency_bounded():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(req):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return httpx.Response(200, json={"label": "neutral"})

    client = HttpEntailmentClient(cfg(max_concurrency=2), httpx.MockTransport(handler))
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda i: client.judge(str(i), "x"), range(16)))
    assert 1 <= state["peak"] <= 2


def test_embedding_batches_and_dims():
    sizes = []

    def handler(req):
        batch = json.loads(req.content)["input"]
        sizes.append(len(batch))
        data = [{"index": i, "embedding": [1.0, float(len(t))]} for i, t in enumerate(batch)]
        return httpx.Response(200, json={"data": data})

    vecs = HttpEmbeddingClient(cfg(model="e"), httpx.MockTransport(handler)).embed([f"t{i}" for i in range(130)])
    assert sizes == [64, 64, 2] and len(vecs) == 130

    bad = httpx.MockTransport(lambda r: httpx.Response(200, json={"data": [
        {"index": 0, "embedding": [1.0, 0.0]}, {"index": 1, "embedding": [1.0, 0.0, 0.0]}]}))
    with pytest.raises(ClientError, match="dimension"):
        HttpEmbeddingClient(cfg(), bad).embed(["a", "b"])


def test_api_key_from_env_and_redacted(monkeypatch, caplog):
    monkeypatch.setenv(API_KEY_ENV, "sk-from-env")
    c = EndpointConfig("http://llm.test")
    assert c.api_key == "sk-from-env"
    assert "sk-from-env" not in repr(c)
    t = httpx.MockTransport(lambda r: httpx.Response(200, json={"label": "neutral"}))
    with caplog.at_level(logging.DEBUG, logger="semuq"):
        HttpEntailmentClient(c, t).judge("a", "b")
    assert "sk-from-env" not in caplog.text and "***" in caplog.text


def test_endpoint_validation():
    with pytest.raises(ValueError):
        EndpointConfig("http://x", max_concurrency=0)
    with pytest.raises(ValueError):
        EndpointConfig("http://x", timeout=0)


def test_cached_generator_hits_skip_network(tmp_path):
    handler_calls = []

    def handler(req):
        handler_calls.append(1)
        return httpx.Response(200, json=chat_body(["Paris"] * 5))

    inner = HttpGenerationClient(cfg(), httpx.MockTransport(handler))
    gen = CachedGenerator(inner, tmp_path)
    first = gen.generate("Q?", SamplingConfig(), "q1")
    files = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    second = CachedGenerator(inner, tmp_path).generate("Q?", SamplingConfig(), "q1")
    assert first == second and len(handler_calls) == 1
    assert {p.name: p.read_bytes() for p in tmp_path.iterdir()} == files


def test_cached_embedder_and_entailer(tmp_path):
    inner = MockEmbedder(16, seed=3)
    emb = CachedEmbedder(inner, tmp_path)
    a, b = emb.embed(["same text", "same text"])
    assert np.array_equal(a, b) and inner.calls == 1
    emb.embed(["same text"])
    assert inner.calls == 1
    fresh = CachedEmbedder(MockEmbedder(16, seed=3), tmp_path)
    assert np.array_equal(fresh.embed(["same text"])[0], a) and fresh.inner.calls == 0

    ent_inner = MockEntailer()
    ent = CachedEntailer(ent_inner, tmp_path / "nli")
    assert ent.judge("a b", "a") is EntailmentLabel.ENTAILMENT
    assert CachedEntailer(MockEntailer(), tmp_path / "nli").judge("a b", "a") is EntailmentLabel.ENTAILMENT
    ent.judge("a b", "a")
    assert ent_inner.calls == 1


def test_mock_embedder_identical_strings():
    a, b = MockEmbedder().embed(["Paris", "Paris"])
    assert cosine(a, b) == 1.0


def test_mock_entailer_rules():
    m = MockEntailer({("a", "b"): "entailment"})
    assert m.judge("a", "b") is EntailmentLabel.ENTAILMENT
    assert m.judge("b", "a") is EntailmentLabel.NEUTRAL
    assert containment_rule("the big cat", "cat") is EntailmentLabel.ENTAILMENT
    assert containment_rule("cat", "the big cat") is EntailmentLabel.NEUTRAL


def test_mock_llm_scripted_and_deterministic():
    llm = MockLlm({"Q?": ["Paris"]})
    gen = llm.generate("Q?", SamplingConfig(m=5))
    assert gen.texts == ["Paris"] * 5
    weighted = MockLlm({"Q?": [("a b", 0.7), ("c", 0.3)]}, seed=4, paraphrase_prob=0.5)
    s = SamplingConfig(m=8)
    assert weighted.generate("Q?", s) == weighted.generate("Q?", s)
    for r in weighted.generate("Q?", s).responses:
        assert r.token_logprobs[0] in (pytest.approx(np.log(0.7)), pytest.approx(np.log(0.3)))
    with pytest.raises(ClientError, match="scripted failure"):
        MockLlm(fail_prompts=["bad"]).generate("bad", s)
