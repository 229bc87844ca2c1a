import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semuq.dataset import (
    DatasetError,
    GenerationSet,
    QaRecord,
    Response,
    SamplingConfig,
    cache_key,
    load_dataset,
    load_generations,
    store_generations,
    write_dataset,
)

from helpers import make_set


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_minimal_record(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", ['{"id":"q1","question":"2+2?","answers":["4"]}'])
    assert load_dataset(p) == [QaRecord("q1", "2+2?", ("4",))]


def test_empty_file(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("")
    assert load_dataset(p) == []


def test_missing_answers_names_line(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", ['{"id":"q1","question":"2+2?"}'])
    with pytest.raises(DatasetError, match=r":1: missing field 'answers'"):
        load_dataset(p)


@pytest.mark.parametrize(
    "line, msg",
    [
        ("not json", "invalid JSON"),
        ('["a"]', "expected an object"),
        ('{"id":"q","question":"x","answers":"4"}', "list of strings"),
        ('{"id":"q","question":"","answers":["4"]}', "question must be non-empty"),
        ('{"id":"q","question":"x","answers":[]}', "references must be non-empty"),
    ],
)
def test_malformed_lines(tmp_path, line, msg):
    p = write_lines(tmp_path / "d.jsonl", ['{"id":"ok","question":"x","answers":["y"]}', line])
    with pytest.raises(DatasetError, match=msg) as err:
        load_dataset(p)
    assert ":2:" in str(err.value)


def test_duplicate_ids(tmp_path):
    rec = '{"id":"q","question":"x","answers":["y"]}'
    p = write_lines(tmp_path / "d.jsonl", [rec, "", rec])
    with pytest.raises(DatasetError, match=r":3: duplicate id"):
        load_dataset(p)


def test_context_round_trip(tmp_path):
    recs = [QaRecord("a", "Who?", ("me", "myself"), context="It was me."), QaRecord("b", "Why?", ("because",))]
    write_dataset(recs, tmp_path / "d.jsonl")
    assert load_dataset(tmp_path / "d.jsonl") == recs


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "absent.jsonl")


def test_sampling_validation():
    with pytest.raises(ValueError, match="m must be"):
        SamplingConfig(m=1)
    with pytest.raises(ValueError, match="placeholder"):
        SamplingConfig(prompt_template="no slot")
    with pytest.raises(ValueError, match="placeholder"):
        SamplingConfig(prompt_template="{question} {question}")
    with pytest.raises(ValueError, match="temperature"):
        SamplingConfig(temperature=0)


def test_render_with_context():
    s = SamplingConfig(prompt_template="Q: {question}")
    rec = QaRecord("a", "Who?", ("x",), context="Ctx.")
    assert s.render(rec) == "Q: Who?"
    assert s.render(rec, include_context=True) == "Q: Ctx.\nWho?"


def test_response_validation():
    with pytest.raises(ValueError, match="differ in length"):
        Response("x", ("a",), ())
    with pytest.raises(ValueError, match="<= 0"):
        Response("x", ("a",), (0.1,))
    with pytest.raises(ValueError, match="finite"):
        Response("x", ("a",), (float("nan"),))
    assert Response("x", ("a", "b"), (-0.25, -0.5)).joint_logprob == -0.75


def test_cache_key_examples():
    s = SamplingConfig()
    assert cache_key("q1", s, "p") == cache_key("q1", s, "p")
    hotter = SamplingConfig(temperature=0.7)
    assert cache_key("q1", SamplingConfig(temperature=0.5), "p") != cache_key("q1", hotter, "p")
    key = cache_key("q1", s, "p")
    assert len(key) == 64 and all(c in "0123456789abcdef" for c in key)


@settings(max_examples=60, deadline=None)
@given(
    field=st.sampled_from(["record_id", "model_id", "prompt", "temperature", "m", "max_tokens"]),
)
def test_cache_key_sensitive_to_every_field(field):
    base = dict(record_id="q1", model_id="m", prompt="p", temperature=0.5, m=5, max_tokens=64)
    changed = dict(base)
    changed[field] = {"record_id": "q2", "model_id": "n", "prompt": "p2", "temperature": 0.7, "m": 6,
                      "max_tokens": 32}[field]

    def key(d):
        s = SamplingConfig(m=d["m"], temperature=d["temperature"], model_id=d["model_id"], max_tokens=d["max_tokens"])
        return cache_key(d["record_id"], s, d["prompt"])

    assert key(base) != key(changed)


def test_store_load_round_trip(tmp_path):
    gen = make_set(["Paris", "paris, France"], [(-0.1,), (-0.2, -0.3)])
    store_generations(gen, tmp_path, "k")
    assert load_generations("k", tmp_path) == gen


def test_load_unknown_key(tmp_path):
    assert load_generations("nope", tmp_path) is None


def test_store_twice_last_writer_wins(tmp_path):
    store_generations(make_set(["a", "b"]), tmp_path, "k")
    second = make_set(["c", "d"])
    store_generations(second, tmp_path, "k")
    assert load_generations("k", tmp_path) == second
    assert sorted(p.name for p in tmp_path.iterdir()) == ["k.json"]


def test_corrupt_cache_is_absent(tmp_path, caplog):
    (tmp_path / "k.json").write_text("{truncated")
    with caplog.at_level(logging.WARNING):
        assert load_generations("k", tmp_path) is None
    assert "corrupt" in caplog.text


texts = st.text(min_size=0, max_size=20)
logprob_lists = st.lists(st.floats(min_value=-50, max_value=0, allow_nan=False), min_size=0, max_size=5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(texts, logprob_lists), min_size=1, max_size=6))
def test_generation_json_round_trip(items):
    responses = tuple(Response(t, tuple(f"w{i}" for i in range(len(lp))), tuple(lp)) for t, lp in items)
    gen = GenerationSet("r", responses, SamplingConfig())
    assert GenerationSet.from_dict(json.loads(json.dumps(gen.to_dict()))) == gen
