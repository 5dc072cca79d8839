import json
from pathlib import Path

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_income
from fmeval.errors import AuthFailure, ExtractionFailure, InvalidInput, MalformedResponse, MockParseFailure, RateLimited, Timeout
from fmeval.llm import (
    ClientConfig,
    LiveBackend,
    MockBackend,
    TranscriptLog,
    batch_predict,
    complete,
    extract,
    extract_for,
    mock_complete,
    predict_one,
    replay_transcript,
)
from fmeval.prompts import build_prompt
from fmeval.synthetic import make_spec, make_synthetic_task
from fmeval.transforms import SemanticSchema, base_task, contextualize, decontextualize, numerize, verbalize

CORPUS = json.loads((Path(__file__).parent / "fixtures" / "extraction_corpus.json").read_text())


def chat_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"total_tokens": 3}}


def client_for(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


# -- extraction ------------------------------------------------------------------


def test_corpus_size_and_mix():
    kinds = {c["kind"] for c in CORPUS}
    assert len(CORPUS) >= 30 and kinds == {"clean", "verbose", "malformed"}


@pytest.mark.parametrize("case", CORPUS, ids=[c["id"] for c in CORPUS])
def test_extraction_corpus(case):
    if case["want"] is None:
        with pytest.raises(ExtractionFailure):
            extract(case["raw_response"], case["expected"], case["labels"])
    else:
        got = extract(case["raw_response"], case["expected"], case["labels"])
        assert got == case["want"]


def test_extract_argument_checks():
    with pytest.raises(InvalidInput):
        extract("ANSWER: 1", "class")
    with pytest.raises(InvalidInput):
        extract("ANSWER: 1", "probability", ["0", "1"])


@settings(max_examples=80, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False), st.text(alphabet="abc xyz.\n", max_size=40))
def test_answer_line_real_round_trip(value, preamble):
    assert extract(f"{preamble}\nANSWER: {value!r}", "real") == value


# -- live client -----------------------------------------------------------------


def test_complete_echo():
    cfg = ClientConfig(endpoint_url="http://llm.test/v1/chat")
    with client_for(lambda req: httpx.Response(200, json=chat_body("ANSWER: 1"))) as http:
        resp = complete(cfg, "hello", client=http, sleep=lambda s: None)
    assert "ANSWER: 1" in resp.raw_text
    assert resp.usage == {"total_tokens": 3}


def test_retries_after_two_429s(tmp_path):
    calls = []
    sleeps = []

    def handler(req):
        calls.append(json.loads(req.content))
        if len(calls) <= 2:
            return httpx.Response(429)
        return httpx.Response(200, json=chat_body("ANSWER: 0"))

    cfg = ClientConfig(endpoint_url="http://llm.test/v1/chat", backoff_base=0.5)
    log = TranscriptLog(tmp_path / "t.jsonl")
    with client_for(handler) as http:
        resp = complete(cfg, "hi", client=http, sleep=sleeps.append, transcript=log)
    assert len(resp.attempts) == 3
    assert [a.get("status") for a in resp.attempts] == [429, 429, 200]
    assert sleeps == [0.5, 1.0]
    assert calls[0]["temperature"] == 0.0 and calls[0]["messages"][0]["content"] == "hi"
    assert log.records()[0]["attempts"] == list(map(dict, resp.attempts))


def test_rate_limit_exhausts_retries():
    cfg = ClientConfig(endpoint_url="http://llm.test/v1/chat", max_retries=2)
    with client_for(lambda req: httpx.Response(429)) as http:
        with pytest.raises(RateLimited):
            complete(cfg, "hi", client=http, sleep=lambda s: None)


def test_unreachable_host_times_out():
    def handler(req):
        raise httpx.ConnectTimeout("no route", request=req)

    sleeps = []
    cfg = ClientConfig(endpoint_url="http://llm.test/v1/chat", max_retries=3, timeout=0.01)
    with client_for(handler) as http:
        with pytest.raises(Timeout):
            complete(cfg, "hi", client=http, sleep=sleeps.append)
    assert len(sleeps) == 3


def test_auth_and_malformed():
    cfg = ClientConfig(endpoint_url="http://llm.test/v1/chat")
    with client_for(lambda req: httpx.Response(401)) as http:
        with pytest.raises(AuthFailure):
            complete(cfg, "hi", client=http, sleep=lambda s: None)
    with client_for(lambda req: httpx.Response(200, json={"nope": 1})) as http:
        with pytest.raises(MalformedResponse):
            complete(cfg, "hi", client=http, sleep=lambda s: None)


def test_api_key_header(monkeypatch):
    seen = {}

    def handler(req):
        seen["auth"] = req.headers.get("authorization")
        return httpx.Response(200, json=chat_body("ok"))

    monkeypatch.setenv("FMEVAL_TEST_KEY", "sk-test")
    cfg = ClientConfig(endpoint_url="http://llm.test/v1/chat", api_key_env="FMEVAL_TEST_KEY")
    with client_for(handler) as http:
        complete(cfg, "hi", client=http)
    assert seen["auth"] == "Bearer sk-test"
    assert "sk-test" not in repr(ClientConfig(api_key="sk-test"))


def test_live_backend_with_transport():
    be = LiveBackend(ClientConfig(endpoint_url="http://llm.test/v1/chat"),
                     transport=httpx.MockTransport(lambda r: httpx.Response(200, json=chat_body("ANSWER: 1"))))
    try:
        assert be.complete("x").raw_text == "ANSWER: 1"
    finally:
        be.close()


def test_client_config_invariants():
    with pytest.raises(InvalidInput):
        ClientConfig(temperature=-0.1)
    with pytest.raises(InvalidInput):
        ClientConfig(concurrency_limit=0)


# -- mock backend ----------------------------------------------------------------


def regression_prompt(points, qx):
    from fmeval.domain import Example, FeatureSchema, TabularDataset

    rows = tuple(Example((float(x),), float(y), i) for i, (x, y) in enumerate(points))
    ds = TabularDataset((FeatureSchema("feature 0"),), rows, FeatureSchema("y"))
    task = decontextualize(base_task(ds))
    return build_prompt("likelihood", ds, task, Example((float(qx),), 0.0, 99))


def test_mock_nearest_neighbour():
    assert mock_complete(regression_prompt([(0, 0), (1, 1)], 0.9)).raw_text.endswith("ANSWER: 1")


def test_mock_exact_match_returns_training_y():
    p = regression_prompt([(0, 3.5), (0.5, -2.25), (1, 7)], 0.5)
    assert extract_for(p, mock_complete(p)) == -2.25


def test_mock_tie_goes_to_lower_x():
    p = regression_prompt([(0, 3.0), (1, 7.0)], 0.5)
    assert extract_for(p, mock_complete(p)) == 3.0


def test_mock_three_nn_separable():
    from fmeval.domain import CATEGORICAL, Example, FeatureSchema, TabularDataset

    pts = [((0.1 * i, 0.05 * i), 0) for i in range(5)] + [((0.6 + 0.1 * i, 0.7 + 0.05 * i), 1) for i in range(5)]
    rows = tuple(Example(f, c, i) for i, (f, c) in enumerate(pts))
    ds = TabularDataset((FeatureSchema("feature 0"), FeatureSchema("feature 1")), rows,
                        FeatureSchema("class", CATEGORICAL, ("0", "1")))
    task = decontextualize(base_task(ds))
    for f, c in pts:
        p = build_prompt("likelihood", ds, task, Example(f, c, 50))
        assert extract_for(p, mock_complete(p)) == c


def test_mock_parse_failure():
    with pytest.raises(MockParseFailure):
        mock_complete("no examples here")


def prompts_for(ds, mode):
    sem = SemanticSchema.fit(ds)
    if mode == "likelihood":
        view, task = numerize(ds, sem), decontextualize(base_task(ds))
    else:
        view, task = verbalize(ds, sem), contextualize(base_task(ds), ds.context)
    train = view.with_rows(view.rows[:30])
    return [build_prompt(mode, train, task, q) for q in view.rows[30:]]


@pytest.mark.parametrize("mode", ["likelihood", "posterior"])
def test_mock_answers_always_extract(mode):
    for p in prompts_for(small_income(), mode):
        value = extract_for(p, mock_complete(p))
        assert value in (0, 1)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["linear", "sine", "step", "exponential"]), st.integers(0, 500))
def test_mock_extract_never_fails_on_built_prompts(family, seed):
    task = make_synthetic_task(make_spec(family, seed=seed, noise_sd=0.1), n=25, random_x=True)
    sem = SemanticSchema.fit(task.train)
    train, queries = numerize(task.train, sem), numerize(task.queries, sem)
    for q in queries.rows:
        p = build_prompt("likelihood", train, task.task, q)
        extract_for(p, mock_complete(p))
    vtrain, vq = verbalize(task.train, sem), verbalize(task.queries, sem)
    ptask = contextualize(base_task(task.train), task.train.context)
    for q in vq.rows:
        p = build_prompt("posterior", vtrain, ptask, q)
        extract_for(p, mock_complete(p))


def test_mock_backend_request_kinds():
    be = MockBackend(rules_text="1. rule")
    assert be.complete("anything", "rules").raw_text == "1. rule"
    text = "pick the top-2\ncandidate 1: a\ncandidate 2: b\ncandidate 3: c\n"
    assert be.complete(text, "select").raw_text == "ANSWER: a, b"
    with pytest.raises(InvalidInput):
        be.complete("x", "other")


# -- batching & transcripts --------------------------------------------------------


class FlakyBackend:
    """Mock backend that fails on one chosen prompt."""

    def __init__(self, bad_hash):
        self.inner = MockBackend(ClientConfig(concurrency_limit=4))
        self.config = self.inner.config
        self.bad = bad_hash

    def complete(self, prompt, kind="predict"):
        if prompt.hash == self.bad:
            raise Timeout("simulated")
        return self.inner.complete(prompt, kind)


def test_batch_order_and_parallel_determinism():
    prompts = prompts_for(small_income(), "likelihood")[:10]
    be = MockBackend(ClientConfig(concurrency_limit=4))
    seq = batch_predict(be, prompts, 1)
    par = batch_predict(be, prompts, 4)
    assert len(par.predictions) == 10
    assert [p.prompt_hash for p in par.predictions] == [p.hash for p in prompts]
    assert [p.value for p in par.predictions] == [p.value for p in seq.predictions]


def test_batch_isolates_failures():
    prompts = prompts_for(small_income(), "likelihood")[:10]
    res = batch_predict(FlakyBackend(prompts[3].hash), prompts, 4)
    assert sum(p.ok for p in res.predictions) == 9
    assert res.n_failures == 1 and res.errors[0][0] == 3


def test_batch_parallelism_bounded_by_limit():
    with pytest.raises(InvalidInput):
        batch_predict(MockBackend(ClientConfig(concurrency_limit=2)), [], 3)


def test_transcript_replay_reproduces_predictions(tmp_path):
    log = TranscriptLog(tmp_path / "t.jsonl")
    prompts = prompts_for(small_income(), "posterior")
    res = batch_predict(MockBackend(), prompts, 1, log)
    replayed = replay_transcript(log.path)
    assert [v for _, v in replayed] == [p.value for p in res.predictions]
    for rec, p in zip(log.records(), res.predictions):
        assert rec["raw_response"] == p.raw_text


def test_predict_one_records_extraction_failure(tmp_path):
    class Mute:
        config = ClientConfig()

        def complete(self, prompt, kind="predict"):
            from fmeval.llm import LlmResponse

            return LlmResponse("I would rather not say.")

    p = prompts_for(small_income(), "likelihood")[0]
    log = TranscriptLog(tmp_path / "t.jsonl")
    pred = predict_one(Mute(), p, log)
    assert not pred.ok and pred.error.startswith("ExtractionFailure")
    assert log.records()[0]["raw_response"] == "I would rather not say."
