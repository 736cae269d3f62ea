import json

import httpx
import numpy as np
import pytest

from detourlab.core import NarratedVideo
from detourlab.llmgen import (
    DETOUR_USER,
    FAULT_KINDS,
    SUMMARY_USER,
    BackendConfig,
    ChatMessage,
    EmptyNarrations,
    EmptySummary,
    HttpBackend,
    NetworkError,
    OfflineBackend,
    ProtocolError,
    build_detour_prompt,
    build_summary_prompt,
    complete_many,
    corrupt,
    expected_rejection,
)
from detourlab.parsing import RejectionReport, VideoSummary, parse_detour, parse_summary


def _video(narr):
    return NarratedVideo("v", "t", 60, narr, np.zeros((60, 2), np.float32))


def test_summary_prompt_shape():
    msgs = build_summary_prompt(_video([(0, "hello"), (75, "stir")][:1]))
    assert [m.role for m in msgs] == ["system", "user"]
    assert msgs[1].content.endswith("format: 00:00:00 hello")


def test_prompt_templates_keep_their_wording():
    assert "Here are the reciped: Video A: {a} and Video B: {b}" in DETOUR_USER
    assert "'Can I add chilli powder here?',  'Can I do" in DETOUR_USER
    assert SUMMARY_USER.endswith("{narrations}")


def test_empty_inputs_rejected():
    with pytest.raises(EmptyNarrations):
        build_summary_prompt(_video([]))
    with pytest.raises(ValueError):
        VideoSummary("a", "r", [])
    with pytest.raises(EmptySummary):
        build_detour_prompt(None, None)


def test_chat_message_validation():
    with pytest.raises(ValueError):
        ChatMessage("assistant", "x")
    with pytest.raises(ValueError):
        ChatMessage("user", "")


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(kind="http")
    with pytest.raises(ValueError):
        BackendConfig(fault_rate=1.5)


def test_offline_is_deterministic(small_world):
    a, b = OfflineBackend(small_world, 0.3, 1), OfflineBackend(small_world, 0.3, 1)
    prompts = [build_summary_prompt(v) for v in small_world.videos[:20]]
    assert [a.complete(p) for p in prompts] == [b.complete(p) for p in prompts]


def test_unknown_prompt_yields_unparseable_text(small_world):
    backend = OfflineBackend(small_world)
    text = backend.complete(build_summary_prompt(_video([(0, "nothing here")])))
    assert isinstance(parse_summary(text, "v"), RejectionReport)


def test_fault_rate_close_to_target(small_world):
    backend = OfflineBackend(small_world, 0.2, 4)
    faults = [backend.fault_for(build_summary_prompt(v)) for v in small_world.videos]
    rate = sum(f is not None for f in faults) / len(faults)
    assert 0.05 < rate < 0.4
    assert {f for f in faults if f} <= set(FAULT_KINDS)


@pytest.mark.parametrize("fault", FAULT_KINDS)
def test_every_fault_is_caught_with_its_reason(small_world, fault):
    backend = OfflineBackend(small_world)
    vids = small_world.videos[:4]
    for v in vids:
        text = corrupt(backend.oracle_summary_text(v.id), fault, "summary")
        r = parse_summary(text, v.id)
        assert isinstance(r, RejectionReport)
        assert r.reason == expected_rejection(fault, "summary")
    text = corrupt(backend.detour_text(vids[0].id, vids[1].id), fault, "detour")
    r = parse_detour(text)
    assert isinstance(r, RejectionReport) and r.reason == expected_rejection(fault, "detour")


def _ok_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def _http(handler, **kw):
    sleeps = []
    cfg = BackendConfig(kind="http", endpoint="http://llm.test/v1", **kw)
    return HttpBackend(cfg, transport=httpx.MockTransport(handler), sleep=sleeps.append, api_key="k"), sleeps


def test_retry_after_429():
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) == 1:
            return httpx.Response(429)
        return httpx.Response(200, json=_ok_body("Recipe: x"))

    backend, sleeps = _http(handler)
    assert backend.complete([ChatMessage("user", "hi")]) == "Recipe: x"
    assert len(calls) == 2 and sleeps == [1.0]
    assert str(calls[0].url) == "http://llm.test/v1/chat/completions"
    body = json.loads(calls[0].content)
    assert body["temperature"] == 0.0 and body["messages"] == [{"role": "user", "content": "hi"}]


def test_retries_exhausted():
    backend, sleeps = _http(lambda r: httpx.Response(503), max_retries=2)
    with pytest.raises(NetworkError):
        backend.complete([ChatMessage("user", "hi")])
    assert sleeps == [1.0, 2.0]


def test_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad")

    backend, _ = _http(handler)
    with pytest.raises(NetworkError):
        backend.complete([ChatMessage("user", "hi")])
    assert len(calls) == 1


def test_malformed_body_is_protocol_error():
    backend, _ = _http(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(ProtocolError):
        backend.complete([ChatMessage("user", "hi")])


def test_audit_log_redacts_key(tmp_path):
    log = tmp_path / "audit.jsonl"
    backend, _ = _http(lambda r: httpx.Response(200, json=_ok_body("ok")), audit_log=str(log))
    backend.complete([ChatMessage("user", "hi")])
    text = log.read_text()
    assert "[REDACTED]" in text and "Bearer" not in text


def test_complete_many_preserves_order(small_world):
    backend = OfflineBackend(small_world)
    prompts = [build_summary_prompt(v) for v in small_world.videos[:10]]
    assert complete_many(backend, prompts, 4) == complete_many(backend, prompts, 1)
