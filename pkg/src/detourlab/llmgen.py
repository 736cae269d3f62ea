"""Prompt builders and completion backends (HTTP chat endpoint or offline oracle)."""
from __future__ import annotations

import hashlib
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .core import NarratedVideo, format_timestamp
from .parsing import (
    BAD_TIMESTAMP,
    MISSING_FIELD,
    NO_PARSE,
    VideoSummary,
    render_detour,
    render_steps,
    render_summary,
)

# Prompt wording is functional data: completions are parsed against the
# grammar these templates request, so the text is kept byte-exact.
SUMMARY_SYSTEM = (
    "Help summarize the steps of this YouTube recipes whose narrations with timestamps are given. "
    "Timestamp is given in HH:MM:ss."
)
SUMMARY_USER = (
    "Given the narrations of a YouTube video, tell the recipe being made in this YouTube video and "
    "list down the steps and start and end timestamps in the video. Answer in this format: "
    "'Recipe: Name of the recipe and brief detail \n Step 1: [HH:MM:ss - HH:MM:ss] description of the step "
    "\n Step 2: [HH:MM:ss - HH:MM:ss] description of the step \n and so on'. "
    "Here are narrations with timestamps in HH:MM:ss format: {narrations}"
)
DETOUR_SYSTEM = (
    "Help understand why a user would pause watching one video and take a detour to another cooking video."
)
DETOUR_USER = (
    "There are two cooking videos A and B. The steps of the recipe along with timestamps in HH:MM:ss "
    "format is given. Suppose a person is watching video A, can you tell me what the user would prompt "
    "to take a detour and watch video B? The answer can be some extra/missing ingredients, tools or "
    "procedural step. Some examples of such queries can be 'How to do this step without adding yeast?', "
    "'Can I add chilli powder here?',  'Can I do this step without blender?', 'Can you give a video that "
    "shows other way to roll a sushi?' and so on. Also, tell the time when the user would stop watching "
    "Video A and the time range in Video B and answers the user query. Answer in this format: "
    "'Detour time in Video A: HH:MM:ss, Detour time window in Video B: [HH:MM:ss - HH:MM:ss], "
    "Detour text prompt: One sentence question a user would prompt to take a detour'. "
    "Here are the reciped: Video A: {a} and Video B: {b}"
)

API_KEY_ENV = "DETOURLAB_API_KEY"
FAULT_KINDS = ("truncate", "drop_timestamps", "bad_timestamps", "prose")


class EmptyNarrations(ValueError):
    pass


class EmptySummary(ValueError):
    pass


class NetworkError(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user"):
            raise ValueError(f"role must be system or user, got {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass
class BackendConfig:
    kind: str = "offline"
    endpoint: str | None = None
    model: str = "llama-2-70b-chat"
    max_retries: int = 4
    timeout: float = 60.0
    temperature: float = 0.0
    max_in_flight: int = 4
    world_dir: str | None = None
    fault_rate: float = 0.0
    fault_seed: int = 0
    audit_log: str | None = None

    def __post_init__(self):
        if self.kind not in ("http", "offline"):
            raise ValueError(f"backend kind must be http or offline, got {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0.0 <= self.fault_rate <= 1.0:
            raise ValueError("fault_rate must lie in [0, 1]")


def narration_block(video: NarratedVideo) -> str:
    return "\n".join(f"{format_timestamp(t)} {s}" for t, s in video.narrations)


def build_summary_prompt(video: NarratedVideo) -> list[ChatMessage]:
    if not video.narrations:
        raise EmptyNarrations(f"video {video.id} has no narrations")
    return [ChatMessage("system", SUMMARY_SYSTEM),
            ChatMessage("user", SUMMARY_USER.format(narrations=narration_block(video)))]


def build_detour_prompt(a: VideoSummary, b: VideoSummary) -> list[ChatMessage]:
    for s in (a, b):
        if s is None or not s.steps:
            raise EmptySummary("both summaries need at least one step")
    return [ChatMessage("system", DETOUR_SYSTEM),
            ChatMessage("user", DETOUR_USER.format(a=render_summary(a), b=render_summary(b)))]


def _digest(messages: Sequence[ChatMessage], *extra) -> bytes:
    h = hashlib.sha256()
    for part in extra:
        h.update(str(part).encode() + b"\x1e")
    for m in messages:
        h.update(m.role.encode() + b"\x1f" + m.content.encode() + b"\x1e")
    return h.digest()


def expected_rejection(fault: str, prompt_kind: str) -> str:
    """Reason the parsers must give for a completion corrupted by ``fault``."""
    if fault == "bad_timestamps":
        return BAD_TIMESTAMP
    return NO_PARSE if prompt_kind == "summary" else MISSING_FIELD


class OfflineBackend:
    """Renders oracle annotations of a synthetic world through the output grammars.

    Output is a pure function of (messages, world seed, fault settings).
    """

    def __init__(self, world, fault_rate: float = 0.0, fault_seed: int = 0):
        self.world = world
        self.fault_rate = fault_rate
        self.fault_seed = fault_seed
        self._by_narration = {narration_block(v): v.id for v in world.videos}
        self._by_summary = {self.oracle_summary_text(v.id): v.id for v in world.videos}

    def oracle_summary_text(self, video_id: str) -> str:
        return f"Recipe: {self.world.recipe_of(video_id)}\n{render_steps(self.world.summary_steps(video_id))}"

    @staticmethod
    def prompt_kind(messages: Sequence[ChatMessage]) -> str:
        return "summary" if messages[0].content == SUMMARY_SYSTEM else "detour"

    def fault_for(self, messages: Sequence[ChatMessage]) -> str | None:
        if self.fault_rate <= 0:
            return None
        d = _digest(messages, "fault", self.fault_seed, self.world.config.seed)
        u = int.from_bytes(d[:8], "little") / 2**64
        if u >= self.fault_rate:
            return None
        return FAULT_KINDS[d[8] % len(FAULT_KINDS)]

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        kind = self.prompt_kind(messages)
        text = self._summary(messages) if kind == "summary" else self._detour(messages)
        fault = self.fault_for(messages)
        return text if fault is None else corrupt(text, fault, kind)

    def _summary(self, messages) -> str:
        user = messages[-1].content
        marker = "timestamps in HH:MM:ss format: "
        block = user[user.rfind(marker) + len(marker):]
        vid = self._by_narration.get(block)
        if vid is None:
            return "I am not able to summarize this video."
        return self.oracle_summary_text(vid)

    def _detour(self, messages) -> str:
        user = messages[-1].content
        marker = "Here are the reciped: Video A: "
        parts = user[user.rfind(marker) + len(marker):].split(" and Video B: ", 1)
        a = self._by_summary.get(parts[0]) if marker in user else None
        b = self._by_summary.get(parts[-1]) if len(parts) == 2 else None
        if a is None or b is None:
            return "These two recipes do not seem related."
        return self.detour_text(a, b)

    def detour_text(self, a: str, b: str) -> str:
        from .world import query_for

        w = self.world
        pa, pb = w.plans[a], w.plans[b]
        diff = [i for i, (x, y) in enumerate(zip(pa.assignment, pb.assignment)) if x != y]
        if diff:
            k = diff[0]
        else:
            k = min(len(pa.steps), len(pb.steps))
        kb = min(k, len(pb.steps) - 1)
        ka = min(k, len(pa.steps) - 1)
        step = w.catalog.steps[pb.steps[kb].canonical_step_id]
        target = pb.steps[kb].variant_value
        if pa.steps[ka].canonical_step_id == step.id:
            source = pa.steps[ka].variant_value
        else:
            source = next((v for v in step.values if v != target), target)
        query = query_for(w.config.seed, a, b, step, source, target)
        return render_detour(pa.spans[ka].start, pb.spans[kb], query)


def corrupt(text: str, fault: str, prompt_kind: str) -> str:
    if fault == "truncate":
        if prompt_kind == "summary":
            return text[: text.index("[") + 3]
        return text[: text.index("Detour time window")] + "Detour time win"
    if fault == "drop_timestamps":
        if prompt_kind == "summary":
            return re.sub(r"\s*\[[^\]]*\]", "", text)
        return re.sub(r"\d\d:\d\d:\d\d", "", text)
    if fault == "bad_timestamps":
        return re.sub(r"(\d\d):(\d\d):(\d\d)", r"\1:75:\3", text, count=1)
    if fault == "prose":
        if prompt_kind == "summary":
            return "I cannot summarize this video."
        return "Both videos make the same dish, so there is no reason to switch."
    raise ValueError(f"unknown fault {fault!r}")


class HttpBackend:
    """OpenAI-compatible chat-completions client with retry and an audit log."""

    def __init__(self, cfg: BackendConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, api_key: str | None = None):
        self.cfg = cfg
        self.sleep = sleep
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        url = cfg.endpoint.rstrip("/")
        self.url = url if url.endswith("/chat/completions") else url + "/chat/completions"
        self.client = httpx.Client(transport=transport, timeout=cfg.timeout)

    def _audit(self, entry: dict) -> None:
        if not self.cfg.audit_log:
            return
        with open(self.cfg.audit_log, "a") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        body = {"model": self.cfg.model, "temperature": self.cfg.temperature,
                "messages": [asdict(m) for m in messages]}
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last = ""
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self.sleep(1.0 * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.url, json=body, headers=headers)
            except httpx.TransportError as e:
                last = f"transport error: {e}"
                self._audit({"attempt": attempt, "request": body, "error": last,
                             "authorization": "[REDACTED]" if headers else None})
                continue
            self._audit({"attempt": attempt, "request": body, "status": resp.status_code,
                         "response": resp.text, "authorization": "[REDACTED]" if headers else None})
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise NetworkError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as e:
                raise ProtocolError(f"malformed completion body: {resp.text[:200]}") from e
            if not isinstance(content, str):
                raise ProtocolError("completion content is not a string")
            return content
        raise NetworkError(f"giving up after {self.cfg.max_retries + 1} attempts ({last})")

    def close(self) -> None:
        self.client.close()


def make_backend(cfg: BackendConfig, world=None, **kw):
    if cfg.kind == "http":
        return HttpBackend(cfg, **kw)
    if world is None:
        if not cfg.world_dir:
            raise ValueError("offline backend needs a world")
        from .world import load_world

        world = load_world(Path(cfg.world_dir))
    return OfflineBackend(world, cfg.fault_rate, cfg.fault_seed)


def complete(cfg: BackendConfig, messages: Sequence[ChatMessage], backend=None) -> str:
    backend = backend or make_backend(cfg)
    return backend.complete(messages)


def complete_many(backend, prompts: Sequence[Sequence[ChatMessage]], max_in_flight: int = 4) -> list[str]:
    """Completions in input order regardless of scheduling."""
    if max_in_flight <= 1 or len(prompts) <= 1:
        return [backend.complete(p) for p in prompts]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(backend.complete, prompts))
