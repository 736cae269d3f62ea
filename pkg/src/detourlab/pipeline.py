"""Weak-supervision curation: summarize -> mine pairs -> generate detours -> validate."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .core import DetourTuple, NarratedVideo, TimeWindow, read_jsonl, write_jsonl
from .llmgen import build_detour_prompt, build_summary_prompt, complete_many
from .pairs import MinedPair, cosine, embed_summary, hashed_tf, mine_pairs
from .parsing import (
    NO_PARSE,
    RejectionReport,
    VideoSummary,
    parse_detour,
    parse_summary,
    validate_detour,
    validate_summary,
)


@dataclass
class CurationResult:
    summaries: dict[str, VideoSummary] = field(default_factory=dict)
    pairs: list[MinedPair] = field(default_factory=list)
    detours: list[DetourTuple] = field(default_factory=list)
    rejects: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def summarize(videos: list[NarratedVideo], backend, max_in_flight: int = 1):
    """Accepted summaries by id and one rejection record per failed video."""
    summaries, rejects = {}, []
    todo = []
    for v in videos:
        if not v.narrations:
            rejects.append({"stage": "summary", **RejectionReport(v.id, NO_PARSE, None, "no narrations").record()})
        else:
            todo.append(v)
    texts = complete_many(backend, [build_summary_prompt(v) for v in todo], max_in_flight)
    for v, text in zip(todo, texts):
        s = parse_summary(text, v.id)
        if isinstance(s, VideoSummary):
            ok = validate_summary(s, v.duration)
            if ok is True:
                summaries[v.id] = s
                continue
            s = ok
        rejects.append({"stage": "summary", **s.record()})
    return summaries, rejects


def parser_timestamps(summary: VideoSummary, video: NarratedVideo) -> VideoSummary:
    """Replace each step window with the span of its most similar narration sentence."""
    times = [t for t, _ in video.narrations]
    spans = []
    for i, t in enumerate(times):
        end = times[i + 1] if i + 1 < len(times) else video.duration
        spans.append((t, max(end, t + 1)))
    vecs = [hashed_tf(s) for _, s in video.narrations]
    steps = []
    for _, desc in summary.steps:
        q = hashed_tf(desc)
        best = max(range(len(vecs)), key=lambda i: (float(vecs[i] @ q), -i))
        a, b = spans[best]
        steps.append((TimeWindow(a, min(b, video.duration)), desc))
    return VideoSummary(summary.video_id, summary.recipe, steps)


def gen_detours(pairs: list[MinedPair], summaries: dict[str, VideoSummary], videos: dict[str, NarratedVideo],
                backend, max_in_flight: int = 1):
    """Both directions of every mined pair; returns (tuples, rejects)."""
    ordered = []
    for p in pairs:
        ordered += [(p.id_a, p.id_b), (p.id_b, p.id_a)]
    prompts = [build_detour_prompt(summaries[a], summaries[b]) for a, b in ordered]
    texts = complete_many(backend, prompts, max_in_flight)
    tuples, rejects = [], []
    for (a, b), text in zip(ordered, texts):
        pid = f"{a}->{b}"
        d = parse_detour(text, pid)
        if isinstance(d, RejectionReport):
            rejects.append({"stage": "detour", **d.record()})
            continue
        ok = validate_detour(d, videos[a].duration, videos[b].duration, pid)
        if ok is not True:
            rejects.append({"stage": "detour", **ok.record()})
            continue
        tuples.append(DetourTuple(a, d.t_s, d.query, b, d.window))
    return tuples, rejects


def curate(videos: list[NarratedVideo], backend, threshold: float = 0.75, per_video_cap: int | None = None,
           use_parser_timestamps: bool = False, max_in_flight: int = 1) -> CurationResult:
    by_id = {v.id: v for v in videos}
    summaries, rejects = summarize(videos, backend, max_in_flight)
    if use_parser_timestamps:
        summaries = {k: parser_timestamps(s, by_id[k]) for k, s in summaries.items()}
    embs = [embed_summary(summaries[k]) for k in sorted(summaries)]
    pairs = mine_pairs(embs, threshold, per_video_cap)
    detours, drejects = gen_detours(pairs, summaries, by_id, backend, max_in_flight)
    rejects += drejects
    reasons = Counter(r["reason"] for r in rejects)
    stats = {
        "summary": {"attempted": len(videos), "accepted": len(summaries),
                    "rejected": sum(r["stage"] == "summary" for r in rejects)},
        "detour": {"attempted": 2 * len(pairs), "accepted": len(detours),
                   "rejected": sum(r["stage"] == "detour" for r in rejects)},
        "pairs": len(pairs),
        "reasons": dict(sorted(reasons.items())),
    }
    return CurationResult(summaries, pairs, detours, rejects, stats)


def save_curation(result: CurationResult, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_jsonl(directory / "summaries.jsonl", (result.summaries[k].record() for k in sorted(result.summaries)))
    write_jsonl(directory / "pairs.jsonl", (p.record() for p in result.pairs))
    write_jsonl(directory / "detours.jsonl", (t.record() for t in result.detours))
    write_jsonl(directory / "rejects.jsonl", result.rejects)
    (directory / "stats.json").write_text(json.dumps(result.stats, sort_keys=True, indent=1) + "\n")


def load_summaries(path: str | Path) -> dict[str, VideoSummary]:
    return {r["video_id"]: VideoSummary.from_record(r) for r in read_jsonl(path)}


def load_detours(path: str | Path) -> list[DetourTuple]:
    return [DetourTuple.from_record(r) for r in read_jsonl(path)]


def load_pairs(path: str | Path) -> list[MinedPair]:
    return [MinedPair(r["id_a"], r["id_b"], r["similarity"]) for r in read_jsonl(path)]


__all__ = ["CurationResult", "curate", "gen_detours", "load_detours", "load_pairs", "load_summaries",
           "parser_timestamps", "save_curation", "summarize", "cosine"]
