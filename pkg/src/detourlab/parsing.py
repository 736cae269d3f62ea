"""Strict parsers and validators for weakly-supervised completions.

Rejections are returned as ``RejectionReport`` values, never raised, so a
batch over a corpus always finishes and can be counted.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .core import MalformedTimestamp, TimeWindow, format_timestamp, parse_timestamp, union_length

NO_PARSE = "NoParse"
BAD_TIMESTAMP = "BadTimestamp"
LOW_COVERAGE = "LowCoverage"
OUT_OF_RANGE = "OutOfRange"
MISSING_FIELD = "MissingField"
REASONS = (NO_PARSE, BAD_TIMESTAMP, LOW_COVERAGE, OUT_OF_RANGE, MISSING_FIELD)

COVERAGE = 0.8

_RECIPE = re.compile(r"^\s*Recipe\s*:\s*(.+?)\s*$", re.IGNORECASE)
# grammar shape first; timestamp validity is checked separately so a
# well-shaped line with a broken clock is a BadTimestamp, not noise
_STEP = re.compile(r"^\s*Step\s*(\d+)\s*:\s*\[\s*([^\]]*?)\s*-\s*([^\]]*?)\s*\]\s*(\S.*?)\s*$", re.IGNORECASE)
_DETOUR_T = re.compile(r"Detour time in Video A\s*:\s*([^\s,\]]+)", re.IGNORECASE)
_DETOUR_W = re.compile(r"Detour time window in Video B\s*:\s*\[\s*([^\]]*?)\s*-\s*([^\]]*?)\s*\]", re.IGNORECASE)
_DETOUR_Q = re.compile(r"Detour text prompt\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)


@dataclass(frozen=True)
class RejectionReport:
    item_id: str
    reason: str
    line: int | None = None
    detail: str = ""

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown rejection reason {self.reason!r}")

    def record(self) -> dict:
        return {"id": self.item_id, "reason": self.reason, "line": self.line, "detail": self.detail}


@dataclass
class VideoSummary:
    video_id: str
    recipe: str
    steps: list[tuple[TimeWindow, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("a summary needs at least one step")
        if any(not d.strip() for _, d in self.steps):
            raise ValueError("step descriptions must be non-empty")

    @property
    def text(self) -> str:
        return " ".join([self.recipe] + [d for _, d in self.steps])

    def record(self) -> dict:
        return {"video_id": self.video_id, "recipe": self.recipe,
                "steps": [[w.start, w.end, d] for w, d in self.steps]}

    @classmethod
    def from_record(cls, r: dict) -> "VideoSummary":
        return cls(r["video_id"], r["recipe"], [(TimeWindow(s, e), d) for s, e, d in r["steps"]])


@dataclass(frozen=True)
class ParsedDetour:
    """Detour fields as read; the window may still be empty or out of range."""

    t_s: int
    start: int
    end: int
    query: str

    @property
    def window(self) -> TimeWindow:
        return TimeWindow(self.start, self.end)


def render_steps(steps) -> str:
    return "\n".join(f"Step {k}: {w.render()} {d}" for k, (w, d) in enumerate(steps, 1))


def render_summary(s: VideoSummary) -> str:
    return f"Recipe: {s.recipe}\n{render_steps(s.steps)}"


def render_detour(t_s: int, window: TimeWindow, query: str) -> str:
    return (f"Detour time in Video A: {format_timestamp(t_s)}, "
            f"Detour time window in Video B: {window.render()}, "
            f"Detour text prompt: {query}")


def parse_summary(text: str, video_id: str) -> VideoSummary | RejectionReport:
    recipe = ""
    steps = []
    for i, line in enumerate(text.splitlines()):
        m = _RECIPE.match(line)
        if m and not recipe:
            recipe = m.group(1)
            continue
        m = _STEP.match(line)
        if not m:
            continue
        try:
            a, b = parse_timestamp(m.group(2)), parse_timestamp(m.group(3))
        except MalformedTimestamp as e:
            return RejectionReport(video_id, BAD_TIMESTAMP, i, str(e))
        if a >= b:
            return RejectionReport(video_id, BAD_TIMESTAMP, i, f"start {a} not before end {b}")
        steps.append((TimeWindow(a, b), m.group(4)))
    if not steps:
        return RejectionReport(video_id, NO_PARSE, None, "no step line matched")
    return VideoSummary(video_id, recipe, steps)


def validate_summary(s: VideoSummary, duration: int) -> bool | RejectionReport:
    for i, (w, _) in enumerate(s.steps):
        if not w.within(duration):
            return RejectionReport(s.video_id, OUT_OF_RANGE, i, f"{w.render()} outside [0, {duration}]")
    covered = union_length([w for w, _ in s.steps])
    # integer compare avoids float fuzz at the boundary: covered/duration >= 4/5
    if 5 * covered < 4 * duration:
        return RejectionReport(s.video_id, LOW_COVERAGE, None, f"coverage {covered}/{duration}")
    return True


def parse_detour(text: str, pair_id: str = "") -> ParsedDetour | RejectionReport:
    mt, mw, mq = _DETOUR_T.search(text), _DETOUR_W.search(text), _DETOUR_Q.search(text)
    for name, m in (("detour time", mt), ("detour window", mw), ("detour prompt", mq)):
        if m is None:
            return RejectionReport(pair_id, MISSING_FIELD, None, f"missing {name}")
    try:
        t_s = parse_timestamp(mt.group(1))
        a, b = parse_timestamp(mw.group(1)), parse_timestamp(mw.group(2))
    except MalformedTimestamp as e:
        return RejectionReport(pair_id, BAD_TIMESTAMP, None, str(e))
    query = mq.group(1).strip().strip("'\"`").strip()
    if not query:
        return RejectionReport(pair_id, MISSING_FIELD, None, "empty detour prompt")
    return ParsedDetour(t_s, a, b, query)


def validate_detour(t, dur_src: int, dur_det: int, pair_id: str = "") -> bool | RejectionReport:
    """Accept iff 0 <= t_s <= dur_src and the window is non-empty inside [0, dur_det]."""
    if isinstance(t, ParsedDetour):
        start, end = t.start, t.end
    else:
        start, end = t.window.start, t.window.end
    if not 0 <= t.t_s <= dur_src:
        return RejectionReport(pair_id, OUT_OF_RANGE, None, f"t_s {t.t_s} outside [0, {dur_src}]")
    if not 0 <= start < end <= dur_det:
        return RejectionReport(pair_id, OUT_OF_RANGE, None, f"window [{start}, {end}) outside [0, {dur_det}]")
    return True
