"""Domain types, timestamp arithmetic and interval geometry.

All times live on a 1-second integer grid. Windows are half-open
``[start, end)`` so lengths and overlaps are exact integer arithmetic.
"""
from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

MAX_TIMESTAMP = 360000  # 100 hours, the HH:MM:SS ceiling

_TS_RE = re.compile(r"^\s*(\d{1,2}):(\d{2}):(\d{2})(?:\.\d+)?\s*$")


class MalformedTimestamp(ValueError):
    pass


class InvalidWindow(ValueError):
    pass


class FormatError(ValueError):
    """Binary container has the wrong magic, version or size."""


class ConfigError(ValueError):
    """Invalid or missing configuration; ``field`` is the dotted key path."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def parse_timestamp(text: str) -> int:
    """Parse ``HH:MM:SS`` into whole seconds (fractions truncate toward zero)."""
    m = _TS_RE.match(text)
    if m is None:
        raise MalformedTimestamp(f"not a HH:MM:SS timestamp: {text!r}")
    h, mi, s = (int(g) for g in m.groups())
    if mi >= 60 or s >= 60:
        raise MalformedTimestamp(f"minute/second field overflow: {text!r}")
    return 3600 * h + 60 * mi + s


def format_timestamp(t: int) -> str:
    if not 0 <= t < MAX_TIMESTAMP:
        raise ValueError(f"timestamp out of range: {t}")
    h, rem = divmod(int(t), 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


@dataclass(frozen=True, order=True)
class TimeWindow:
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise InvalidWindow(f"need 0 <= start < end, got [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start

    def within(self, duration: int) -> bool:
        return self.end <= duration

    def render(self) -> str:
        return f"[{format_timestamp(self.start)} - {format_timestamp(self.end)}]"


def interval_iou(a: TimeWindow, b: TimeWindow) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    return inter / union


def union_length(windows: Iterable[TimeWindow]) -> int:
    """Total length covered by the union of ``windows`` (overlaps count once)."""
    total = 0
    cur_s = cur_e = None
    for w in sorted(windows):
        if cur_e is None or w.start > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = w.start, w.end
        else:
            cur_e = max(cur_e, w.end)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


@dataclass
class NarratedVideo:
    id: str
    task_id: str
    duration: int
    narrations: list[tuple[int, str]]
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.duration:
            raise ValueError(
                f"video {self.id}: feature rows {self.features.shape} != duration {self.duration}"
            )
        times = [t for t, _ in self.narrations]
        if times != sorted(times):
            raise ValueError(f"video {self.id}: narrations not sorted by time")
        if times and times[-1] > self.duration:
            raise ValueError(f"video {self.id}: narration after end of video")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def record(self, feature_file: str | None = None) -> dict:
        rec = {
            "id": self.id,
            "task_id": self.task_id,
            "duration": self.duration,
            "narrations": [[t, s] for t, s in self.narrations],
        }
        if feature_file is not None:
            rec["features"] = feature_file
        return rec


@dataclass(frozen=True)
class DetourTuple:
    source_id: str
    t_s: int
    query: str
    detour_id: str
    window: TimeWindow

    def __post_init__(self):
        if self.source_id == self.detour_id:
            raise ValueError("source and detour video must differ")
        if self.t_s < 0:
            raise ValueError("t_s must be non-negative")

    @property
    def key(self) -> str:
        return f"{self.source_id}@{self.t_s}->{self.detour_id}[{self.window.start},{self.window.end})"

    def record(self) -> dict:
        return {
            "source_id": self.source_id,
            "t_s": self.t_s,
            "query": self.query,
            "detour_id": self.detour_id,
            "window": [self.window.start, self.window.end],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DetourTuple":
        return cls(rec["source_id"], int(rec["t_s"]), rec["query"], rec["detour_id"],
                   TimeWindow(*rec["window"]))


# --- persistence -----------------------------------------------------------

DTRF_MAGIC = b"DTRF"
DTRF_VERSION = 1
_DTRF_HEADER = struct.Struct("<4sIII")


def write_dtrf(path: str | Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("DTRF holds a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(_DTRF_HEADER.pack(DTRF_MAGIC, DTRF_VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_dtrf(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _DTRF_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols = _DTRF_HEADER.unpack_from(raw)
    if magic != DTRF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DTRF_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = raw[_DTRF_HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise FormatError(f"{path}: payload size mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)


def dumps(obj) -> str:
    """Canonical JSON used for every artifact so reruns are byte-identical."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def save_videos(directory: str | Path, videos: list[NarratedVideo]) -> None:
    """Write ``videos.jsonl`` plus one DTRF sidecar per video under ``features/``."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    recs = []
    for v in videos:
        rel = f"features/{v.id}.dtrf"
        write_dtrf(directory / rel, v.features)
        recs.append(v.record(rel))
    write_jsonl(directory / "videos.jsonl", recs)


def load_videos(directory: str | Path) -> list[NarratedVideo]:
    directory = Path(directory)
    out = []
    for rec in read_jsonl(directory / "videos.jsonl"):
        feats = read_dtrf(directory / rec["features"])
        out.append(NarratedVideo(rec["id"], rec["task_id"], int(rec["duration"]),
                                 [(int(t), s) for t, s in rec["narrations"]], feats))
    return out
