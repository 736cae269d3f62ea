"""Summary embeddings and similarity-based pair mining."""
from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

THRESHOLD = 0.75
HASHED_TF = "hashed-tf-256"


class EmbedderMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SummaryEmbedding:
    video_id: str
    vector: np.ndarray
    embedder_id: str = HASHED_TF

    def __post_init__(self):
        n = float(np.linalg.norm(self.vector))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"embedding for {self.video_id} has norm {n}, expected 1")


@dataclass(frozen=True)
class MinedPair:
    id_a: str
    id_b: str
    similarity: float

    def record(self) -> dict:
        return {"id_a": self.id_a, "id_b": self.id_b, "similarity": round(self.similarity, 6)}


def _bucket(word: str, dim: int) -> int:
    return int.from_bytes(hashlib.md5(word.encode()).digest()[:4], "little") % dim


def hashed_tf(text: str, dim: int = 256) -> np.ndarray:
    v = np.zeros(dim)
    for word, c in Counter(re.findall(r"[a-z0-9]+", text.lower())).items():
        v[_bucket(word, dim)] += 1.0 + math.log(c)
    n = np.linalg.norm(v)
    if n == 0:
        v[0] = 1.0  # empty text: fixed unit vector keeps the norm contract
        return v
    return v / n


def embed_summary(summary, dim: int = 256) -> SummaryEmbedding:
    return SummaryEmbedding(summary.video_id, hashed_tf(summary.text, dim), f"hashed-tf-{dim}")


def embedding_from_vector(video_id: str, vector, embedder_id: str) -> SummaryEmbedding:
    v = np.asarray(vector, dtype=np.float64)
    return SummaryEmbedding(video_id, v / np.linalg.norm(v), embedder_id)


def cosine(a: SummaryEmbedding, b: SummaryEmbedding) -> float:
    if a.embedder_id != b.embedder_id:
        raise EmbedderMismatch(f"{a.embedder_id} vs {b.embedder_id}")
    return float(np.clip(a.vector @ b.vector, -1.0, 1.0))


def mine_pairs(embeddings, threshold: float = THRESHOLD, per_video_cap: int | None = None) -> list[MinedPair]:
    embs = sorted(embeddings, key=lambda e: e.video_id)
    ids = {e.embedder_id for e in embs}
    if len(ids) > 1:
        raise EmbedderMismatch(f"mixed embedders: {sorted(ids)}")
    if len(embs) < 2:
        return []
    m = np.stack([e.vector for e in embs])
    sims = np.clip(m @ m.T, -1.0, 1.0)
    pairs = []
    for i in range(len(embs)):
        for j in range(i + 1, len(embs)):
            if sims[i, j] >= threshold:
                pairs.append(MinedPair(embs[i].video_id, embs[j].video_id, float(sims[i, j])))
    pairs.sort(key=lambda p: (-p.similarity, p.id_a, p.id_b))
    if per_video_cap is not None:
        count: Counter = Counter()
        kept = []
        for p in pairs:
            if count[p.id_a] < per_video_cap and count[p.id_b] < per_video_cap:
                kept.append(p)
                count[p.id_a] += 1
                count[p.id_b] += 1
        pairs = kept
    return pairs
