"""Ranking and localization metrics, late-fusion baselines, and the benchmark report."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .core import DetourTuple, NarratedVideo, TimeWindow, interval_iou

INPUTS = ("source_only", "query_only", "both")
MASKS = {"source_only": (True, False), "query_only": (False, True), "both": (True, True)}
BASELINES = ("text_only", "mean_pool", "weighted_pool")
LOC_THRESHOLDS = (0.3, 0.5, 0.7)
SWEEP = tuple(round(0.05 * i, 2) for i in range(1, 20))
RECALL_KS = (1, 5, 10)
WEIGHTED_POOL_TEMPERATURE = 0.1
# full-scale reference values, kept for documentation only
REFERENCE = {"R@5": 17.6, "MedR": 30, "mean_R@1": 12.8}


class MissingGroundTruth(ValueError):
    pass


class EmptyResults(ValueError):
    pass


class SplitLeak(RuntimeError):
    pass


@dataclass(frozen=True)
class RankResult:
    tuple_id: str
    rank: int
    n_candidates: int

    def __post_init__(self):
        if not 1 <= self.rank <= self.n_candidates:
            raise ValueError(f"rank {self.rank} outside [1, {self.n_candidates}]")


@dataclass(frozen=True)
class LocResult:
    tuple_id: str
    pred: TimeWindow
    gt: TimeWindow
    iou: float

    @classmethod
    def of(cls, tuple_id: str, pred: TimeWindow, gt: TimeWindow) -> "LocResult":
        return cls(tuple_id, pred, gt, interval_iou(pred, gt))


@dataclass(frozen=True)
class BaselineVariant:
    name: str
    inputs: str

    def __post_init__(self):
        if self.name not in BASELINES:
            raise ValueError(f"unknown baseline {self.name!r}")
        if self.inputs not in INPUTS:
            raise ValueError(f"unknown input combination {self.inputs!r}")
        if self.name == "weighted_pool" and self.inputs == "source_only":
            raise ValueError("weighted_pool needs the query to weight frames")


def rank_from_scores(tuple_id: str, scores, candidate_ids, gt_id: str) -> RankResult:
    """1 + candidates scoring strictly higher; equal scores rank by candidate id."""
    ids = list(candidate_ids)
    if gt_id not in ids:
        raise MissingGroundTruth(f"{tuple_id}: detour video {gt_id} not among candidates")
    scores = np.asarray(scores, dtype=np.float64)
    g = scores[ids.index(gt_id)]
    ahead = sum(1 for s, c in zip(scores, ids) if s > g or (s == g and c < gt_id))
    return RankResult(tuple_id, 1 + ahead, len(ids))


def rank_candidates(scorer, t: DetourTuple, candidates: list[NarratedVideo], use_source: bool = True,
                    use_query: bool = True, corpus: dict | None = None) -> RankResult:
    """``scorer`` is a DetourModel or a callable (tuple, candidate) -> score."""
    ids = [c.id for c in candidates]
    if t.detour_id not in ids:
        raise MissingGroundTruth(f"{t.key}: detour video {t.detour_id} not among candidates")
    if callable(scorer) and not hasattr(scorer, "score"):
        scores = [scorer(t, c) for c in candidates]
    else:
        source = (corpus or {}).get(t.source_id)
        seqs = [scorer.assemble(source, t.t_s, t.query, c, use_source, use_query) for c in candidates]
        scores = scorer.score(seqs)
    return rank_from_scores(t.key, scores, ids, t.detour_id)


def _nonempty(results):
    results = list(results)
    if not results:
        raise EmptyResults("no results to aggregate")
    return results


def recall_at_k(results: Iterable[RankResult], k: int) -> float:
    results = _nonempty(results)
    return sum(r.rank <= k for r in results) / len(results)


def median_rank(results: Iterable[RankResult]) -> int:
    ranks = sorted(r.rank for r in _nonempty(results))
    return ranks[(len(ranks) - 1) // 2]


def loc_recall(results: Iterable[LocResult], thresholds=LOC_THRESHOLDS) -> dict:
    """R@1 per IoU threshold, the threshold-sweep mean R@1, and mean IoU."""
    ious = np.array([r.iou for r in _nonempty(results)])
    out = {float(tau): float(np.mean(ious >= tau - 1e-12)) for tau in thresholds}
    out["mean"] = float(np.mean([np.mean(ious >= tau - 1e-12) for tau in SWEEP]))
    out["mean_iou"] = float(ious.mean())
    return out


# -- late-fusion baselines --------------------------------------------------

def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def mean_pool(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    return _unit(f.mean(axis=0)) if len(f) else np.zeros(f.shape[1])


def weighted_pool(features, query_vec, temperature: float = WEIGHTED_POOL_TEMPERATURE) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    rows = f / np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-12)
    z = rows @ _unit(query_vec) / temperature
    w = np.exp(z - z.max())
    w /= w.sum()
    return _unit(w @ f)


def baseline_retrieve(variant: BaselineVariant, t: DetourTuple, candidates: list[NarratedVideo],
                      embedder: Callable, corpus: dict, summaries: dict | None = None,
                      text_embedder: Callable | None = None) -> RankResult:
    """Late fusion: score_i = cos(phi(V_i), psi) with psi the mean of the used input embeddings."""
    use_src, use_q = MASKS[variant.inputs]
    if variant.name == "text_only":
        if summaries is None or text_embedder is None:
            raise ValueError("text_only needs summaries and a text embedder")
        parts = []
        if use_src:
            src = summaries.get(t.source_id)
            steps = [d for w, d in src.steps if w.start < t.t_s] if src else []
            parts.append(text_embedder(" ".join(steps)) if steps else None)
        if use_q:
            parts.append(text_embedder(t.query))
        psi = _unit(sum(p for p in parts if p is not None)) if any(p is not None for p in parts) else None
        scores = []
        for c in candidates:
            s = summaries.get(c.id)
            if psi is None or s is None:
                scores.append(0.0)
            else:
                scores.append(float(text_embedder(s.text) @ psi))
        return rank_from_scores(t.key, scores, [c.id for c in candidates], t.detour_id)
    src_vec = mean_pool(corpus[t.source_id].features[: t.t_s]) if use_src else None
    q_vec = _unit(embedder(t.query)) if use_q else None
    parts = [v for v in (src_vec, q_vec) if v is not None]
    psi = 0.5 * (parts[0] + parts[1]) if len(parts) == 2 else parts[0]
    scores = []
    for c in candidates:
        if variant.name == "mean_pool":
            phi = mean_pool(c.features)
        else:
            phi = weighted_pool(c.features, q_vec)
        scores.append(float(phi @ _unit(psi)) if np.any(psi) else 0.0)
    return rank_from_scores(t.key, scores, [c.id for c in candidates], t.detour_id)


# -- benchmark ----------------------------------------------------------------

def check_split(test: Iterable[DetourTuple], train_ids: Iterable[str]) -> None:
    train_ids = set(train_ids)
    for t in test:
        for vid in (t.source_id, t.detour_id):
            if vid in train_ids:
                raise SplitLeak(f"test tuple {t.key} uses training video {vid}")


def retrieval_metrics(results: list[RankResult], ks=RECALL_KS) -> dict[str, float]:
    out = {f"R@{k}": recall_at_k(results, k) for k in ks}
    out["MedR"] = float(median_rank(results))
    out["n"] = float(len(results))
    return out


def localization_metrics(results: list[LocResult], thresholds=LOC_THRESHOLDS) -> dict[str, float]:
    lr = loc_recall(results, thresholds)
    out = {f"R@1@{tau:g}": lr[tau] for tau in thresholds}
    out["mean_R@1"] = lr["mean"]
    out["mean_IoU"] = lr["mean_iou"]
    out["n"] = float(len(results))
    return out


def split_rows(method: str, inputs: str, per_split: dict[str, list], metric_fn) -> list[dict]:
    rows = []
    for split, results in per_split.items():
        if not results:
            continue
        for metric, value in metric_fn(results).items():
            rows.append({"method": method, "inputs": inputs, "split": split, "metric": metric,
                         "value": round(float(value), 6)})
    return rows


def group_by_split(results, split_of: Callable[[str], str]) -> dict[str, list]:
    out: dict[str, list] = {"overall": list(results), "common": [], "novel": []}
    for r in results:
        out[split_of(r.tuple_id)].append(r)
    return out


def run_benchmark(test: list[DetourTuple], corpus: dict[str, NarratedVideo], train_ids: Iterable[str],
                  split_of_tuple: Callable[[DetourTuple], str], retrieval_models: dict | None = None,
                  localization_models: dict | None = None, baselines: list[BaselineVariant] = (),
                  embedder: Callable | None = None, summaries: dict | None = None,
                  text_embedder: Callable | None = None, candidates: list[NarratedVideo] | None = None,
                  ks=RECALL_KS) -> list[dict]:
    """Report rows (method, inputs, split, metric, value).

    ``retrieval_models`` / ``localization_models`` map an input combination to
    a trained model; every test tuple ranks all corpus videos except its source.
    """
    check_split(test, train_ids)
    candidates = candidates if candidates is not None else [corpus[k] for k in sorted(corpus)]
    splits = {t.key: split_of_tuple(t) for t in test}
    rows: list[dict] = []
    for inputs, model in (retrieval_models or {}).items():
        use_s, use_q = MASKS[inputs]
        res = [rank_candidates(model, t, [c for c in candidates if c.id != t.source_id], use_s, use_q, corpus)
               for t in test]
        rows += split_rows("ours", inputs, group_by_split(res, splits.get), lambda r: retrieval_metrics(r, ks))
    for v in baselines:
        res = [baseline_retrieve(v, t, [c for c in candidates if c.id != t.source_id], embedder, corpus,
                                 summaries, text_embedder) for t in test]
        rows += split_rows(v.name, v.inputs, group_by_split(res, splits.get), lambda r: retrieval_metrics(r, ks))
    for inputs, model in (localization_models or {}).items():
        use_s, use_q = MASKS[inputs]
        seqs = [model.assemble(corpus[t.source_id], t.t_s, t.query, corpus[t.detour_id], use_s, use_q)
                for t in test]
        preds = model.localize(seqs)
        res = [LocResult.of(t.key, p[2], t.window) for t, p in zip(test, preds)]
        rows += split_rows("ours_loc", inputs, group_by_split(res, splits.get), localization_metrics)
    return rows


def lookup(rows: list[dict], method: str, inputs: str, metric: str, split: str = "overall") -> float:
    for r in rows:
        if (r["method"], r["inputs"], r["split"], r["metric"]) == (method, inputs, split, metric):
            return r["value"]
    raise KeyError((method, inputs, split, metric))


def write_report(rows: list[dict], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cols = ["method", "inputs", "split", "metric", "value"]
    with open(directory / "report.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (directory / "report.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
