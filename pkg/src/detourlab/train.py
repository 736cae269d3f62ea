"""Hard-negative sampling and the retrieval/localization training loops."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamWState, Tape, adamw_step, load_tensors, save_tensors
from .core import DetourTuple, NarratedVideo
from .model import Batch, DetourModel, load_model, save_model, target_indices


class NoNegativeAvailable(LookupError):
    pass


class TargetOutsideCandidate(ValueError):
    pass


@dataclass(frozen=True)
class RetrievalSample:
    tuple: DetourTuple
    candidate_id: str
    label: int
    negative_kind: str = "none"

    def __post_init__(self):
        if (self.label == 1) != (self.candidate_id == self.tuple.detour_id):
            raise ValueError("label must be 1 exactly when the candidate is the detour video")
        if self.negative_kind not in ("same_task", "cross_task", "none"):
            raise ValueError(f"bad negative kind {self.negative_kind!r}")


@dataclass
class TrainConfig:
    lr: float = 3e-5
    batch_size: int = 16
    epochs: int = 5
    p_hard: float = 0.5
    seed: int = 0
    task: str = "retrieval"
    weight_decay: float = 0.01
    use_source: bool = True
    use_query: bool = True
    feature_noise: float = 0.0

    def __post_init__(self):
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be >= 0")
        if not 0.0 <= self.p_hard <= 1.0:
            raise ValueError("p_hard must lie in [0, 1]")
        if self.task not in ("retrieval", "localization"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainResult:
    model: DetourModel
    losses: list[float] = field(default_factory=list)
    optimizer: AdamWState | None = None


class NegativePool:
    """Same-task / cross-task candidate lists for negative sampling."""

    def __init__(self, corpus):
        videos = list(corpus.values()) if isinstance(corpus, dict) else list(corpus)
        self.ids = sorted(v.id for v in videos)
        self.task = {v.id: v.task_id for v in videos}
        self.by_task: dict[str, list[str]] = {}
        for vid in self.ids:
            self.by_task.setdefault(self.task[vid], []).append(vid)

    def task_of(self, vid: str) -> str | None:
        return self.task.get(vid)


def sample_negative(t: DetourTuple, corpus, p_hard: float, rng: np.random.Generator,
                    pool: NegativePool | None = None) -> tuple[str, str]:
    """(candidate id, kind); same-task with probability ``p_hard``, else cross-task."""
    pool = pool or NegativePool(corpus)
    task = pool.task_of(t.detour_id)
    hard = rng.random() < p_hard
    if hard:
        options = [v for v in pool.by_task.get(task, []) if v not in (t.detour_id, t.source_id)]
        kind = "same_task"
    else:
        options = [v for v in pool.ids if pool.task[v] != task and v != t.source_id]
        kind = "cross_task"
    if not options:
        raise NoNegativeAvailable(f"no {kind} negative for {t.key}")
    return options[int(rng.integers(len(options)))], kind


def _augment(batch: Batch, sigma: float, rng) -> None:
    # fresh per-step noise on visual rows; keeps the small corpus from being memorized
    if sigma > 0:
        noise = rng.standard_normal(batch.features.shape) * sigma
        batch.features += noise.astype(batch.features.dtype) * batch.is_visual[..., None]


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # one stream per epoch so a resumed run replays the same draws
    return np.random.default_rng([seed, epoch])


def _optimizer_arrays(state: AdamWState) -> dict[str, np.ndarray]:
    out = {f"m/{k}": v for k, v in state.m.items()}
    out.update({f"v/{k}": v for k, v in state.v.items()})
    return out


def save_checkpoint(directory: Path, model: DetourModel, state: AdamWState, epoch: int, losses) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_model(model, directory)
    save_tensors(directory / "optimizer.dtck", _optimizer_arrays(state))
    meta = {k: v for k, v in asdict(state).items() if k not in ("m", "v")}
    meta.update(epoch=epoch, losses=losses)
    (directory / "trainer.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_checkpoint(directory: str | Path) -> tuple[DetourModel, AdamWState, int, list[float]]:
    directory = Path(directory)
    model = load_model(directory)
    meta = json.loads((directory / "trainer.json").read_text())
    arrays = load_tensors(directory / "optimizer.dtck")
    state = AdamWState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
                       weight_decay=meta["weight_decay"], step=meta["step"])
    for k, arr in arrays.items():
        kind, name = k.split("/", 1)
        (state.m if kind == "m" else state.v)[name] = arr.copy()
    return model, state, meta["epoch"], list(meta["losses"])


def _step(model: DetourModel, loss_fn, state: AdamWState) -> float:
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    params = model.parameters()
    adamw_step(params, {k: p.grad for k, p in params.items()}, state)
    model.zero_grad()
    return float(loss.item())


def _write_metrics(run_dir: Path | None, losses: list[float], split: str = "train") -> None:
    if run_dir is None:
        return
    with open(run_dir / "metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "split", "loss"])
        for i, loss in enumerate(losses, 1):
            w.writerow([i, split, f"{loss:.8f}"])


def _run(model, cfg: TrainConfig, make_batches, run_dir, state, start_epoch, losses):
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(asdict(cfg), sort_keys=True, indent=1) + "\n")
    state = state or AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses = list(losses or [])
    for epoch in range(start_epoch, cfg.epochs):
        rng = _epoch_rng(cfg.seed, epoch)
        total, count = 0.0, 0
        for loss_fn, n in make_batches(rng):
            total += _step(model, loss_fn, state) * n
            count += n
        losses.append(total / max(count, 1))
        if run_dir is not None:
            save_checkpoint(run_dir / "checkpoints" / f"epoch_{epoch + 1}", model, state, epoch + 1, losses)
            _write_metrics(run_dir, losses)
    return TrainResult(model, losses, state)


def retrieval_samples(data: list[DetourTuple], pool: NegativePool, p_hard: float, rng) -> list[RetrievalSample]:
    out = []
    for t in data:
        out.append(RetrievalSample(t, t.detour_id, 1))
        cand, kind = sample_negative(t, None, p_hard, rng, pool)
        out.append(RetrievalSample(t, cand, 0, kind))
    return out


def train_retrieval(data: list[DetourTuple], model: DetourModel, cfg: TrainConfig,
                    corpus: dict[str, NarratedVideo], run_dir=None, state: AdamWState | None = None,
                    start_epoch: int = 0, losses=None) -> TrainResult:
    """One positive and one freshly drawn negative per tuple per epoch; mean BCE."""
    pool = NegativePool(corpus)
    data = sorted(data, key=lambda t: t.key)

    def batches(rng):
        samples = retrieval_samples(data, pool, cfg.p_hard, rng)
        # shuffle tuples, not samples: a positive and its negative share a batch,
        # so each step contrasts candidates under the same source and query
        order = [2 * j + k for j in rng.permutation(len(data)) for k in (0, 1)]
        for i in range(0, len(order), cfg.batch_size):
            chunk = [samples[j] for j in order[i:i + cfg.batch_size]]
            seqs = []
            for s in chunk:
                try:
                    seqs.append(model.assemble(corpus.get(s.tuple.source_id), s.tuple.t_s, s.tuple.query,
                                               corpus[s.candidate_id], cfg.use_source, cfg.use_query))
                except ValueError as e:
                    raise type(e)(f"sample {s.tuple.key} -> {s.candidate_id}: {e}") from e
            batch, labels = Batch.of(seqs), [s.label for s in chunk]
            _augment(batch, cfg.feature_noise, rng)
            yield (lambda b=batch, y=labels: model.retrieval_loss(b, y)), len(chunk)

    return _run(model, cfg, batches, run_dir, state, start_epoch, losses)


def localization_targets(t: DetourTuple, candidate: NarratedVideo, times) -> tuple[int, int]:
    if t.window.end > candidate.duration:
        raise TargetOutsideCandidate(f"{t.key}: window {t.window.render()} beyond {candidate.duration} s")
    return target_indices(t.window, times)


def train_localization(data: list[DetourTuple], model: DetourModel, cfg: TrainConfig,
                       corpus: dict[str, NarratedVideo], run_dir=None, state: AdamWState | None = None,
                       start_epoch: int = 0, losses=None) -> TrainResult:
    """Candidate is always the detour video; loss is the mean of start and end cross-entropy."""
    data = sorted(data, key=lambda t: t.key)
    for t in data:
        if t.window.end > corpus[t.detour_id].duration:
            raise TargetOutsideCandidate(f"{t.key}: window {t.window.render()} beyond "
                                         f"{corpus[t.detour_id].duration} s")

    def batches(rng):
        order = rng.permutation(len(data))
        for i in range(0, len(order), cfg.batch_size):
            chunk = [data[j] for j in order[i:i + cfg.batch_size]]
            seqs, starts, ends = [], [], []
            for t in chunk:
                cand = corpus[t.detour_id]
                seq = model.assemble(corpus.get(t.source_id), t.t_s, t.query, cand, cfg.use_source, cfg.use_query)
                s, e = localization_targets(t, cand, seq.candidate_times)
                seqs.append(seq)
                starts.append(s)
                ends.append(e)
            batch = Batch.of(seqs)
            _augment(batch, cfg.feature_noise, rng)
            yield (lambda b=batch, s=starts, e=ends: model.localization_loss(b, s, e)), len(chunk)

    return _run(model, cfg, batches, run_dir, state, start_epoch, losses)


def resume(run_dir: str | Path, data, cfg: TrainConfig, corpus) -> TrainResult:
    """Continue from the newest checkpoint in ``run_dir`` up to ``cfg.epochs``."""
    ckpts = sorted((Path(run_dir) / "checkpoints").glob("epoch_*"), key=lambda p: int(p.name.split("_")[1]))
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints under {run_dir}")
    model, state, epoch, losses = load_checkpoint(ckpts[-1])
    fn = train_retrieval if cfg.task == "retrieval" else train_localization
    return fn(data, model, cfg, corpus, run_dir, state, epoch, losses)
