"""The synthetic end-to-end experiment: world -> curation -> training -> benchmark."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .evaluate import BaselineVariant, lookup, run_benchmark, write_report
from .llmgen import OfflineBackend
from .model import DetourModel, ModelConfig, Vocab
from .pairs import hashed_tf
from .pipeline import curate, save_curation
from .train import TrainConfig, train_localization, train_retrieval
from .world import World, WorldConfig, gen_world, save_world

DEFAULT_BASELINES = [BaselineVariant("mean_pool", i) for i in ("source_only", "query_only", "both")] + [
    BaselineVariant("weighted_pool", i) for i in ("query_only", "both")] + [
    BaselineVariant("text_only", i) for i in ("query_only", "both")]


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    d_model: int = 64
    n_layers: int = 2
    epochs: int = 5
    lr: float = 1e-3
    # retrieval batches hold whole (positive, negative) pairs; localization
    # learns the window rule faster with more, smaller steps
    batch_size: int = 8
    loc_batch_size: int = 4
    loc_feature_noise: float = 0.2
    p_hard: float = 0.5
    seed: int = 7
    inputs: tuple[str, ...] = ("source_only", "query_only", "both")
    tasks: tuple[str, ...] = ("retrieval", "localization")
    baselines: bool = True
    parser_timestamps: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        world = WorldConfig.from_dict(d.pop("world", {}))
        known = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()
                 if k in cls.__dataclass_fields__}
        return cls(world=world, **known)


@dataclass
class ExperimentResult:
    world: World
    rows: list[dict]
    train_tuples: list
    losses: dict[str, list[float]]
    curation_stats: dict
    seconds: float
    # trained models keyed by task, then input combination
    models: dict = field(default_factory=dict)

    def metric(self, method: str, inputs: str, metric: str, split: str = "overall") -> float:
        return lookup(self.rows, method, inputs, metric, split)


def build_vocab(world: World, train_tuples) -> Vocab:
    train = set(world.train_videos)
    texts = [s for v in world.videos if v.id in train for _, s in v.narrations]
    return Vocab.build(texts + [t.query for t in train_tuples])


def split_of_tuple(world: World):
    novel = set(world.novel_tasks)
    return lambda t: "novel" if world.task_of(t.source_id) in novel else "common"


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, log=None) -> ExperimentResult:
    t0 = time.time()
    out = Path(out_dir) if out_dir is not None else None
    world = gen_world(cfg.world)
    corpus = world.by_id
    train_videos = [corpus[v] for v in world.train_videos]
    cur = curate(train_videos, OfflineBackend(world), use_parser_timestamps=cfg.parser_timestamps)
    if out is not None:
        save_world(world, out / "world")
        save_curation(cur, out / "curated")
    train_tuples = cur.detours
    vocab = build_vocab(world, train_tuples)
    train_corpus = {v.id: v for v in train_videos}
    test = [e.tuple for e in world.test_entries()]
    retrieval, localization, losses = {}, {}, {}
    for task in cfg.tasks:
        for inputs in cfg.inputs:
            use_s, use_q = inputs != "query_only", inputs != "source_only"
            mcfg = ModelConfig(feature_dim=cfg.world.feature_dim, d_model=cfg.d_model, n_layers=cfg.n_layers,
                               head_dim=cfg.d_model, task=task, seed=cfg.seed)
            model = DetourModel(mcfg, vocab)
            loc = task == "localization"
            tcfg = TrainConfig(lr=cfg.lr, batch_size=cfg.loc_batch_size if loc else cfg.batch_size,
                               epochs=cfg.epochs, p_hard=cfg.p_hard, seed=cfg.seed, task=task,
                               use_source=use_s, use_query=use_q,
                               feature_noise=cfg.loc_feature_noise if loc else 0.0)
            run_dir = out / "runs" / f"{task}_{inputs}" if out is not None else None
            fn = train_retrieval if task == "retrieval" else train_localization
            res = fn(train_tuples, model, tcfg, train_corpus, run_dir)
            losses[f"{task}/{inputs}"] = res.losses
            (retrieval if task == "retrieval" else localization)[inputs] = model
            if log:
                log(f"trained {task}/{inputs}: losses {[round(x, 4) for x in res.losses]} "
                    f"({time.time() - t0:.0f}s)")
    summaries = cur.summaries
    if cfg.baselines:
        # text baselines need summaries of every candidate, not only training videos
        from .pipeline import summarize

        summaries, _ = summarize(world.videos, OfflineBackend(world))
    rows = run_benchmark(test, corpus, world.train_videos, split_of_tuple(world), retrieval, localization,
                         DEFAULT_BASELINES if cfg.baselines else [], world.aligned_embed, summaries, hashed_tf)
    if out is not None:
        write_report(rows, out)
        (out / "experiment.json").write_text(json.dumps(
            {"config": asdict(cfg), "losses": losses, "curation": cur.stats}, sort_keys=True, indent=1) + "\n")
    if log:
        log(f"benchmark done ({time.time() - t0:.0f}s)")
    return ExperimentResult(world, rows, train_tuples, losses, cur.stats, time.time() - t0,
                            {"retrieval": retrieval, "localization": localization})
