"""Command-line entry point: ``detourlab <command> [--config FILE] [--set key=value ...]``.

Each command resolves its config (file, then ``--set`` overrides, then flags),
validates it, writes its outputs under ``--out`` and a ``manifest.json``.
Exit codes: 0 success, 1 invalid config or missing input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .core import ConfigError, DetourTuple, load_videos, read_jsonl, write_jsonl

SCHEMA_VERSION = 1
OK, INVALID, FAILED = 0, 1, 2


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None
    inputs: dict[str, str]
    outputs: dict[str, str]
    version: str = __version__
    started: float = 0.0
    finished: float = 0.0
    config: dict = field(default_factory=dict)

    def write(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "manifest.json").write_text(json.dumps(asdict(self), sort_keys=True, indent=1) + "\n")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(cfg: dict, path: str, value) -> None:
    keys = path.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError("cannot descend into a scalar", path)
    node[keys[-1]] = value


def load_config(path: str | None, overrides: list[str], defaults: dict, allowed: set[str] | None = None) -> dict:
    cfg = json.loads(json.dumps(defaults))
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist", "config")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"not valid JSON: {e}", "config") from e
        version = loaded.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {version}", "schema_version")
        _merge(cfg, loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", "set")
        key, val = item.split("=", 1)
        _set_path(cfg, key.strip(), _parse_value(val))
    if allowed is not None:
        for k in cfg:
            if k not in allowed:
                raise ConfigError("unknown key", k)
    return cfg


def _merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def _need(cfg: dict, key: str, kind: str = "path") -> str:
    val = cfg.get(key)
    if val in (None, ""):
        raise ConfigError(f"required {kind} is missing", key)
    return val


def _existing(cfg: dict, key: str) -> Path:
    p = Path(_need(cfg, key))
    if not p.exists():
        raise ConfigError(f"input {p} does not exist", key)
    return p


def _typed(cls, d: dict, prefix: str):
    """Build dataclass ``cls`` from ``d``, mapping bad keys and values to ConfigError."""
    fields = cls.__dataclass_fields__
    for k in d:
        if k not in fields:
            raise ConfigError("unknown key", f"{prefix}.{k}" if prefix else k)
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(d)
        return cls(**d)
    except ConfigError as e:
        if e.field:
            raise
        raise ConfigError(str(e), prefix or None) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), prefix or None) from e


# -- command implementations --------------------------------------------------

def _backend(cfg: dict, world=None):
    from .llmgen import BackendConfig, make_backend

    bcfg = _typed(BackendConfig, dict(cfg.get("backend") or {}), "backend")
    if bcfg.kind == "offline" and world is None:
        if not bcfg.world_dir:
            bcfg.world_dir = cfg.get("world")
        if not bcfg.world_dir:
            raise ConfigError("offline backend needs a world directory", "backend.world_dir")
    return make_backend(bcfg, world), bcfg


def cmd_gen_world(cfg: dict, out: Path) -> dict:
    from .world import WorldConfig, gen_world, save_world

    wcfg = _typed(WorldConfig, cfg.get("world") or {}, "world")
    world = gen_world(wcfg)
    save_world(world, out / "world")
    print(f"world: {len(world.videos)} videos, {len(world.gt)} ground-truth tuples -> {out / 'world'}")
    return {"world": str(out / "world")}


def _videos(cfg: dict):
    return load_videos(_existing(cfg, "world"))


def _split_videos(cfg: dict, world):
    split = cfg.get("split", "train")
    if split not in ("train", "all"):
        raise ConfigError("must be train or all", "split")
    ids = set(world.train_videos) if split == "train" else {v.id for v in world.videos}
    return [v for v in world.videos if v.id in ids]


def cmd_summarize(cfg: dict, out: Path) -> dict:
    from .pipeline import summarize
    from .world import load_world

    world = load_world(_existing(cfg, "world"))
    videos = _split_videos(cfg, world)
    backend, bcfg = _backend(cfg, world)
    summaries, rejects = summarize(videos, backend, bcfg.max_in_flight)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "summaries.jsonl", (summaries[k].record() for k in sorted(summaries)))
    write_jsonl(out / "rejects.jsonl", rejects)
    print(f"summaries: {len(summaries)} accepted, {len(rejects)} rejected")
    return {"summaries": str(out / "summaries.jsonl"), "rejects": str(out / "rejects.jsonl")}


def cmd_mine_pairs(cfg: dict, out: Path) -> dict:
    from .pairs import embed_summary, mine_pairs
    from .pipeline import load_summaries

    summaries = load_summaries(_existing(cfg, "summaries"))
    embs = [embed_summary(summaries[k]) for k in sorted(summaries)]
    pairs = mine_pairs(embs, float(cfg.get("threshold", 0.75)), cfg.get("per_video_cap"))
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "pairs.jsonl", (p.record() for p in pairs))
    print(f"pairs: {len(pairs)}")
    return {"pairs": str(out / "pairs.jsonl")}


def cmd_gen_detours(cfg: dict, out: Path) -> dict:
    from .pipeline import gen_detours, load_pairs, load_summaries

    summaries = load_summaries(_existing(cfg, "summaries"))
    pairs = load_pairs(_existing(cfg, "pairs"))
    videos = {v.id: v for v in _videos(cfg)}
    backend, bcfg = _backend(cfg)
    tuples, rejects = gen_detours(pairs, summaries, videos, backend, bcfg.max_in_flight)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "detours.jsonl", (t.record() for t in tuples))
    write_jsonl(out / "rejects.jsonl", rejects)
    print(f"detours: {len(tuples)} accepted, {len(rejects)} rejected")
    return {"detours": str(out / "detours.jsonl"), "rejects": str(out / "rejects.jsonl")}


def cmd_curate(cfg: dict, out: Path) -> dict:
    from .pipeline import curate, save_curation
    from .world import load_world

    world = load_world(_existing(cfg, "world"))
    videos = _split_videos(cfg, world)
    backend, bcfg = _backend(cfg, world)
    res = curate(videos, backend, float(cfg.get("threshold", 0.75)), cfg.get("per_video_cap"),
                 bool(cfg.get("parser_timestamps", False)), bcfg.max_in_flight)
    save_curation(res, out)
    st = res.stats
    print(f"curate: summaries {st['summary']['accepted']}/{st['summary']['attempted']}, "
          f"detours {st['detour']['accepted']}/{st['detour']['attempted']}, reasons {st['reasons']}")
    return {"curated": str(out)}


def _inputs_flags(inputs: str) -> tuple[bool, bool]:
    from .evaluate import MASKS

    if inputs not in MASKS:
        raise ConfigError(f"must be one of {sorted(MASKS)}", "inputs")
    return MASKS[inputs]


def cmd_train(cfg: dict, out: Path) -> dict:
    from .experiment import build_vocab
    from .model import DetourModel, ModelConfig
    from .train import TrainConfig, train_localization, train_retrieval
    from .world import load_world

    world = load_world(_existing(cfg, "world"))
    tuples = [DetourTuple.from_record(r) for r in read_jsonl(_existing(cfg, "detours"))]
    use_s, use_q = _inputs_flags(cfg.get("inputs", "both"))
    tcfg = _typed(TrainConfig, dict(cfg.get("train") or {}, use_source=use_s, use_query=use_q), "train")
    mdict = dict(cfg.get("model") or {})
    mdict.setdefault("feature_dim", world.config.feature_dim)
    mdict["task"] = tcfg.task
    mdict.setdefault("seed", tcfg.seed)
    mcfg = _typed(ModelConfig, mdict, "model")
    corpus = {v: world.by_id[v] for v in world.train_videos}
    leaked = [t.key for t in tuples if t.source_id not in corpus or t.detour_id not in corpus]
    if leaked:
        raise ConfigError(f"{len(leaked)} tuples use non-training videos, e.g. {leaked[0]}", "detours")
    model = DetourModel(mcfg, build_vocab(world, tuples))
    fn = train_retrieval if tcfg.task == "retrieval" else train_localization
    res = fn(tuples, model, tcfg, corpus, out)
    print(f"train {tcfg.task}: losses {[round(x, 4) for x in res.losses]}")
    return {"run": str(out), "checkpoint": str(out / "checkpoints" / f"epoch_{tcfg.epochs}")}


def cmd_eval(cfg: dict, out: Path) -> dict:
    from .evaluate import run_benchmark, write_report
    from .experiment import split_of_tuple
    from .model import load_model
    from .world import load_world

    ckpt = _existing(cfg, "checkpoint")
    world = load_world(_existing(cfg, "world"))
    inputs = cfg.get("inputs", "both")
    _inputs_flags(inputs)
    model = load_model(ckpt)
    test = [e.tuple for e in world.test_entries()]
    models = {inputs: model}
    rows = run_benchmark(test, world.by_id, world.train_videos, split_of_tuple(world),
                         models if model.cfg.task == "retrieval" else None,
                         models if model.cfg.task == "localization" else None)
    write_report(rows, out)
    for r in rows:
        if r["split"] == "overall":
            print(f"{r['method']:10s} {r['inputs']:12s} {r['metric']:10s} {r['value']}")
    return {"report": str(out / "report.csv")}


def cmd_gradcheck(cfg: dict, out: Path) -> dict:
    from .autodiff.gradcheck import primitive_checks
    from .model import gradcheck_losses

    seed = int(cfg.get("seed", 0))
    errs = {f"layer/{k}": v for k, v in primitive_checks(seed).items()}
    errs.update({f"loss/{k}": v for k, v in gradcheck_losses(seed).items()})
    worst = max(errs.values())
    tol = float(cfg.get("tolerance", 1e-4))
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_text(json.dumps({k: float(v) for k, v in errs.items()}, sort_keys=True,
                                                   indent=1) + "\n")
    print(f"max relative error {worst:.3e} (tolerance {tol:g})")
    if worst > tol:
        raise GradcheckFailed(f"max relative error {worst:.3e} exceeds {tol:g}")
    return {"gradcheck": str(out / "gradcheck.json")}


def cmd_experiment(cfg: dict, out: Path) -> dict:
    from .experiment import ExperimentConfig, run_experiment

    ecfg = _typed(ExperimentConfig, cfg, "")
    run_experiment(ecfg, out, log=print)
    return {"report": str(out / "report.csv")}


def cmd_report(cfg: dict, out: Path) -> dict:
    src = _existing(cfg, "run")
    path = src / "report.json" if src.is_dir() else src
    if not path.exists():
        raise ConfigError(f"no report.json under {src}", "run")
    rows = json.loads(path.read_text())
    split = cfg.get("split", "overall")
    lines = ["| method | inputs | metric | value |", "|---|---|---|---|"]
    for r in rows:
        if r["split"] == split:
            lines.append(f"| {r['method']} | {r['inputs']} | {r['metric']} | {r['value']:.4f} |")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return {"report": str(out / "report.md")}


class GradcheckFailed(RuntimeError):
    pass


COMMANDS = {
    "gen-world": (cmd_gen_world, "generate the synthetic world"),
    "summarize": (cmd_summarize, "summarize narrations into timestamped steps"),
    "mine-pairs": (cmd_mine_pairs, "mine similar video pairs from summaries"),
    "gen-detours": (cmd_gen_detours, "generate detour tuples for mined pairs"),
    "curate": (cmd_curate, "summarize, mine, generate and validate in one pass"),
    "train": (cmd_train, "train a retrieval or localization model"),
    "eval": (cmd_eval, "benchmark a checkpoint on the world test split"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of layers and losses"),
    "experiment": (cmd_experiment, "end-to-end synthetic experiment"),
    "report": (cmd_report, "render a report.json as a markdown table"),
}

# flag -> dotted config key
FLAGS = {
    "world": "world", "summaries": "summaries", "pairs": "pairs", "detours": "detours",
    "checkpoint": "checkpoint", "run": "run", "task": "train.task", "inputs": "inputs",
    "seed": "seed", "epochs": "train.epochs", "lr": "train.lr", "batch_size": "train.batch_size",
    "p_hard": "train.p_hard", "threshold": "threshold",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="detourlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted path); repeatable")
        p.add_argument("--out", default="runs/" + name, help="output directory")
        for flag in ("world", "summaries", "pairs", "detours", "checkpoint", "run", "inputs", "task"):
            p.add_argument(f"--{flag}")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--p-hard", dest="p_hard", type=float)
        p.add_argument("--threshold", type=float)
    return ap


def _resolve(args) -> dict:
    cfg = load_config(args.config, args.set, {})
    for flag, key in FLAGS.items():
        val = getattr(args, flag, None)
        if val is None:
            continue
        if args.command in ("gen-world", "experiment") and flag == "seed":
            # an experiment seed re-draws the world as well as the training run
            _set_path(cfg, "world.seed", val)
            if args.command == "experiment":
                _set_path(cfg, "seed", val)
        elif args.command == "experiment" and key.startswith("train."):
            _set_path(cfg, key.split(".", 1)[1], val)
        else:
            _set_path(cfg, key, val)
    if args.command == "train" and "seed" in cfg:
        cfg.setdefault("train", {})["seed"] = cfg.pop("seed")
    return cfg


def _seed_of(cfg: dict):
    for scope in (cfg, cfg.get("world"), cfg.get("train")):
        if isinstance(scope, dict) and "seed" in scope:
            return scope["seed"]
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn, _ = COMMANDS[args.command]
    out = Path(args.out)
    started = time.time()
    try:
        cfg = _resolve(args)
        outputs = fn(cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return INVALID
    except Exception as e:  # noqa: BLE001 - any runtime failure maps to exit 2
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return FAILED
    seed = _seed_of(cfg)
    inputs = {k: str(cfg[k]) for k in ("world", "summaries", "pairs", "detours", "checkpoint", "run") if k in cfg}
    RunManifest(args.command, config_hash(cfg), seed, inputs, outputs, started=started,
                finished=time.time(), config=cfg).write(out)
    return OK


if __name__ == "__main__":
    sys.exit(main())
