"""Deterministic synthetic recipe world.

Tasks are sequences of canonical steps; each (step, variant) pair owns a
fixed unit latent in R^D built from a step direction plus a variant-value
direction, so the same ingredient or tool looks alike across recipes.
Videos of a task are a random walk over variant assignments: consecutive
videos differ at exactly one step, which is where ground-truth detours live.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.serialize import load_tensors, save_tensors
from .core import (
    ConfigError,
    DetourTuple,
    NarratedVideo,
    TimeWindow,
    dumps,
    load_videos,
    read_jsonl,
    save_videos,
    write_jsonl,
)

AXES = ("ingredient", "tool", "technique", "presence")

INGREDIENTS = (
    "onions garlic butter cheese honey yogurt cream ginger basil cilantro lemon vinegar paprika "
    "cumin mushrooms spinach tomatoes peppers almonds raisins eggs milk coconut sesame olives "
    "mint carrots chickpeas tofu bacon pesto mustard walnuts oregano"
).split()
TOOLS = (
    "grill pan oven blender whisk skillet wok mixer spatula griddle steamer microwave grater "
    "mortar processor airfryer"
).split()
TECHNIQUES = "fry bake steam boil roast saute poach braise toast simmer grill smoke blanch sear".split()
EXTRAS = "garnish sauce glaze toppings seasoning dressing sprinkles nuts croutons syrup gravy icing".split()

STEP_TEMPLATES = {
    "ingredient": ("add the {v}", "stir in the {v}", "season with {v}", "fold in the {v}",
                   "mix in the {v}", "top it with {v}", "sprinkle the {v}"),
    "tool": ("cook it on the {v}", "blend everything in the {v}", "heat it using the {v}",
             "transfer it to the {v}", "work it with the {v}"),
    "technique": ("{v} the vegetables", "{v} the chicken", "{v} the dough", "{v} the fish",
                  "{v} the potatoes", "{v} the rice", "{v} the beef"),
    "presence": ("finish with the {v}", "pour over the {v}", "spread the {v}"),
}

# (template, role): "target" names the detour's value, "negate" names the source's
QUERY_TEMPLATES = {
    "ingredient": (("can I use {x} instead?", "target"), ("can I add {x} here?", "target"),
                   ("what if I use {x} for this?", "target"),
                   ("is there a way to do this with {x}?", "target")),
    "tool": (("how to do this without a {x}?", "negate"), ("can I do this with a {x}?", "target"),
             ("can I use a {x} for this step?", "target"), ("how would this work in a {x}?", "target")),
    "technique": (("can I {x} it instead?", "target"), ("is there a way to {x} this?", "target"),
                  ("how do I {x} this instead?", "target")),
    "presence_drop": (("can I skip the {x}?", "negate"), ("do I need the {x}?", "negate"),
                      ("can I leave out the {x}?", "negate")),
    "presence_add": (("can I add {x} here?", "target"), ("what if I add some {x}?", "target"),
                     ("how do I add {x} at this point?", "target")),
}

ADJECTIVES = "spicy creamy classic quick crispy smoky vegan rustic summer garlicky lemony hearty".split()
DISHES = (
    "noodles quesadillas pancakes curry risotto tacos omelette salad soup dumplings burgers "
    "lasagna stirfry flatbread casserole skewers chowder frittata paella crepes"
).split()

NARRATION_LEADS = ("now we {d}", "next, {d}", "okay so {d}", "then {d}", "here we {d}")


class UnknownEntity(KeyError):
    pass


@dataclass
class WorldConfig:
    n_tasks: int = 40
    videos_per_task: int = 6
    feature_dim: int = 32
    noise: float = 0.3
    seed: int = 7
    novel_task_fraction: float = 0.25
    test_videos_per_task: int = 2
    steps_per_task: tuple[int, int] = (4, 6)
    step_seconds: tuple[int, int] = (5, 12)
    # per-video deviation from a task step's base duration; None = independent draws
    duration_jitter: int | None = 1
    family_size: int = 4
    family_steps: int = 8
    shared_opening: int = 1
    family_weight: float = 1.0
    step_weight: float = 0.7
    value_weight: float = 1.0
    drop_narrations: float = 0.0
    shuffle_narrations: bool = False

    def validate(self) -> None:
        if self.n_tasks < 2:
            raise ConfigError("n_tasks must be >= 2")
        if self.videos_per_task < 2:
            raise ConfigError("videos_per_task must be >= 2")
        if not 0 <= self.novel_task_fraction < 1:
            raise ConfigError("novel_task_fraction must lie in [0, 1)")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        if not 0 <= self.test_videos_per_task < self.videos_per_task:
            raise ConfigError("test_videos_per_task must leave training videos")
        lo, hi = self.steps_per_task
        if lo < 4 or hi < lo:
            raise ConfigError("steps_per_task must satisfy 4 <= lo <= hi")
        if self.step_seconds[0] < 5 or self.step_seconds[1] < self.step_seconds[0]:
            raise ConfigError("step durations must be >= 5 s")
        if self.shared_opening >= lo - 1:
            raise ConfigError("shared_opening must leave room for variable steps")
        if self.family_size < 1:
            raise ConfigError("family_size must be >= 1")
        if self.duration_jitter is not None and self.duration_jitter < 0:
            raise ConfigError("duration_jitter must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("steps_per_task", "step_seconds"):
            if k in known:
                known[k] = tuple(known[k])
        cfg = cls(**known)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class CanonicalStep:
    id: str
    axis: str
    template: str
    values: tuple[str, ...]
    family: int = 0

    def describe(self, value: str) -> str:
        if self.axis == "presence" and value.startswith("no "):
            return f"leave out the {value[3:]}"
        return self.template.format(v=value)


@dataclass(frozen=True)
class StepSpec:
    canonical_step_id: str
    variant: str  # axis
    variant_value: str
    duration: int


@dataclass
class TaskSpec:
    task_id: str
    recipe: str
    steps: list[str]
    allowed: list[list[str]]

    @property
    def variable_steps(self) -> list[int]:
        return [i for i, a in enumerate(self.allowed) if len(a) > 1]


@dataclass
class VideoPlan:
    """Oracle annotation of one generated video."""

    video_id: str
    task_id: str
    steps: list[StepSpec]
    spans: list[TimeWindow]

    @property
    def assignment(self) -> tuple[tuple[str, str], ...]:
        return tuple((s.canonical_step_id, s.variant_value) for s in self.steps)


@dataclass(frozen=True)
class GTEntry:
    tuple: DetourTuple
    axis: str
    step_id: str
    step_index: int
    source_value: str
    target_value: str


@dataclass
class GroundTruth:
    entries: list[GTEntry] = field(default_factory=list)

    @property
    def tuples(self) -> list[DetourTuple]:
        return [e.tuple for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class Catalog:
    steps: dict[str, CanonicalStep]
    family_vecs: list[np.ndarray]
    step_vecs: dict[str, np.ndarray]
    value_vecs: dict[str, np.ndarray]
    weights: tuple[float, float, float] = (1.0, 0.7, 1.0)

    def latent(self, step_id: str, value: str) -> np.ndarray:
        wf, ws, wv = self.weights
        fam = self.steps[step_id].family
        v = wf * self.family_vecs[fam] + ws * self.step_vecs[step_id] + wv * self.value_vecs[value]
        return v / np.linalg.norm(v)

    def pairs_with_value(self, value: str) -> list[tuple[str, str]]:
        return [(s.id, value) for s in self.steps.values() if value in s.values]

    def sibling_pairs(self, value: str) -> list[tuple[str, str]]:
        return [(s.id, w) for s in self.steps.values() if value in s.values for w in s.values if w != value]

    @property
    def all_values(self) -> list[str]:
        return sorted(self.value_vecs)


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _stable_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def n_families(cfg: WorldConfig) -> int:
    return -(-cfg.n_tasks // cfg.family_size)


def _build_catalog(cfg: WorldConfig) -> Catalog:
    """Each recipe family owns a pool of canonical steps; values are global per axis."""
    rng = np.random.default_rng(_stable_seed("catalog", cfg.seed))
    vocab = {"ingredient": INGREDIENTS, "tool": TOOLS, "technique": TECHNIQUES, "presence": EXTRAS}
    steps: dict[str, CanonicalStep] = {}
    i = 0
    for fam in range(n_families(cfg)):
        offset = int(rng.integers(len(AXES)))
        for j in range(cfg.family_steps):
            axis = AXES[(offset + j) % len(AXES)]
            template = STEP_TEMPLATES[axis][int(rng.integers(len(STEP_TEMPLATES[axis])))]
            if axis == "presence":
                x = vocab[axis][int(rng.integers(len(vocab[axis])))]
                values = (x, f"no {x}")
            else:
                k = int(rng.integers(2, 4))
                values = tuple(str(v) for v in rng.choice(vocab[axis], size=k, replace=False))
            steps[f"s{i:03d}"] = CanonicalStep(f"s{i:03d}", axis, template, values, fam)
            i += 1
    d = cfg.feature_dim
    family_vecs = [_unit(rng, d) for _ in range(n_families(cfg))]
    step_vecs = {sid: _unit(rng, d) for sid in steps}
    all_values = sorted({v for s in steps.values() for v in s.values})
    value_vecs = {v: _unit(rng, d) for v in all_values}
    weights = (cfg.family_weight, cfg.step_weight, cfg.value_weight)
    return Catalog(steps, family_vecs, step_vecs, value_vecs, weights)


def _build_tasks(cfg: WorldConfig, catalog: Catalog) -> list[TaskSpec]:
    rng = np.random.default_rng(_stable_seed("tasks", cfg.seed))
    dishes = [str(x) for x in rng.choice(DISHES, size=n_families(cfg), replace=n_families(cfg) > len(DISHES))]
    tasks = []
    for fam in range(n_families(cfg)):
        pool = [sid for sid, st in catalog.steps.items() if st.family == fam]
        opening = pool[: cfg.shared_opening]
        opening_vals = [[catalog.steps[s].values[int(rng.integers(len(catalog.steps[s].values)))]]
                        for s in opening]
        rest_pool = pool[cfg.shared_opening:]
        adjectives = [str(a) for a in rng.permutation(ADJECTIVES)]
        for member in range(cfg.family_size):
            ti = fam * cfg.family_size + member
            if ti >= cfg.n_tasks:
                break
            n = int(rng.integers(cfg.steps_per_task[0], cfg.steps_per_task[1] + 1))
            n_rest = min(n - len(opening), len(rest_pool))
            picks = sorted(int(k) for k in rng.choice(len(rest_pool), size=n_rest, replace=False))
            rest = [rest_pool[k] for k in picks]
            allowed = [list(v) for v in opening_vals]
            # 2-3 variable steps among the task-specific ones; enough states for a walk
            n_var = min(len(rest), int(rng.integers(2, 4)))
            var_idx = set(int(k) for k in rng.choice(len(rest), size=n_var, replace=False))
            for j, sid in enumerate(rest):
                vals = list(catalog.steps[sid].values)
                allowed.append(vals if j in var_idx else [vals[int(rng.integers(len(vals)))]])
            j = 0
            while int(np.prod([len(a) for a in allowed])) < cfg.videos_per_task + 1 and j < len(rest):
                allowed[len(opening) + j] = list(catalog.steps[rest[j]].values)
                j += 1
            if int(np.prod([len(a) for a in allowed])) < cfg.videos_per_task + 1:
                raise ConfigError("videos_per_task too large for the variant catalog")
            recipe = f"{adjectives[member % len(adjectives)]} {dishes[fam]}"
            tasks.append(TaskSpec(f"t{ti:03d}", recipe, opening + rest, allowed))
    return tasks


def _walk(task: TaskSpec, n: int, rng: np.random.Generator) -> list[tuple[str, ...]]:
    """Random walk over assignments; consecutive states differ at one step, no revisits."""
    var = task.variable_steps
    for _ in range(200):
        state = [a[int(rng.integers(len(a)))] for a in task.allowed]
        seen = {tuple(state)}
        path = [tuple(state)]
        while len(path) < n:
            moves = [(i, v) for i in var for v in task.allowed[i] if v != state[i]]
            moves = [(i, v) for i, v in moves if tuple(state[:i] + [v] + state[i + 1:]) not in seen]
            if not moves:
                break
            i, v = moves[int(rng.integers(len(moves)))]
            state = state[:i] + [v] + state[i + 1:]
            seen.add(tuple(state))
            path.append(tuple(state))
        if len(path) == n:
            return path
    raise ConfigError(f"{task.task_id}: could not walk {n} distinct variant assignments")


def query_for(seed: int, source_id: str, detour_id: str, step: CanonicalStep,
              source_value: str, target_value: str) -> str:
    """Deterministic detour query for a source->detour change at one step."""
    rng = np.random.default_rng(_stable_seed("query", seed, source_id, detour_id))
    if step.axis == "presence":
        if target_value.startswith("no "):
            options, slot = QUERY_TEMPLATES["presence_drop"], source_value
        else:
            options, slot = QUERY_TEMPLATES["presence_add"], target_value
    else:
        options = QUERY_TEMPLATES[step.axis]
        slot = None
    template, role = options[int(rng.integers(len(options)))]
    if slot is None:
        slot = source_value if role == "negate" else target_value
    return template.format(x=slot)


@dataclass
class World:
    config: WorldConfig
    catalog: Catalog
    tasks: list[TaskSpec]
    videos: list[NarratedVideo]
    plans: dict[str, VideoPlan]
    gt: GroundTruth
    common_tasks: list[str] = field(default_factory=list)
    novel_tasks: list[str] = field(default_factory=list)
    train_videos: list[str] = field(default_factory=list)
    test_videos: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.videos, self.tasks, self.gt))

    @property
    def by_id(self) -> dict[str, NarratedVideo]:
        return {v.id: v for v in self.videos}

    def task_of(self, video_id: str) -> str:
        return self.plans[video_id].task_id

    def split_of_task(self, task_id: str) -> str:
        return "novel" if task_id in set(self.novel_tasks) else "common"

    def test_entries(self) -> list[GTEntry]:
        test = set(self.test_videos)
        return [e for e in self.gt if e.tuple.source_id in test and e.tuple.detour_id in test]

    def train_entries(self) -> list[GTEntry]:
        train = set(self.train_videos)
        return [e for e in self.gt if e.tuple.source_id in train and e.tuple.detour_id in train]

    def summary_steps(self, video_id: str) -> list[tuple[TimeWindow, str]]:
        plan = self.plans[video_id]
        return [(span, self.catalog.steps[s.canonical_step_id].describe(s.variant_value))
                for s, span in zip(plan.steps, plan.spans)]

    def recipe_of(self, video_id: str) -> str:
        tid = self.plans[video_id].task_id
        return next(t.recipe for t in self.tasks if t.task_id == tid)

    # -- aligned text/video space ---------------------------------------
    def aligned_embed(self, x, window: TimeWindow | None = None) -> np.ndarray:
        """Oracle shared embedding: videos/windows by mean feature, queries by latent."""
        if isinstance(x, NarratedVideo):
            rows = x.features if window is None else x.features[window.start:window.end]
            v = rows.mean(axis=0).astype(np.float64)
        elif isinstance(x, str):
            v = np.mean([self.catalog.latent(s, val) for s, val in self.resolve_query(x)], axis=0)
        else:
            raise TypeError(f"cannot embed {type(x).__name__}")
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    def resolve_query(self, query: str) -> list[tuple[str, str]]:
        """(step, value) pairs a query refers to; UnknownEntity if none."""
        q = query.strip().lower()
        for group in QUERY_TEMPLATES.values():
            for template, role in group:
                pat = "^" + re.escape(template.lower()).replace(re.escape("{x}"), "(.+?)") + "$"
                m = re.match(pat, q)
                if m and m.group(1) in self.catalog.value_vecs:
                    val = m.group(1)
                    pairs = (self.catalog.sibling_pairs(val) if role == "negate"
                             else self.catalog.pairs_with_value(val))
                    if pairs:
                        return pairs
        words = re.findall(r"[a-z]+", q)
        mentioned = [v for v in self.catalog.all_values if v in words]
        pairs = [p for v in mentioned for p in self.catalog.pairs_with_value(v)]
        if not pairs:
            raise UnknownEntity(f"query mentions nothing in the catalog: {query!r}")
        return pairs


def gen_world(cfg: WorldConfig) -> World:
    cfg.validate()
    catalog = _build_catalog(cfg)
    tasks = _build_tasks(cfg, catalog)
    videos: list[NarratedVideo] = []
    plans: dict[str, VideoPlan] = {}
    for task in tasks:
        # per-task stream: generation order across tasks cannot change output
        rng = np.random.default_rng(_stable_seed("task", cfg.seed, task.task_id))
        base = rng.integers(cfg.step_seconds[0], cfg.step_seconds[1] + 1, size=len(task.steps))
        for j, state in enumerate(_walk(task, cfg.videos_per_task, rng)):
            vid = f"{task.task_id}v{j}"
            specs, spans, t = [], [], 0
            for i, (sid, value) in enumerate(zip(task.steps, state)):
                if cfg.duration_jitter is None:
                    dur = int(rng.integers(cfg.step_seconds[0], cfg.step_seconds[1] + 1))
                else:
                    jit = int(rng.integers(-cfg.duration_jitter, cfg.duration_jitter + 1))
                    dur = max(cfg.step_seconds[0], int(base[i]) + jit)
                specs.append(StepSpec(sid, catalog.steps[sid].axis, value, dur))
                spans.append(TimeWindow(t, t + dur))
                t += dur
            feats = np.empty((t, cfg.feature_dim), dtype=np.float64)
            for spec, span in zip(specs, spans):
                feats[span.start:span.end] = catalog.latent(spec.canonical_step_id, spec.variant_value)
            feats += rng.standard_normal(feats.shape) * cfg.noise
            narr = _narrate(catalog, specs, spans, rng, cfg)
            videos.append(NarratedVideo(vid, task.task_id, t, narr, feats.astype(np.float32)))
            plans[vid] = VideoPlan(vid, task.task_id, specs, spans)
    gt = _ground_truth(cfg, catalog, tasks, plans)
    common, novel = split_tasks(tasks, cfg.novel_task_fraction, cfg.seed)
    novel_ids = {t.task_id for t in novel}
    train, test = [], []
    for task in tasks:
        ids = [f"{task.task_id}v{j}" for j in range(cfg.videos_per_task)]
        if task.task_id in novel_ids:
            test += ids
        else:
            cut = cfg.videos_per_task - cfg.test_videos_per_task
            train += ids[:cut]
            test += ids[cut:]
    return World(cfg, catalog, tasks, videos, plans, gt, [t.task_id for t in common],
                 [t.task_id for t in novel], train, test)


def _narrate(catalog, specs, spans, rng, cfg) -> list[tuple[int, str]]:
    lines = []
    for spec, span in zip(specs, spans):
        lead = NARRATION_LEADS[int(rng.integers(len(NARRATION_LEADS)))]
        lines.append((span.start, lead.format(d=catalog.steps[spec.canonical_step_id].describe(spec.variant_value))))
    if cfg.drop_narrations > 0:
        keep = rng.random(len(lines)) >= cfg.drop_narrations
        lines = [ln for ln, k in zip(lines, keep) if k] or lines[:1]
    if cfg.shuffle_narrations and len(lines) > 1:
        texts = [s for _, s in lines]
        order = rng.permutation(len(texts))
        lines = [(t, texts[i]) for (t, _), i in zip(lines, order)]
    return lines


def _ground_truth(cfg, catalog, tasks, plans) -> GroundTruth:
    entries = []
    by_task: dict[str, list[VideoPlan]] = {}
    for plan in plans.values():
        by_task.setdefault(plan.task_id, []).append(plan)
    for task in tasks:
        group = by_task[task.task_id]
        for a in group:
            for b in group:
                if a.video_id == b.video_id:
                    continue
                diff = [i for i, (x, y) in enumerate(zip(a.assignment, b.assignment)) if x != y]
                if len(diff) != 1:
                    continue
                k = diff[0]
                step = catalog.steps[a.steps[k].canonical_step_id]
                src_v, tgt_v = a.steps[k].variant_value, b.steps[k].variant_value
                q = query_for(cfg.seed, a.video_id, b.video_id, step, src_v, tgt_v)
                tup = DetourTuple(a.video_id, a.spans[k].start, q, b.video_id, b.spans[k])
                entries.append(GTEntry(tup, step.axis, step.id, k, src_v, tgt_v))
    return GroundTruth(entries)


def split_tasks(tasks: list[TaskSpec], novel_task_fraction: float, seed: int):
    if not 0 <= novel_task_fraction < 1:
        raise ConfigError("novel_task_fraction must lie in [0, 1)")
    n_novel = int(round(novel_task_fraction * len(tasks)))
    rng = np.random.default_rng(_stable_seed("split", seed))
    novel_idx = set(int(i) for i in rng.permutation(len(tasks))[:n_novel])
    common = [t for i, t in enumerate(tasks) if i not in novel_idx]
    novel = [t for i, t in enumerate(tasks) if i in novel_idx]
    return common, novel


# -- persistence ------------------------------------------------------------

def save_world(world: World, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_videos(directory, world.videos)
    cat = world.catalog
    ids = list(cat.steps)
    values = cat.all_values
    save_tensors(directory / "catalog.dtck", {
        "family": np.stack(cat.family_vecs),
        "step": np.stack([cat.step_vecs[s] for s in ids]),
        "value": np.stack([cat.value_vecs[v] for v in values]),
    })
    cfg = asdict(world.config)
    meta = {
        "config": cfg,
        "catalog": [asdict(s) for s in cat.steps.values()],
        "values": values,
        "tasks": [asdict(t) for t in world.tasks],
        "plans": {vid: {"task_id": p.task_id, "steps": [asdict(s) for s in p.steps],
                        "spans": [[w.start, w.end] for w in p.spans]}
                  for vid, p in world.plans.items()},
        "splits": {"common_tasks": world.common_tasks, "novel_tasks": world.novel_tasks,
                   "train_videos": world.train_videos, "test_videos": world.test_videos},
        "noise": world.config.noise,
        "seed": world.config.seed,
    }
    (directory / "world_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    write_jsonl(directory / "gt.jsonl", (dict(e.tuple.record(), axis=e.axis, step_id=e.step_id,
                                             step_index=e.step_index, source_value=e.source_value,
                                             target_value=e.target_value) for e in world.gt))


def load_world(directory: str | Path) -> World:
    directory = Path(directory)
    meta = json.loads((directory / "world_meta.json").read_text())
    cfg = WorldConfig.from_dict(meta["config"])
    steps = {s["id"]: CanonicalStep(s["id"], s["axis"], s["template"], tuple(s["values"]), s["family"])
             for s in meta["catalog"]}
    vecs = load_tensors(directory / "catalog.dtck")
    svec, vvec = vecs["step"], vecs["value"]
    catalog = Catalog(steps, list(vecs["family"]), {sid: svec[i] for i, sid in enumerate(steps)},
                      {v: vvec[i] for i, v in enumerate(meta["values"])},
                      (cfg.family_weight, cfg.step_weight, cfg.value_weight))
    tasks = [TaskSpec(t["task_id"], t["recipe"], list(t["steps"]), [list(a) for a in t["allowed"]])
             for t in meta["tasks"]]
    plans = {vid: VideoPlan(vid, p["task_id"], [StepSpec(**s) for s in p["steps"]],
                            [TimeWindow(*w) for w in p["spans"]])
             for vid, p in meta["plans"].items()}
    entries = []
    for rec in read_jsonl(directory / "gt.jsonl"):
        entries.append(GTEntry(DetourTuple.from_record(rec), rec["axis"], rec["step_id"],
                               rec["step_index"], rec["source_value"], rec["target_value"]))
    sp = meta["splits"]
    return World(cfg, catalog, tasks, load_videos(directory), plans, GroundTruth(entries),
                 sp["common_tasks"], sp["novel_tasks"], sp["train_videos"], sp["test_videos"])


def world_meta_digest(directory: str | Path) -> str:
    return hashlib.sha256((Path(directory) / "world_meta.json").read_bytes()).hexdigest()


__all__ = [
    "Catalog", "CanonicalStep", "ConfigError", "GTEntry", "GroundTruth", "StepSpec", "TaskSpec",
    "UnknownEntity", "VideoPlan", "World", "WorldConfig", "gen_world", "load_world", "query_for",
    "save_world", "split_tasks", "dumps",
]
