"""Early-fusion detour model: tokenizer, visual mapper, sequence assembly,
causal encoder, and the retrieval and localization heads.

A sequence reads ``CLS SEP_SRC <source prefix> SEP_QRY <query> SEP_CAND <candidate>``.
Because the encoder is causal, the last candidate positions see the whole
source prefix and query, which is what separates it from late fusion.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    LayerNorm,
    Linear,
    Module,
    Tape,
    Tensor,
    TransformerBlock,
    bce_with_logits,
    concat,
    cross_entropy,
    embedding_lookup,
    load_tensors,
    masked_fill,
    save_tensors,
    slice_,
    softmax,
)
from .autodiff.nn import NEG_INF
from .core import FormatError, NarratedVideo, TimeWindow

PAD, UNK, SEP_SRC, SEP_QRY, SEP_CAND, CLS = range(6)
RESERVED = ("<pad>", "<unk>", "<sep_src>", "<sep_qry>", "<sep_cand>", "<cls>")
SEG_CLS, SEG_SEP, SEG_SOURCE, SEG_QUERY, SEG_CANDIDATE = range(5)
MODEL_FORMAT = 1


class SequenceOverflow(ValueError):
    pass


_WORD = re.compile(r"[a-z0-9]+")


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


@dataclass
class Vocab:
    tokens: list[str]

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocab must start with the reserved tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, texts) -> "Vocab":
        seen = sorted({w for t in texts for w in words(t)})
        return cls(list(RESERVED) + [w for w in seen if w not in RESERVED])

    def __len__(self) -> int:
        return len(self.tokens)

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens}) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(json.loads(text)["tokens"])


def tokenize(q: str, vocab: Vocab) -> list[int]:
    return [vocab.index.get(w, UNK) for w in words(q)]


@dataclass
class ModelConfig:
    feature_dim: int = 32
    vocab_size: int = len(RESERVED)
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn_dim: int = 128
    max_seq: int = 512
    head_dim: int = 64
    head_heads: int = 4
    head_layers: int = 2
    head_ffn: int = 128
    bidirectional: bool = False
    max_stride: int = 4
    task: str = "retrieval"
    seed: int = 0
    dtype: str = "f32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.head_dim % self.head_heads:
            raise ValueError("head_dim must be divisible by head_heads")
        if self.task not in ("retrieval", "localization"):
            raise ValueError(f"unknown task {self.task!r}")

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        # retrieval head at the published size; the encoder stands in for a frozen LLM
        base = dict(d_model=4096, n_heads=32, n_layers=4, ffn_dim=11008, max_seq=4096,
                    head_dim=4096, head_heads=4, head_layers=4, head_ffn=1024, feature_dim=768)
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class AssembledSequence:
    """Positions of one early-fusion sequence before embedding.

    ``token_ids`` holds vocab ids at text positions and PAD at visual ones;
    ``features`` holds feature rows at visual positions and zeros elsewhere.
    """

    token_ids: np.ndarray
    features: np.ndarray
    is_visual: np.ndarray
    segments: np.ndarray
    candidate_span: tuple[int, int]
    candidate_times: np.ndarray
    positions: np.ndarray | None = None
    candidate_duration: int = 0

    def __len__(self) -> int:
        return len(self.token_ids)


def assemble(source: NarratedVideo | None, t_s: int, query_ids, candidate: NarratedVideo,
             use_source: bool = True, use_query: bool = True, max_seq: int = 512,
             max_stride: int = 4) -> AssembledSequence:
    if use_source:
        if source is None:
            raise ValueError("use_source requires a source video")
        if not 0 <= t_s <= source.duration:
            raise ValueError(f"t_s={t_s} outside source duration {source.duration}")
        src = source.features[:t_s]
    else:
        src = np.zeros((0, candidate.features.shape[1]), np.float32)
    q = list(query_ids) if use_query else []
    cand = candidate.features
    times = np.arange(candidate.duration)
    src_times = np.arange(len(src))
    fixed = 4 + len(q)
    room = max_seq - fixed
    if room - len(cand) < len(src):
        cut = max(0, len(src) - max(0, room - len(cand)))
        src, src_times = src[cut:], src_times[cut:]
    if len(cand) > room:
        stride = math.ceil(len(cand) / max(room, 1)) if room > 0 else max_stride + 1
        if stride > max_stride:
            raise SequenceOverflow(f"candidate {candidate.id} ({candidate.duration} s) does not fit "
                                   f"max_seq={max_seq} even at stride {max_stride}")
        times = times[::stride]
        cand = cand[::stride]
    d = cand.shape[1]
    n_src, n_q, n_c = len(src), len(q), len(cand)
    T = fixed + n_src + n_c
    ids = np.full(T, PAD, np.int64)
    feats = np.zeros((T, d), np.float32)
    vis = np.zeros(T, bool)
    seg = np.full(T, SEG_SEP, np.int64)
    # video rows are indexed by their second relative to t_s (absolute when the
    # source is masked, since t_s is then unknown); text by token offset
    anchor = max_seq // 2
    shift = anchor - (t_s if use_source else 0)
    pos = np.zeros(T, np.int64)
    ids[0], seg[0] = CLS, SEG_CLS
    ids[1] = SEP_SRC
    p = 2
    feats[p:p + n_src], vis[p:p + n_src], seg[p:p + n_src] = src, True, SEG_SOURCE
    pos[p:p + n_src] = src_times + shift
    p += n_src
    ids[p] = SEP_QRY
    p += 1
    ids[p:p + n_q], seg[p:p + n_q], pos[p:p + n_q] = q, SEG_QUERY, np.arange(n_q)
    p += n_q
    ids[p] = SEP_CAND
    p += 1
    feats[p:p + n_c], vis[p:p + n_c], seg[p:p + n_c] = cand, True, SEG_CANDIDATE
    pos[p:p + n_c] = times + shift
    pos = np.clip(pos, 0, max_seq - 1)
    return AssembledSequence(ids, feats, vis, seg, (p, p + n_c), times, pos, candidate.duration)


@dataclass
class Batch:
    token_ids: np.ndarray
    features: np.ndarray
    is_visual: np.ndarray
    segments: np.ndarray
    positions: np.ndarray
    valid: np.ndarray
    spans: list[tuple[int, int]]
    times: list[np.ndarray]

    @classmethod
    def of(cls, seqs: list[AssembledSequence]) -> "Batch":
        # right padding: causal positions never see it; the head masks it
        B, T = len(seqs), max(len(s) for s in seqs)
        d = seqs[0].features.shape[1]
        ids = np.full((B, T), PAD, np.int64)
        feats = np.zeros((B, T, d), np.float32)
        vis = np.zeros((B, T), bool)
        seg = np.full((B, T), SEG_SEP, np.int64)
        pos = np.zeros((B, T), np.int64)
        valid = np.zeros((B, T), bool)
        for i, s in enumerate(seqs):
            n = len(s)
            ids[i, :n], feats[i, :n], vis[i, :n], seg[i, :n], pos[i, :n], valid[i, :n] = (
                s.token_ids, s.features, s.is_visual, s.segments, s.positions, True)
        return cls(ids, feats, vis, seg, pos, valid, [s.candidate_span for s in seqs],
                   [s.candidate_times for s in seqs])


class RetrievalHead(Module):
    """Small bidirectional transformer over encoder outputs with a learned CLS slot."""

    def __init__(self, cfg: ModelConfig, rng):
        dt = cfg.dtype
        self.proj = Linear(cfg.d_model, cfg.head_dim, rng, dt) if cfg.head_dim != cfg.d_model else None
        self.cls = Tensor(rng.standard_normal((1, 1, cfg.head_dim)) * 0.02, requires_grad=True, dtype=dt)
        self.blocks = [TransformerBlock(cfg.head_dim, cfg.head_heads, cfg.head_ffn, rng, dt)
                       for _ in range(cfg.head_layers)]
        self.ln = LayerNorm(cfg.head_dim, dt)
        # small output init: the untrained logit is near zero (loss close to ln 2)
        self.out = Linear(cfg.head_dim, 1, rng, dt, std=0.05)

    def __call__(self, O: Tensor, valid: np.ndarray) -> Tensor:
        h = self.proj(O) if self.proj is not None else O
        B = O.shape[0]
        cls = self.cls * np.ones((B, 1, 1), dtype=O.dtype)
        x = concat([cls, h], axis=1)
        pad = np.concatenate([np.zeros((B, 1), bool), ~valid], axis=1)
        for blk in self.blocks:
            x = blk(x, causal=False, key_padding=pad)
        x = self.ln(slice_(x, (slice(None), 0)))
        return self.out(x).reshape(B)


class LocalizationHead(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.ln = LayerNorm(cfg.d_model, cfg.dtype)
        # near-uniform start/end softmax at init (loss close to ln T)
        self.proj = Linear(cfg.d_model, 2, rng, cfg.dtype, std=0.05)

    def __call__(self, O: Tensor, spans) -> tuple[Tensor, np.ndarray]:
        """Start/end logits [B, Tc, 2] gathered from candidate positions, and a validity mask."""
        B = O.shape[0]
        tc = max(e - s for s, e in spans)
        idx = np.zeros((B, tc), np.int64)
        mask = np.zeros((B, tc), bool)
        for i, (s, e) in enumerate(spans):
            idx[i, : e - s] = np.arange(s, e)
            idx[i, e - s:] = e - 1
            mask[i, : e - s] = True
        rows = np.repeat(np.arange(B)[:, None], tc, axis=1)
        cand = slice_(O, (rows, idx))
        logits = self.proj(self.ln(cand))
        return masked_fill(logits, ~mask[..., None], NEG_INF), mask


class DetourModel(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocab | None = None):
        self.cfg = cfg
        self.vocab = vocab or Vocab(list(RESERVED))
        cfg.vocab_size = len(self.vocab)
        rng = np.random.default_rng(cfg.seed)
        dt, d = cfg.dtype, cfg.d_model
        self.mapper = Linear(cfg.feature_dim, d, rng, dt)
        self.tok_emb = Tensor(rng.standard_normal((cfg.vocab_size, d)) * 0.02, requires_grad=True, dtype=dt)
        self.pos_emb = Tensor(rng.standard_normal((cfg.max_seq, d)) * 0.02, requires_grad=True, dtype=dt)
        self.seg_emb = Tensor(rng.standard_normal((5, d)) * 0.02, requires_grad=True, dtype=dt)
        self.blocks = [TransformerBlock(d, cfg.n_heads, cfg.ffn_dim, rng, dt) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(d, dt)
        if cfg.task == "retrieval":
            self.head = RetrievalHead(cfg, rng)
        else:
            self.head = LocalizationHead(cfg, rng)

    # -- pieces ----------------------------------------------------------
    def map_visual(self, features) -> Tensor:
        f = features if isinstance(features, Tensor) else Tensor(np.asarray(features), dtype=self.cfg.dtype)
        return self.mapper(f)

    def assemble(self, source, t_s, query: str, candidate, use_source=True, use_query=True):
        return assemble(source, t_s, tokenize(query, self.vocab), candidate, use_source, use_query,
                        self.cfg.max_seq, self.cfg.max_stride)

    def embed(self, batch: Batch) -> Tensor:
        T = batch.token_ids.shape[1]
        if T > self.cfg.max_seq:
            raise SequenceOverflow(f"sequence length {T} exceeds max_seq {self.cfg.max_seq}")
        dt = self.tok_emb.dtype
        vis = batch.is_visual[..., None].astype(dt)
        x = self.map_visual(batch.features.astype(dt)) * vis
        x = x + embedding_lookup(self.tok_emb, batch.token_ids) * (1 - vis)
        x = x + embedding_lookup(self.pos_emb, batch.positions)
        return x + embedding_lookup(self.seg_emb, batch.segments)

    def encode(self, batch: Batch) -> Tensor:
        x = self.embed(batch)
        for blk in self.blocks:
            x = blk(x, causal=not self.cfg.bidirectional, key_padding=~batch.valid)
        return self.ln_f(x)

    # -- task heads --------------------------------------------------------
    def retrieval_logits(self, batch: Batch) -> Tensor:
        return self.head(self.encode(batch), batch.valid)

    def localization_logits(self, batch: Batch) -> tuple[Tensor, np.ndarray]:
        return self.head(self.encode(batch), batch.spans)

    def retrieval_loss(self, batch: Batch, labels) -> Tensor:
        return bce_with_logits(self.retrieval_logits(batch), np.asarray(labels, float)).mean()

    def localization_loss(self, batch: Batch, starts, ends) -> Tensor:
        logits, _ = self.localization_logits(batch)
        B = logits.shape[0]
        s_log = slice_(logits, (slice(None), slice(None), 0))
        e_log = slice_(logits, (slice(None), slice(None), 1))
        ls = cross_entropy(s_log, np.asarray(starts)).sum()
        le = cross_entropy(e_log, np.asarray(ends)).sum()
        return (ls + le) * (0.5 / B)

    def score(self, seqs: list[AssembledSequence], chunk: int = 64) -> np.ndarray:
        out = []
        for i in range(0, len(seqs), chunk):
            out.append(self.retrieval_logits(Batch.of(seqs[i:i + chunk])).data.astype(np.float64))
        return np.concatenate(out) if out else np.zeros(0)

    def localize(self, seqs: list[AssembledSequence], chunk: int = 64):
        """Per sequence: (p_start, p_end, predicted TimeWindow in seconds)."""
        res = []
        for i in range(0, len(seqs), chunk):
            part = seqs[i:i + chunk]
            logits, mask = self.localization_logits(Batch.of(part))
            for j, s in enumerate(part):
                n = int(mask[j].sum())
                ps = softmax(Tensor(logits.data[j, :n, 0].astype(np.float64))).data
                pe = softmax(Tensor(logits.data[j, :n, 1].astype(np.float64))).data
                a, b = best_window(ps, pe)
                times = s.candidate_times
                res.append((ps, pe, TimeWindow(int(times[a]), int(times[b]))))
        return res


def best_window(p_start, p_end) -> tuple[int, int]:
    """argmax over s < e of p_start[s] * p_end[e]; ties go to the earliest pair."""
    p_start, p_end = np.asarray(p_start, float), np.asarray(p_end, float)
    n = len(p_start)
    if n < 2:
        raise ValueError("need at least two candidate positions for a window")
    joint = np.triu(np.outer(p_start, p_end), k=1)
    joint[np.tril_indices(n)] = -1.0
    flat = int(np.argmax(joint))
    return flat // n, flat % n


def target_indices(window: TimeWindow, times: np.ndarray) -> tuple[int, int]:
    """Window endpoints on the surviving candidate grid; end exclusive, clamped to the last slot."""
    times = np.asarray(times)
    s = int(np.argmin(np.abs(times - window.start)))
    e = int(np.argmin(np.abs(times - window.end)))
    n = len(times)
    e = min(e, n - 1)
    if e <= s:
        e = s + 1
        if e > n - 1:
            s, e = n - 2, n - 1
    return s, e


def gradcheck_losses(seed: int = 0, coords_per_tensor: int = 8) -> dict[str, float]:
    """Finite-difference check of the full retrieval and localization losses on a tiny f64 model."""
    from .autodiff import grad_check

    rng = np.random.default_rng(seed)
    D = 6

    def video(vid, n):
        return NarratedVideo(vid, "t", n, [(0, "stir the onion")], rng.standard_normal((n, D)))

    vocab = Vocab.build(["stir the onion", "skip the salt"])
    src, cands = video("s", 5), [video("a", 4), video("b", 6)]
    out = {}
    for task in ("retrieval", "localization"):
        cfg = ModelConfig(feature_dim=D, d_model=8, n_heads=2, n_layers=1, ffn_dim=16, max_seq=32,
                          head_dim=8, head_heads=2, head_layers=1, head_ffn=16, task=task, seed=seed,
                          dtype="f64")
        model = DetourModel(cfg, vocab)
        batch = Batch.of([model.assemble(src, 3, "skip the onion", c) for c in cands])
        if task == "retrieval":
            f = lambda: model.retrieval_loss(batch, [1, 0])  # noqa: E731
        else:
            f = lambda: model.localization_loss(batch, [0, 2], [2, 5])  # noqa: E731
        out[task] = grad_check(f, model.parameters(), coords_per_tensor=coords_per_tensor, seed=seed)
    return out


def _state_arrays(model: DetourModel) -> dict[str, np.ndarray]:
    return {k: p.data for k, p in model.parameters().items()}


def save_model(model: DetourModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensors(directory / "model.dtck", _state_arrays(model), version=MODEL_FORMAT)
    (directory / "vocab.json").write_text(model.vocab.to_json())
    (directory / "config.json").write_text(json.dumps(asdict(model.cfg), sort_keys=True, indent=1) + "\n")


def load_model(directory: str | Path) -> DetourModel:
    directory = Path(directory)
    for name in ("model.dtck", "vocab.json", "config.json"):
        if not (directory / name).exists():
            raise FileNotFoundError(f"checkpoint is missing {directory / name}")
    arrays = load_tensors(directory / "model.dtck")
    cfg = ModelConfig.from_dict(json.loads((directory / "config.json").read_text()))
    vocab = Vocab.from_json((directory / "vocab.json").read_text())
    model = DetourModel(cfg, vocab)
    try:
        model.load_arrays(arrays)
    except KeyError as e:
        raise FormatError(f"checkpoint tensors do not match the config: {e}") from e
    return model


__all__ = [
    "AssembledSequence", "Batch", "DetourModel", "ModelConfig", "SequenceOverflow", "Tape", "Vocab",
    "assemble", "best_window", "gradcheck_losses", "load_model", "save_model", "target_indices", "tokenize",
]
