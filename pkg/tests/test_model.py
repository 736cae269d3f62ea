import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detourlab.autodiff import Tape, save_tensors
from detourlab.core import FormatError, NarratedVideo
from detourlab.model import (
    CLS,
    PAD,
    SEG_CANDIDATE,
    SEG_QUERY,
    SEG_SOURCE,
    UNK,
    Batch,
    DetourModel,
    ModelConfig,
    SequenceOverflow,
    Vocab,
    assemble,
    best_window,
    gradcheck_losses,
    load_model,
    save_model,
    target_indices,
    tokenize,
)
from detourlab.core import TimeWindow

D = 8


def _video(vid, n, seed=0):
    rng = np.random.default_rng(seed)
    return NarratedVideo(vid, "t", n, [(0, "x")], rng.standard_normal((n, D)).astype(np.float32))


VOCAB = Vocab.build(["can i skip the onions", "how to do this without a whisk"])


def _tiny(task="retrieval", **kw):
    cfg = ModelConfig(feature_dim=D, d_model=16, n_heads=2, n_layers=1, ffn_dim=32, max_seq=64,
                      head_dim=16, head_heads=2, head_layers=1, head_ffn=32, task=task, **kw)
    return DetourModel(cfg, VOCAB)


def test_tokenize_examples():
    assert tokenize("", VOCAB) == []
    ids = tokenize("Can I skip the onions?", VOCAB)
    assert len(ids) == 5 and PAD not in ids and UNK not in ids
    assert tokenize("skip the paprika", VOCAB)[-1] == UNK


def test_vocab_round_trip_and_reserved_prefix():
    assert Vocab.from_json(VOCAB.to_json()).tokens == VOCAB.tokens
    with pytest.raises(ValueError):
        Vocab(["a", "b"])


def test_assembly_length_example():
    src, cand = _video("s", 120), _video("c", 150)
    seq = assemble(src, 45, list(range(6, 12)), cand)
    assert len(seq) == 1 + 3 + 45 + 6 + 150 == 205
    assert seq.candidate_span == (55, 205)
    assert seq.token_ids[0] == CLS


def test_assembly_masks_and_boundaries():
    src, cand = _video("s", 20), _video("c", 10)
    seq = assemble(src, 5, [7, 8], cand, use_source=False, use_query=False)
    assert len(seq) == 4 + 10
    assert not np.any(seq.segments == SEG_SOURCE) and not np.any(seq.segments == SEG_QUERY)
    seq = assemble(src, 0, [7], cand)
    assert not np.any(seq.segments == SEG_SOURCE)
    with pytest.raises(ValueError):
        assemble(src, 21, [7], cand)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 40), st.integers(0, 8), st.integers(2, 60), st.booleans(), st.booleans())
def test_segment_order_non_decreasing(t_s, n_q, n_c, use_s, use_q):
    seq = assemble(_video("s", 40), t_s, list(range(6, 6 + n_q)), _video("c", n_c), use_s, use_q)
    order = {0: 0, 1: 1, SEG_SOURCE: 2, SEG_QUERY: 3, SEG_CANDIDATE: 4}
    # separators sit between segments; compare content segments only
    content = [order[s] for s in seq.segments if s in (SEG_SOURCE, SEG_QUERY, SEG_CANDIDATE)]
    assert content == sorted(content)
    assert seq.is_visual.sum() == (t_s if use_s else 0) + n_c
    a, b = seq.candidate_span
    assert b - a == len(seq.candidate_times) and b == len(seq)


def test_long_candidates_are_strided():
    seq = assemble(_video("s", 10), 5, [6], _video("c", 300), max_seq=200, max_stride=4)
    assert len(seq) <= 200
    assert seq.candidate_times[1] - seq.candidate_times[0] == 2
    with pytest.raises(SequenceOverflow):
        assemble(_video("s", 10), 5, [6], _video("c", 2000), max_seq=200, max_stride=4)


def test_mapper_zero_row_is_zero_token():
    m = _tiny()
    out = m.map_visual(np.zeros((3, D), np.float32))
    assert out.shape == (3, 16) and np.all(out.data == 0)


def test_encoder_output_shape_and_causality():
    m = _tiny()
    src, cand = _video("s", 12, 1), _video("c", 9, 2)
    seq = m.assemble(src, 6, "can i skip the onions", cand)
    base = m.encode(Batch.of([seq])).data[0]
    assert base.shape == (len(seq), 16)
    seq.features[-1] += 5.0
    moved = m.encode(Batch.of([seq])).data[0]
    assert np.array_equal(moved[:-1], base[:-1])
    assert not np.allclose(moved[-1], base[-1])


def test_source_reaches_candidate_positions():
    m = _tiny()
    src, cand = _video("s", 12, 1), _video("c", 9, 2)
    seq = m.assemble(src, 6, "can i skip the onions", cand)
    base = m.encode(Batch.of([seq])).data[0]
    seq.features[3] += 3.0
    moved = m.encode(Batch.of([seq])).data[0]
    a, b = seq.candidate_span
    assert not np.allclose(moved[a:b], base[a:b])


def test_query_ablation_ignores_query_text():
    m = _tiny()
    src, cand = _video("s", 12, 1), _video("c", 9, 2)
    a = m.assemble(src, 6, "can i skip the onions", cand, use_query=False)
    b = m.assemble(src, 6, "how to do this without a whisk", cand, use_query=False)
    assert np.array_equal(m.encode(Batch.of([a])).data, m.encode(Batch.of([b])).data)


def test_padding_does_not_change_scores():
    m = _tiny()
    src = _video("s", 12, 1)
    short = m.assemble(src, 6, "skip the onions", _video("c", 5, 2))
    long = m.assemble(src, 6, "skip the onions", _video("d", 20, 3))
    alone = m.score([short])
    together = m.score([short, long])
    assert np.allclose(alone[0], together[0], atol=1e-5)
    assert np.array_equal(m.score([short]), m.score([short]))


def test_initial_losses_match_uniform_predictions():
    src = _video("s", 12, 1)
    cands = [_video("a", 10, 2), _video("b", 10, 3)]
    m = _tiny()
    batch = Batch.of([m.assemble(src, 6, "skip the onions", c) for c in cands])
    # untrained heads give near-zero logits; residual spread costs a few percent
    assert m.retrieval_loss(batch, [1, 0]).item() == pytest.approx(np.log(2), rel=0.05)
    loc = _tiny("localization")
    batch = Batch.of([loc.assemble(src, 6, "skip the onions", c) for c in cands])
    T = 10
    assert loc.localization_loss(batch, [1, 2], [4, 6]).item() == pytest.approx(0.5 * (np.log(T) + np.log(T)), rel=0.05)


def test_mapper_receives_gradient():
    m = _tiny()
    batch = Batch.of([m.assemble(_video("s", 8), 4, "skip", _video("c", 6, 1))])
    with Tape() as tape:
        loss = m.retrieval_loss(batch, [1])
        tape.backward(loss)
    assert np.any(m.mapper.weight.grad != 0)


def test_best_window_examples():
    assert best_window([.1, .7, .2], [.1, .2, .7]) == (1, 2)
    s, e = best_window([.0, .0, 1.0], [.5, .5, 0.0])
    assert s < e
    with pytest.raises(ValueError):
        best_window([1.0], [1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12), st.data())
def test_best_window_is_optimal_legal_pair(ps, data):
    pe = data.draw(st.lists(st.floats(0.0, 1.0), min_size=len(ps), max_size=len(ps)))
    s, e = best_window(ps, pe)
    assert s < e
    best = max(ps[i] * pe[j] for i in range(len(ps)) for j in range(i + 1, len(ps)))
    assert ps[s] * pe[e] == pytest.approx(best)


def test_target_indices_on_grid():
    times = np.arange(30)
    assert target_indices(TimeWindow(4, 10), times) == (4, 10)
    assert target_indices(TimeWindow(20, 30), times) == (20, 29)
    strided = np.arange(0, 30, 3)
    assert target_indices(TimeWindow(7, 13), strided) == (2, 4)


def test_full_loss_gradcheck():
    errs = gradcheck_losses()
    assert errs["retrieval"] <= 1e-4 and errs["localization"] <= 1e-4


def test_checkpoint_round_trip(tmp_path):
    m = _tiny()
    save_model(m, tmp_path / "ck")
    back = load_model(tmp_path / "ck")
    for k, p in m.parameters().items():
        assert np.array_equal(p.data, back.parameters()[k].data)
    seqs = [m.assemble(_video("s", 8), 4, "skip", _video("c", 6, 1))]
    assert np.array_equal(m.score(seqs), back.score(seqs))


def test_checkpoint_version_bump_rejected(tmp_path):
    m = _tiny()
    save_model(m, tmp_path / "ck")
    save_tensors(tmp_path / "ck" / "model.dtck", {k: p.data for k, p in m.parameters().items()}, version=2)
    with pytest.raises(FormatError):
        load_model(tmp_path / "ck")


def test_full_scale_preset_head():
    cfg = ModelConfig.full_scale()
    assert (cfg.head_dim, cfg.head_heads, cfg.head_layers, cfg.head_ffn) == (4096, 4, 4, 1024)
