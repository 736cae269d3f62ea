import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detourlab.pairs import (
    EmbedderMismatch,
    SummaryEmbedding,
    cosine,
    embedding_from_vector,
    hashed_tf,
    mine_pairs,
)


def _emb(vid, v, eid="e"):
    return embedding_from_vector(vid, v, eid)


def test_identical_summaries_pair_fully():
    embs = [_emb(k, [1.0, 2.0, 0.5]) for k in "abc"]
    pairs = mine_pairs(embs, 0.75)
    assert len(pairs) == 3
    assert all(p.similarity == pytest.approx(1.0) for p in pairs)


def test_orthogonal_corpus_has_no_pairs():
    embs = [_emb(str(i), np.eye(5)[i]) for i in range(5)]
    assert mine_pairs(embs, 0.75) == []


def test_single_embedding_has_no_pairs():
    assert mine_pairs([_emb("a", [1.0])]) == []


def test_mixed_embedders_rejected():
    with pytest.raises(EmbedderMismatch):
        mine_pairs([_emb("a", [1.0, 0.0], "x"), _emb("b", [1.0, 0.0], "y")])
    with pytest.raises(EmbedderMismatch):
        cosine(_emb("a", [1.0], "x"), _emb("b", [1.0], "y"))


def test_non_unit_vector_rejected():
    with pytest.raises(ValueError):
        SummaryEmbedding("a", np.array([2.0, 0.0]))


def test_hashed_tf_is_unit_and_deterministic():
    v = hashed_tf("Chop the onions, then chop the garlic")
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(v, hashed_tf("chop the onions then chop the garlic"))
    assert np.linalg.norm(hashed_tf("")) == pytest.approx(1.0)


def test_cap_limits_pairs_per_video():
    embs = [_emb(k, [1.0, 0.01 * i]) for i, k in enumerate("abcdef")]
    pairs = mine_pairs(embs, 0.5, per_video_cap=2)
    for k in "abcdef":
        assert sum(k in (p.id_a, p.id_b) for p in pairs) <= 2


vectors = st.lists(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 0.1), min_size=2, max_size=9)


def _pair_set(pairs):
    return {(p.id_a, p.id_b) for p in pairs}


@settings(max_examples=80, deadline=None)
@given(vectors, st.randoms(use_true_random=False))
def test_invariant_under_permutation(vecs, rnd):
    embs = [_emb(f"v{i}", v) for i, v in enumerate(vecs)]
    shuffled = list(embs)
    rnd.shuffle(shuffled)
    assert mine_pairs(embs, 0.5) == mine_pairs(shuffled, 0.5)


@settings(max_examples=80, deadline=None)
@given(vectors, st.floats(-1, 1), st.floats(-1, 1))
def test_antitone_in_threshold(vecs, t1, t2):
    lo, hi = sorted((t1, t2))
    embs = [_emb(f"v{i}", v) for i, v in enumerate(vecs)]
    assert _pair_set(mine_pairs(embs, hi)) <= _pair_set(mine_pairs(embs, lo))


@settings(max_examples=80, deadline=None)
@given(vectors, st.floats(-1, 1))
def test_pairs_match_brute_force(vecs, thr):
    embs = [_emb(f"v{i}", v) for i, v in enumerate(vecs)]
    expect = {(a.video_id, b.video_id) for i, a in enumerate(embs) for b in embs[i + 1:]
              if float(np.dot(a.vector, b.vector)) >= thr + 1e-12}
    got = _pair_set(mine_pairs(embs, thr))
    borderline = {(a.video_id, b.video_id) for i, a in enumerate(embs) for b in embs[i + 1:]
                  if abs(float(np.dot(a.vector, b.vector)) - thr) <= 1e-12}
    assert expect <= got <= expect | borderline
    for p in mine_pairs(embs, thr):
        assert p.id_a < p.id_b and -1.0 <= p.similarity <= 1.0
