import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detourlab.autodiff import (
    AdamWState,
    IndexOutOfRange,
    MultiHeadAttention,
    ShapeMismatch,
    Tape,
    Tensor,
    adamw_step,
    bce_with_logits,
    concat,
    cross_entropy,
    embedding_lookup,
    gelu,
    grad_check,
    layer_norm,
    load_tensors,
    masked_fill,
    matmul,
    multi_head_attention,
    reshape,
    save_tensors,
    softmax,
    transpose,
)
from detourlab.core import FormatError


def numeric_grad(fn, x: np.ndarray, eps=1e-5):
    """Central differences of scalar fn(ndarray) -> float, coordinate by coordinate."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = fn(x)
        x[i] = old - eps
        fm = fn(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def tape_grad(build, *arrays):
    ts = [Tensor(a.copy(), requires_grad=True, dtype="f64") for a in arrays]
    with Tape() as tape:
        out = build(*ts)
        tape.backward(out)
    return [t.grad for t in ts]


def rel_err(a, n):
    # same floor as grad_check: central differences cannot resolve gradients near 1e-10
    return float(np.max(np.abs(a - n) / np.maximum(1e-6, np.abs(a) + np.abs(n))))


def check_unary(build, x, tol=1e-4):
    (ga,) = tape_grad(build, x)
    gn = numeric_grad(lambda v: build(Tensor(v, dtype="f64")).item(), x.copy())
    assert rel_err(ga, gn) <= tol


# --- forward contracts ------------------------------------------------------

def test_matmul_shape():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3, 4)))
    assert matmul(a, b).shape == (2, 4)


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(4, 4\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 4))))


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(size=(5, 7)) * 10)
    s = softmax(x, axis=-1).data
    assert np.allclose(s.sum(-1), 1.0, atol=1e-6)


def test_sum_of_squares_gradient():
    x = np.array([1.0, -2.0, 3.5])
    (g,) = tape_grad(lambda t: (t * t).sum(), x)
    np.testing.assert_allclose(g, 2 * x)


def test_bce_values():
    assert bce_with_logits(Tensor(0.0), 1).item() == pytest.approx(math.log(2), abs=1e-6)
    hi = bce_with_logits(Tensor(20.0, dtype="f64"), 1).item()
    assert hi == pytest.approx(2.0611536e-9, rel=1e-4)
    lo = bce_with_logits(Tensor(-20.0, dtype="f64"), 1).item()
    assert lo == pytest.approx(20.0, abs=1e-6)
    big = bce_with_logits(Tensor([1e4, -1e4, 1e4]), [0, 1, 1]).data
    assert np.all(np.isfinite(big))


def test_cross_entropy_values():
    assert cross_entropy(Tensor(np.zeros(4)), 2).item() == pytest.approx(math.log(4), abs=1e-6)
    logits = np.zeros(5)
    logits[3] = 30.0
    assert cross_entropy(Tensor(logits, dtype="f64"), 3).item() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(IndexOutOfRange):
        cross_entropy(Tensor(np.zeros(4)), 4)


def test_embedding_out_of_range():
    with pytest.raises(IndexOutOfRange):
        embedding_lookup(Tensor(np.zeros((3, 2))), [0, 3])


def test_adamw_zero_grad_no_decay_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype="f64")}
    adamw_step(p, {"w": np.zeros(2)}, AdamWState(lr=0.1, weight_decay=0.0))
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adamw_single_scalar_step():
    p = {"w": Tensor(np.array([1.0]), requires_grad=True, dtype="f64")}
    adamw_step(p, {"w": np.array([1.0])}, AdamWState(lr=0.1, weight_decay=0.0))
    assert p["w"].data[0] == pytest.approx(0.9, abs=1e-7)


def test_adamw_default_lr_is_full_scale_value():
    assert AdamWState().lr == 3e-5


def test_adamw_shape_mismatch():
    p = {"w": Tensor(np.zeros(3), requires_grad=True)}
    with pytest.raises(ShapeMismatch):
        adamw_step(p, {"w": np.zeros(2)}, AdamWState())


def test_grad_check_sum_of_squares():
    x = Tensor(np.random.default_rng(1).normal(size=(4, 3)), requires_grad=True, dtype="f64")
    assert grad_check(lambda: (x * x).sum(), [x]) <= 1e-8


# --- gradients of every primitive against central differences --------------

small = st.integers(min_value=1, max_value=4)


@settings(max_examples=15, deadline=None)
@given(m=small, k=small, n=small, b=st.integers(1, 3), seed=st.integers(0, 1000))
def test_matmul_grad_property(m, k, n, b, seed):
    rng = np.random.default_rng(seed)
    a, c = rng.normal(size=(b, m, k)), rng.normal(size=(k, n))
    w = rng.normal(size=(b, m, n))
    ga, gc = tape_grad(lambda x, y: (matmul(x, y) * w).sum(), a, c)
    assert rel_err(ga, numeric_grad(lambda v: float(((v @ c) * w).sum()), a.copy())) <= 1e-4
    assert rel_err(gc, numeric_grad(lambda v: float(((a @ v) * w).sum()), c.copy())) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(shape=st.lists(small, min_size=1, max_size=3), seed=st.integers(0, 1000))
def test_elementwise_grads_property(shape, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=shape)
    y = rng.normal(size=shape[-1:])  # broadcast over leading axes
    w = rng.normal(size=shape)
    ga, gb = tape_grad(lambda s, t: ((s * t + s) * w).sum(), x, y)
    assert rel_err(ga, numeric_grad(lambda v: float(((v * y + v) * w).sum()), x.copy())) <= 1e-4
    assert rel_err(gb, numeric_grad(lambda v: float(((x * v + x) * w).sum()), y.copy())) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(rows=small, cols=st.integers(3, 6), seed=st.integers(0, 1000))
def test_softmax_layernorm_gelu_grads_property(rows, cols, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(rows, cols)) * 2
    w = rng.normal(size=(rows, cols))
    check_unary(lambda t: (softmax(t, axis=-1) * w).sum(), x)
    check_unary(lambda t: (softmax(t, axis=0) * w).sum(), x)
    check_unary(lambda t: (layer_norm(t, axis=-1) * w).sum(), x)
    check_unary(lambda t: (gelu(t) * w).sum(), x)


def test_layer_norm_affine_grads():
    rng = np.random.default_rng(3)
    x, g, b = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
    w = rng.normal(size=(3, 5))
    gx, gg, gb = tape_grad(lambda s, t, u: (layer_norm(s, t, u) * w).sum(), x, g, b)

    def f(xx, gg_, bb):
        mu = xx.mean(-1, keepdims=True)
        var = ((xx - mu) ** 2).mean(-1, keepdims=True)
        return float((((xx - mu) / np.sqrt(var + 1e-5) * gg_ + bb) * w).sum())

    assert rel_err(gx, numeric_grad(lambda v: f(v, g, b), x.copy())) <= 1e-4
    assert rel_err(gg, numeric_grad(lambda v: f(x, v, b), g.copy())) <= 1e-4
    assert rel_err(gb, numeric_grad(lambda v: f(x, g, v), b.copy())) <= 1e-4


@settings(max_examples=10, deadline=None)
@given(a=small, b=small, seed=st.integers(0, 1000))
def test_shape_op_grads_property(a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(a, b, 2))
    w1 = rng.normal(size=(2, b, a))
    check_unary(lambda t: (transpose(t, (2, 1, 0)) * w1).sum(), x)
    w2 = rng.normal(size=(a * b * 2,))
    check_unary(lambda t: (reshape(t, (-1,)) * w2).sum(), x)
    w3 = rng.normal(size=(a, b, 1))
    check_unary(lambda t: (t[:, :, 1:] * w3).sum(), x)
    w4 = rng.normal(size=(2 * a, b, 2))
    check_unary(lambda t: (concat([t, t * 2.0], axis=0) * w4).sum(), x)
    mask = rng.random(size=x.shape) < 0.5
    check_unary(lambda t: (masked_fill(t, mask, -3.0) * x).sum(), x)


def test_embedding_lookup_grad_repeated_ids():
    rng = np.random.default_rng(4)
    table = rng.normal(size=(5, 3))
    ids = np.array([[0, 2, 2], [4, 0, 1]])
    w = rng.normal(size=(2, 3, 3))
    check_unary(lambda t: (embedding_lookup(t, ids) * w).sum(), table)


def test_loss_grads():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(3, 6))
    check_unary(lambda t: cross_entropy(t, np.array([0, 5, 2])).sum(), logits)
    check_unary(lambda t: cross_entropy(t[1], 4), logits)
    z = rng.normal(size=(4,)) * 3
    check_unary(lambda t: bce_with_logits(t, [1, 0, 1, 0]).sum(), z)


def test_gradient_accumulation_is_additive():
    x0 = np.random.default_rng(6).normal(size=(3,))
    f = lambda t: (t * t).sum()
    g = lambda t: (gelu(t) * 3.0).sum()
    (gf,) = tape_grad(f, x0)
    (gg,) = tape_grad(g, x0)
    (gsum,) = tape_grad(lambda t: f(t) + g(t), x0)
    np.testing.assert_allclose(gsum, gf + gg, rtol=1e-12)
    # two backward passes into the same leaf accumulate
    x = Tensor(x0.copy(), requires_grad=True, dtype="f64")
    with Tape() as t1:
        t1.backward(f(x))
    with Tape() as t2:
        t2.backward(g(x))
    np.testing.assert_allclose(x.grad, gf + gg, rtol=1e-12)


def test_no_graph_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * x).sum()
    assert not y.requires_grad


# --- attention ---------------------------------------------------------------

def test_mha_single_token_is_projected_value():
    rng = np.random.default_rng(7)
    mha = MultiHeadAttention(8, 2, rng, dtype="f64")
    x = Tensor(rng.normal(size=(1, 8)), dtype="f64")
    other = Tensor(rng.normal(size=(1, 8)), dtype="f64")
    out = mha(other, x, x).data
    expect = (x.data @ mha.v.weight.data + mha.v.bias.data) @ mha.o.weight.data + mha.o.bias.data
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_causal_mask_is_lower_triangular():
    rng = np.random.default_rng(8)
    q = Tensor(rng.normal(size=(5, 4)))
    _, w = multi_head_attention(q, q, q, heads=2, causal=True, return_weights=True)
    upper = np.triu(np.ones((5, 5), dtype=bool), k=1)
    assert np.all(w.data[:, upper] == 0.0)
    assert np.allclose(w.data.sum(-1), 1.0, atol=1e-6)


def test_mha_heads_must_divide():
    with pytest.raises(ShapeMismatch):
        MultiHeadAttention(6, 4, np.random.default_rng(0))


def test_mha_grad_matches_finite_differences():
    rng = np.random.default_rng(9)
    mha = MultiHeadAttention(8, 2, rng, dtype="f64")
    x = Tensor(rng.normal(size=(2, 5, 8)), requires_grad=True, dtype="f64")
    w = rng.normal(size=(2, 5, 8))
    pad = np.array([[False] * 5, [False, False, False, True, True]])
    params = dict(mha.parameters(), x=x)
    err = grad_check(lambda: (mha(x, x, x, causal=True, key_padding=pad) * w).sum(), params)
    assert err <= 1e-4


# --- numerical stability -------------------------------------------------------

def test_no_nan_on_large_inputs():
    rng = np.random.default_rng(10)
    x = Tensor(rng.uniform(-1e3, 1e3, size=(3, 6)), requires_grad=True)
    with Tape() as tape:
        out = (softmax(x) + layer_norm(x) + gelu(x)).sum()
        loss = out + cross_entropy(x, np.array([0, 1, 2])).sum() + bce_with_logits(x, np.ones((3, 6))).sum()
        tape.backward(loss)
    assert np.isfinite(loss.data).all()
    assert np.isfinite(x.grad).all()


# --- container -----------------------------------------------------------------

def test_dtck_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    tensors = {"a": rng.normal(size=(2, 3)).astype(np.float32), "b.c": rng.normal(size=(4,)),
               "step": np.array([7], dtype=np.int64)}
    save_tensors(tmp_path / "x.dtck", tensors)
    back = load_tensors(tmp_path / "x.dtck")
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype
        np.testing.assert_array_equal(back[k], tensors[k])


def test_dtck_version_rejected(tmp_path):
    save_tensors(tmp_path / "x.dtck", {"a": np.zeros(2)}, version=2)
    with pytest.raises(FormatError):
        load_tensors(tmp_path / "x.dtck")
