from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor] | list[Tensor],
               eps: float = 1e-5, coords_per_tensor: int = 64, seed: int = 0,
               details: bool = False, atol: float = 1e-6):
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``f`` must read the current values of ``params`` on every call. Tensors
    with more than ``coords_per_tensor`` entries are checked on a random
    sample of that many coordinates. Returns the max relative error
    ``|a - n| / max(atol, |a| + |n|)`` (and per-tensor maxima if ``details``).
    The floor keeps structurally zero gradients (e.g. a bias under a softmax)
    from turning finite-difference roundoff into a large ratio.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(str(i), p) for i, p in enumerate(params)]
    for _, p in named:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires f64 parameters")
        p.grad = None
    with Tape() as tape:
        out = f()
        tape.backward(out)
    rng = np.random.default_rng(seed)
    worst = 0.0
    per_tensor = {}
    for name, p in named:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        if flat.size > coords_per_tensor:
            idx = rng.choice(flat.size, size=coords_per_tensor, replace=False)
        else:
            idx = np.arange(flat.size)
        err = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = f().item()
            flat[i] = old - eps
            fm = f().item()
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = max(err, abs(a - num) / max(atol, abs(a) + abs(num)))
        per_tensor[name] = err
        worst = max(worst, err)
    return (worst, per_tensor) if details else worst


def primitive_checks(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error of every layer primitive on small f64 inputs."""
    import importlib

    T = importlib.import_module(__package__ + ".tensor")
    from .nn import LayerNorm, Linear, MultiHeadAttention, TransformerBlock

    rng = np.random.default_rng(seed)

    def p(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True, dtype="f64")

    def w(*shape):
        return rng.standard_normal(shape)

    a, b, m = p(3, 4), p(3, 4), p(4, 5)
    tab = p(7, 4)
    ids = np.array([[0, 3, 6], [2, 2, 5]])
    mask = rng.random((3, 4)) < 0.3
    labels = np.array([1.0, 0.0, 1.0])
    target = np.array([0, 3, 1])
    lin, ln = Linear(4, 5, rng, "f64"), LayerNorm(4, "f64")
    mha = MultiHeadAttention(4, 2, rng, "f64")
    blk = TransformerBlock(4, 2, 8, rng, "f64")
    x3 = p(2, 3, 4)
    pad = np.array([[False, False, True], [False, False, False]])
    wa, wm, w3 = w(3, 4), w(3, 5), w(2, 3, 4)
    cases = {
        "add": (lambda: (T.add(a, b) * wa).sum(), [a, b]),
        "mul": (lambda: (T.mul(a, b) * wa).sum(), [a, b]),
        "matmul": (lambda: (T.matmul(a, m) * wm).sum(), [a, m]),
        "transpose": (lambda: (T.transpose(a) * wa.T).sum(), [a]),
        "reshape": (lambda: (T.reshape(a, (4, 3)) * wa.reshape(4, 3)).sum(), [a]),
        "concat": (lambda: (T.concat([a, b], axis=1) * np.concatenate([wa, wa[::-1]], axis=1)).sum(), [a, b]),
        "slice": (lambda: (T.slice_(a, (slice(None), slice(1, 3))) * wa[:, 1:3]).sum(), [a]),
        "embedding_lookup": (lambda: (T.embedding_lookup(tab, ids) * w3).sum(), [tab]),
        "mean": (lambda: (T.mean(a, axis=0) * wa[0]).sum(), [a]),
        "softmax": (lambda: (T.softmax(a) * wa).sum(), [a]),
        "log_softmax": (lambda: (T.log_softmax(a) * wa).sum(), [a]),
        "layer_norm": (lambda: (ln(a) * wa).sum(), [a, ln.gamma, ln.beta]),
        "gelu": (lambda: (T.gelu(a) * wa).sum(), [a]),
        "masked_fill": (lambda: (T.masked_fill(a, mask, 0.0) * wa).sum(), [a]),
        "bce_with_logits": (lambda: T.bce_with_logits(T.slice_(a, (slice(None), 0)), labels).sum(), [a]),
        "cross_entropy": (lambda: T.cross_entropy(a, target).sum(), [a]),
        "linear": (lambda: (lin(a) * wm).sum(), [a, lin.weight, lin.bias]),
        "attention": (lambda: (mha(x3, x3, x3, causal=True, key_padding=pad) * w3).sum(),
                      [x3] + list(mha.parameters().values())),
        "transformer_block": (lambda: (blk(x3, causal=True, key_padding=pad) * w3).sum(),
                              [x3] + list(blk.parameters().values())),
    }
    return {name: grad_check(f, params) for name, (f, params) in cases.items()}
