"""Compact self-attention transformation head and the pooled embedding.

The head maps backbone features ``f`` of shape ``[C_in, H, W]`` to
``[C_out, H, W]``::

    Q, K, V = tanh(conv1x1(f; w_s) + b_s)   for s in (q, k, v), as [C_out, N]
    A = softmax_rows(Q.T @ K)               # [N, N], row i attends over all j
    out = V @ A.T

with ``N = H*W`` positions in row-major order. Everything here also accepts a
leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .tensor import DTYPE, Tape, Var

FULL_SCALE_CONFIG = (1024, 512)
TOY_CONFIG = (32, 16)
_NAMES = ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v")


@dataclass
class AttentionParams:
    """Weights ``[C_out, C_in, 1, 1]`` and biases ``[C_out]`` for query, key, value."""

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray

    @property
    def c_in(self) -> int:
        return self.w_q.shape[1]

    @property
    def c_out(self) -> int:
        return self.w_q.shape[0]

    def as_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray], prefix: str = "") -> "AttentionParams":
        return cls(**{n: np.asarray(d[prefix + n], dtype=DTYPE) for n in _NAMES})

    def num_parameters(self) -> int:
        return sum(getattr(self, n).size for n in _NAMES)


def init_attention(c_in: int, c_out: int, seed: int = 0) -> AttentionParams:
    """Weights uniform in ``+-sqrt(1/c_in)``, biases zero."""
    if c_out >= c_in:
        raise ValueError(f"the head compresses channels; need c_out < c_in, got {c_out} >= {c_in}")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(1.0 / c_in)
    ws = [rng.uniform(-bound, bound, size=(c_out, c_in, 1, 1)) for _ in range(3)]
    zeros = [np.zeros(c_out, dtype=DTYPE) for _ in range(3)]
    return AttentionParams(ws[0], zeros[0], ws[1], zeros[1], ws[2], zeros[2])


def parameter_count(c_in: int, c_out: int) -> int:
    return 3 * (c_in * c_out + c_out)


@dataclass
class _Cache:
    x: np.ndarray  # [B, C_in, N]
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray  # [B, C_out, N]
    a: np.ndarray  # [B, N, N]
    shape: tuple


def _project(x, w, b):
    return np.tanh(np.einsum("oc,bcn->bon", w[:, :, 0, 0], x) + b[None, :, None])


def _forward(f: np.ndarray, p: AttentionParams):
    f = np.asarray(f, dtype=DTYPE)
    single = f.ndim == 3
    if single:
        f = f[None]
    if f.ndim != 4:
        raise ValueError(f"feature map must be [C,H,W] or [B,C,H,W], got dims {f.shape}")
    b, c, h, w = f.shape
    if c != p.c_in:
        raise ValueError(f"feature map has {c} channels, attention head expects {p.c_in}")
    x = f.reshape(b, c, h * w)
    q = _project(x, p.w_q, p.b_q)
    k = _project(x, p.w_k, p.b_k)
    v = _project(x, p.w_v, p.b_v)
    s = np.einsum("bci,bcj->bij", q, k)
    s = np.exp(s - s.max(axis=2, keepdims=True))
    a = s / s.sum(axis=2, keepdims=True)
    out = np.einsum("bcj,bij->bci", v, a).reshape(b, p.c_out, h, w)
    return (out[0] if single else out), _Cache(x, q, k, v, a, (single, b, c, h, w))


def attention_forward(f, p: AttentionParams) -> np.ndarray:
    return _forward(f, p)[0]


def attention_weights(f, p: AttentionParams) -> np.ndarray:
    """The row-stochastic ``[N, N]`` attention matrix (batched if ``f`` is)."""
    _, cache = _forward(f, p)
    return cache.a[0] if cache.shape[0] else cache.a


def _backward(cache: _Cache, p: AttentionParams, upstream):
    single, b, c, h, w = cache.shape
    g = np.asarray(upstream, dtype=DTYPE).reshape(b, p.c_out, h * w)
    q, k, v, a, x = cache.q, cache.k, cache.v, cache.a, cache.x
    d_v = np.einsum("bci,bij->bcj", g, a)
    d_a = np.einsum("bci,bcj->bij", g, v)
    d_s = a * (d_a - (d_a * a).sum(axis=2, keepdims=True))
    d_q = np.einsum("bij,bcj->bci", d_s, k)
    d_k = np.einsum("bci,bij->bcj", q, d_s)
    grads = {}
    d_x = np.zeros_like(x)
    for name, act, d_act in (("q", q, d_q), ("k", k, d_k), ("v", v, d_v)):
        d_z = d_act * (1.0 - act * act)
        wmat = getattr(p, "w_" + name)[:, :, 0, 0]
        grads["w_" + name] = np.einsum("bon,bcn->oc", d_z, x)[:, :, None, None]
        grads["b_" + name] = d_z.sum(axis=(0, 2))
        d_x += np.einsum("oc,bon->bcn", wmat, d_z)
    d_f = d_x.reshape(b, c, h, w)
    return (d_f[0] if single else d_f), grads


def attention_backward(f, p: AttentionParams, upstream) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients of ``<attention_forward(f, p), upstream>``.

    Returns ``(grad_f, grads)`` where ``grads`` is keyed like the
    :class:`AttentionParams` fields.
    """
    _, cache = _forward(f, p)
    return _backward(cache, p, upstream)


def attention_op(tape: Tape, f: Var, params: dict[str, Var]) -> Var:
    """Record the attention head on ``tape``; ``params`` maps field names to vars."""
    p = AttentionParams(**{n: params[n].value for n in _NAMES})
    out, cache = _forward(f.value, p)

    def vjp(g):
        d_f, grads = _backward(cache, p, g)
        return (d_f, *(grads[n] for n in _NAMES))

    return tape.record(out, (f, *(params[n] for n in _NAMES)), vjp)


def pool_embed(f) -> np.ndarray:
    """Global average pool over positions, then L2 normalize; zero stays zero."""
    f = np.asarray(f, dtype=DTYPE)
    m = f.mean(axis=(-2, -1))
    norm = np.linalg.norm(m, axis=-1, keepdims=True)
    return np.divide(m, norm, out=np.zeros_like(m), where=norm > 0)


def pool_embed_op(tape: Tape, f: Var) -> Var:
    m = f.value.mean(axis=(-2, -1))
    norm = np.linalg.norm(m, axis=-1, keepdims=True)
    e = np.divide(m, norm, out=np.zeros_like(m), where=norm > 0)
    n_pos = f.value.shape[-2] * f.value.shape[-1]

    def vjp(g):
        d_m = np.divide(g - e * (g * e).sum(axis=-1, keepdims=True), norm,
                        out=np.zeros_like(g), where=norm > 0)
        return (np.broadcast_to(d_m[..., None, None] / n_pos, f.value.shape).copy(),)

    return tape.record(e, (f,), vjp)
