"""Dense float64 primitives with hand-written reverse-mode gradients.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every primitive
has a pure forward function; :class:`Tape` records the primitives used by a
forward pass so :meth:`Tape.backward` can replay their vector-Jacobian
products in reverse order.

Convolutions use the cross-correlation convention and accept either a single
``[C, H, W]`` tensor or a batch ``[B, C, H, W]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a [C,H,W] or [B,C,H,W] tensor, got dims {x.shape}")


def _check_conv_args(c_in: int, weights: np.ndarray, stride: int, pad: int) -> None:
    if weights.ndim != 4:
        raise ValueError(f"weights must be [C_out,C_in,kh,kw], got dims {weights.shape}")
    if weights.shape[1] != c_in:
        raise ValueError(
            f"input has {c_in} channels but weights expect {weights.shape[1]}"
        )
    kh, kw = weights.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ValueError(f"need stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    # [B,C,H',W',kh,kw] view over the padded input
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(input, weights, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2-D cross-correlation.

    Parameters
    ----------
    input : array, shape [C_in, H, W] or [B, C_in, H, W]
    weights : array, shape [C_out, C_in, kh, kw], kh and kw odd
    bias : array, shape [C_out], optional
    stride, pad : int
        Output size is ``(H + 2*pad - kh) // stride + 1`` per axis.
    """
    x, single = _batched(np.asarray(input, dtype=DTYPE))
    w = np.asarray(weights, dtype=DTYPE)
    _check_conv_args(x.shape[1], w, stride, pad)
    kh, kw = w.shape[2:]
    if conv_output_size(x.shape[2], kh, stride, pad) < 1 or conv_output_size(x.shape[3], kw, stride, pad) < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {x.shape[2:]} with pad {pad}")
    win = _windows(x, kh, kw, stride, pad)
    out = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
    if bias is not None:
        out = out + np.asarray(bias, dtype=DTYPE)[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_transpose(
    input, weights, bias=None, stride: int = 1, pad: int = 0, output_padding: int = 0
) -> np.ndarray:
    """Transposed convolution, the adjoint of :func:`conv2d` with the same weights.

    ``input`` has ``C_out`` channels (``weights.shape[0]``) and the result has
    ``C_in`` channels. Output size is ``(H - 1)*stride + kh - 2*pad + output_padding``;
    ``output_padding`` resolves the size ambiguity when the forward convolution
    dropped trailing rows/columns.
    """
    y, single = _batched(np.asarray(input, dtype=DTYPE))
    w = np.asarray(weights, dtype=DTYPE)
    if w.ndim != 4 or w.shape[0] != y.shape[1]:
        raise ValueError(
            f"input has {y.shape[1]} channels but weights {w.shape} expect {w.shape[0] if w.ndim == 4 else '?'}"
        )
    _check_conv_args(w.shape[1], w, stride, pad)
    if output_padding < 0 or (output_padding and output_padding >= stride):
        raise ValueError("output_padding must lie in [0, stride)")
    b, _, h, wd = y.shape
    kh, kw = w.shape[2:]
    full_h = (h - 1) * stride + kh + output_padding
    full_w = (wd - 1) * stride + kw + output_padding
    out = np.zeros((b, w.shape[1], full_h, full_w), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("bohw,oc->bchw", y, w[:, :, i, j], optimize=True)
            out[:, :, i : i + stride * h : stride, j : j + stride * wd : stride] += contrib
    out = out[:, :, pad : full_h - pad, pad : full_w - pad]
    if out.shape[2] < 1 or out.shape[3] < 1:
        raise ValueError("padding larger than the transposed output")
    if bias is not None:
        out = out + np.asarray(bias, dtype=DTYPE)[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_grads(
    input: np.ndarray, weights: np.ndarray, grad_out: np.ndarray, stride: int, pad: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d` w.r.t. input, weights and bias."""
    x, single = _batched(np.asarray(input, dtype=DTYPE))
    g, _ = _batched(np.asarray(grad_out, dtype=DTYPE))
    w = np.asarray(weights, dtype=DTYPE)
    kh, kw = w.shape[2:]
    win = _windows(x, kh, kw, stride, pad)
    grad_w = np.einsum("bohw,bchwij->ocij", g, win, optimize=True)
    grad_b = g.sum(axis=(0, 2, 3))
    # trailing rows/cols the forward never touched get zero gradient
    extra_h = x.shape[2] + 2 * pad - ((g.shape[2] - 1) * stride + kh)
    extra_w = x.shape[3] + 2 * pad - ((g.shape[3] - 1) * stride + kw)
    grad_x = conv2d_transpose(g, w, None, stride, 0)
    grad_x = np.pad(grad_x, ((0, 0), (0, 0), (0, extra_h), (0, extra_w)))
    if pad:
        grad_x = grad_x[:, :, pad:-pad, pad:-pad]
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def tanh(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=DTYPE))


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-D tensor, got dims {x.shape}")
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def softmax_rows_grad(s: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """VJP of :func:`softmax_rows` given its output ``s``."""
    return s * (grad_out - (grad_out * s).sum(axis=1, keepdims=True))


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def upsample_nearest(x, factor: int = 2) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    return x.repeat(factor, axis=-2).repeat(factor, axis=-1)


def upsample_nearest_grad(grad_out: np.ndarray, factor: int = 2) -> np.ndarray:
    *lead, h, w = grad_out.shape
    g = grad_out.reshape(*lead, h // factor, factor, w // factor, factor)
    return g.sum(axis=(-3, -1))


@dataclass
class Var:
    """A tensor value paired with its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray | None = None
    name: str = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


@dataclass
class _Node:
    out: Var
    inputs: tuple[Var, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Records primitive applications for a single forward/backward pass."""

    nodes: list[_Node] = field(default_factory=list)

    def record(self, value: np.ndarray, inputs: Sequence[Var], vjp) -> Var:
        out = Var(np.asarray(value, dtype=DTYPE))
        self.nodes.append(_Node(out, tuple(inputs), vjp))
        return out

    def backward(self, loss: Var) -> None:
        """Accumulate d(loss)/d(var) into ``var.grad`` for every recorded var."""
        if not self.nodes or all(n.out is not loss for n in self.nodes):
            raise RuntimeError("backward called before a forward pass produced this loss")
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        for node in self.nodes:
            node.out.grad = None
            for v in node.inputs:
                v.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.out.grad is None:
                continue
            for v, g in zip(node.inputs, node.vjp(node.out.grad)):
                if g is None:
                    continue
                v.grad = g if v.grad is None else v.grad + g
        for node in self.nodes:
            for v in node.inputs:
                if v.grad is None:
                    v.grad = np.zeros_like(v.value)

    # primitives -----------------------------------------------------------

    def conv2d(self, x: Var, w: Var, b: Var | None, stride: int = 1, pad: int = 0) -> Var:
        out = conv2d(x.value, w.value, None if b is None else b.value, stride, pad)

        def vjp(g):
            gx, gw, gb = conv2d_grads(x.value, w.value, g, stride, pad)
            return (gx, gw) if b is None else (gx, gw, gb)

        return self.record(out, (x, w) if b is None else (x, w, b), vjp)

    def relu(self, x: Var) -> Var:
        mask = x.value > 0
        return self.record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))

    def tanh(self, x: Var) -> Var:
        t = np.tanh(x.value)
        return self.record(t, (x,), lambda g: (g * (1.0 - t * t),))

    def softmax_rows(self, x: Var) -> Var:
        s = softmax_rows(x.value)
        return self.record(s, (x,), lambda g: (softmax_rows_grad(s, g),))

    def upsample_nearest(self, x: Var, factor: int = 2) -> Var:
        out = upsample_nearest(x.value, factor)
        return self.record(out, (x,), lambda g: (upsample_nearest_grad(g, factor),))

    def mse_loss(self, pred: Var, target: np.ndarray) -> Var:
        target = np.asarray(target, dtype=DTYPE)
        diff = pred.value - target
        n = diff.size
        return self.record(np.array(mse_loss(pred.value, target)), (pred,), lambda g: (g * 2.0 * diff / n,))


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    velocity: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Classical momentum SGD: ``v <- momentum*v + g``, ``p <- p - lr*v``.

    Returns new parameter and velocity dicts; the inputs are not modified.
    """
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    velocity = velocity or {}
    new_p, new_v = {}, {}
    for name, p in params.items():
        v = grads[name] if name not in velocity else momentum * velocity[name] + grads[name]
        new_v[name] = v
        new_p[name] = p - lr * v
    return new_p, new_v
