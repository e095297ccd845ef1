"""Minimal numpy tensor core with reverse-mode differentiation.

A :class:`Variable` wraps an ``np.ndarray``. Ops build a record of parent
links plus a closure mapping the output gradient to parent gradients; the
record is only kept when some input has ``requires_grad``. Training runs in
float32, gradient checks in float64.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphError, NonFiniteError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable recording of the computation graph (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Variable:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, value, requires_grad: bool = False, dtype=None):
        arr = np.asarray(value, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32 if dtype is None else dtype)
        if any(s == 0 for s in arr.shape):
            raise ShapeError(f"zero extents are not allowed: shape {arr.shape}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Variable, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Variable(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_variable(x, dtype=None) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(np.asarray(x, dtype=dtype))


def _make(value: np.ndarray, parents: Sequence[Variable], backward, op: str) -> Variable:
    _check_finite(value, op)
    out = Variable.__new__(Variable)
    out.value = value
    out.grad = None
    out._op = op
    out._released = False
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b, a.dtype if isinstance(a, Variable) else None)
    try:
        out = a.value + b.value.astype(a.dtype, copy=False)
    except ValueError as e:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from e
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a, b) -> Variable:
    a = as_variable(a)
    b = as_variable(b, a.dtype)
    bv = b.value.astype(a.dtype, copy=False)
    try:
        out = a.value * bv
    except ValueError as e:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from e
    return _make(
        out, (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * a.value, b.shape)),
        "mul",
    )


def apply_activation(x: Variable, kind: str) -> Variable:
    """Elementwise ``relu`` or ``sigmoid``. relu'(0) is taken as 0."""
    if kind == "relu":
        mask = x.value > 0
        return _make(np.where(mask, x.value, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")
    if kind == "sigmoid":
        # split by sign so exp never overflows
        v = x.value
        e = np.exp(-np.abs(v))
        s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
        # keep the open interval (0, 1) even where the float result saturates
        fi = np.finfo(x.dtype)
        s = np.clip(s, fi.tiny, np.nextafter(x.dtype.type(1), x.dtype.type(0)))
        return _make(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")
    raise ValueError(f"unknown activation {kind!r}")


def relu(x: Variable) -> Variable:
    return apply_activation(x, "relu")


def sigmoid(x: Variable) -> Variable:
    return apply_activation(x, "sigmoid")


# ------------------------------------------------------------------ structure

def reshape(x: Variable, shape) -> Variable:
    try:
        out = x.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from e
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Variable, axes=None) -> Variable:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(x.value.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def sum_(x: Variable, axis=None, keepdims=False) -> Variable:
    out = np.asarray(x.value.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(out, (x,), back, "sum")


def mean(x: Variable, axis=None, keepdims=False) -> Variable:
    n = x.value.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


# -------------------------------------------------------------------- linear

def matmul(a: Variable, b: Variable) -> Variable:
    """Matrix product. Accepts stacked operands with matching or broadcast
    leading dimensions (``[..., M, K] @ [..., K, N]``)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError as e:
        raise ShapeError(f"matmul cannot broadcast {a.shape} @ {b.shape}") from e

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), back, "matmul")


def linear(x: Variable, weight: Variable, bias: Variable | None = None) -> Variable:
    """``x @ weight + bias`` with weight stored as ``[in, out]``."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def conv2d(x: Variable, weight: Variable, bias: Variable | None = None,
           stride: int = 1, pad: int = 0) -> Variable:
    """2D cross-correlation, NCHW input and ``[Cout, Cin, k, k]`` weight,
    zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if kh != kw:
        raise ShapeError(f"conv2d needs a square kernel, weight {weight.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride {stride} / pad {pad}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {weight.shape} larger than padded input {x.shape} (pad {pad})")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    k = kh
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: [N, Cin, Ho, Wo, k, k]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * k * k)
    wmat = weight.value.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.value
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (gm.T @ cols).reshape(weight.shape)
        gcols = (gm @ wmat).reshape(n, ho, wo, cin, k, k)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, back, "conv2d")


# ------------------------------------------------------------- normalization

def softmax(x: Variable, axis: int = -1) -> Variable:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def normalize(x: Variable, mode: str | tuple, gamma: Variable, beta: Variable,
              eps: float = 1e-5) -> Variable:
    """Standardize then scale/shift.

    ``mode="layer"`` normalizes over the last axis (gamma/beta shaped like
    it). ``mode=("group", g)`` takes NCHW input and normalizes each of ``g``
    channel groups over (channels-in-group, H, W); gamma/beta are per channel.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if mode == "layer":
        if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
            raise ShapeError(f"layer norm gamma/beta {gamma.shape}/{beta.shape} vs input {x.shape}")
        xg = x.value
        axes = (-1,)
        affine_shape = (x.shape[-1],)
    else:
        kind, groups = mode
        if kind != "group":
            raise ValueError(f"unknown normalization mode {mode!r}")
        if x.ndim != 4:
            raise ShapeError(f"group norm expects NCHW input, got {x.shape}")
        n, c, h, w = x.shape
        if groups < 1 or c % groups:
            raise ShapeError(f"group count {groups} does not divide channel count {c}")
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ShapeError(f"group norm gamma/beta {gamma.shape}/{beta.shape} vs channels {c}")
        xg = x.value.reshape(n, groups, c // groups, h, w)
        axes = (2, 3, 4)
        affine_shape = (1, c, 1, 1)

    mu = xg.mean(axis=axes, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).reshape(x.shape)
    gv = gamma.value.reshape(affine_shape)
    out = xhat * gv + beta.value.reshape(affine_shape)

    def back(g):
        red = tuple(range(g.ndim - 1)) if mode == "layer" else (0, 2, 3)
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        dxhat = (g * gv).reshape(xg.shape)
        xh = xhat.reshape(xg.shape)
        dx = rstd * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                     - xh * (dxhat * xh).mean(axis=axes, keepdims=True))
        return dx.reshape(x.shape), ggamma, gbeta

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), back, "normalize")


def global_avg_pool(x: Variable) -> Variable:
    """[N, C, H, W] -> [N, C] spatial mean."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.value.mean(axis=(2, 3))
    scale = 1.0 / (h * w)

    def back(g):
        return (np.broadcast_to((g * scale)[:, :, None, None], x.shape).astype(x.dtype),)

    return _make(out, (x,), back, "global_avg_pool")


def cross_entropy(logits: Variable, labels) -> Variable:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy logits {logits.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"labels out of range [0, {logits.shape[1]})")
    n = logits.shape[0]
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), labels].mean()
    p = np.exp(logp)

    def back(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1
        return (d * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), back, "cross_entropy")


# ------------------------------------------------------------------ backward

def _toposort(root: Variable) -> list[Variable]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Variable) -> None:
    """Reverse-mode accumulation from a scalar ``loss``.

    Leaf grads accumulate into ``.grad``; the graph is released afterwards,
    so a second call on the same loss raises :class:`GraphError`.
    """
    if loss.value.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphError("backward already ran on this graph; recompute the forward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any variable requiring grad")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        _check_finite(g, f"gradient of {node._op}")
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
        node._released = True
    loss._released = True


def zero_grad(params: Iterable[Variable]) -> None:
    for p in params:
        p.grad = None


def grad_check(forward: Callable[[], Variable], params: Sequence[Variable],
               step: float = 1e-5) -> float:
    """Largest relative difference between backprop gradients and central
    differences over every scalar of ``params``.

    Relative error is ``|ga - gn| / max(1, |ga|, |gn|)``. Requires float64.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    params = list(params)
    if not params:
        return 0.0
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")
    zero_grad(params)
    loss = forward()
    if loss.dtype != np.float64:
        raise TypeError("grad_check requires a float64 forward pass")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad.copy()
        p.value = np.ascontiguousarray(p.value)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                fp = float(forward().value)
            flat[i] = orig - step
            with no_grad():
                fm = float(forward().value)
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            if not np.isfinite(num):
                raise NonFiniteError("non-finite finite-difference estimate")
            ga = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(ga - num) / max(1.0, abs(ga), abs(num)))
    return worst
