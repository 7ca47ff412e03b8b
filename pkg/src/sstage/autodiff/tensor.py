"""Dense tensors with tape-based reverse-mode differentiation.

Every operation records its inputs and a closure mapping the output gradient
to input gradients. ``Tensor.backward`` walks the recorded graph in reverse
topological order. Graphs are rebuilt on each forward pass.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """N-dimensional real array with an accumulated gradient buffer.

    ``values`` is a C-contiguous numpy array; ``grad`` has the same shape and
    is zero until a backward pass reaches this tensor.
    """

    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False, dtype=None,
                 _parents: Sequence["Tensor"] = (), _backward: Optional[Callable] = None):
        if dtype is None:
            dtype = values.dtype if isinstance(values, np.ndarray) and values.dtype.kind == "f" else DEFAULT_DTYPE
        self.values = np.ascontiguousarray(np.asarray(values, dtype=dtype))
        self.grad = np.zeros_like(self.values)
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward

    # -- basic properties --------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- reverse mode ------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable tensor."""
        if self.size != 1:
            raise ValueError(f"backward() needs a single-element loss, got shape {list(self.shape)}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.values)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad += g.astype(node.dtype, copy=False)
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None):
        return tensor_sum(self, axis)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _result(values, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=needs, dtype=values.dtype,
                  _parents=parents if needs else (), _backward=backward if needs else None)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast") from None


# -- elementwise -----------------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a, getattr(b, "dtype", None))
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "add")
    out = (a.values + b.values).astype(a.dtype, copy=False)
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = as_tensor(a, getattr(b, "dtype", None))
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "sub")
    out = (a.values - b.values).astype(a.dtype, copy=False)
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a, getattr(b, "dtype", None))
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "mul")
    out = (a.values * b.values).astype(a.dtype, copy=False)

    def backward(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _result(out, (a, b), backward)


def log(x: Tensor, clamp_min: float = 0.0) -> Tensor:
    """Natural log; inputs below ``clamp_min`` are clamped and get zero gradient."""
    inside = x.values >= clamp_min if clamp_min > 0 else np.ones(x.shape, dtype=bool)
    safe = np.maximum(x.values, clamp_min) if clamp_min > 0 else x.values
    out = np.log(safe).astype(x.dtype)
    return _result(out, (x,), lambda g: (np.where(inside, g / safe, 0.0),))


# -- linear algebra / shape ------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise DimensionError("matmul: operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: contraction axis mismatch, {a.shape[-1]} (axis -1 of left) vs {b.shape[-2]} (axis -2 of right)")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch axes {list(a.shape[:-2])} and {list(b.shape[:-2])} do not broadcast") from None
    out = np.matmul(a.values.astype(np.float64), b.values.astype(np.float64)).astype(a.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        ga = np.matmul(g64, np.swapaxes(b.values, -1, -2).astype(np.float64))
        gb = np.matmul(np.swapaxes(a.values, -1, -2).astype(np.float64), g64)
        return _unbroadcast(ga, a.shape).astype(a.dtype), _unbroadcast(gb, b.shape).astype(b.dtype)

    return _result(out, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {list(x.shape)} ({x.size} elements) as {list(shape)}")
    src = x.shape
    return _result(x.values.reshape(shape), (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.values.ndim)):
        raise DimensionError(f"permute: {list(axes)} is not a permutation of {x.values.ndim} axes")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.values.transpose(axes))
    return _result(out, (x,), lambda g: (g.transpose(inverse),))


def tensor_sum(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.values.sum(axis=axis, dtype=np.float64)).astype(x.dtype)
    src = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), src),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(src) for a in axes)
        return (np.broadcast_to(np.expand_dims(g, axes), src),)

    return _result(out, (x,), backward)


def cumsum(x: Tensor, axis: int) -> Tensor:
    out = np.cumsum(x.values, axis=axis, dtype=np.float64).astype(x.dtype)

    def backward(g):
        rev = np.flip(g, axis=axis)
        return (np.flip(np.cumsum(rev, axis=axis, dtype=np.float64), axis=axis),)

    return _result(out, (x,), backward)


def l2_norm(x: Tensor, axis=None) -> Tensor:
    """Euclidean norm over ``axis``; the gradient at a zero vector is taken as 0."""
    v = x.values.astype(np.float64)
    n = np.sqrt(np.sum(v * v, axis=axis, keepdims=True))
    out = (n if axis is not None else n.reshape(())).astype(x.dtype)
    if axis is not None:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        gk = g.reshape(n.shape) if axis is not None else g
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(n > 0, gk / np.where(n > 0, n, 1.0), 0.0)
        return (v * scale,)

    return _result(out, (x,), backward)


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.values.ndim <= axis < x.values.ndim:
        raise DimensionError(f"softmax: axis {axis} out of range for shape {list(x.shape)}")
    v = x.values.astype(np.float64)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        g64 = g.astype(np.float64)
        return (s * (g64 - (g64 * s).sum(axis=axis, keepdims=True)),)

    return _result(s.astype(x.dtype), (x,), backward)


# -- layers ----------------------------------------------------------------
def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """x where x >= 0, alpha * x elsewhere; ``alpha`` holds one shared slope."""
    if alpha.size != 1:
        raise DimensionError(f"prelu: expected a single shared slope, got shape {list(alpha.shape)}")
    a = alpha.values.reshape(()).astype(x.dtype)
    pos = x.values >= 0
    out = np.where(pos, x.values, a * x.values).astype(x.dtype)

    def backward(g):
        gx = np.where(pos, g, a * g)
        ga = np.sum(np.where(pos, 0.0, g * x.values), dtype=np.float64)
        return gx, np.full(alpha.shape, ga)

    return _result(out, (x, alpha), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _result(x.values * keep, (x,), lambda g: (g * keep,))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding=(0, 0)) -> Tensor:
    """Cross-correlation with weights laid out [Cin, Cout, kh, kw]."""
    from . import kernels

    if x.values.ndim != 4:
        raise DimensionError(f"conv2d: input must be [B,Cin,H,W], got {list(x.shape)}")
    if weight.values.ndim != 4:
        raise DimensionError(f"conv2d: weight must be [Cin,Cout,kh,kw], got {list(weight.shape)}")
    B, Cin, H, W = x.shape
    wc, Cout, kh, kw = weight.shape
    ph, pw = padding
    if wc != Cin:
        raise DimensionError(f"conv2d: input channel axis (1) has {Cin}, weight axis 0 expects {wc}")
    if bias.shape != (Cout,):
        raise DimensionError(f"conv2d: bias must have shape [{Cout}], got {list(bias.shape)}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} must be odd along both axes")
    if H + 2 * ph - kh + 1 < 1:
        raise DimensionError(f"conv2d: height axis (2) of size {H} too small for kernel {kh} with padding {ph}")
    if W + 2 * pw - kw + 1 < 1:
        raise DimensionError(f"conv2d: width axis (3) of size {W} too small for kernel {kw} with padding {pw}")
    wv = weight.values.astype(x.dtype, copy=False)
    bv = bias.values.astype(x.dtype, copy=False)
    out = kernels.conv2d_forward(x.values, wv, bv, ph, pw)

    def backward(g):
        gx, gw, gb = kernels.conv2d_backward(g.astype(x.dtype), x.values, wv, ph, pw)
        return gx, gw, gb

    return _result(out, (x, weight, bias), backward)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, eps: float = 1e-5,
                 momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over (B, H, W).

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place with the same (biased) variance the
    normalization used, so eval mode reproduces training-mode scaling once
    the statistics settle. In eval mode the running statistics are used.
    """
    if x.values.ndim != 4:
        raise DimensionError(f"batch_norm2d: input must be [B,C,H,W], got {list(x.shape)}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm2d: channel axis (1) has {C}, gamma/beta have {list(gamma.shape)}/{list(beta.shape)}")
    v = x.values.astype(np.float64)
    gm = gamma.values.astype(np.float64)[None, :, None, None]
    bt = beta.values.astype(np.float64)[None, :, None, None]
    if training:
        mean = v.mean(axis=(0, 2, 3))
        var = v.var(axis=(0, 2, 3))
        # statistics in float64, stored at the buffers' own precision
        running_mean[...] = (1.0 - momentum) * running_mean.astype(np.float64) + momentum * mean
        running_var[...] = (1.0 - momentum) * running_var.astype(np.float64) + momentum * var
    else:
        mean = np.asarray(running_mean, dtype=np.float64)
        var = np.asarray(running_var, dtype=np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mean[None, :, None, None]) * inv[None, :, None, None]
    out = (gm * xhat + bt).astype(x.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        ggamma = (g64 * xhat).sum(axis=(0, 2, 3))
        gbeta = g64.sum(axis=(0, 2, 3))
        gxhat = g64 * gm
        if training:
            m = v.size // C
            gx = (inv[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv[None, :, None, None]
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)
