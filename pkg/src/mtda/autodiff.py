"""Dense-tensor reverse-mode automatic differentiation.

A tape of `Tensor` nodes built eagerly by the op functions below. The op set
is deliberately small: dense layers, 3x3 stride-1 conv, relu, 2x2 average
pooling, global average pooling, softmax, (weighted) softmax cross-entropy,
MSE, elementwise arithmetic on scalars, and a gradient-reversal node whose
backward pass multiplies the incoming adjoint by ``-lambda``.

All values are numpy arrays; float64 is used in tests (finite-difference
tolerances require it), float32 is fine for training. Everything is
single-threaded and deterministic: identical graph + values give bit-identical
gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mtda.errors import ContractError, NumericError, ShapeError


class Tensor:
    """One node of the computation graph.

    `value` is a numpy array (scalars are 0-d arrays). Leaf tensors carry
    parameters or inputs; interior nodes remember their parents and a closure
    that scatters the node's adjoint back to them.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=""):
        self.value = np.asarray(value)
        if not np.all(np.isfinite(self.value)):
            raise NumericError(f"non-finite values in tensor {name or '<anon>'}")
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.value.shape})"

    # Scalar arithmetic, enough to combine losses (e.g. L_y - lambda * L_d).
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward, name=""):
    t = Tensor(value, requires_grad=any(p.requires_grad for p in parents), name=name)
    if t.requires_grad:
        t._parents = tuple(parents)
        t._backward = backward
    return t


def _accum(parent, delta):
    if not parent.requires_grad:
        return
    delta = np.asarray(delta)
    if parent.grad is None:
        parent.grad = delta.astype(parent.value.dtype, copy=True)
    else:
        parent.grad += delta


# ---------------------------------------------------------------------------
# ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("add operand shapes differ", a.shape, b.shape)
    out_val = a.value + b.value

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(out_val, (a, b), backward, name="add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("sub operand shapes differ", a.shape, b.shape)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.value - b.value, (a, b), backward, name="sub")


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        _accum(a, c * g)

    return _node(c * a.value, (a,), backward, name="scale")


def dense(x, w, b):
    """x[n,a] @ w[a,b] + bias[b]."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError("dense inner dims disagree", x.shape, w.shape)
    if b.value.shape != (w.shape[1],):
        raise ShapeError("dense bias width mismatch", b.shape, w.shape)
    out_val = x.value @ w.value + b.value

    def backward(g):
        _accum(x, g @ w.value.T)
        _accum(w, x.value.T @ g)
        _accum(b, g.sum(axis=0))

    return _node(out_val, (x, w, b), backward, name="dense")


def _conv_forward(x, k):
    # x: (n,c,h,w), k: (f,c,3,3); stride 1, zero pad 1.
    n, c, h, w = x.shape
    f = k.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n,c,h,w,3,3)
    out = np.einsum("nchwpq,fcpq->nfhw", win, k, optimize=True)
    return out, win


def conv2d(x, k):
    """3x3 cross-correlation, stride 1, zero padding 1; same spatial dims."""
    x, k = _as_tensor(x), _as_tensor(k)
    if x.value.ndim != 4 or k.value.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and kernel", x.shape, k.shape)
    if k.shape[2:] != (3, 3):
        raise ShapeError("conv2d kernel must be 3x3", k.shape)
    if x.shape[1] != k.shape[1]:
        raise ShapeError("conv2d channel mismatch", x.shape, k.shape)
    out_val, win = _conv_forward(x.value, k.value)

    def backward(g):
        # dK from the cached input windows; dx is a conv with the kernel
        # rotated 180 degrees and in/out channels swapped.
        _accum(k, np.einsum("nchwpq,nfhw->fcpq", win, g, optimize=True))
        k_back = k.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx, _ = _conv_forward(g, k_back)
        _accum(x, dx)

    return _node(out_val, (x, k), backward, name="conv2d")


def relu(x):
    x = _as_tensor(x)
    mask = x.value > 0

    def backward(g):
        _accum(x, g * mask)

    return _node(np.where(mask, x.value, 0.0), (x,), backward, name="relu")


def avg_pool2(x):
    """2x2 average pooling, stride 2; odd trailing rows/cols are dropped."""
    x = _as_tensor(x)
    if x.value.ndim != 4:
        raise ShapeError("avg_pool2 expects rank-4 input", x.shape)
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x.value[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    out_val = v.mean(axis=(3, 5))

    def backward(g):
        dx = np.zeros_like(x.value)
        up = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        dx[:, :, : 2 * h2, : 2 * w2] = up
        _accum(x, dx)

    return _node(out_val, (x,), backward, name="avg_pool2")


def global_avg_pool(x):
    """(n,c,h,w) -> (n,c) spatial mean."""
    x = _as_tensor(x)
    if x.value.ndim != 4:
        raise ShapeError("global_avg_pool expects rank-4 input", x.shape)
    n, c, h, w = x.shape
    out_val = x.value.mean(axis=(2, 3))

    def backward(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.value.shape))

    return _node(out_val, (x,), backward, name="global_avg_pool")


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax(x):
    x = _as_tensor(x)
    if x.value.ndim != 2:
        raise ShapeError("softmax expects rank-2 input", x.shape)
    s = _softmax(x.value)

    def backward(g):
        _accum(x, s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _node(s, (x,), backward, name="softmax")


def _check_onehot(onehot):
    v = np.asarray(onehot)
    if v.ndim != 2:
        raise ContractError("one-hot matrix must be rank 2")
    ones = np.isclose(v, 1.0)
    if not (np.all(np.isclose(v.sum(axis=1), 1.0)) and np.all(ones.sum(axis=1) == 1)):
        raise ContractError("rows must be one-hot (single 1, rest 0)")
    if not np.all(np.isclose(v, 0.0) | ones):
        raise ContractError("rows must be one-hot (single 1, rest 0)")
    return v


def softmax_cross_entropy(logits, onehot, weights):
    """sum_i weights[i] * (-log softmax(logits)[i, label_i]).

    Gradient flows to `logits` only; `onehot` and `weights` are data.
    """
    logits = _as_tensor(logits)
    y = _check_onehot(onehot.value if isinstance(onehot, Tensor) else onehot)
    w = np.asarray(weights.value if isinstance(weights, Tensor) else weights, dtype=float)
    if logits.value.ndim != 2 or y.shape != logits.value.shape:
        raise ShapeError("logits/onehot shape mismatch", logits.shape, y.shape)
    if w.shape != (logits.shape[0],):
        raise ShapeError("weights must be one per row", w.shape, logits.shape)
    if np.any(w < 0):
        raise ContractError("weights must be non-negative")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    per_row = -(y * log_probs).sum(axis=1)
    out_val = float((w * per_row).sum())
    probs = np.exp(log_probs)

    def backward(g):
        _accum(logits, g * w[:, None] * (probs - y))

    return _node(out_val, (logits,), backward, name="softmax_cross_entropy")


def mse_loss(pred, target):
    """Sum of squared differences per sample; rank>=2 inputs mean over axis 0."""
    pred = _as_tensor(pred)
    t = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=float)
    if pred.value.shape != t.shape:
        raise ShapeError("mse operand shapes differ", pred.shape, t.shape)
    diff = pred.value - t
    if diff.ndim <= 1:
        out_val = float((diff**2).sum())
        coeff = 2.0
    else:
        n = diff.shape[0]
        out_val = float((diff**2).reshape(n, -1).sum(axis=1).mean())
        coeff = 2.0 / n

    def backward(g):
        _accum(pred, g * coeff * diff)

    return _node(out_val, (pred,), backward, name="mse_loss")


def gradient_reversal(x, lam):
    """Identity forward; backward multiplies the incoming adjoint by -lam."""
    x = _as_tensor(x)
    lam = float(lam)
    if lam < 0:
        raise ContractError("gradient_reversal lambda must be >= 0")

    def backward(g):
        _accum(x, -lam * g)

    return _node(x.value, (x,), backward, name="gradient_reversal")


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Reverse-mode sweep from a scalar loss; fills `.grad` on reachable leaves."""
    if np.asarray(loss.value).ndim != 0:
        raise ContractError("backprop root must be scalar")

    order = []
    seen = set()
    stack = [(loss, False)]
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
            if p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        if not np.all(np.isfinite(node.grad)):
            raise NumericError(f"non-finite adjoint at node {node.name!r}")
        node._backward(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
