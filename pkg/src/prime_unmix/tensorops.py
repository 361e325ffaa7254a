"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap float64 numpy arrays and double as tape nodes: each non-leaf
carries its parents and a closure that pushes the incoming gradient to them.
The op set is exactly what the prism layers and the 4-qubit gate simulation
need (stride-1 convolutions, 2x2 max pooling, bilinear upsampling, slicing,
column gathers, trig) -- no general broadcasting machinery beyond that.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "forward_op",
    "backward",
    "AdamState",
    "adam_step",
    "add", "sub", "mul", "scale", "neg", "matmul", "reshape", "transpose",
    "concat", "gather", "slice_", "flip2", "tsum", "square", "abs_",
    "maximum", "relu", "leaky_relu", "cos", "sin",
    "conv2d", "conv2d_transpose", "maxpool2", "upsample_bilinear",
]


class Tensor:
    """A float64 array plus the tape bookkeeping for reverse mode.

    `op` is the kind tag, `parents` the input nodes, `data` the cached
    forward value and `grad` the accumulator (allocated lazily, zeroed at
    the start of every backward pass).
    """

    __slots__ = ("data", "grad", "op", "parents", "_grad_fn")

    def __init__(self, data, op="leaf", parents=(), grad_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        # finiteness is checked where data enters the graph; ops on finite
        # inputs are trusted, and the training loop re-checks the loss
        if op == "leaf" and not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite values in leaf tensor")
        self.grad = None
        self.op = op
        self.parents = parents
        self._grad_fn = grad_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # operator sugar used throughout the prism code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(root: Tensor):
    """Reverse traversal from a scalar root; fills `grad` on every node.

    Gradient accumulators of all reachable nodes are re-zeroed first, so
    repeated calls give identical results.
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    order = []
    seen = set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = np.zeros_like(node.data)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._grad_fn is not None:
            node._grad_fn(node.grad)


def _reduce_broadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    nd = grad.ndim - len(shape)
    if nd > 0:
        grad = grad.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, "add", (a, b))

    def grad_fn(g):
        a.grad += _reduce_broadcast(g, a.data.shape)
        b.grad += _reduce_broadcast(g, b.data.shape)
    out._grad_fn = grad_fn
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data, "sub", (a, b))

    def grad_fn(g):
        a.grad += _reduce_broadcast(g, a.data.shape)
        b.grad -= _reduce_broadcast(g, b.data.shape)
    out._grad_fn = grad_fn
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, "mul", (a, b))

    def grad_fn(g):
        a.grad += _reduce_broadcast(g * b.data, a.data.shape)
        b.grad += _reduce_broadcast(g * a.data, b.data.shape)
    out._grad_fn = grad_fn
    return out


def scale(a, c: float):
    out = Tensor(a.data * c, "scale", (a,))

    def grad_fn(g):
        a.grad += g * c
    out._grad_fn = grad_fn
    return out


def neg(a):
    return scale(a, -1.0)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, "matmul", (a, b))

    def grad_fn(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g
    out._grad_fn = grad_fn
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), "reshape", (a,))

    def grad_fn(g):
        a.grad += g.reshape(a.data.shape)
    out._grad_fn = grad_fn
    return out


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes), "transpose", (a,))

    def grad_fn(g):
        a.grad += np.transpose(g, inv)
    out._grad_fn = grad_fn
    return out


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 "concat", tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def grad_fn(g):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            t.grad += g[tuple(sl)]
            start += n
    out._grad_fn = grad_fn
    return out


def gather(a, idx, axis):
    """Select indices along an axis; backward scatter-adds (duplicates ok)."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(np.take(a.data, idx, axis=axis), "gather", (a,))

    def grad_fn(g):
        sl = [slice(None)] * a.data.ndim
        sl[axis] = idx
        np.add.at(a.grad, tuple(sl), g)
    out._grad_fn = grad_fn
    return out


def slice_(a, slices):
    slices = tuple(slices)
    out = Tensor(a.data[slices], "slice", (a,))

    def grad_fn(g):
        a.grad[slices] += g
    out._grad_fn = grad_fn
    return out


def flip2(a):
    """Reverse the last two axes (kernel flip for transposed convolution)."""
    out = Tensor(a.data[..., ::-1, ::-1], "flip2", (a,))

    def grad_fn(g):
        a.grad += g[..., ::-1, ::-1]
    out._grad_fn = grad_fn
    return out


def tsum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,))

    def grad_fn(g):
        if axis is None:
            a.grad += g
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.data.shape)
    out._grad_fn = grad_fn
    return out


def square(a):
    out = Tensor(a.data * a.data, "square", (a,))

    def grad_fn(g):
        a.grad += 2.0 * a.data * g
    out._grad_fn = grad_fn
    return out


def abs_(a):
    out = Tensor(np.abs(a.data), "abs", (a,))
    s = np.sign(a.data)  # subgradient 0 at the kink

    def grad_fn(g):
        a.grad += s * g
    out._grad_fn = grad_fn
    return out


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data >= b.data
    out = Tensor(np.where(take_a, a.data, b.data), "maximum", (a, b))

    def grad_fn(g):
        a.grad += _reduce_broadcast(g * take_a, a.data.shape)
        b.grad += _reduce_broadcast(g * ~take_a, b.data.shape)
    out._grad_fn = grad_fn
    return out


def relu(a):
    mask = a.data > 0
    out = Tensor(a.data * mask, "relu", (a,))

    def grad_fn(g):
        a.grad += g * mask
    out._grad_fn = grad_fn
    return out


def leaky_relu(a, slope=0.2):
    factor = np.where(a.data > 0, 1.0, slope)
    out = Tensor(a.data * factor, "leaky_relu", (a,))

    def grad_fn(g):
        a.grad += g * factor
    out._grad_fn = grad_fn
    return out


def cos(a):
    out = Tensor(np.cos(a.data), "cos", (a,))

    def grad_fn(g):
        a.grad += -np.sin(a.data) * g
    out._grad_fn = grad_fn
    return out


def sin(a):
    out = Tensor(np.sin(a.data), "sin", (a,))

    def grad_fn(g):
        a.grad += np.cos(a.data) * g
    out._grad_fn = grad_fn
    return out


# ---------------------------------------------------------------------------
# spatial ops (channels-first, stride 1 everywhere)


def _im2col(xp, s):
    """(C, Hp, Wp) padded input -> (C*s*s, Ho*Wo) patch matrix."""
    c, hp, wp = xp.shape
    ho, wo = hp - s + 1, wp - s + 1
    st = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, (c, s, s, ho, wo), (st[0], st[1], st[2], st[1], st[2]))
    return np.ascontiguousarray(cols).reshape(c * s * s, ho * wo), ho, wo


def conv2d(x, kernel, bias, pad=0):
    """Stride-1 cross-correlation: (C,H,W) * (Cout,C,s,s) -> (Cout,Ho,Wo).

    Output spatial size is in - s + 1 + 2*pad.
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.data.shape}, kernel {kernel.data.shape}")
    c, h, w = x.data.shape
    cout, cin, s, s2 = kernel.data.shape
    if cin != c or s != s2:
        raise ShapeError(
            f"conv2d: kernel {kernel.data.shape} incompatible with input "
            f"{x.data.shape} (expected kernel (*, {c}, s, s))")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.data.shape}, expected ({cout},)")
    ho, wo = h - s + 1 + 2 * pad, w - s + 1 + 2 * pad
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {s}x{s} with pad {pad} does not fit input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols, ho, wo = _im2col(xp, s)
    k2 = kernel.data.reshape(cout, c * s * s)
    out_data = (k2 @ cols + bias.data[:, None]).reshape(cout, ho, wo)
    out = Tensor(out_data, "conv2d", (x, kernel, bias))

    def grad_fn(g):
        g2 = g.reshape(cout, ho * wo)
        kernel.grad += (g2 @ cols.T).reshape(kernel.data.shape)
        bias.grad += g2.sum(axis=1)
        colg = (k2.T @ g2).reshape(c, s, s, ho, wo)
        gxp = np.zeros_like(xp)
        for di in range(s):
            for dj in range(s):
                gxp[:, di:di + ho, dj:dj + wo] += colg[:, di, dj]
        if pad:
            x.grad += gxp[:, pad:-pad, pad:-pad]
        else:
            x.grad += gxp
    out._grad_fn = grad_fn
    return out


def conv2d_transpose(x, kernel, bias, crop=0):
    """Stride-1 transposed convolution; output grows by s-1-2*crop per dim.

    Kernel layout matches conv2d: (Cout, Cin, s, s).
    """
    s = kernel.data.shape[-1]
    return conv2d(x, flip2(kernel), bias, pad=s - 1 - crop)


def maxpool2(x):
    """2x2 max pooling, stride 2; ties route the gradient to the first slot."""
    c, h, w = x.data.shape
    h2, w2 = h // 2, w // 2
    blocks = x.data[:, :2 * h2, :2 * w2].reshape(c, h2, 2, w2, 2)
    flat = blocks.transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    arg = flat.argmax(axis=3)
    out = Tensor(np.take_along_axis(flat, arg[..., None], axis=3)[..., 0],
                 "maxpool2", (x,))

    def grad_fn(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=3)
        gx = gf.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(
            c, 2 * h2, 2 * w2)
        x.grad[:, :2 * h2, :2 * w2] += gx
    out._grad_fn = grad_fn
    return out


def _interp_matrix(n_in, n_out):
    """Half-pixel-centered bilinear weights; rows sum to 1."""
    w = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    w[np.arange(n_out), i0] += 1.0 - t
    w[np.arange(n_out), i1] += t
    return w


def upsample_bilinear(x, out_h, out_w):
    c, h, w = x.data.shape
    wr = _interp_matrix(h, out_h)
    wc = _interp_matrix(w, out_w)
    out = Tensor(np.einsum("ij,cjk,lk->cil", wr, x.data, wc, optimize=True),
                 "upsample", (x,))

    def grad_fn(g):
        x.grad += np.einsum("ij,cik,kl->cjl", wr, g, wc, optimize=True)
    out._grad_fn = grad_fn
    return out


# ---------------------------------------------------------------------------
# kind-tag dispatch, per the layer-table vocabulary

_OPS = {
    "add": add, "sub": sub, "mul": mul, "scale": scale, "neg": neg,
    "matmul": matmul, "reshape": reshape, "transpose": transpose,
    "concat": concat, "gather": gather, "slice": slice_, "flip2": flip2,
    "sum": tsum, "square": square, "abs": abs_, "maximum": maximum,
    "relu": relu, "leaky_relu": leaky_relu, "cos": cos, "sin": sin,
    "conv": conv2d, "tconv": conv2d_transpose, "maxpool2": maxpool2,
    "upsample": upsample_bilinear,
}


def forward_op(kind, *inputs, **params):
    """Apply a layer/op by kind tag, recording it on the tape."""
    if kind not in _OPS:
        raise ValueError(f"unknown op kind '{kind}'")
    return _OPS[kind](*inputs, **params)


# ---------------------------------------------------------------------------
# adaptive-moment optimizer


class AdamState:
    """Bias-corrected adaptive-moment state for a named parameter set."""

    def __init__(self, params, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data if isinstance(v, Tensor) else v)
                  for k, v in params.items()}
        self.v = {k: np.zeros_like(m) for k, m in self.m.items()}


def adam_step(state: AdamState, params, grads):
    """One in-place update of `params` (dict name -> Tensor or ndarray)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if isinstance(p, Tensor):
            p.data -= step
        else:
            p -= step
    return params, state
