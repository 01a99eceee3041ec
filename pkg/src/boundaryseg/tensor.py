"""Dense float tensors with reverse-mode automatic differentiation.

The operator set is exactly what the segmentation network needs: 2-D
convolution, bilinear resize, channel concatenation, elementwise
arithmetic and activations, matrix multiply, batch normalization, and
scalar reductions.  Every op records a node carrying its backward
closure; ``backward`` replays the recorded nodes in exact reverse
creation order, which is a valid reverse topological order because an
op can only consume tensors that already exist.

Kernels are dtype-generic: training runs in float32, gradient checks
in float64.  There is no broadcasting beyond the per-channel bias and
affine cases inside conv2d/batchnorm2d, which keeps every backward
rule auditable.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class NumericError(RuntimeError):
    """Raised on non-finite values where finiteness is required."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable op recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One recorded op on the tape.

    ``seq`` is a global creation counter; since an op's inputs must
    exist before its output, ascending ``seq`` is a topological order
    of the tape and descending ``seq`` is the order backward visits.
    """

    __slots__ = ("seq", "op", "inputs", "bwd")
    _counter = itertools.count()

    def __init__(self, op, inputs, bwd):
        self.seq = next(Node._counter)
        self.op = op
        self.inputs = inputs
        self.bwd = bwd


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        head = f"Tensor(shape={self.shape}, dtype={self.dtype}"
        if self.name:
            head += f", name={self.name!r}"
        if self.requires_grad:
            head += ", requires_grad=True"
        return head + ")"


def _make(op, data, inputs, bwd):
    """Wrap an op result, recording a backward node if needed."""
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), bwd)
    return out


def backward(loss):
    """Accumulate d(loss)/dt into ``t.grad`` for every tensor with
    ``requires_grad`` reachable from ``loss``.

    Repeated calls without ``zero_grad`` keep accumulating.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ValueError("backward: loss is not the output of any recorded op")

    # Gather the reachable subgraph, then replay in reverse creation order.
    order = []
    leaves = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is not None:
            order.append(t)
            stack.extend(t.node.inputs)
        else:
            leaves.append(t)
    order.sort(key=lambda t: t.node.seq, reverse=True)

    pending = {id(loss): np.ones_like(loss.data)}
    for t in order:
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
        for inp, gi in zip(t.node.inputs, t.node.bwd(g)):
            if gi is None:
                continue
            acc = pending.get(id(inp))
            pending[id(inp)] = gi if acc is None else acc + gi
    for t in leaves:
        g = pending.pop(id(t), None)
        if g is not None and t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementwise ops


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _check_same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (g * b.data, g * a.data))


def relu(x):
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0), (x,),
                 lambda g: (g * mask,))


def sigmoid(x):
    # Split by sign to avoid overflow in exp.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def eltwise(kind, a, b=None):
    """Dispatcher over the elementwise op set."""
    unary = {"relu": relu, "sigmoid": sigmoid}
    binary = {"add": add, "sub": sub, "mul": mul}
    if kind in unary:
        if b is not None:
            raise ValueError(f"eltwise {kind!r} is unary")
        return unary[kind](a)
    if kind in binary:
        if b is None:
            raise ValueError(f"eltwise {kind!r} needs two operands")
        return binary[kind](a, b)
    raise ValueError(f"unknown eltwise kind {kind!r}")


def scale(x, s):
    """Multiply by a python scalar (loss weighting)."""
    s = float(s)
    return _make("scale", x.data * s, (x,), lambda g: (g * s,))


def sum_all(x):
    """Sum of all entries, as a 0-d tensor."""
    return _make("sum_all", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),))


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(a, b):
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError("concat_channels expects NCHW tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat_channels: N/H/W mismatch {a.shape} vs {b.shape} "
            "(resize before concatenation)")
    ca = a.shape[1]
    return _make("concat_channels", np.concatenate([a.data, b.data], axis=1),
                 (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# neural ops


def conv2d(x, w, b, stride=1, dilation=1, pad=0):
    """2-D convolution, NCHW input, OIKK kernel, per-channel bias.

    Output spatial size is floor((H + 2p - d*(K-1) - 1)/s) + 1.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be NCHW, got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be OIKhKw, got {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({w.shape[0]},)")
    n, c, h, wd = x.shape
    eh = dilation * (kh - 1) + 1
    ew = dilation * (kw - 1) + 1
    if h + 2 * pad < eh or wd + 2 * pad < ew:
        raise ShapeError(
            f"conv2d: {h}x{wd} input too small for kernel extent {eh} at pad {pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation]
    out = np.einsum("nchwij,ocij->nohw", win, w.data, optimize=True)
    out += b.data[None, :, None, None]
    ho, wo = out.shape[2], out.shape[3]

    def bwd(g):
        db = g.sum(axis=(0, 2, 3))
        dw = np.einsum("nchwij,nohw->ocij", win, g, optimize=True)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                hi = i * dilation
                wj = j * dilation
                dxp[:, :, hi:hi + (ho - 1) * stride + 1:stride,
                    wj:wj + (wo - 1) * stride + 1:stride] += np.einsum(
                        "nohw,oc->nchw", g, w.data[:, :, i, j], optimize=True)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        return dx, dw, db

    return _make("conv2d", out, (x, w, b), bwd)


def _resize_matrix(n_in, n_out, dtype):
    """Row-interpolation matrix for half-pixel-center bilinear resize."""
    r = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    rows = np.arange(n_out)
    r[rows, lo] += (1.0 - frac).astype(dtype)
    r[rows, hi] += frac.astype(dtype)
    return r


def bilinear_resize(x, out_h, out_w):
    """Bilinear resize with half-pixel centers (align-corners false)."""
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize: input must be NCHW, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: bad target size {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return _make("bilinear_resize", x.data.copy(), (x,), lambda g: (g,))
    ry = _resize_matrix(h, out_h, x.dtype)
    rx = _resize_matrix(w, out_w, x.dtype)
    t = np.einsum("oh,nchw->ncow", ry, x.data, optimize=True)
    out = np.einsum("pw,ncow->ncop", rx, t, optimize=True)

    def bwd(g):
        tg = np.einsum("oh,ncop->nchp", ry, g, optimize=True)
        return (np.einsum("pw,nchp->nchw", rx, tg, optimize=True),)

    return _make("bilinear_resize", out, (x,), bwd)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over NCHW.

    Train mode normalizes by batch statistics and updates the running
    buffers in place (plain ndarrays, outside autodiff); eval mode
    normalizes by the running buffers.  Variances are biased (divide
    by N*H*W) in both the normalization and the running estimate.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: input must be NCHW, got {x.shape}")
    c = x.shape[1]
    for nm, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (c,):
            raise ShapeError(f"batchnorm2d: {nm} shape {t.shape} != ({c},)")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError("batchnorm2d: running stats must be per-channel")

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * invstd[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    m = x.shape[0] * x.shape[2] * x.shape[3]

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            s1 = dxhat.sum(axis=(0, 2, 3))
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (invstd[None, :, None, None] / m) * (
                m * dxhat - s1[None, :, None, None]
                - xhat * s2[None, :, None, None])
        else:
            dx = dxhat * invstd[None, :, None, None]
        return dx, dgamma, dbeta

    return _make("batchnorm2d", out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, inputs, eps=1e-3, max_coords=None, rng=None):
    """Max relative error between analytic and central-difference grads.

    ``f`` maps the input tensors to a scalar tensor and must be pure.
    With ``max_coords`` set, at most that many coordinates per input
    are probed (uniformly sampled); otherwise all coordinates are.
    Relative error is |a - n| / max(1e-8, |a| + |n|).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    if out.data.size != 1:
        raise ShapeError("grad_check: f must be scalar-valued")
    backward(out)

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        n = t.data.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        flat = t.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                f_plus = f(*inputs).data.item()
                flat[c] = orig - eps
                f_minus = f(*inputs).data.item()
            flat[c] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(
                    f"grad_check: non-finite value probing coordinate {c} "
                    f"of input {t.name or t.shape}")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic.reshape(-1)[c])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
