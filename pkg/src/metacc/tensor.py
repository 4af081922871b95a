"""Minimal dense float64 tensors with a reverse-mode autodiff tape.

Only the primitives the bit decoder and the first-order meta-learners need
are provided: conv2d, linear, relu, sigmoid, binary cross-entropy on logits,
elementwise arithmetic with plain numpy broadcasting, matmul, reshape,
transpose, and axis reductions.  Everything is 64-bit; the tape records
first-order gradients only.

Usage::

    with Tape() as tape:
        logits = forward(params, x)
        loss = bce_with_logits(logits, targets)
    backward(loss)
    sgd_step(params, lr=0.1)

Ops executed without an active tape run in inference mode (no recording).
The active tape is thread-local, so distinct training runs may record on
distinct tapes in parallel threads.
"""

from __future__ import annotations

import json
import struct
import threading

import numpy as np

__all__ = [
    "Tensor", "Tape", "backward", "add", "sub", "mul", "matmul", "reshape",
    "transpose", "reduce_sum", "relu", "sigmoid", "linear", "conv2d",
    "bce_with_logits", "sgd_step", "adam_step", "AdamState", "zero_grad",
    "save_checkpoint", "load_checkpoint",
]

_LOCAL = threading.local()


class Tensor:
    """A dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data, False)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Nodes are appended in execution order, so the reversed record is a valid
    topological order and the backward sweep visits each node exactly once.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self):
        stack = getattr(_LOCAL, "stack", None)
        if stack is None:
            stack = _LOCAL.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _LOCAL.stack.pop()
        return False

    @staticmethod
    def active() -> "Tape | None":
        stack = getattr(_LOCAL, "stack", None)
        return stack[-1] if stack else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    tape = Tape.active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append((out, inputs, vjp))
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf.

    The sweep walks the recording tape in reverse; only nodes that feed the
    loss receive gradient.  Call once per recorded forward pass.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    tape = tape or loss._tape or Tape.active()
    if tape is None:
        raise RuntimeError("backward needs the tape that recorded the forward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(out) for out, _, _ in tape.nodes}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gt in zip(inputs, vjp(g)):
            if gt is None or not t.requires_grad:
                continue
            if id(t) in produced:
                prev = grads.get(id(t))
                grads[id(t)] = gt if prev is None else prev + gt
            else:
                t.grad = gt if t.grad is None else t.grad + gt
    # the loss itself may be a leaf of a larger expression; nothing else to do


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                           _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                           _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                           _unbroadcast(g * a.data, b.data.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    out = Tensor(x.data.transpose(axes))
    return _record(out, (x,), lambda g: (g.transpose(inv),))


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return _record(out, (x,), vjp)


def _check_finite(name, arr):
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} received non-finite values")


def relu(x) -> Tensor:
    x = as_tensor(x)
    _check_finite("relu", x.data)
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, (x,), lambda g: (g * (x.data > 0.0),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    _check_finite("sigmoid", x.data)
    s = _sigmoid_stable(x.data)
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def _sigmoid_stable(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def linear(x, weight, bias) -> Tensor:
    """x @ weight + bias for x (N, I), weight (I, O), bias (O,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _check_finite("linear", x.data)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ValueError("linear expects (N, I) input and (I, O) weight")
    if bias.data.shape != (weight.data.shape[1],):
        raise ValueError("linear bias must have shape (O,)")
    out = Tensor(x.data @ weight.data + bias.data)
    return _record(out, (x, weight, bias),
                   lambda g: (g @ weight.data.T, x.data.T @ g, g.sum(axis=0)))


def _conv_shapes(x, w, stride, padding):
    (b, c, h, wd) = x.shape
    (f, cw, kh, kw) = w.shape
    if c != cw:
        raise ValueError("conv2d channel mismatch")
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise ValueError("conv2d kernel larger than padded input")
    return (b, c, h, wd), (f, kh, kw), (sh, sw), (ph, pw), (oh, ow)


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    b, c = xp.shape[0], xp.shape[1]
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (b, oh, ow, c, kh, kw), (s0, s2 * sh, s3 * sw, s1, s2, s3), writeable=False)
    return win.reshape(b * oh * ow, c * kh * kw)


def _conv_core(xd, wd_, stride, padding):
    (b, c, h, w), (f, kh, kw), (sh, sw), (ph, pw), (oh, ow) = _conv_shapes(xd, wd_, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    out = cols @ wd_.reshape(f, -1).T
    return out.reshape(b, oh, ow, f).transpose(0, 3, 1, 2), cols, (b, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow)


def _conv_backward(g, wd_, cols, dims):
    b, c, h, w, kh, kw, sh, sw, ph, pw, oh, ow = dims
    f = wd_.shape[0]
    gm = g.transpose(0, 2, 3, 1).reshape(b * oh * ow, f)
    db = gm.sum(axis=0)
    dw = (gm.T @ cols).reshape(f, c, kh, kw)
    dcols = (gm @ wd_.reshape(f, -1)).reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((b, c, h + 2 * ph, w + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + oh * sh:sh, j:j + ow * sw:sw] += dcols[:, :, i, j]
    dx = dxp[:, :, ph:ph + h, pw:pw + w]
    return dx, dw, db


def conv2d(x, weight, bias, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlation of (B, C, H, W) input with (F, C, kH, kW) filters.

    Output dims follow floor((in + 2p - k)/s) + 1 per spatial axis.  When the
    input width is 1 and the kernel is 3 wide with width padding 1 and
    stride 1, the two side kernel columns only ever multiply padding zeros;
    that case is computed with the middle column alone (identical values and
    gradients, the side-column weight gradients are exactly zero).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _check_finite("conv2d", x.data)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError("conv2d expects 4-D input and weight")
    if bias.data.shape != (weight.data.shape[0],):
        raise ValueError("conv2d bias must have shape (F,)")
    sh, sw = stride
    ph, pw = padding

    thin = (x.data.shape[3] == 1 and weight.data.shape[3] == 3 and pw == 1 and sw == 1)
    if thin:
        w_used = np.ascontiguousarray(weight.data[:, :, :, 1:2])
        out_d, cols, dims = _conv_core(x.data, w_used, (sh, 1), (ph, 0))
    else:
        w_used = weight.data
        out_d, cols, dims = _conv_core(x.data, w_used, stride, padding)
    out = Tensor(out_d + bias.data[None, :, None, None])

    def vjp(g):
        dx, dw_used, db = _conv_backward(g, w_used, cols, dims)
        if thin:
            dw = np.zeros_like(weight.data)
            dw[:, :, :, 1:2] = dw_used
        else:
            dw = dw_used
        return dx, dw, db

    return _record(out, (x, weight, bias), vjp)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy over all elements, stable for huge logits."""
    logits = as_tensor(logits)
    t = as_tensor(targets)
    z = logits.data
    _check_finite("bce_with_logits", z)
    td = t.data
    if td.shape != z.shape:
        raise ValueError("bce_with_logits shape mismatch")
    if td.min() < 0.0 or td.max() > 1.0:
        raise ValueError("targets must lie in [0, 1]")
    # max(z,0) - z*t + log(1 + exp(-|z|))
    per = np.maximum(z, 0.0) - z * td + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(per.mean())
    n = z.size

    def vjp(g):
        dz = g * (_sigmoid_stable(z) - td) / n
        return (dz, None)

    return _record(out, (logits, t), vjp)


# ---------------------------------------------------------------------------
# optimizers

def zero_grad(params) -> None:
    for p in params:
        p.grad = None


def sgd_step(params, lr: float) -> None:
    """In-place p <- p - lr * p.grad for every param with a gradient."""
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad


class AdamState:
    """First/second moment buffers plus the step counter, aligned to a param list."""

    def __init__(self):
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def _ensure(self, params):
        if self.m is None:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        elif len(self.m) != len(params):
            raise ValueError("AdamState used with a different parameter list")


def adam_step(params, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, state: AdamState | None = None) -> AdamState:
    """One Adam update with bias correction; grads of None are treated as zero."""
    if state is None:
        state = AdamState()
    params = list(params)
    state._ensure(params)
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if g is None:
            g = 0.0
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------------------
# checkpoint container: 4-byte LE header length, JSON header, float64 LE payload

def save_checkpoint(path, named_arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in named_arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"format": "metacc-checkpoint", "version": 1,
                         "meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path, with_meta: bool = False):
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("format") != "metacc-checkpoint":
            raise ValueError("not a checkpoint file")
        payload = fh.read()
    out = {}
    for ent in header["tensors"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(payload, dtype="<f8", count=count,
                          offset=ent["offset"]).reshape(shape)
        out[ent["name"]] = a.astype(np.float64)
    if with_meta:
        return out, header.get("meta", {})
    return out
