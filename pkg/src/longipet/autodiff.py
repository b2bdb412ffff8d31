"""Reverse-mode automatic differentiation on dense numpy tensors.

A Tensor wraps a float64 ndarray plus the closure that routes its output
gradient back to its parents.  Calling ``backward()`` on a scalar loss walks
the graph in reverse topological order and accumulates gradients additively,
so repeated calls without ``zero_grad`` sum.

The operation set is exactly what the image-to-image forecaster needs:
elementwise arithmetic, relu / tanh / sigmoid, reductions, channel
concat/slice, 3D convolution and its adjoint, 2x max pooling, batch
normalization, a convolutional LSTM step, nearest-neighbor upsampling, mean
absolute error, and an Adam update.  Tensors are laid out
``(batch, x, y, z, channel)``; convolutions use stride 1 with same-padding
and odd cubic kernels.
"""

import json
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import FormatError, ParameterError, ShapeError, StateError

_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Run forward passes without recording the graph."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ParameterError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        # Iterative post-order walk; parents land before children, so the
        # reversed order visits each node once all its consumers have pushed
        # gradient into it.
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _const(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _node(data, parents, backward):
    if not grad_enabled():
        return Tensor(data)
    return Tensor(data, tuple(parents), backward)


def _unbroadcast(g, shape):
    # Sum the gradient of a broadcast result back down to `shape`.
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _const(a), _const(b)
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def sub(a, b):
    a, b = _const(a), _const(b)
    out_data = a.data - b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b):
    a, b = _const(a), _const(b)
    out_data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def div(a, b):
    a, b = _const(a), _const(b)
    out_data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(out_data, (a, b), backward)


def sqrt(a):
    a = _const(a)
    root = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / root)

    return _node(root, (a,), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a):
    a = _const(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0.0))

    return _node(out_data, (a,), backward)


def tanh(a):
    a = _const(a)
    t = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return _node(t, (a,), backward)


def sigmoid(a):
    a = _const(a)
    # Numerically stable logistic: exponentiate only the non-positive side.
    s = np.empty_like(a.data)
    pos = a.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ena = np.exp(a.data[~pos])
    s[~pos] = ena / (1.0 + ena)

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _node(s, (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def mean(a, axis=None, keepdims=False):
    a = _const(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if out_data.size == 0 else a.data.size // max(out_data.size, 1)

    def backward(g):
        gg = np.asarray(g)
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape) / count)

    return _node(out_data, (a,), backward)


def tensor_sum(a, axis=None, keepdims=False):
    a = _const(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = np.asarray(g)
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _node(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# channel concat / slice
# ---------------------------------------------------------------------------

def concat_channels(a, b):
    a, b = _const(a), _const(b)
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError(
            f"concat needs matching leading dims, got {a.shape} vs {b.shape}"
        )
    out_data = np.concatenate([a.data, b.data], axis=-1)
    ca = a.data.shape[-1]

    def backward(g):
        a._accumulate(g[..., :ca])
        b._accumulate(g[..., ca:])

    return _node(out_data, (a, b), backward)


def narrow_channels(a, start, length):
    a = _const(a)
    out_data = a.data[..., start : start + length]

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start : start + length] = g
        a._accumulate(full)

    return _node(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# 3D convolution core
# ---------------------------------------------------------------------------

def _check_conv_args(x, w, expect_in_axis):
    if x.ndim != 5:
        raise ShapeError(f"conv input must be (n, x, y, z, c), got {x.shape}")
    if w.ndim != 5 or not (w.shape[0] == w.shape[1] == w.shape[2]):
        raise ShapeError(f"conv kernel must be cubic (k, k, k, ., .), got {w.shape}")
    k = w.shape[0]
    if k % 2 != 1:
        raise ShapeError(f"conv kernel size must be odd, got {k}")
    if x.shape[4] != w.shape[expect_in_axis]:
        raise ShapeError(
            f"input has {x.shape[4]} channels, kernel expects {w.shape[expect_in_axis]}"
        )
    return k


def _corr3d(x, w):
    # Same-padding stride-1 correlation: x (n,a,b,c,ci), w (k,k,k,ci,co).
    # One matmul per kernel offset keeps peak memory at one input-sized copy.
    n, a, b, c, ci = x.shape
    k = w.shape[0]
    co = w.shape[4]
    if k == 1:
        return np.tensordot(x, w[0, 0, 0], axes=([4], [0]))
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))
    out = np.zeros((n, a, b, c, co))
    out2 = out.reshape(-1, co)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                patch = xp[:, i : i + a, j : j + b, l : l + c, :]
                out2 += patch.reshape(-1, ci) @ w[i, j, l]
    return out


def _corr3d_grad_w(x, gy, k):
    n, a, b, c, ci = x.shape
    co = gy.shape[4]
    gw = np.empty((k, k, k, ci, co))
    if k == 1:
        gw[0, 0, 0] = x.reshape(-1, ci).T @ gy.reshape(-1, co)
        return gw
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))
    g2 = gy.reshape(-1, co)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                patch = xp[:, i : i + a, j : j + b, l : l + c, :]
                gw[i, j, l] = patch.reshape(-1, ci).T @ g2
    return gw


def _flip_swap(w):
    # Spatial flip plus channel transpose: the kernel of the adjoint map.
    return np.ascontiguousarray(np.flip(w, axis=(0, 1, 2)).transpose(0, 1, 2, 4, 3))


def conv3d(x, kernel, bias=None):
    """Stride-1 same-padding 3D correlation.

    ``x`` is (n, x, y, z, c_in), ``kernel`` is (k, k, k, c_in, c_out) with k
    odd, ``bias`` is (c_out,) or None.  Output keeps the spatial dims.
    """
    x, kernel = _const(x), _const(kernel)
    k = _check_conv_args(x, kernel, 3)
    out_data = _corr3d(x.data, kernel.data)
    if bias is not None:
        bias = _const(bias)
        if bias.data.shape != (kernel.data.shape[4],):
            raise ShapeError(
                f"bias shape {bias.shape} does not match {kernel.data.shape[4]} filters"
            )
        out_data = out_data + bias.data
        parents = (x, kernel, bias)
    else:
        parents = (x, kernel)

    def backward(g):
        x._accumulate(_corr3d(g, _flip_swap(kernel.data)))
        kernel._accumulate(_corr3d_grad_w(x.data, g, k))
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 1, 2, 3)))

    return _node(out_data, parents, backward)


def conv_transpose3d(x, kernel, bias=None):
    """Adjoint of ``conv3d`` at stride 1 with same-padding.

    ``kernel`` is (k, k, k, c_out, c_in): the forward map here is the exact
    vector-Jacobian product of a conv3d that maps c_out channels to c_in
    channels with the same kernel.
    """
    x, kernel = _const(x), _const(kernel)
    k = _check_conv_args(x, kernel, 4)
    wt = _flip_swap(kernel.data)  # (k,k,k,ci,co), ready for plain correlation
    out_data = _corr3d(x.data, wt)
    if bias is not None:
        bias = _const(bias)
        if bias.data.shape != (kernel.data.shape[3],):
            raise ShapeError(
                f"bias shape {bias.shape} does not match {kernel.data.shape[3]} filters"
            )
        out_data = out_data + bias.data
        parents = (x, kernel, bias)
    else:
        parents = (x, kernel)

    def backward(g):
        x._accumulate(_corr3d(g, kernel.data))
        kernel._accumulate(_flip_swap(_corr3d_grad_w(x.data, g, k)))
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 1, 2, 3)))

    return _node(out_data, parents, backward)


# ---------------------------------------------------------------------------
# pooling / upsampling
# ---------------------------------------------------------------------------

def maxpool3d(x, window: int = 2):
    """Non-overlapping max pooling; gradient routes to the first maximum in
    x-fastest scan order within each cell."""
    x = _const(x)
    if x.ndim != 5:
        raise ShapeError(f"maxpool input must be (n, x, y, z, c), got {x.shape}")
    if window != 2:
        raise ParameterError(f"only window 2 is supported, got {window}")
    n, a, b, c, ch = x.data.shape
    if a % 2 or b % 2 or c % 2:
        raise ShapeError(f"spatial dims must be even for 2x pooling, got {(a, b, c)}")
    cells = x.data.reshape(n, a // 2, 2, b // 2, 2, c // 2, 2, ch)
    # Reorder cell offsets to (dz, dy, dx) so the flattened last axis scans
    # x fastest; argmax then breaks ties toward the first such position.
    cells = cells.transpose(0, 1, 3, 5, 7, 6, 4, 2)
    flat = cells.reshape(n, a // 2, b // 2, c // 2, ch, 8)
    idx = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gcells = np.zeros_like(flat)
        np.put_along_axis(gcells, idx[..., None], g[..., None], axis=-1)
        gcells = gcells.reshape(n, a // 2, b // 2, c // 2, ch, 2, 2, 2)
        gx = gcells.transpose(0, 1, 7, 2, 6, 3, 5, 4).reshape(n, a, b, c, ch)
        x._accumulate(gx)

    return _node(out_data, (x,), backward)


def upsample_nn(x, factor: int = 2):
    """Nearest-neighbor upsampling: replicate each voxel factor^3 times."""
    x = _const(x)
    if x.ndim != 5:
        raise ShapeError(f"upsample input must be (n, x, y, z, c), got {x.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ParameterError(f"factor must be a positive int, got {factor!r}")
    out_data = x.data
    for axis in (1, 2, 3):
        out_data = np.repeat(out_data, factor, axis=axis)
    n, a, b, c, ch = x.data.shape

    def backward(g):
        gg = g.reshape(n, a, factor, b, factor, c, factor, ch)
        x._accumulate(gg.sum(axis=(2, 4, 6)))

    return _node(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm(
    x,
    gamma,
    beta,
    stats: Dict[str, np.ndarray],
    mode: str = "train",
    eps: float = 1e-3,
    momentum: float = 0.99,
    key: str = "bn",
):
    """Per-channel batch normalization over the batch and spatial axes.

    In train mode the batch statistics normalize the input and update the
    running estimates in ``stats`` (created on first use, EMA with the given
    momentum).  In infer mode the running estimates are used; calling infer
    before any train step raises StateError.
    """
    x = _const(x)
    gamma, beta = _const(gamma), _const(beta)
    if x.ndim != 5:
        raise ShapeError(f"batchnorm input must be (n, x, y, z, c), got {x.shape}")
    ch = x.data.shape[4]
    if gamma.data.shape != (ch,) or beta.data.shape != (ch,):
        raise ShapeError(
            f"gamma/beta must have shape ({ch},), got {gamma.shape} and {beta.shape}"
        )
    mean_key, var_key = f"{key}.mean", f"{key}.var"
    axes = (0, 1, 2, 3)
    if mode == "train":
        mu = mean(x, axis=axes, keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=axes, keepdims=True)
        xhat = div(centered, sqrt(add(var, eps)))
        if mean_key not in stats:
            # seed with the first batch so early infer calls are not pulled
            # toward an arbitrary (0, 1) prior the EMA takes ages to forget
            stats[mean_key] = mu.data.reshape(ch).copy()
            stats[var_key] = var.data.reshape(ch).copy()
        else:
            stats[mean_key] = momentum * stats[mean_key] + (1.0 - momentum) * mu.data.reshape(ch)
            stats[var_key] = momentum * stats[var_key] + (1.0 - momentum) * var.data.reshape(ch)
    elif mode == "infer":
        if mean_key not in stats or var_key not in stats:
            raise StateError(
                "batchnorm infer mode requires running statistics; train first"
            )
        rm = stats[mean_key].reshape(1, 1, 1, 1, ch)
        rv = stats[var_key].reshape(1, 1, 1, 1, ch)
        xhat = div(sub(x, rm), np.sqrt(rv + eps))
    else:
        raise ParameterError(f"mode must be 'train' or 'infer', got {mode!r}")
    return add(mul(xhat, gamma), beta)


# ---------------------------------------------------------------------------
# convolutional LSTM step
# ---------------------------------------------------------------------------

def convlstm3d_step(x, h_prev, c_prev, kernel, bias):
    """One ConvLSTM step.

    The gate kernel convolves the concatenated (input, hidden) channels and
    emits 4*filters gate channels ordered (input, forget, candidate,
    output).  Input/forget/output gates are logistic; the candidate and the
    cell output are tanh.
    """
    x, h_prev, c_prev = _const(x), _const(h_prev), _const(c_prev)
    kernel, bias = _const(kernel), _const(bias)
    filters = h_prev.data.shape[4]
    expected_in = x.data.shape[4] + filters
    if kernel.data.shape[3] != expected_in or kernel.data.shape[4] != 4 * filters:
        raise ShapeError(
            f"gate kernel must map {expected_in} channels to {4 * filters}, "
            f"got {kernel.shape}"
        )
    z = concat_channels(x, h_prev)
    gates = conv3d(z, kernel, bias)
    i = sigmoid(narrow_channels(gates, 0, filters))
    f = sigmoid(narrow_channels(gates, filters, filters))
    g = tanh(narrow_channels(gates, 2 * filters, filters))
    o = sigmoid(narrow_channels(gates, 3 * filters, filters))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def mae_loss(pred, target):
    """Mean absolute error over all elements; subgradient 0 at zero."""
    pred, target = _const(pred), _const(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mae_loss shapes differ: {pred.shape} vs {target.shape}"
        )
    diff = pred.data - target.data
    out_data = np.mean(np.abs(diff))

    def backward(g):
        gd = g * np.sign(diff) / diff.size
        pred._accumulate(gd)
        target._accumulate(-gd)

    return _node(out_data, (pred, target), backward)


# ---------------------------------------------------------------------------
# parameters, Adam, serialization
# ---------------------------------------------------------------------------

class ParameterSet:
    """Named learnable tensors plus non-learnable running statistics."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.stats: Dict[str, np.ndarray] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self.params:
            raise ParameterError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, dtype=np.float64))
        self.params[name] = t
        return t

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def quantize(self) -> "ParameterSet":
        """Round every tensor through float32, the at-rest precision."""
        out = ParameterSet()
        for name, t in self.params.items():
            out.add(name, t.data.astype(np.float32).astype(np.float64))
        for name, arr in self.stats.items():
            out.stats[name] = arr.astype(np.float32).astype(np.float64)
        return out

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self.params.items():
            out.add(name, t.data.copy())
        for name, arr in self.stats.items():
            out.stats[name] = arr.copy()
        return out


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParameterSet,
    grads: Dict[str, np.ndarray],
    state: Optional[AdamState] = None,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-7,
) -> AdamState:
    """One bias-corrected Adam update, applied in place."""
    if state is None:
        state = AdamState()
    state.t += 1
    t = state.t
    for name, tensor in params.params.items():
        if name not in grads or grads[name] is None:
            raise ParameterError(f"missing gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != tensor.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {tensor.data.shape}"
            )
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        tensor.data = tensor.data - lr * mhat / (np.sqrt(vhat) + eps)
    return state


_CONTAINER_MAGIC = b"LPC1"
_CONTAINER_FORMAT = "longipet-tensors/1"


def save_params(params: ParameterSet, path, meta: Optional[dict] = None) -> Path:
    """Write a named-tensor container: magic, JSON index, float32 LE blobs."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for role, items in (("param", params.params.items()), ("stat", params.stats.items())):
        for name, value in items:
            arr = value.data if isinstance(value, Tensor) else value
            blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append(
                {
                    "name": name,
                    "role": role,
                    "shape": [int(d) for d in np.shape(arr)],
                    "offset": offset,
                    "nbytes": len(blob),
                }
            )
            blobs.append(blob)
            offset += len(blob)
    header = {
        "format": _CONTAINER_FORMAT,
        "tensors": entries,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CONTAINER_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    return path


def load_params(path):
    """Read a named-tensor container; returns (ParameterSet, meta dict)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != _CONTAINER_MAGIC:
        raise FormatError(f"{path} is not a tensor container (bad magic)")
    (header_len,) = struct.unpack_from("<Q", blob, 4)
    if 12 + header_len > len(blob):
        raise FormatError(f"{path} header length exceeds file size")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path} has an unreadable tensor index: {exc}") from exc
    if header.get("format") != _CONTAINER_FORMAT:
        raise FormatError(
            f"{path} has unknown format tag {header.get('format')!r}, "
            f"expected {_CONTAINER_FORMAT!r}"
        )
    body = blob[12 + header_len :]
    out = ParameterSet()
    for entry in header.get("tensors", []):
        name = entry["name"]
        shape = tuple(int(d) for d in entry["shape"])
        nbytes = int(entry["nbytes"])
        offset = int(entry["offset"])
        count = int(np.prod(shape)) if shape else 1
        if nbytes != 4 * count:
            raise FormatError(
                f"{path} tensor {name!r}: blob holds {nbytes} bytes, "
                f"shape {shape} needs {4 * count}"
            )
        if offset < 0 or offset + nbytes > len(body):
            raise FormatError(f"{path} tensor {name!r}: blob extends past end of file")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        arr = arr.astype(np.float64).reshape(shape)
        if entry.get("role") == "stat":
            out.stats[name] = arr
        else:
            out.add(name, arr)
    return out, header.get("meta", {})
