"""Reverse-mode autodiff tensor core.

Dense float32 tensors plus the exact primitive set the broadcasting /
relational models need: conv2d, batchnorm, ReLU, linear, channel concat,
global pools, spatial expansion and the two losses.  Operations record onto
an explicit gradient tape; ``backward`` replays the tape once, in reverse.

Storage is float32; reductions (losses, statistics) accumulate in float64
before casting back, which keeps the finite-difference checks stable.
The ``precision`` context switches newly created tensors (and gradient
accumulation) to another storage dtype; gradient-check suites use float64
there so finite differences are not drowned by float32 forward noise.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

_state = threading.local()


def storage_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


class precision:
    """Context manager switching the storage dtype for new tensors."""

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)
        if self.dtype.kind != "f":
            raise ValueError(f"precision needs a float dtype, got {self.dtype}")

    def __enter__(self):
        self._prev = storage_dtype()
        _state.dtype = self.dtype
        return self

    def __exit__(self, *exc):
        _state.dtype = self._prev
        return False


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """Raised on tape misuse (no active tape, double backward, ...)."""


class Tensor:
    """A dense float32 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=storage_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def check_finite(self):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains NaN or Inf")
        return self

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Topological order is guaranteed by execution order.  A tape can be
    backpropagated exactly once.  One tape per thread; entering a tape
    makes it the active recorder for that thread.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
        self._records.append((out, tuple(inputs), backward_fn))
        self._produced.add(id(out))

    def __len__(self):
        return len(self._records)


def active_tape() -> Optional[Tape]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward_fn)


def backward(loss: Tensor, tape: Optional[Tape] = None):
    """Accumulate d(loss)/d(p) into ``grad`` of every requires_grad leaf."""
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise TapeError("backward() requires an active or explicit tape")
    if tape._consumed:
        raise TapeError("this tape has already been backpropagated")
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        input_grads = backward_fn(g)
        for t, gi in zip(inputs, input_grads):
            if gi is None:
                continue
            gi = gi.astype(storage_dtype(), copy=False)
            if id(t) in tape._produced:
                acc = grads.get(id(t))
                grads[id(t)] = gi.copy() if acc is None else acc + gi
            elif t.requires_grad:
                t.accumulate_grad(gi)


# ---------------------------------------------------------------------------
# convolution

def _conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(
            f"conv output size < 1 for input {size}, kernel {k}, "
            f"stride {stride}, padding {padding}"
        )
    return out

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    # xp already padded: [N, C, Hp, Wp] -> [N, C*kh*kw, ho*wo]
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)

def _col2im(dcols: np.ndarray, n, c, hp, wp, kh, kw, stride, ho, wo):
    dxp = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with [C_out, C_in, kH, kW] kernels."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ShapeError(
            f"input channels {x.shape} do not match kernel channels {weight.shape}"
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    if kh == 1 and kw == 1 and stride == 1:
        cols = xp.reshape(n, c_in, ho * wo)
    else:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = weight.data.reshape(c_out, -1)
    out_mat = np.matmul(w2, cols) + bias.data[:, None]
    out = Tensor(out_mat.reshape(n, c_out, ho, wo))

    def bwd(g):
        g2 = g.reshape(n, c_out, ho * wo)
        dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        db = g2.sum(axis=(0, 2))
        dcols = np.matmul(w2.T, g2)
        if kh == 1 and kw == 1 and stride == 1:
            dx = dcols.reshape(n, c_in, h, w)
        else:
            dxp = _col2im(dcols, n, c_in, h + 2 * padding, w + 2 * padding, kh, kw, stride, ho, wo)
            dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return dx, dw, db

    _record(out, (x, weight, bias), bwd)
    return out


# ---------------------------------------------------------------------------
# batch normalization

class RunningStats:
    """Per-channel running mean/variance for batchnorm eval mode."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=np.float32)
        self.var = np.ones(channels, dtype=np.float32)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    if mode == "train":
        if n < 2:
            raise ShapeError("batchnorm train mode needs batch size >= 2")
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3), dtype=np.float64)
        sqmean = np.square(x.data).mean(axis=(0, 2, 3), dtype=np.float64)
        var = np.maximum(sqmean - np.square(mean), 0.0)
        running.mean = ((1 - momentum) * running.mean + momentum * mean).astype(np.float32)
        running.var = ((1 - momentum) * running.var + momentum * var).astype(np.float32)
        mean32 = mean.astype(x.data.dtype)
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
        xhat = (x.data - mean32[None, :, None, None]) * inv_std[None, :, None, None]
        out = Tensor(gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None])

        def bwd(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gamma.data[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = inv_std[None, :, None, None] * (dxhat - s1 / m - xhat * s2 / m)
            return dx, dgamma, dbeta

        _record(out, (x, gamma, beta), bwd)
        return out

    inv_std = (1.0 / np.sqrt(running.var + eps)).astype(x.data.dtype)
    scale = gamma.data * inv_std
    shift = beta.data - running.mean * scale
    out = Tensor(x.data * scale[None, :, None, None] + shift[None, :, None, None])
    xc = x.data - running.mean[None, :, None, None]

    def bwd_eval(g):
        dgamma = (g * xc * inv_std[None, :, None, None]).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dx = g * scale[None, :, None, None]
        return dx, dgamma, dbeta

    _record(out, (x, gamma, beta), bwd_eval)
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops

def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    _record(out, (x,), bwd)
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[N, D_in] @ weight[D_out, D_in].T + bias[D_out]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-d input/weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input features {x.shape} do not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    out = Tensor(x.data @ weight.data.T + bias.data)

    def bwd(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    _record(out, (x, weight, bias), bwd)
    return out


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along axis 1 (channels for NCHW, features for NC)."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(
                f"concat_channels shapes disagree off-channel: {ref} vs {t.shape}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=1))

    _record(out, tensors, bwd)
    return out


def global_max_pool(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """Max over spatial positions.

    Returns the pooled [N, C] tensor and the flat argmax index per
    (sample, channel); ties resolve to the first occurrence in row-major
    order, and the gradient routes only to that element.
    """
    if x.ndim != 4:
        raise ShapeError(f"global_max_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("global_max_pool needs non-empty spatial dims")
    flat = x.data.reshape(n, c, h * w)
    argmax = flat.argmax(axis=2)
    out = Tensor(np.take_along_axis(flat, argmax[:, :, None], axis=2)[:, :, 0])

    def bwd(g):
        dflat = np.zeros((n, c, h * w), dtype=g.dtype)
        np.put_along_axis(dflat, argmax[:, :, None], g[:, :, None], axis=2)
        return (dflat.reshape(x.shape),)

    _record(out, (x,), bwd)
    return out, argmax


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), dtype=np.float64))

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(g.dtype),)

    _record(out, (x,), bwd)
    return out


def global_sum_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_sum_pool expects NCHW input, got {x.shape}")
    out = Tensor(x.data.sum(axis=(2, 3), dtype=np.float64))

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None], x.shape).astype(g.dtype),)

    _record(out, (x,), bwd)
    return out


def expand_spatial(vec: Tensor, h: int, w: int) -> Tensor:
    """Copy an [N, C] vector to every position of an [N, C, h, w] map."""
    if vec.ndim != 2:
        raise ShapeError(f"expand_spatial expects [N, C] input, got {vec.shape}")
    if h < 1 or w < 1:
        raise ShapeError("expand_spatial needs positive target dims")
    out = Tensor(np.broadcast_to(vec.data[:, :, None, None], (*vec.shape, h, w)))

    def bwd(g):
        return (g.sum(axis=(2, 3)),)

    _record(out, (vec,), bwd)
    return out


def flatten(x: Tensor) -> Tensor:
    """[N, ...] -> [N, prod(rest)]."""
    n = x.shape[0]
    out = Tensor(x.data.reshape(n, -1))

    def bwd(g):
        return (g.reshape(x.shape),)

    _record(out, (x,), bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return g, g

    _record(out, (a, b), bwd)
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * x.data.dtype.type(factor))

    def bwd(g):
        return (g * g.dtype.type(factor),)

    _record(out, (x,), bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.array([x.data.sum(dtype=np.float64)]))

    def bwd(g):
        return (np.broadcast_to(g.reshape(()), x.shape).astype(g.dtype),)

    _record(out, (x,), bwd)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.shape),)

    _record(out, (x,), bwd)
    return out


def move_channels_last(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, H*W, C] (per-position object vectors)."""
    if x.ndim != 4:
        raise ShapeError(f"move_channels_last expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = Tensor(np.moveaxis(x.data, 1, 3).reshape(n, h * w, c))

    def bwd(g):
        return (np.moveaxis(g.reshape(n, h, w, c), 3, 1),)

    _record(out, (x,), bwd)
    return out


def pairwise_concat(obj: Tensor, extra: Optional[Tensor] = None) -> Tensor:
    """All ordered object pairs: [N, n, d] -> [N, n*n, 2d (+q)].

    Row (i, j) holds [o_i, o_j] plus an optional per-sample extra vector
    (the question) appended to every pair.
    """
    if obj.ndim != 3:
        raise ShapeError(f"pairwise_concat expects [N, n, d] objects, got {obj.shape}")
    n, nobj, d = obj.shape
    oi = np.repeat(obj.data, nobj, axis=1)
    oj = np.tile(obj.data, (1, nobj, 1))
    parts = [oi, oj]
    if extra is not None:
        if extra.ndim != 2 or extra.shape[0] != n:
            raise ShapeError(f"extra must be [N, q], got {extra.shape}")
        parts.append(np.repeat(extra.data[:, None, :], nobj * nobj, axis=1))
    out = Tensor(np.concatenate(parts, axis=2))

    def bwd(g):
        gi = g[:, :, :d].reshape(n, nobj, nobj, d).sum(axis=2)
        gj = g[:, :, d : 2 * d].reshape(n, nobj, nobj, d).sum(axis=1)
        dobj = gi + gj
        if extra is None:
            return (dobj,)
        dextra = g[:, :, 2 * d :].sum(axis=1)
        return dobj, dextra

    _record(out, (obj,) if extra is None else (obj, extra), bwd)
    return out


def sum_rows(x: Tensor) -> Tensor:
    """[N, P, D] -> [N, D], summing over the middle axis in float64."""
    if x.ndim != 3:
        raise ShapeError(f"sum_rows expects [N, P, D], got {x.shape}")
    out = Tensor(x.data.sum(axis=1, dtype=np.float64))

    def bwd(g):
        return (np.broadcast_to(g[:, None, :], x.shape).astype(g.dtype),)

    _record(out, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# losses

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log likelihood of softmax outputs, row-max stabilized."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects [N, K] logits, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range [0, {k})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(n), labels]
    out = Tensor(np.array([nll.mean()]))
    softmax = np.exp(z - logsumexp[:, None])

    def bwd(g):
        d = softmax.copy()
        d[np.arange(n), labels] -= 1.0
        return (g.reshape(()) * d.astype(g.dtype) / n,)

    _record(out, (logits,), bwd)
    return out


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    out = Tensor(np.array([np.square(diff).mean()]))

    def bwd(g):
        d = (2.0 / diff.size) * diff
        dg = (g.reshape(()) * d).astype(g.dtype)
        return dg, -dg

    _record(out, (pred, target), bwd)
    return out
