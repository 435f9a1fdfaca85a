"""Minimal reverse-mode autodiff engine.

Tensors wrap numpy arrays (float32 for training, float64 for gradient
checking). Every differentiable op records a backward closure on the
currently active ``Tape``; ``backward`` replays the tape in reverse,
accumulating into ``Tensor.grad`` (the caller zeroes grads between steps).
One tape per forward pass, discarded after backward.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ConfigError

# Test hook: ops named here get a sign flip injected into one of their
# backward formulas (negative control for the gradient-check suite).
_CORRUPT_BACKWARD: set[str] = set()


class Tensor:
    """Rank <= 4 numeric array, optionally participating in gradients."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        if data.ndim > 4:
            raise ShapeError(f"rank {data.ndim} exceeds the supported maximum of 4")
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Operator sugar; scalars are treated as non-differentiable constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of executed ops; replayed in reverse by ``backward``."""

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self._records)


_TAPES: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _register(out: Tensor, inputs: tuple, backward_fn) -> None:
    """Attach a backward closure to the active tape if any input needs grad."""
    tape = _active_tape()
    if tape is None:
        return
    if not any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        return
    out.requires_grad = True

    def record():
        g = out.grad
        if g is not None:
            backward_fn(g)

    tape._records.append(record)


def _accum(t, g: np.ndarray) -> None:
    if not (isinstance(t, Tensor) and t.requires_grad):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor, tape: Tape) -> None:
    """Fill grads of every requires_grad input reachable from ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for record in reversed(tape._records):
        record()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementwise ops


def _as_array(x, dtype):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, fwd, bwd_a, bwd_b):
    dtype = a.dtype if isinstance(a, Tensor) else b.dtype
    ad, bd = _as_array(a, dtype), _as_array(b, dtype)
    try:
        out_data = fwd(ad, bd)
    except ValueError as e:
        raise ShapeError(f"incompatible shapes {ad.shape} and {bd.shape}") from e
    out = Tensor(out_data)

    def backward_fn(g):
        if isinstance(a, Tensor) and a.requires_grad:
            _accum(a, _unbroadcast(bwd_a(g, ad, bd), ad.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            _accum(b, _unbroadcast(bwd_b(g, ad, bd), bd.shape))

    _register(out, (a, b), backward_fn)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(x.data * s)
    _register(out, (x,), lambda g: _accum(x, g * s))
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def backward_fn(g):
        _accum(x, g * (x.data > 0))

    _register(out, (x,), backward_fn)
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s)

    def backward_fn(g):
        _accum(x, g * s * (1.0 - s))

    _register(out, (x,), backward_fn)
    return out


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        worst = float(x.data.min())
        raise ValueError(f"log requires strictly positive inputs, min value {worst}")
    out = Tensor(np.log(x.data))

    def backward_fn(g):
        _accum(x, g / x.data)

    _register(out, (x,), backward_fn)
    return out


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)
    out = Tensor(r)

    def backward_fn(g):
        _accum(x, g * 0.5 / r)

    _register(out, (x,), backward_fn)
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(x.data, lo, hi))

    def backward_fn(g):
        _accum(x, g * ((x.data >= lo) & (x.data <= hi)))

    _register(out, (x,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def backward_fn(g):
        _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    _register(out, (x,), backward_fn)
    return out


def log_softmax(x: Tensor, axis: int) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    out = Tensor(out_data)

    def backward_fn(g):
        soft = np.exp(out_data)
        _accum(x, g - soft * g.sum(axis=axis, keepdims=True))

    _register(out, (x,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims))

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(g, x.data.shape))

    _register(out, (x,), backward_fn)
    return out


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.data.shape[a] for a in axes]))
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims))

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(g, x.data.shape) / count)

    _register(out, (x,), backward_fn)
    return out


def reduce_max(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max reduction; backward routes the gradient to the first argmax only."""
    if axis is None:
        flat_idx = int(np.argmax(x.data))
        out = Tensor(x.data.reshape(-1)[flat_idx].reshape(()))

        def backward_all(g):
            dx = np.zeros_like(x.data)
            dx.reshape(-1)[flat_idx] = g.reshape(())
            _accum(x, dx)

        _register(out, (x,), backward_all)
        return out

    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    idx_exp = np.expand_dims(idx, axis)
    out_data = np.take_along_axis(x.data, idx_exp, axis=axis)
    out = Tensor(out_data if keepdims else out_data.squeeze(axis))

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx_exp, g, axis=axis)
        _accum(x, dx)

    _register(out, (x,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    out = Tensor(x.data.reshape(shape))

    def backward_fn(g):
        _accum(x, g.reshape(x.data.shape))

    _register(out, (x,), backward_fn)
    return out


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"{axes} is not a permutation of axes for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))

    def backward_fn(g):
        _accum(x, g.transpose(inverse))

    _register(out, (x,), backward_fn)
    return out


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    _register(out, tuple(tensors), backward_fn)
    return out


def gather_lastdim(x: Tensor, idx: np.ndarray) -> Tensor:
    """out[..., k] = x[..., idx[..., k]]; backward scatter-adds."""
    idx = np.asarray(idx)
    if idx.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"index leading dims {idx.shape[:-1]} != tensor leading dims {x.shape[:-1]}")
    q = x.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= q):
        raise IndexError(f"gather index out of range [0, {q})")
    out = Tensor(np.take_along_axis(x.data, idx, axis=-1))

    def backward_fn(g):
        dx = np.zeros_like(x.data)
        lead = int(np.prod(x.shape[:-1], dtype=np.int64))
        rows = np.arange(lead)[:, None]
        np.add.at(dx.reshape(lead, q), (rows, idx.reshape(lead, -1)), g.reshape(lead, -1))
        _accum(x, dx)

    _register(out, (x,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# matmul


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2 if bd.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims disagree: {ad.shape} x {bd.shape}")
    out = Tensor(np.matmul(ad, bd))

    def backward_fn(g):
        if a.requires_grad:
            da = np.matmul(g, bd.swapaxes(-1, -2))
            _accum(a, _unbroadcast(da, ad.shape))
        if b.requires_grad:
            db = np.matmul(ad.swapaxes(-1, -2), g)
            _accum(b, _unbroadcast(db, bd.shape))

    _register(out, (a, b), backward_fn)
    return out


# ---------------------------------------------------------------------------
# convolution


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ConfigError(f"kernel {k} larger than padded input {size + 2 * pad}")
    if span % stride != 0:
        raise ConfigError(
            f"conv output size not exact: (size {size} + 2*pad {pad} - kernel {k}) "
            f"is not divisible by stride {stride}"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def conv2d(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    n, c, h, wid = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeError(f"conv weight expects {cw} input channels, input has {c}")
    oh = _conv_out_size(h, kh, stride, pad)
    ow = _conv_out_size(wid, kw, stride, pad)

    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)          # (n, c*kh*kw, oh*ow)
    wf = w.data.reshape(o, c * kh * kw)
    out_data = np.matmul(wf, cols).reshape(n, o, oh, ow)
    out_data += bias.data[None, :, None, None]
    out = Tensor(out_data)

    def backward_fn(g):
        gf = g.reshape(n, o, oh * ow)
        if bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            dw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
            _accum(w, dw)
        if x.requires_grad:
            dcols = np.matmul(wf.T, gf).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += dcols[:, :, ki, kj]
            dx = dxp[:, :, pad:pad + h, pad:pad + wid] if pad else dxp
            if "conv2d" in _CORRUPT_BACKWARD:
                dx = -dx
            _accum(x, dx)

    _register(out, (x, w, bias), backward_fn)
    return out


# ---------------------------------------------------------------------------
# bilinear upsampling (align_corners=False)

_INTERP_CACHE: dict = {}


def _interp_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    key = (n_in, factor, np.dtype(dtype).str)
    m = _INTERP_CACHE.get(key)
    if m is None:
        n_out = n_in * factor
        src = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
        i0 = np.floor(src).astype(np.int64)
        t = src - i0
        i1 = np.clip(i0 + 1, 0, n_in - 1)
        i0 = np.clip(i0, 0, n_in - 1)
        m = np.zeros((n_out, n_in), dtype=np.float64)
        rows = np.arange(n_out)
        np.add.at(m, (rows, i0), 1.0 - t)
        np.add.at(m, (rows, i1), t)
        m = m.astype(dtype)
        _INTERP_CACHE[key] = m
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    mh = _interp_matrix(h, factor, x.dtype)
    mw = _interp_matrix(w, factor, x.dtype)
    tmp = np.einsum("nchw,Hh->ncHw", x.data, mh)
    out = Tensor(np.einsum("ncHw,Ww->ncHW", tmp, mw))

    def backward_fn(g):
        t = np.einsum("ncHW,Ww->ncHw", g, mw)
        _accum(x, np.einsum("ncHw,Hh->nchw", t, mh))

    _register(out, (x,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# layer norm (over the last axis)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def backward_fn(g):
        if gamma.requires_grad:
            _accum(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        if beta.requires_grad:
            _accum(beta, _unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(x, dx)

    _register(out, (x, gamma, beta), backward_fn)
    return out
