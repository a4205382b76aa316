"""Reverse-mode autodiff over complex numpy arrays.

Every tensor entry z = a + jb carries a gradient stored as a complex
number g with g.real = dL/da and g.imag = dL/db for the real scalar
loss L. Equivalently g = 2*dL/dconj(z) in Wirtinger terms, so:

  * C-linear ops (add, complex conv, concat, upsampling) backpropagate
    by multiplying the incoming gradient with the conjugated transposed
    linear map, e.g. mul(a, b) sends g to conj(b)*g for a.
  * Holomorphic ops with derivative f' send g to conj(f')*g.
  * Non-holomorphic boundary ops (real, imag, absolute) project: only
    the real part of the incoming gradient carries information, since
    their outputs are real-valued.

Layers that whiten or rectify split into real()/imag() pieces and are
rebuilt from these primitives, so their backward passes come for free.

Graphs are built eagerly; calling backward() on a scalar walks the tape
in reverse topological order. Gradients accumulate into leaf tensors
until zeroed, mirroring the usual training-loop contract.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import NumericalError

_GRAD_ENABLED = True
_DEBUG = False


def set_debug(flag: bool) -> None:
    """Check every op's values/gradients for NaN/Inf (slow; for tests)."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ComplexTensor:
    """A complex array plus its place on the tape."""

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(values)
        if dtype is None:
            dtype = arr.dtype if np.iscomplexobj(arr) else np.complex64
        self.values = np.array(arr, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"ComplexTensor(shape={self.values.shape}, dtype={self.dtype}{tag})"

    def backward(self):
        """Accumulate dL/d(leaf) for every reachable leaf; self must be scalar."""
        if self.values.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[ComplexTensor] = []
        seen: set[int] = set()
        stack: list[tuple[ComplexTensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
                if _DEBUG:
                    for p in node._parents:
                        if p.grad is not None and not np.all(np.isfinite(p.grad)):
                            raise NumericalError(
                                f"non-finite gradient flowing into {p!r}"
                            )

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)


def parameter(values, name: str, dtype=None) -> ComplexTensor:
    """A leaf tensor that accumulates gradients."""
    return ComplexTensor(values, requires_grad=True, name=name, dtype=dtype)


def _coerce(x, like: ComplexTensor) -> ComplexTensor:
    if isinstance(x, ComplexTensor):
        return x
    return ComplexTensor(np.asarray(x), dtype=like.dtype)


def _needs_tape(*tensors: ComplexTensor) -> bool:
    if not _GRAD_ENABLED:
        return False
    stack = list(tensors)
    return any(t.requires_grad or t._parents for t in stack)


def _make(values, parents, backward) -> ComplexTensor:
    out = ComplexTensor.__new__(ComplexTensor)
    out.values = values
    out.grad = None
    out.name = None
    if _DEBUG and not np.all(np.isfinite(values)):
        raise NumericalError("non-finite values produced by an op")
    if _needs_tape(*parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: ComplexTensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.values.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> ComplexTensor:
    a = _coerce(a, b) if not isinstance(a, ComplexTensor) else a
    b = _coerce(b, a)
    out = _make(a.values + b.values, (a, b), None)

    def backward():
        g = out.grad
        _accumulate(a, _unbroadcast(g, a.values.shape))
        _accumulate(b, _unbroadcast(g, b.values.shape))

    out._backward = backward if out._parents else None
    return out


def sub(a, b) -> ComplexTensor:
    a = _coerce(a, b) if not isinstance(a, ComplexTensor) else a
    b = _coerce(b, a)
    out = _make(a.values - b.values, (a, b), None)

    def backward():
        g = out.grad
        _accumulate(a, _unbroadcast(g, a.values.shape))
        _accumulate(b, _unbroadcast(-g, b.values.shape))

    out._backward = backward if out._parents else None
    return out


def neg(a: ComplexTensor) -> ComplexTensor:
    out = _make(-a.values, (a,), None)

    def backward():
        _accumulate(a, -out.grad)

    out._backward = backward if out._parents else None
    return out


def mul(a, b) -> ComplexTensor:
    a = _coerce(a, b) if not isinstance(a, ComplexTensor) else a
    b = _coerce(b, a)
    out = _make(a.values * b.values, (a, b), None)

    def backward():
        g = out.grad
        _accumulate(a, _unbroadcast(np.conj(b.values) * g, a.values.shape))
        _accumulate(b, _unbroadcast(np.conj(a.values) * g, b.values.shape))

    out._backward = backward if out._parents else None
    return out


def div(a, b) -> ComplexTensor:
    a = _coerce(a, b) if not isinstance(a, ComplexTensor) else a
    b = _coerce(b, a)
    vals = a.values / b.values
    out = _make(vals, (a, b), None)

    def backward():
        g = out.grad
        inv = 1.0 / b.values
        _accumulate(a, _unbroadcast(np.conj(inv) * g, a.values.shape))
        _accumulate(b, _unbroadcast(np.conj(-vals * inv) * g, b.values.shape))

    out._backward = backward if out._parents else None
    return out


def sqrt(a: ComplexTensor) -> ComplexTensor:
    vals = np.sqrt(a.values)
    out = _make(vals, (a,), None)

    def backward():
        _accumulate(a, np.conj(0.5 / vals) * out.grad)

    out._backward = backward if out._parents else None
    return out


def real(a: ComplexTensor) -> ComplexTensor:
    """Real part, as a real-valued complex tensor."""
    out = _make(a.values.real.astype(a.values.dtype), (a,), None)

    def backward():
        _accumulate(a, out.grad.real.astype(a.values.dtype))

    out._backward = backward if out._parents else None
    return out


def imag(a: ComplexTensor) -> ComplexTensor:
    """Imaginary part, as a real-valued complex tensor."""
    out = _make(a.values.imag.astype(a.values.dtype), (a,), None)

    def backward():
        _accumulate(a, (1j * out.grad.real).astype(a.values.dtype))

    out._backward = backward if out._parents else None
    return out


def absolute(a: ComplexTensor) -> ComplexTensor:
    """Complex modulus, with subgradient 0 at the origin."""
    mag = np.abs(a.values)
    out = _make(mag.astype(a.values.dtype), (a,), None)

    def backward():
        safe = np.where(mag > 0, mag, 1.0)
        unit = np.where(mag > 0, a.values / safe, 0.0)
        _accumulate(a, (out.grad.real * unit).astype(a.values.dtype))

    out._backward = backward if out._parents else None
    return out


def reduce_sum(a: ComplexTensor, axis=None, keepdims: bool = False) -> ComplexTensor:
    vals = a.values.sum(axis=axis, keepdims=keepdims)
    out = _make(np.asarray(vals), (a,), None)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.values.shape))

    out._backward = backward if out._parents else None
    return out


def reduce_mean(a: ComplexTensor, axis=None, keepdims: bool = False) -> ComplexTensor:
    if axis is None:
        n = a.values.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.values.shape[ax]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors, axis: int = -1) -> ComplexTensor:
    tensors = list(tensors)
    vals = np.concatenate([t.values for t in tensors], axis=axis)
    out = _make(vals, tuple(tensors), None)
    sizes = [t.values.shape[axis] for t in tensors]

    def backward():
        g = out.grad
        start = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            _accumulate(t, g[tuple(sl)])
            start += size

    out._backward = backward if out._parents else None
    return out


def channel_slice(a: ComplexTensor, start: int, stop: int) -> ComplexTensor:
    """Slice along the trailing (channel) axis."""
    out = _make(np.ascontiguousarray(a.values[..., start:stop]), (a,), None)

    def backward():
        g_full = np.zeros_like(a.values)
        g_full[..., start:stop] = out.grad
        _accumulate(a, g_full)

    out._backward = backward if out._parents else None
    return out


def upsample2x(a: ComplexTensor) -> ComplexTensor:
    """Nearest-neighbour 2x upsampling of an (N, H, W, C) tensor."""
    vals = np.repeat(np.repeat(a.values, 2, axis=1), 2, axis=2)
    out = _make(vals, (a,), None)

    def backward():
        n, h2, w2, c = out.grad.shape
        g = out.grad.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))
        _accumulate(a, g)

    out._backward = backward if out._parents else None
    return out


def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Asymmetric SAME padding: out = ceil(size/stride), extra on the far side."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    lo = total // 2
    return lo, total - lo


def conv2d(x: ComplexTensor, w: ComplexTensor, b: ComplexTensor | None = None,
           stride: tuple[int, int] = (1, 1)) -> ComplexTensor:
    """Complex 2-D convolution with SAME zero padding.

    x: (N, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,) or None.
    Implemented as one im2col matrix product in the complex domain; the
    backward pass multiplies by the conjugated weight/patch matrices.
    """
    n, h, wd, cin = x.values.shape
    kh, kw, wcin, cout = w.values.shape
    if wcin != cin:
        raise ValueError(f"conv weight expects {wcin} input channels, got {cin}")
    sh, sw = stride
    ph = _same_pad(h, kh, sh)
    pw = _same_pad(wd, kw, sw)
    ho = -(-h // sh)
    wo = -(-wd // sw)
    xp = np.pad(x.values, ((0, 0), ph, pw, (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]  # (N, Ho, Wo, Cin, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    cols = cols.reshape(n * ho * wo, kh * kw * cin)
    w_mat = w.values.reshape(kh * kw * cin, cout)
    out_mat = cols @ w_mat
    if b is not None:
        out_mat = out_mat + b.values
    parents = (x, w) if b is None else (x, w, b)
    out = _make(out_mat.reshape(n, ho, wo, cout), parents, None)

    def backward():
        g_mat = out.grad.reshape(n * ho * wo, cout)
        if w.requires_grad or w._parents:
            _accumulate(w, (cols.conj().T @ g_mat).reshape(w.values.shape))
        if b is not None and (b.requires_grad or b._parents):
            _accumulate(b, g_mat.sum(axis=0))
        if x.requires_grad or x._parents:
            g_cols = (g_mat @ w_mat.conj().T).reshape(n, ho, wo, kh, kw, cin)
            g_xp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    g_xp[:, i:i + sh * ho:sh, j:j + sw * wo:sw, :] += g_cols[:, :, :, i, j, :]
            _accumulate(x, g_xp[:, ph[0]:ph[0] + h, pw[0]:pw[0] + wd, :])

    out._backward = backward if out._parents else None
    return out


def cprelu(x: ComplexTensor, alpha: ComplexTensor) -> ComplexTensor:
    """Split PReLU: PReLU(Re x; Re alpha) + j*PReLU(Im x; Im alpha).

    alpha holds one complex slope per channel, applied where the
    respective part is negative.
    """
    xr = x.values.real
    xi = x.values.imag
    ar = alpha.values.real
    ai = alpha.values.imag
    pos_r = xr >= 0
    pos_i = xi >= 0
    vals = (np.where(pos_r, xr, ar * xr)
            + 1j * np.where(pos_i, xi, ai * xi)).astype(x.values.dtype)
    out = _make(vals, (x, alpha), None)

    def backward():
        gr = out.grad.real
        gi = out.grad.imag
        if x.requires_grad or x._parents:
            gx = (np.where(pos_r, gr, ar * gr)
                  + 1j * np.where(pos_i, gi, ai * gi))
            _accumulate(x, gx.astype(x.values.dtype))
        if alpha.requires_grad or alpha._parents:
            axes = tuple(range(x.values.ndim - 1))
            ga_r = np.where(pos_r, 0.0, gr * xr).sum(axis=axes)
            ga_i = np.where(pos_i, 0.0, gi * xi).sum(axis=axes)
            _accumulate(alpha, (ga_r + 1j * ga_i).astype(alpha.values.dtype))

    out._backward = backward if out._parents else None
    return out


def l1_loss(estimate: ComplexTensor, target) -> ComplexTensor:
    """Sum of complex moduli of the residual (subgradient 0 at zeros)."""
    target = _coerce(target, estimate)
    return reduce_sum(absolute(sub(estimate, target)))
