"""Minimal reverse-mode differentiation over numpy arrays.

Only the primitives used by the unrolled reconstruction are provided. Every
primitive accepts either plain arrays (and then simply evaluates) or
:class:`Var` values recorded on a :class:`Tape`, so solver code is written once
and runs both for inference and for training.

Gradient convention for complex values: the gradient of a real loss ``L`` with
respect to ``z = a + ib`` is stored as ``dL/da + i dL/db``. Under this
convention a complex-linear operator pulls gradients back through its adjoint,
and gradients flowing into real-valued inputs keep only their real part.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

from . import mri_model, wavelet
from .numerics import fft2c as _fft2c, ifft2c as _ifft2c


class TensorSet:
    """Named float64 arrays with same-shaped gradient slots."""

    def __init__(self, arrays: "dict[str, np.ndarray] | None" = None):
        self.values: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, arr in (arrays or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        arr = np.array(arr, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def items(self):
        return self.values.items()

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "TensorSet":
        return TensorSet({k: v.copy() for k, v in self.values.items()})


class Var:
    """A value recorded on a tape."""

    __array_ufunc__ = None  # make ndarray <op> Var defer to Var's reflected ops
    __slots__ = ("value", "tape", "index", "grad")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.value)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Ordered record of primitive evaluations.

    Nodes are appended as they are evaluated, so the record is already in
    topological order and the reverse sweep just walks it backwards.
    """

    def __init__(self):
        self._nodes: list = []
        self.last_sweep: list[int] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        """Drop all recorded nodes.

        Vars point back at their tape, so a tape is otherwise only reclaimed by
        the cyclic collector, which can let saved intermediates pile up.
        """
        self._nodes = []

    def var(self, value, sink: "Callable[[np.ndarray], None] | None" = None) -> Var:
        """Register a leaf. ``sink`` receives its gradient after a sweep."""
        v = Var(np.asarray(value), self, len(self._nodes))
        self._nodes.append((v, (), None, sink))
        return v

    def param(self, tensors: TensorSet, name: str) -> Var:
        """Leaf whose gradient accumulates into ``tensors.grads[name]``."""

        def sink(g, _ts=tensors, _name=name):
            _ts.grads[_name] += g

        return self.var(tensors[name], sink)

    def record(self, value, parents: tuple, vjp: Callable) -> Var:
        v = Var(np.asarray(value), self, len(self._nodes))
        self._nodes.append((v, parents, vjp, None))
        return v

    def backward(self, out: Var, grad=None) -> None:
        """Propagate ``grad`` (default 1 for scalars) from ``out`` to all leaves."""
        if out.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if grad is None:
            if out.value.size != 1:
                raise ValueError("a seed gradient is required for non-scalar outputs")
            grad = np.ones_like(out.value.real)
        grad = np.asarray(grad)
        if grad.shape != out.value.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != output shape {out.value.shape}")

        grads: dict[int, np.ndarray] = {out.index: grad}
        self.last_sweep = []
        for node in reversed(self._nodes[: out.index + 1]):
            var, parents, vjp, sink = node
            g = grads.pop(var.index, None)
            if g is None:
                continue
            self.last_sweep.append(var.index)
            if vjp is None:
                var.grad = g
                if sink is not None:
                    sink(g)
                continue
            for parent, pg in zip(parents, vjp(g)):
                if not isinstance(parent, Var) or pg is None:
                    continue
                pg = _unbroadcast(np.asarray(pg), parent.value.shape)
                if not np.iscomplexobj(parent.value):
                    pg = pg.real
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def value(x):
    """Underlying array of ``x`` (identity for plain arrays)."""
    return x.value if isinstance(x, Var) else x


def _tape_of(args: Iterable) -> "Tape | None":
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise ValueError("operands recorded on different tapes")
            tape = a.tape
    return tape


def _unary(x, fn, vjp):
    if not isinstance(x, Var):
        return fn(x)
    xv = x.value
    out = fn(xv)
    return x.tape.record(out, (x,), lambda g: (vjp(g, xv, out),))


# --- arithmetic ----------------------------------------------------------------


def add(a, b):
    tape = _tape_of((a, b))
    out = value(a) + value(b)
    if tape is None:
        return out
    return tape.record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    tape = _tape_of((a, b))
    out = value(a) - value(b)
    if tape is None:
        return out
    return tape.record(out, (a, b), lambda g: (g, -g))


def neg(a):
    return _unary(a, np.negative, lambda g, x, y: -g)


def mul(a, b):
    tape = _tape_of((a, b))
    av, bv = value(a), value(b)
    out = av * bv
    if tape is None:
        return out
    return tape.record(out, (a, b), lambda g: (g * np.conj(bv), g * np.conj(av)))


def div(a, b):
    tape = _tape_of((a, b))
    av, bv = value(a), value(b)
    out = av / bv
    if tape is None:
        return out

    def vjp(g):
        ga = g / np.conj(bv)
        return ga, -ga * np.conj(out)

    return tape.record(out, (a, b), vjp)


def getitem(a, idx):
    def vjp(g, x, y):
        full = np.zeros_like(x, dtype=np.result_type(x, g))
        np.add.at(full, idx, g)
        return full

    return _unary(a, lambda x: x[idx], vjp)


# --- pointwise nonlinearities -----------------------------------------------------


def abs2(z):
    """``|z|^2`` (real output)."""
    return _unary(z, lambda v: (v * np.conj(v)).real, lambda g, x, y: 2.0 * g * x)


def absolute(x):
    """``|x|`` for real inputs; the subgradient at 0 is 0."""
    return _unary(x, np.abs, lambda g, x, y: g * np.sign(x))


def real(z):
    return _unary(z, np.real, lambda g, x, y: g)


def imag(z):
    return _unary(z, np.imag, lambda g, x, y: 1j * g)


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda g, x, y: g * (x > 0))


def clamp(x, lo: float = 0.0, hi: float = 1.0):
    """Clip to ``[lo, hi]``; the gradient passes on the closed interval."""
    return _unary(
        x,
        lambda v: np.clip(v, lo, hi),
        lambda g, x, y: g * ((x >= lo) & (x <= hi)),
    )


def softplus(x):
    """``log(1 + exp(x))``, evaluated stably."""
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda g, x, y: g * expit(x))


# --- reductions -------------------------------------------------------------------


def total(x):
    return _unary(x, np.sum, lambda g, x, y: np.broadcast_to(g, x.shape))


def mean(x):
    return _unary(x, np.mean, lambda g, x, y: np.broadcast_to(g / x.size, x.shape))


# --- complex <-> channel packing ----------------------------------------------------


def to_channels(z):
    """Complex ``(..., H, W)`` to real ``(..., 2, H, W)`` (re, im)."""
    return _unary(
        z,
        lambda v: np.stack([v.real, v.imag], axis=-3),
        lambda g, x, y: g[..., 0, :, :] + 1j * g[..., 1, :, :],
    )


def from_channels(c):
    """Real ``(..., 2, H, W)`` to complex ``(..., H, W)``."""
    return _unary(
        c,
        lambda v: v[..., 0, :, :] + 1j * v[..., 1, :, :],
        lambda g, x, y: np.stack([g.real, g.imag], axis=-3),
    )


# --- linear operators -------------------------------------------------------------


def fft2c(x):
    return _unary(x, _fft2c, lambda g, x, y: _ifft2c(g))


def ifft2c(x):
    return _unary(x, _ifft2c, lambda g, x, y: _fft2c(g))


def swt_detail(x):
    return _unary(x, wavelet.swt_detail, lambda g, x, y: wavelet.swt_detail_adjoint(g))


def swt_detail_adjoint(c):
    return _unary(c, wavelet.swt_detail_adjoint, lambda g, x, y: wavelet.swt_detail(g))


def dc_gradient(x, cs: "mri_model.CoilSystem"):
    """Data-consistency gradient; its Jacobian is the self-adjoint ``A^H A``."""
    return _unary(
        x,
        lambda v: mri_model.dc_gradient(v, cs),
        lambda g, x, y: mri_model.normal_op(g, cs.sens, cs.mask),
    )


def haar_shrink(x, threshold: float):
    """Soft-threshold the detail subbands and resynthesize with the LL part."""

    def fwd(v):
        c = wavelet.swt_detail(v)
        mag = np.abs(c)
        shrunk = np.where(mag > threshold, (1.0 - threshold / np.where(mag > 0, mag, 1.0)) * c, 0.0)
        return wavelet.swt_approx_adjoint(wavelet.swt_approx(v)) + wavelet.swt_detail_adjoint(shrunk)

    def vjp(g, x, y):
        keep = np.abs(wavelet.swt_detail(x)) > threshold
        low = wavelet.swt_approx_adjoint(wavelet.swt_approx(g))
        return low + wavelet.swt_detail_adjoint(keep * wavelet.swt_detail(g))

    return _unary(x, fwd, vjp)


# --- convolution ------------------------------------------------------------------

def _patches(x: np.ndarray) -> np.ndarray:
    """im2col for a circular 3x3 window: ``(N, C, H, W)`` to ``(N, C*9, H*W)``."""
    n, c, h, w = x.shape
    xp = np.empty((n, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    xp[:, :, 0, 1:-1] = x[:, :, -1]
    xp[:, :, -1, 1:-1] = x[:, :, 0]
    xp[:, :, :, 0] = xp[:, :, :, -2]
    xp[:, :, :, -1] = xp[:, :, :, 1]
    p = np.empty((n, c, 3, 3, h, w), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            p[:, :, di, dj] = xp[:, :, di:di + h, dj:dj + w]
    return p.reshape(n, c * 9, h * w)


def conv2d(x, weight, bias):
    """3x3 cross-correlation with circular padding.

    ``x`` is ``(..., Cin, H, W)``, ``weight`` is ``(Cout, Cin, 3, 3)`` and
    ``bias`` is ``(Cout,)``. Leading axes of ``x`` are flattened into a batch.
    """
    tape = _tape_of((x, weight, bias))
    xv, wv, bv = value(x), value(weight), value(bias)
    cout, cin = wv.shape[:2]
    if xv.ndim < 3 or xv.shape[-3] != cin:
        raise ValueError(f"conv expects {cin} input channels, got shape {xv.shape}")
    lead = xv.shape[:-3]
    h, w = xv.shape[-2:]
    p = _patches(xv.reshape(-1, cin, h, w))
    w2 = wv.reshape(cout, cin * 9)
    out = (np.matmul(w2, p) + bv[:, None]).reshape(*lead, cout, h, w)
    if tape is None:
        return out

    def vjp(g):
        g2 = g.reshape(-1, cout, h * w)
        gx = gw = gb = None
        if isinstance(x, Var):
            # correlation with the flipped, channel-transposed kernel
            wt = wv[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, cout * 9)
            gx = np.matmul(wt, _patches(g2.reshape(-1, cout, h, w))).reshape(xv.shape)
        if isinstance(weight, Var):
            gw = sum(g2[i] @ p[i].T for i in range(g2.shape[0])).reshape(wv.shape)
        if isinstance(bias, Var):
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    return tape.record(out, (x, weight, bias), vjp)
