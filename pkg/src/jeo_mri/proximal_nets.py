"""Proximal modules that stand in for the learned edge and image priors.

Three kinds share one call signature:

* ``identity`` returns its input,
* ``shrinkage`` soft-thresholds the stationary Haar details of each channel,
* ``tiny-cnn`` is a residual three-layer 3x3 conv net ``x + body(x)``.

Inputs are real arrays of shape ``(..., C, H, W)``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, TensorSet

HIDDEN = 8
WEIGHT_MAGIC = b"JEOW0001"


class Kind(str, enum.Enum):
    IDENTITY = "identity"
    SHRINKAGE = "shrinkage"
    TINY_CNN = "tiny-cnn"


@dataclass
class ProximalModule:
    kind: Kind
    channels: int
    threshold: float = 0.0
    weights: TensorSet = field(default_factory=TensorSet)

    @property
    def in_channels(self) -> int:
        return self.channels

    @property
    def out_channels(self) -> int:
        return self.channels

    @property
    def trainable(self) -> bool:
        return self.kind is Kind.TINY_CNN


def identity(channels: int) -> ProximalModule:
    return ProximalModule(Kind.IDENTITY, channels)


def shrinkage(channels: int, threshold: float) -> ProximalModule:
    if threshold <= 0:
        raise ValueError("shrinkage threshold must be positive")
    return ProximalModule(Kind.SHRINKAGE, channels, threshold=float(threshold))


def tiny_cnn(channels: int, rng: "np.random.Generator | int | None" = 0, zero_last: bool = True) -> ProximalModule:
    """Residual conv net ``C -> 8 -> 8 -> C`` with ReLUs in between.

    Hidden layers get He-uniform weights. With ``zero_last`` the output layer
    starts at zero, so the module is an exact identity before training.
    """
    rng = np.random.default_rng(rng)
    shapes = [(HIDDEN, channels), (HIDDEN, HIDDEN), (channels, HIDDEN)]
    ws = TensorSet()
    for i, (cout, cin) in enumerate(shapes, start=1):
        fan_in = cin * 9
        bound = np.sqrt(6.0 / fan_in)
        if i == len(shapes) and zero_last:
            ws[f"conv{i}.weight"] = np.zeros((cout, cin, 3, 3))
        else:
            ws[f"conv{i}.weight"] = rng.uniform(-bound, bound, size=(cout, cin, 3, 3))
        ws[f"conv{i}.bias"] = np.zeros(cout)
    return ProximalModule(Kind.TINY_CNN, channels, weights=ws)


def make_module(kind: "Kind | str", channels: int, rng=0, threshold: float = 0.05) -> ProximalModule:
    kind = Kind(kind)
    if kind is Kind.IDENTITY:
        return identity(channels)
    if kind is Kind.SHRINKAGE:
        return shrinkage(channels, threshold)
    return tiny_cnn(channels, rng)


def forward(module: ProximalModule, x, tape: Tape | None = None):
    """Apply ``module`` to ``x``; parameters are recorded on ``tape`` if given."""
    channels = ad.value(x).shape[-3] if ad.value(x).ndim >= 3 else None
    if channels != module.channels:
        raise ValueError(f"module expects {module.channels} channels, got input of shape {ad.value(x).shape}")
    if module.kind is Kind.IDENTITY:
        return x
    if module.kind is Kind.SHRINKAGE:
        return ad.haar_shrink(x, module.threshold)

    ws = module.weights
    if tape is not None:
        p = {name: tape.param(ws, name) for name in ws}
    else:
        p = dict(ws.items())
    h = ad.relu(ad.conv2d(x, p["conv1.weight"], p["conv1.bias"]))
    h = ad.relu(ad.conv2d(h, p["conv2.weight"], p["conv2.bias"]))
    return x + ad.conv2d(h, p["conv3.weight"], p["conv3.bias"])


def positive_param(raw):
    """Smooth positive reparameterization ``log(1 + exp(raw))``."""
    return ad.softplus(raw)


def inverse_positive(y: float) -> float:
    """Raw value whose :func:`positive_param` is ``y`` (``-inf`` for 0)."""
    if y < 0:
        raise ValueError("positive parameters cannot be negative")
    if y == 0:
        return -np.inf
    if y > 30:
        return float(y)
    return float(np.log(np.expm1(y)))


# --- weight files -----------------------------------------------------------------


def encode_weights(arrays: "dict[str, np.ndarray]") -> bytes:
    """Serialize named float64 arrays in the ``JEOW0001`` layout."""
    out = [WEIGHT_MAGIC]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def decode_weights(data: bytes) -> "dict[str, np.ndarray]":
    if data[:8] != WEIGHT_MAGIC:
        raise ValueError("not a JEOW0001 weight blob")
    pos = 8
    arrays: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 8 * count > len(data):
                raise ValueError("truncated weight blob")
            arrays[name] = np.frombuffer(data, "<f8", count, pos).reshape(dims).copy()
            pos += 8 * count
    except struct.error as exc:
        raise ValueError("truncated weight blob") from exc
    return arrays


def save_weights(path: "str | Path", arrays: "dict[str, np.ndarray]") -> None:
    Path(path).write_bytes(encode_weights(arrays))


def load_weights(path: "str | Path") -> "dict[str, np.ndarray]":
    return decode_weights(Path(path).read_bytes())
