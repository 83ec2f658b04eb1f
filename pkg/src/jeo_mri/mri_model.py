"""Acquisition model: sampling masks, coil maps, SENSE operators, phantoms.

The forward model for coil ``i`` is ``y_i = U F S_i x`` with ``F`` the
centered orthonormal DFT, ``S_i`` a pixelwise sensitivity map and ``U`` a
binary k-space mask. Arrays may carry leading batch axes; coil arrays keep the
coil axis directly before the image axes, i.e. ``(..., n, H, W)``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import fft2c, ifft2c


class Scheme(str, enum.Enum):
    CARTESIAN_RANDOM = "cartesian-random-lines"
    CARTESIAN_EQUIDISTANT = "cartesian-equidistant-lines"
    RANDOM_POINTWISE = "random-pointwise"

    @classmethod
    def parse(cls, name: "str | Scheme") -> "Scheme":
        if isinstance(name, Scheme):
            return name
        key = str(name).strip().lower()
        aliases = {
            "random": cls.RANDOM_POINTWISE,
            "pointwise": cls.RANDOM_POINTWISE,
            "cartesian": cls.CARTESIAN_RANDOM,
            "cartesian-random": cls.CARTESIAN_RANDOM,
            "equidistant": cls.CARTESIAN_EQUIDISTANT,
            "cartesian-equidistant": cls.CARTESIAN_EQUIDISTANT,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown sampling scheme {name!r}") from None

    @property
    def is_cartesian(self) -> bool:
        return self is not Scheme.RANDOM_POINTWISE


@dataclass(frozen=True)
class SamplingMask:
    pattern: np.ndarray  # (H, W) uint8, 1 = sampled
    scheme: Scheme
    acceleration: float
    acs_lines: int

    @property
    def fraction(self) -> float:
        return float(self.pattern.mean())


@dataclass(frozen=True)
class CoilSystem:
    """Coil maps, binary mask and masked k-space for one sample or a batch."""

    sens: np.ndarray  # (..., n, H, W) complex
    mask: np.ndarray  # (..., H, W) float 0/1
    kspace: np.ndarray  # (..., n, H, W) complex

    @property
    def n(self) -> int:
        return self.sens.shape[-3]

    @property
    def shape(self) -> tuple[int, int]:
        return self.sens.shape[-2:]

    def mask_k(self) -> np.ndarray:
        return self.mask[..., None, :, :]


def default_acs(width: int) -> int:
    return width // 16


def _acs_columns(width: int, acs_lines: int) -> np.ndarray:
    start = width // 2 - acs_lines // 2
    return np.arange(start, start + acs_lines)


def make_mask(
    scheme: "Scheme | str",
    shape: tuple[int, int],
    R: float,
    acs_lines: int | None = None,
    seed: int = 0,
) -> SamplingMask:
    """Build a binary k-space sampling mask with acceleration ``R``.

    Cartesian schemes sample whole columns (the width axis is phase encode).
    ``acs_lines`` center columns are always sampled; random schemes fill the
    remaining budget (``round(W / R)`` lines or ``round(H * W / R)`` points)
    by drawing without replacement from the non-ACS positions.
    """
    scheme = Scheme.parse(scheme)
    H, W = shape
    if R < 1:
        raise ValueError(f"acceleration must be >= 1, got {R}")
    if acs_lines is None:
        acs_lines = default_acs(W)
    if not 0 <= acs_lines < W:
        raise ValueError(f"acs_lines must lie in [0, {W}), got {acs_lines}")

    if R == 1:
        return SamplingMask(np.ones((H, W), np.uint8), scheme, float(R), acs_lines)

    rng = np.random.default_rng(seed)
    acs = _acs_columns(W, acs_lines)
    pattern = np.zeros((H, W), np.uint8)

    if scheme is Scheme.CARTESIAN_EQUIDISTANT:
        step = max(1, int(round(R)))
        pattern[:, ::step] = 1
        pattern[:, acs] = 1
    elif scheme is Scheme.CARTESIAN_RANDOM:
        budget = int(round(W / R))
        if budget < acs_lines:
            raise ValueError(f"R={R} leaves {budget} lines, fewer than {acs_lines} ACS lines")
        rest = np.setdiff1d(np.arange(W), acs)
        picked = rng.choice(rest, size=budget - acs_lines, replace=False)
        pattern[:, acs] = 1
        pattern[:, picked] = 1
    else:
        budget = int(round(H * W / R))
        if budget < acs_lines * H:
            raise ValueError(f"R={R} leaves {budget} samples, fewer than the {acs_lines * H} ACS samples")
        acs_flat = np.zeros((H, W), bool)
        acs_flat[:, acs] = True
        rest = np.flatnonzero(~acs_flat.ravel())
        picked = rng.choice(rest, size=budget - acs_lines * H, replace=False)
        pattern[acs_flat] = 1
        pattern.ravel()[picked] = 1
    return SamplingMask(pattern, scheme, float(R), acs_lines)


def describe_mask(pattern: np.ndarray) -> "tuple[str, float]":
    """Best-effort (scheme label, effective acceleration) of a stored mask.

    The effective acceleration is ``H*W / #sampled``; a complete mask is
    labelled ``full``. Column masks count as equidistant when every multiple
    of the first gap is sampled.
    """
    pattern = np.asarray(pattern) != 0
    count = int(pattern.sum())
    if count == 0:
        raise ValueError("empty mask")
    R = pattern.size / count
    if count == pattern.size:
        return "full", 1.0
    columns = pattern.all(axis=0) | ~pattern.any(axis=0)
    if not columns.all():
        return Scheme.RANDOM_POINTWISE.value, R
    cols = np.flatnonzero(pattern[0])
    if len(cols) > 1 and cols[0] == 0 and np.all(pattern[0, :: cols[1]]):
        return Scheme.CARTESIAN_EQUIDISTANT.value, R
    return Scheme.CARTESIAN_RANDOM.value, R


def _grid(shape):
    H, W = shape
    yy = (np.arange(H) - H // 2) / (H / 2)
    xx = (np.arange(W) - W // 2) / (W / 2)
    return np.meshgrid(yy, xx, indexing="ij")


def normalize_sensitivities(sens: np.ndarray) -> np.ndarray:
    """Scale maps pixelwise so that ``sum_i |S_i|^2 == 1``."""
    rss = np.sqrt(np.sum(np.abs(sens) ** 2, axis=-3, keepdims=True))
    return sens / rss


def make_sensitivities(shape: tuple[int, int], n: int, seed: int = 0) -> np.ndarray:
    """Smooth synthetic coil maps of shape ``(n, H, W)``.

    Each coil is a Gaussian bump centered just outside the image border with a
    gentle linear phase. A single coil gets ``S = 1``.
    """
    if n < 1:
        raise ValueError(f"coil count must be >= 1, got {n}")
    if n == 1:
        return np.ones((1, *shape), np.complex128)
    rng = np.random.default_rng(seed)
    Y, X = _grid(shape)
    maps = []
    for i in range(n):
        angle = 2 * np.pi * i / n + rng.uniform(-0.2, 0.2)
        cy, cx = 1.2 * np.sin(angle), 1.2 * np.cos(angle)
        width = rng.uniform(0.7, 1.0)
        mag = np.exp(-((Y - cy) ** 2 + (X - cx) ** 2) / (2 * width**2))
        a, b, c = rng.uniform(-0.5, 0.5, size=3)
        maps.append(mag * np.exp(1j * (a * X + b * Y + c)))
    return normalize_sensitivities(np.array(maps))


_SHEPP_LOGAN = np.array([
    # intensity, semi-axis a (x), semi-axis b (y), x0, y0, angle (deg)
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
])


def _ellipse(Y, X, a, b, x0, y0, deg):
    t = np.deg2rad(deg)
    xr = (X - x0) * np.cos(t) + (Y - y0) * np.sin(t)
    yr = -(X - x0) * np.sin(t) + (Y - y0) * np.cos(t)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def make_phantom(shape: tuple[int, int], seed: int | None = 0, phase: float = 0.0) -> np.ndarray:
    """Piecewise-constant ellipse phantom, complex, magnitude peak 1.

    ``seed=None`` returns the plain modified Shepp-Logan phantom. Otherwise the
    ellipses are jittered and a few extra random blobs are added. ``phase`` is
    the maximal slope (radians per half field of view) of a random linear phase.
    """
    Y, X = _grid(shape)
    ells = _SHEPP_LOGAN.copy()
    rng = np.random.default_rng(seed)
    if seed is not None:
        scale = rng.uniform(0.8, 1.0)
        ells[:, 1:5] *= scale
        ells[:, 1:3] *= rng.uniform(0.85, 1.15, size=(len(ells), 2))
        ells[2:, 3:5] += rng.uniform(-0.04, 0.04, size=(len(ells) - 2, 2))
        ells[:, 5] += rng.uniform(-10, 10, size=len(ells))
        ells[2:, 0] *= rng.uniform(0.5, 1.5, size=len(ells) - 2)
        extra = []
        for _ in range(rng.integers(2, 5)):
            r = rng.uniform(0.0, 0.4 * scale)
            t = rng.uniform(0, 2 * np.pi)
            extra.append([
                rng.choice([-1, 1]) * rng.uniform(0.1, 0.3),
                rng.uniform(0.04, 0.15),
                rng.uniform(0.04, 0.15),
                r * np.cos(t),
                r * np.sin(t),
                rng.uniform(0, 180),
            ])
        ells = np.vstack([ells, extra])
    img = np.zeros(shape)
    for val, a, b, x0, y0, deg in ells:
        img[_ellipse(Y, X, a, b, x0, y0, deg)] += val
    img = np.clip(img, 0.0, None)
    img /= img.max()
    out = img.astype(np.complex128)
    if phase:
        a, b, c = rng.uniform(-phase, phase, size=3)
        out *= np.exp(1j * (a * X + b * Y + c))
    return out


def _coil(cs: CoilSystem, i: int):
    if not 0 <= i < cs.n:
        raise IndexError(f"coil index {i} out of range for {cs.n} coils")
    return cs.sens[..., i, :, :]


def sense_forward(x: np.ndarray, cs: CoilSystem, i: int) -> np.ndarray:
    """``U F S_i x`` for a single coil."""
    return cs.mask * fft2c(_coil(cs, i) * x)


def sense_adjoint(k: np.ndarray, cs: CoilSystem, i: int) -> np.ndarray:
    """``S_i^H F^H U^H k`` for a single coil."""
    return np.conj(_coil(cs, i)) * ifft2c(cs.mask * k)


def forward_op(x: np.ndarray, sens: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """All coils at once: ``(..., H, W)`` to ``(..., n, H, W)``."""
    return mask[..., None, :, :] * fft2c(sens * x[..., None, :, :])


def adjoint_op(k: np.ndarray, sens: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.sum(np.conj(sens) * ifft2c(mask[..., None, :, :] * k), axis=-3)


def normal_op(x: np.ndarray, sens: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``A^H A x`` for the stacked coil operator ``A``."""
    return adjoint_op(forward_op(x, sens, mask), sens, mask)


def dc_gradient(x: np.ndarray, cs: CoilSystem) -> np.ndarray:
    """Gradient of ``0.5 * sum_i ||U F S_i x - y_i||^2`` with respect to x."""
    resid = forward_op(x, cs.sens, cs.mask) - cs.kspace
    return adjoint_op(resid, cs.sens, cs.mask)


def fidelity(x: np.ndarray, cs: CoilSystem) -> float:
    resid = forward_op(x, cs.sens, cs.mask) - cs.kspace
    return 0.5 * float(np.sum(np.abs(resid) ** 2))


def zero_filled_init(cs: CoilSystem) -> np.ndarray:
    """Coil-combined zero-filled image ``sum_i S_i^H F^H y_i``."""
    return np.sum(np.conj(cs.sens) * ifft2c(cs.kspace), axis=-3)


def synthesize_acquisition(
    gt: np.ndarray,
    n: int,
    mask: "SamplingMask | np.ndarray",
    noise_std: float = 0.0,
    seed: int = 0,
    sens: np.ndarray | None = None,
) -> CoilSystem:
    """Simulate masked multi-coil k-space for the ground-truth image ``gt``.

    White complex Gaussian noise with standard deviation ``noise_std`` per real
    component is added before masking.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    gt = np.asarray(gt, np.complex128)
    pattern = mask.pattern if isinstance(mask, SamplingMask) else mask
    pattern = np.asarray(pattern, np.float64)
    if sens is None:
        sens = make_sensitivities(gt.shape, n, seed)
    elif sens.shape[-3] != n:
        raise ValueError(f"sens has {sens.shape[-3]} coils, expected {n}")
    k = fft2c(sens * gt)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        k = k + noise_std * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return CoilSystem(sens=sens, mask=pattern, kspace=pattern[None] * k)


def stack_systems(systems: list[CoilSystem]) -> CoilSystem:
    """Combine single-sample systems into one batched system."""
    return CoilSystem(
        sens=np.stack([c.sens for c in systems]),
        mask=np.stack([c.mask for c in systems]),
        kspace=np.stack([c.kspace for c in systems]),
    )


# --- dataset container -------------------------------------------------------

DATASET_MAGIC = b"JEOMRI01"


@dataclass(frozen=True)
class Sample:
    gt: np.ndarray
    coils: CoilSystem


def _c64_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<c8").tobytes()


def write_dataset(path: "str | Path", samples: list[Sample]) -> None:
    """Write samples to the little-endian ``JEOMRI01`` container."""
    if not samples:
        raise ValueError("cannot write an empty dataset")
    H, W = samples[0].gt.shape
    n = samples[0].coils.n
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<4I", len(samples), H, W, n))
        for s in samples:
            if s.gt.shape != (H, W) or s.coils.sens.shape != (n, H, W):
                raise ValueError("all samples must share shape and coil count")
            fh.write(_c64_bytes(s.gt))
            fh.write(_c64_bytes(s.coils.sens))
            fh.write(np.ascontiguousarray(s.coils.mask, dtype=np.uint8).tobytes())
            fh.write(_c64_bytes(s.coils.kspace))


def read_dataset(path: "str | Path") -> list[Sample]:
    """Read a ``JEOMRI01`` container.

    Values are promoted to complex128 and the maps are renormalized so the
    sum-of-squares invariant holds at double precision.
    """
    data = Path(path).read_bytes()
    if data[:8] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a JEOMRI01 dataset")
    n_samples, H, W, n = struct.unpack_from("<4I", data, 8)
    pos = 24

    def take(count, dtype, shape):
        nonlocal pos
        nbytes = count * np.dtype(dtype).itemsize
        if pos + nbytes > len(data):
            raise ValueError(f"{path}: truncated dataset")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += nbytes
        return arr

    samples = []
    for _ in range(n_samples):
        gt = take(H * W, "<c8", (H, W)).astype(np.complex128)
        sens = take(n * H * W, "<c8", (n, H, W)).astype(np.complex128)
        mask = take(H * W, np.uint8, (H, W)).astype(np.float64)
        kspace = take(n * H * W, "<c8", (n, H, W)).astype(np.complex128)
        samples.append(Sample(gt, CoilSystem(normalize_sensitivities(sens), mask, kspace)))
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return samples
