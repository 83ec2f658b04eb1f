"""Centered orthonormal 2-D Fourier transforms and small array helpers.

Images are plain numpy arrays. Complex images are ``complex128`` arrays whose
last two axes are (height, width); any leading axes are treated as a batch.
"""

from __future__ import annotations

import numpy as np

AXES = (-2, -1)


def as_complex(img) -> np.ndarray:
    """Return ``img`` as a complex128 array (no copy if already complex128)."""
    return np.asarray(img, dtype=np.complex128)


def fft2c(img: np.ndarray) -> np.ndarray:
    """Centered, orthonormal 2-D DFT over the last two axes.

    The zero frequency lands at index ``(H // 2, W // 2)``.
    """
    img = np.asarray(img)
    k = np.fft.ifftshift(img, axes=AXES)
    k = np.fft.fft2(k, axes=AXES, norm="ortho")
    return np.fft.fftshift(k, axes=AXES)


def ifft2c(kspace: np.ndarray) -> np.ndarray:
    """Inverse (and adjoint) of :func:`fft2c`."""
    kspace = np.asarray(kspace)
    img = np.fft.ifftshift(kspace, axes=AXES)
    img = np.fft.ifft2(img, axes=AXES, norm="ortho")
    return np.fft.fftshift(img, axes=AXES)


def dot(a: np.ndarray, b: np.ndarray) -> complex:
    """Inner product ``sum(conj(a) * b)``, linear in the second argument."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(a) ** 2)))


def check_finite(arr: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{what} contains non-finite values")
