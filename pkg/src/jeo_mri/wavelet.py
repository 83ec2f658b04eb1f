"""Single-level stationary Haar transform on a circular grid.

Analysis filters are ``low = [1, 1] / 2`` and ``high = [1, -1] / 2`` applied as
circular convolutions along both image axes without decimation. The four
subbands (LL, LH, HL, HH) form a tight frame: summing ``A^H A`` over all of
them gives the identity. The edge machinery only uses the three detail
subbands, stacked on a new axis just before the image axes in the order
LH, HL, HH.

Subband letters name the filter along the width axis first and the height
axis second, so ``HL`` responds to intensity changes between columns.
"""

from __future__ import annotations

import numpy as np

SUBBANDS = ("LH", "HL", "HH")


def _low(x, axis):
    return 0.5 * (x + np.roll(x, 1, axis=axis))


def _high(x, axis):
    return 0.5 * (x - np.roll(x, 1, axis=axis))


def _low_adj(y, axis):
    return 0.5 * (y + np.roll(y, -1, axis=axis))


def _high_adj(y, axis):
    return 0.5 * (y - np.roll(y, -1, axis=axis))


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim < 2 or img.shape[-1] < 2 or img.shape[-2] < 2:
        raise ValueError(f"image must be at least 2x2, got shape {img.shape}")
    return img


def swt_detail(img: np.ndarray) -> np.ndarray:
    """Detail subbands of ``img`` with shape ``(..., 3, H, W)``."""
    img = _check_image(img)
    lo_w = _low(img, -1)
    hi_w = _high(img, -1)
    lh = _high(lo_w, -2)
    hl = _low(hi_w, -2)
    hh = _high(hi_w, -2)
    return np.stack([lh, hl, hh], axis=-3)


def swt_detail_adjoint(coeffs: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`swt_detail`: ``(..., 3, H, W)`` to ``(..., H, W)``."""
    coeffs = np.asarray(coeffs)
    if coeffs.ndim < 3 or coeffs.shape[-3] != 3:
        raise ValueError(f"expected (..., 3, H, W) coefficients, got {coeffs.shape}")
    _check_image(coeffs[..., 0, :, :])
    lh, hl, hh = coeffs[..., 0, :, :], coeffs[..., 1, :, :], coeffs[..., 2, :, :]
    lo_w = _high_adj(lh, -2)
    hi_w = _low_adj(hl, -2) + _high_adj(hh, -2)
    return _low_adj(lo_w, -1) + _high_adj(hi_w, -1)


def swt_approx(img: np.ndarray) -> np.ndarray:
    """The LL subband, excluded from :func:`swt_detail`."""
    img = _check_image(img)
    return _low(_low(img, -1), -2)


def swt_approx_adjoint(coeffs: np.ndarray) -> np.ndarray:
    coeffs = _check_image(coeffs)
    return _low_adj(_low_adj(coeffs, -2), -1)


def minmax_normalize(mag: np.ndarray) -> np.ndarray:
    """Min-max scale ``(..., 3, H, W)`` magnitudes jointly over all subbands.

    The min and max are taken over the last three axes together, so a batch
    of maps is normalized sample by sample. A flat input maps to zeros.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim < 3:
        raise ValueError(f"expected (..., 3, H, W) magnitudes, got {mag.shape}")
    lo = mag.min(axis=(-3, -2, -1), keepdims=True)
    hi = mag.max(axis=(-3, -2, -1), keepdims=True)
    span = hi - lo
    flat = span == 0
    out = (mag - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 0.0, out)
