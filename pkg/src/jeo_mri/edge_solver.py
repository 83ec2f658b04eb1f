"""Non-edge probability map: initialization, learned prox step, closed-form update.

A map has one channel per Haar detail subband, ``(..., 3, H, W)``, with values
in [0, 1]; 1 means "smooth here, push the detail coefficient to zero".
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .proximal_nets import ProximalModule, forward
from .wavelet import minmax_normalize, swt_detail


def init_nonedge_map(x0: np.ndarray) -> np.ndarray:
    """``1 - N(|W x0|)`` with a joint min-max normalization over subbands."""
    return 1.0 - minmax_normalize(np.abs(swt_detail(x0)))


def eo_update(v, wx, alpha, rho):
    """Closed-form minimizer of ``rho/2 |P wx|^2 + alpha/2 |v - P|^2`` per entry.

    Evaluates ``alpha * v / (rho * |wx|^2 + alpha)``, which lies in ``[0, v]``
    for ``v >= 0``.
    """
    a = ad.value(alpha)
    if np.any(np.asarray(a) <= 0):
        raise ValueError("alpha must be positive")
    # ratio first, so rho = 0 (or wx = 0) returns v bit-exactly
    return v * (alpha / (rho * ad.abs2(wx) + alpha))


def edge_prox(p, ern: ProximalModule, tape=None):
    """Learned prox step on the map, clipped back to [0, 1]."""
    return ad.clamp(forward(ern, p, tape), 0.0, 1.0)


def visualize(pne: np.ndarray) -> np.ndarray:
    """Single-channel view of a map: the minimum over subbands."""
    return np.min(pne, axis=-3)
