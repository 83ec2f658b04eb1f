"""Image half of the alternation: learned prox step and one gradient step."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .mri_model import CoilSystem, fidelity
from .proximal_nets import ProximalModule, forward
from .wavelet import swt_detail


def image_prox(x, idn: ProximalModule, tape=None):
    """Apply the image module to the (re, im) channel encoding of ``x``."""
    return ad.from_channels(forward(idn, ad.to_channels(x), tape))


def image_step(x, z, pne, cs: CoilSystem, rho, beta, s):
    """One gradient step on the image subproblem.

    The bracket is the gradient (w.r.t. real and imaginary parts) of
    ``0.5 sum_i ||U F S_i x - y_i||^2 + rho/2 ||P W x||^2 + beta/2 ||z - x||^2``.
    Passing ``pne=None`` drops the edge term entirely.
    """
    grad = ad.dc_gradient(x, cs)
    if pne is not None:
        pwx = pne * ad.swt_detail(x)
        # P is real, so P^H P is just P * P
        grad = grad + rho * ad.swt_detail_adjoint(pne * pwx)
    grad = grad - beta * (z - x)
    return x - s * grad


def image_step_noedge(x, z, cs: CoilSystem, beta, s):
    """Image step for the edge-free model (no co-regularizer)."""
    return image_step(x, z, None, cs, 0.0, beta, s)


def image_objective(x, z, pne, cs: CoilSystem, rho: float, beta: float) -> float:
    """Value of the objective that :func:`image_step` descends (plain arrays)."""
    val = fidelity(x, cs) + 0.5 * beta * float(np.sum(np.abs(z - x) ** 2))
    if pne is not None:
        val += 0.5 * rho * float(np.sum(np.abs(pne * swt_detail(x)) ** 2))
    return val
