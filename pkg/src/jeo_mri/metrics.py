"""PSNR, SSIM and error maps on magnitude images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

CSV_FIELDS = ("method", "scheme", "R", "seed", "psnr_db", "ssim", "mse")


def _pair(test, ref):
    test = np.asarray(test, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch: {test.shape} vs {ref.shape}")
    return test, ref


def mse(test, ref) -> float:
    test, ref = _pair(test, ref)
    return float(np.mean((test - ref) ** 2))


def psnr(test, ref, identical_tol: float = 0.0) -> float:
    """``10 log10(peak^2 / MSE)`` with ``peak = max(ref)``.

    Returns ``inf`` for identical images. ``identical_tol`` widens "identical"
    to a max absolute difference of ``identical_tol * peak``, for inputs that
    only agree to a known storage precision.
    """
    test, ref = _pair(test, ref)
    peak = float(ref.max())
    diff = test - ref
    err = float(np.mean(diff**2))
    if err == 0.0 or float(np.abs(diff).max()) <= identical_tol * peak:
        return math.inf
    return 10.0 * math.log10(peak**2 / err)


def ssim(test, ref, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with an 11x11 Gaussian window and ``data_range = max(ref)``.

    Local statistics use population (not sample) covariance; the mean is taken
    over pixels whose window fits inside the image.
    """
    test, ref = _pair(test, ref)
    truncate = 3.5
    radius = int(truncate * sigma + 0.5)
    win = 2 * radius + 1
    if test.ndim != 2 or min(test.shape) < win:
        raise ValueError(f"SSIM needs a 2-D image of at least {win}x{win}, got {test.shape}")
    L = float(ref.max())
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2

    def blur(a):
        return gaussian_filter(a, sigma=sigma, truncate=truncate, mode="reflect")

    mu_x, mu_y = blur(test), blur(ref)
    sxx = blur(test * test) - mu_x**2
    syy = blur(ref * ref) - mu_y**2
    sxy = blur(test * ref) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    smap = num / den
    return float(smap[radius:-radius, radius:-radius].mean())


def error_map(test, ref) -> np.ndarray:
    test, ref = _pair(test, ref)
    return np.abs(test - ref)


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    mse: float
    method: str = ""
    scheme: str = ""
    R: float = 1.0


def report(x, gt, method: str = "", scheme: str = "", R: float = 1.0, identical_tol: float = 0.0) -> MetricReport:
    """Metrics of the magnitude of ``x`` against the magnitude of ``gt``."""
    a, b = np.abs(x), np.abs(gt)
    return MetricReport(psnr(a, b, identical_tol), ssim(a, b), mse(a, b), method, scheme, float(R))


def mean_report(reports: "list[MetricReport]") -> MetricReport:
    first = reports[0]
    return MetricReport(
        float(np.mean([r.psnr for r in reports])),
        float(np.mean([r.ssim for r in reports])),
        float(np.mean([r.mse for r in reports])),
        first.method,
        first.scheme,
        first.R,
    )


def fmt(v) -> str:
    """Fixed 9-significant-digit formatting; infinities as ``inf``."""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"


def csv_row(rep: MetricReport, seed: int) -> str:
    vals = (rep.method, rep.scheme, rep.R, seed, rep.psnr, rep.ssim, rep.mse)
    return ",".join(fmt(v) for v in vals)
