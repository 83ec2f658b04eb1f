"""Desk-scale datasets and the ablation studies built on them.

Every study trains each variant under one shared budget (epochs, batch size,
learning rate, seeds) and scores it on held-out samples. Variants are
independent, so they can be spread over worker processes; ``JEO_THREADS``
caps the worker count (default 1, i.e. run in-process).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import metrics
from .metrics import MetricReport
from .mri_model import (
    Sample,
    Scheme,
    make_mask,
    make_phantom,
    synthesize_acquisition,
    zero_filled_init,
)
from .pipeline import evaluate, make_plan, train

EDGE_RS = (2.0, 4.0, 6.0, 8.0, 10.0)
STRATEGY_KS = (1, 2, 3, 4, 5, 6, 7)
MODULE_GRID = {
    # label: (ern, idn)
    "neither": ("identity", "identity"),
    "ern-only": ("tiny-cnn", "identity"),
    "idn-only": ("identity", "tiny-cnn"),
    "both": ("tiny-cnn", "tiny-cnn"),
}


@dataclass(frozen=True)
class DeskConfig:
    """Data and training budget shared by all variants of a study."""

    samples: int = 40
    train_samples: int = 32
    shape: tuple = (64, 64)
    coils: int = 4
    scheme: str = "random-pointwise"
    R: float = 4.0
    acs: "int | None" = None
    noise_std: float = 0.01
    phase: float = 0.5
    data_seed: int = 1
    K: int = 5
    strategy: str = "non-shared"
    epochs: int = 150
    batch: int = 2
    lr0: float = 0.01
    gamma1: float = 1.0
    gamma2: float = 0.1
    seed: int = 0


def _seeds(seed: int, n: int) -> "tuple[int, list[int], list[int]]":
    """Mask seed, per-sample phantom seeds and per-sample coil/noise seeds."""
    state = np.random.SeedSequence(seed).generate_state(2 * n + 1, dtype=np.uint32)
    return int(state[0]), [int(s) for s in state[1:n + 1]], [int(s) for s in state[n + 1:]]


def phantoms(n: int, shape, phase: float, seed: int) -> list[np.ndarray]:
    _, ph, _ = _seeds(seed, n)
    return [make_phantom(tuple(shape), seed=s, phase=phase) for s in ph]


def acquire(
    gts: Sequence[np.ndarray], coils: int, scheme, R: float, acs, noise_std: float, seed: int
) -> list[Sample]:
    """Simulate one acquisition per image, all under a single mask."""
    mask_seed, _, acq = _seeds(seed, len(gts))
    mask = make_mask(scheme, gts[0].shape, R, acs, mask_seed)
    return [Sample(gt, synthesize_acquisition(gt, coils, mask, noise_std, s)) for gt, s in zip(gts, acq)]


def desk_samples(cfg: DeskConfig, R: "float | None" = None) -> list[Sample]:
    """The phantom dataset of ``cfg``; ``R`` overrides the acceleration only."""
    gts = phantoms(cfg.samples, cfg.shape, cfg.phase, cfg.data_seed)
    return acquire(gts, cfg.coils, cfg.scheme, cfg.R if R is None else R, cfg.acs, cfg.noise_std, cfg.data_seed)


def resample(samples: Sequence[Sample], scheme, R: float, acs, noise_std: float, seed: int) -> list[Sample]:
    """Re-acquire existing samples under a new mask, keeping their coil maps."""
    mask_seed, _, acq = _seeds(seed, len(samples))
    mask = make_mask(scheme, samples[0].gt.shape, R, acs, mask_seed)
    out = []
    for s, sd in zip(samples, acq):
        cs = synthesize_acquisition(s.gt, s.coils.n, mask, noise_std, sd, sens=s.coils.sens)
        out.append(Sample(s.gt, cs))
    return out


def split(samples: Sequence[Sample], train_samples: int) -> "tuple[list[Sample], list[Sample]]":
    if not 0 < train_samples < len(samples):
        raise ValueError(f"need 0 < train_samples < {len(samples)}, got {train_samples}")
    return list(samples[:train_samples]), list(samples[train_samples:])


def score(recons, test: Sequence[Sample], method: str, scheme: str, R: float) -> MetricReport:
    reps = [metrics.report(x, s.gt, method, scheme, R) for x, s in zip(recons, test)]
    return metrics.mean_report(reps)


def zero_filled_report(test: Sequence[Sample], scheme: str, R: float) -> MetricReport:
    return score([zero_filled_init(s.coils) for s in test], test, "zero-filled", scheme, R)


# --- variants ---------------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    """One trained configuration: a label, an acceleration and plan options."""

    method: str
    R: float
    plan: dict = field(default_factory=dict)


@dataclass
class VariantResult:
    variant: Variant
    report: MetricReport
    history: list


def run_variant(variant: Variant, cfg: DeskConfig, samples: "Sequence[Sample] | None" = None) -> VariantResult:
    """Train ``variant`` on the training split and score it on the test split.

    ``samples`` (already acquired at ``variant.R``) skips the data build.
    """
    if samples is None:
        samples = desk_samples(cfg, variant.R)
    tr, te = split(samples, cfg.train_samples)
    opts = dict(K=cfg.K, strategy=cfg.strategy, seed=cfg.seed)
    opts.update(variant.plan)
    plan = make_plan(**opts)
    res = train(tr, plan, cfg.epochs, cfg.batch, cfg.lr0, cfg.seed, cfg.gamma1, cfg.gamma2)
    scheme = Scheme.parse(cfg.scheme).value
    rep = score(evaluate(te, plan), te, variant.method, scheme, variant.R)
    return VariantResult(variant, rep, res.history)


def _run_one(args):
    variant, cfg, samples = args
    return run_variant(variant, cfg, samples)


def workers() -> int:
    raw = os.environ.get("JEO_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"JEO_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def run_variants(
    variants: Sequence[Variant], cfg: DeskConfig, base: "Sequence[Sample] | None" = None
) -> list[VariantResult]:
    """Run every variant, in order, over up to ``JEO_THREADS`` processes.

    With ``base`` given, each variant re-acquires those images and coil maps
    at its own R; otherwise the phantom set of ``cfg`` is built per variant.
    """
    cache: dict = {}
    jobs = []
    for v in variants:
        data = None
        if base is not None:
            if v.R not in cache:
                cache[v.R] = resample(base, cfg.scheme, v.R, cfg.acs, cfg.noise_std, cfg.data_seed)
            data = cache[v.R]
        jobs.append((v, cfg, data))
    n = min(workers(), len(jobs))
    if n <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_run_one, jobs))


# --- studies ----------------------------------------------------------------------


def edge_variants(Rs: Sequence[float] = EDGE_RS) -> list[Variant]:
    out = []
    for R in Rs:
        out.append(Variant("joint-edge", float(R), {"edge": True}))
        out.append(Variant("no-edge", float(R), {"edge": False}))
    return out


def module_variants(R: float) -> list[Variant]:
    return [Variant(label, float(R), {"ern": e, "idn": i}) for label, (e, i) in MODULE_GRID.items()]


def strategy_variants(R: float, Ks: Sequence[int] = STRATEGY_KS) -> list[Variant]:
    out = []
    for K in Ks:
        for strat in ("shared", "non-shared"):
            out.append(Variant(f"{strat}-K{K}", float(R), {"K": int(K), "strategy": strat}))
    return out


def study_variants(study: str, cfg: DeskConfig, Rs=EDGE_RS, Ks=STRATEGY_KS) -> list[Variant]:
    if study == "edge":
        return edge_variants(Rs)
    if study == "modules":
        return module_variants(cfg.R)
    if study == "strategy":
        return strategy_variants(cfg.R, Ks)
    raise ValueError(f"unknown study {study!r}")


def summary_table(results: Sequence[VariantResult]) -> str:
    """Fixed-width text table of one study's results."""
    lines = [f"{'method':<16} {'R':>5} {'psnr_db':>10} {'ssim':>8} {'mse':>12}"]
    for r in results:
        rep = r.report
        lines.append(f"{rep.method:<16} {rep.R:>5g} {rep.psnr:>10.4f} {rep.ssim:>8.4f} {rep.mse:>12.4e}")
    return "\n".join(lines) + "\n"
