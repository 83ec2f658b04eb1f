"""The unrolled alternation, its loss, and end-to-end training.

Each stage runs four steps in order: edge prox (ERN), closed-form map update
(EO), image prox (IDN) and one image gradient step (IO). Stage scalars are
kept as unconstrained raw values and mapped through ``softplus``.
"""

from __future__ import annotations

import enum
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, TensorSet
from .edge_solver import edge_prox, eo_update, init_nonedge_map
from .image_solver import image_prox, image_step, image_step_noedge
from .mri_model import CoilSystem, Sample, stack_systems, zero_filled_init
from .proximal_nets import (
    Kind,
    ProximalModule,
    decode_weights,
    encode_weights,
    inverse_positive,
    make_module,
    positive_param,
)

log = logging.getLogger(__name__)

SCALARS = ("rho", "alpha", "beta", "s")
DEFAULT_INIT = {"rho": 1.0, "alpha": 0.1, "beta": 0.5, "s": 1.0}
EDGE_CHANNELS = 3
IMAGE_CHANNELS = 2


class Strategy(str, enum.Enum):
    SHARED = "shared"
    NON_SHARED = "non-shared"


class NumericalFailure(FloatingPointError):
    """Raised when training produces a non-finite loss or parameter."""


@dataclass
class StageParams:
    scalars: TensorSet  # raw_rho, raw_alpha, raw_beta, raw_s
    ern: ProximalModule
    idn: ProximalModule

    def mapped(self, tape: Tape | None = None) -> dict:
        out = {}
        for name in SCALARS:
            raw = tape.param(self.scalars, f"raw_{name}") if tape is not None else self.scalars[f"raw_{name}"]
            out[name] = positive_param(raw)
        return out

    def tensor_sets(self) -> list[TensorSet]:
        sets = [self.scalars]
        for mod in (self.ern, self.idn):
            if mod.trainable:
                sets.append(mod.weights)
        return sets


@dataclass
class StagePlan:
    K: int
    strategy: Strategy
    blocks: list[StageParams]

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.K < 0:
            raise ValueError("stage count must be nonnegative")
        expected = 1 if self.strategy is Strategy.SHARED else self.K
        if len(self.blocks) != expected:
            raise ValueError(f"{self.strategy.value} plan with K={self.K} needs {expected} blocks, got {len(self.blocks)}")

    def stage(self, k: int) -> StageParams:
        if not 0 <= k < self.K:
            raise IndexError(f"stage {k} out of range for K={self.K}")
        return self.blocks[0] if self.strategy is Strategy.SHARED else self.blocks[k]

    @property
    def edge(self) -> bool:
        """False when every block has rho pinned to zero and an identity ERN."""
        return any(
            np.isfinite(b.scalars["raw_rho"]) or b.ern.kind is not Kind.IDENTITY for b in self.blocks
        )

    def tensor_sets(self) -> list[TensorSet]:
        return [ts for b in self.blocks for ts in b.tensor_sets()]

    def n_parameters(self) -> int:
        return sum(v.size for ts in self.tensor_sets() for v in ts.values.values())


def make_plan(
    K: int = 7,
    strategy: "Strategy | str" = Strategy.NON_SHARED,
    ern: "Kind | str" = Kind.TINY_CNN,
    idn: "Kind | str" = Kind.TINY_CNN,
    edge: bool = True,
    seed: int = 0,
    init: "dict[str, float] | None" = None,
    threshold: float = 0.05,
) -> StagePlan:
    """Fresh plan with identity-initialized modules and the given stage scalars.

    ``edge=False`` builds the edge-free variant: rho is pinned to zero (raw value
    ``-inf``, which receives no gradient) and the ERN is the identity.
    """
    strategy = Strategy(strategy)
    vals = dict(DEFAULT_INIT)
    vals.update(init or {})
    if not edge:
        vals["rho"] = 0.0
        ern = Kind.IDENTITY
    rng = np.random.default_rng(seed)
    n_blocks = 1 if strategy is Strategy.SHARED else K
    blocks = []
    for _ in range(n_blocks):
        scalars = TensorSet({f"raw_{k}": inverse_positive(vals[k]) for k in SCALARS})
        blocks.append(
            StageParams(
                scalars,
                make_module(ern, EDGE_CHANNELS, rng, threshold),
                make_module(idn, IMAGE_CHANNELS, rng, threshold),
            )
        )
    return StagePlan(K, strategy, blocks)


@dataclass
class PipelineState:
    x: object  # complex image (array or Var)
    pne: object  # (..., 3, H, W) map (array or Var)
    stage_index: int


def _snapshot(x, p, k) -> PipelineState:
    return PipelineState(np.array(ad.value(x)), np.array(ad.value(p)), k)


def run_pipeline(
    cs: CoilSystem, plan: StagePlan, tape: Tape | None = None, trace: bool = False
) -> "tuple[PipelineState, list[PipelineState]]":
    """Run the K-stage alternation from the zero-filled start.

    Returns the final state and, if ``trace`` is set, the state after
    initialization and after every stage.
    """
    x = zero_filled_init(cs)
    p = init_nonedge_map(x)
    states = [_snapshot(x, p, 0)] if trace else []
    for k in range(plan.K):
        blk = plan.stage(k)
        sc = blk.mapped(tape)
        v = edge_prox(p, blk.ern, tape)
        p = eo_update(v, ad.swt_detail(x), sc["alpha"], sc["rho"])
        z = image_prox(x, blk.idn, tape)
        x = image_step(x, z, p, cs, sc["rho"], sc["beta"], sc["s"])
        if trace:
            states.append(_snapshot(x, p, k + 1))
    return PipelineState(x, p, plan.K), states


def run_pipeline_noedge(
    cs: CoilSystem, plan: StagePlan, tape: Tape | None = None, trace: bool = False
) -> "tuple[PipelineState, list[PipelineState]]":
    """Edge-free alternation (IDN then gradient step); ERN, alpha, rho unused.

    The map stays at its initialization and is returned only for uniformity.
    """
    x = zero_filled_init(cs)
    p = init_nonedge_map(x)
    states = [_snapshot(x, p, 0)] if trace else []
    for k in range(plan.K):
        blk = plan.stage(k)
        sc = blk.mapped(tape)
        z = image_prox(x, blk.idn, tape)
        x = image_step_noedge(x, z, cs, sc["beta"], sc["s"])
        if trace:
            states.append(_snapshot(x, p, k + 1))
    return PipelineState(x, p, plan.K), states


def reconstruct(cs: CoilSystem, plan: StagePlan, tape: Tape | None = None, trace: bool = False):
    """Dispatch to the joint-edge or edge-free runner according to ``plan.edge``."""
    runner = run_pipeline if plan.edge else run_pipeline_noedge
    return runner(cs, plan, tape, trace)


def total_loss(final: PipelineState, gt_x, gt_pne, gamma1: float = 1.0, gamma2: float = 0.1):
    """``gamma1 * MSE(x, gt_x) + gamma2 * MAE(pne, gt_pne)``."""
    if ad.value(final.x).shape != np.shape(gt_x):
        raise ValueError("reconstruction and ground truth shapes differ")
    if ad.value(final.pne).shape != np.shape(gt_pne):
        raise ValueError("map and ground-truth map shapes differ")
    if gamma1 < 0 or gamma2 < 0:
        raise ValueError("loss weights must be nonnegative")
    img = ad.mean(ad.abs2(final.x - gt_x))
    edge = ad.mean(ad.absolute(final.pne - gt_pne))
    return gamma1 * img + gamma2 * edge


# --- optimization -------------------------------------------------------------------


def cosine_lr(epoch: float, epochs: int, lr0: float) -> float:
    """Cosine decay from ``lr0`` at epoch 0 to 0 at ``epochs``."""
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


class Adam:
    def __init__(self, sets: Sequence[TensorSet], betas=(0.9, 0.999), eps: float = 1e-8):
        # shared blocks appear once even if referenced by several stages
        uniq: list[TensorSet] = []
        for ts in sets:
            if not any(ts is u for u in uniq):
                uniq.append(ts)
        self.sets = uniq
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in ts.items()} for ts in self.sets]
        self.v = [{k: np.zeros_like(v) for k, v in ts.items()} for ts in self.sets]

    def zero_grad(self) -> None:
        for ts in self.sets:
            ts.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for ts, m, v in zip(self.sets, self.m, self.v):
            for name, val in ts.items():
                g = ts.grads[name]
                m[name] = self.b1 * m[name] + (1 - self.b1) * g
                v[name] = self.b2 * v[name] + (1 - self.b2) * g * g
                val -= lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + self.eps)


@dataclass
class Batch:
    coils: CoilSystem
    gt: np.ndarray
    gt_pne: np.ndarray


def make_batch(samples: Sequence[Sample]) -> Batch:
    gt = np.stack([s.gt for s in samples])
    return Batch(stack_systems([s.coils for s in samples]), gt, init_nonedge_map(gt))


def loss_and_grad(batch: Batch, plan: StagePlan, gamma1: float = 1.0, gamma2: float = 0.1) -> float:
    """Evaluate the batch loss and accumulate gradients into the plan."""
    tape = Tape()
    runner = run_pipeline if plan.edge else run_pipeline_noedge
    final, _ = runner(batch.coils, plan, tape)
    loss = total_loss(final, batch.gt, batch.gt_pne, gamma1, gamma2)
    if isinstance(loss, ad.Var):
        tape.backward(loss)
    value = float(ad.value(loss))
    tape.clear()
    return value


def _diagnose(batch: Batch, plan: StagePlan) -> str:
    runner = run_pipeline if plan.edge else run_pipeline_noedge
    with np.errstate(all="ignore"):
        _, states = runner(batch.coils, plan, trace=True)
    for st in states:
        if not (np.all(np.isfinite(st.x)) and np.all(np.isfinite(st.pne))):
            return f"first non-finite state after stage {st.stage_index}"
    return "all stage outputs finite; loss or gradient overflowed"


@dataclass
class TrainResult:
    plan: StagePlan
    history: list[dict] = field(default_factory=list)


def train(
    samples: Sequence[Sample],
    plan: StagePlan,
    epochs: int = 180,
    batch_size: int = 2,
    lr0: float = 0.01,
    seed: int = 0,
    gamma1: float = 1.0,
    gamma2: float = 0.1,
    on_epoch: "Callable[[dict], None] | None" = None,
) -> TrainResult:
    """Adam with cosine learning-rate decay over shuffled mini-batches.

    The plan is updated in place. ``history`` has one row per epoch with the
    learning rate used and the mean batch loss.
    """
    if not samples:
        raise ValueError("training set is empty")
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    rng = np.random.default_rng(seed)
    opt = Adam(plan.tensor_sets())
    result = TrainResult(plan)
    n = len(samples)
    for epoch in range(epochs):
        lr = cosine_lr(epoch, epochs, lr0)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            batch = make_batch([samples[i] for i in order[start:start + batch_size]])
            opt.zero_grad()
            with np.errstate(over="ignore", invalid="ignore"):
                loss = loss_and_grad(batch, plan, gamma1, gamma2)
            if not math.isfinite(loss):
                raise NumericalFailure(f"loss is {loss} at epoch {epoch}: {_diagnose(batch, plan)}")
            opt.step(lr)
            for ts in opt.sets:
                for name, val in ts.items():
                    if np.any(np.isnan(val)):
                        raise NumericalFailure(f"parameter {name} became NaN at epoch {epoch}")
            losses.append(loss)
        row = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses))}
        result.history.append(row)
        log.debug("epoch %d lr %.3g loss %.6g", epoch, lr, row["loss"])
        if on_epoch is not None:
            on_epoch(row)
    return result


def evaluate(samples: Sequence[Sample], plan: StagePlan) -> list[np.ndarray]:
    """Final reconstructions for each sample (no tape)."""
    out = []
    for s in samples:
        final, _ = reconstruct(s.coils, plan)
        out.append(np.asarray(final.x))
    return out


# --- checkpoints ----------------------------------------------------------------------


def plan_arrays(plan: StagePlan) -> "dict[str, np.ndarray]":
    arrays: dict[str, np.ndarray] = {}
    for j, blk in enumerate(plan.blocks):
        for role, mod in (("ern", blk.ern), ("idn", blk.idn)):
            if mod.kind is Kind.TINY_CNN:
                for name, val in mod.weights.items():
                    arrays[f"stage{j}.{role}.{name}"] = val
            elif mod.kind is Kind.SHRINKAGE:
                arrays[f"stage{j}.{role}.threshold"] = np.array(mod.threshold)
    return arrays


def encode_plan(plan: StagePlan) -> bytes:
    """Header ``K:u32, strategy:u8, 4 raw float64 per block`` then the weight blob."""
    head = [struct.pack("<IB", plan.K, 0 if plan.strategy is Strategy.SHARED else 1)]
    for blk in plan.blocks:
        head.append(struct.pack("<4d", *(float(blk.scalars[f"raw_{k}"]) for k in SCALARS)))
    return b"".join(head) + encode_weights(plan_arrays(plan))


def decode_plan(data: bytes) -> StagePlan:
    if len(data) < 5:
        raise ValueError("checkpoint too short")
    K, strat = struct.unpack_from("<IB", data, 0)
    if strat not in (0, 1):
        raise ValueError(f"bad strategy byte {strat}")
    strategy = Strategy.SHARED if strat == 0 else Strategy.NON_SHARED
    n_blocks = 1 if strategy is Strategy.SHARED else K
    pos = 5
    if len(data) < pos + 32 * n_blocks:
        raise ValueError("checkpoint header truncated")
    raws = [struct.unpack_from("<4d", data, pos + 32 * j) for j in range(n_blocks)]
    arrays = decode_weights(data[pos + 32 * n_blocks:])
    blocks = []
    for j, raw in enumerate(raws):
        scalars = TensorSet({f"raw_{k}": r for k, r in zip(SCALARS, raw)})
        mods = []
        for role, ch in (("ern", EDGE_CHANNELS), ("idn", IMAGE_CHANNELS)):
            prefix = f"stage{j}.{role}."
            if prefix + "conv1.weight" in arrays:
                mod = make_module(Kind.TINY_CNN, ch)
                for name in mod.weights:
                    mod.weights[name] = arrays[prefix + name]
            elif prefix + "threshold" in arrays:
                mod = make_module(Kind.SHRINKAGE, ch, threshold=float(arrays[prefix + "threshold"]))
            else:
                mod = make_module(Kind.IDENTITY, ch)
            mods.append(mod)
        blocks.append(StageParams(scalars, *mods))
    return StagePlan(K, strategy, blocks)


def save_plan(path: "str | Path", plan: StagePlan) -> None:
    Path(path).write_bytes(encode_plan(plan))


def load_plan(path: "str | Path") -> StagePlan:
    return decode_plan(Path(path).read_bytes())
