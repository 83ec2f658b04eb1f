"""``jeo-mri`` command-line tool: generate, train, reconstruct, ablate.

Parameters come from ``--config FILE`` (``key = value`` lines, ``#`` comments)
and ``--key value`` flags; flags win. Every key is validated before any work
starts and the resolved configuration is written next to the outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from . import __version__, experiments, metrics
from .edge_solver import visualize
from .experiments import DeskConfig
from .mri_model import Scheme, describe_mask, read_dataset, write_dataset, zero_filled_init
from .pipeline import NumericalFailure, load_plan, make_plan, reconstruct, save_plan, train
from .proximal_nets import Kind

log = logging.getLogger("jeo_mri")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
ERROR_SCALE = 0.25  # error maps span [0, ERROR_SCALE * peak(gt)]
IDENTICAL_TOL = 1e-6  # PSNR "identical" threshold for complex64-stored data


class ConfigError(ValueError):
    pass


# --- typed keys ---------------------------------------------------------------------


def _shape(text: str) -> tuple:
    parts = text.lower().replace(" ", "").split("x")
    if len(parts) != 2:
        raise ValueError("expected HxW")
    h, w = (int(p) for p in parts)
    if h < 2 or w < 2:
        raise ValueError("both sides must be at least 2")
    return (h, w)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise ValueError("must be positive")
        return v

    return conv


def _nonneg(kind):
    def conv(text):
        v = kind(text)
        if v < 0:
            raise ValueError("must be nonnegative")
        return v

    return conv


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return conv


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else _nonneg(int)(text)


def _scheme(text: str) -> str:
    return Scheme.parse(text).value


@dataclass(frozen=True)
class Key:
    parse: Callable
    default: "str | None"
    help: str


KEYS = {
    "out": Key(str, None, "output file (generate) or directory"),
    "data": Key(str, None, "dataset file"),
    "checkpoint": Key(str, None, "checkpoint file to reconstruct with"),
    "samples": Key(_positive(int), "40", "number of phantoms"),
    "shape": Key(_shape, "64x64", "image size HxW"),
    "coils": Key(_positive(int), "4", "receiver coils"),
    "scheme": Key(_scheme, "random-pointwise", "sampling scheme"),
    "R": Key(_positive(float), "4", "acceleration factor"),
    "acs": Key(_optional_int, "auto", "fully sampled centre columns"),
    "noise_std": Key(_nonneg(float), "0.01", "k-space noise std per real component"),
    "phase": Key(float, "0.5", "strength of the phantom phase ramp"),
    "seed": Key(_nonneg(int), "1", "data seed (generate) or training seed"),
    "split": Key(int, "-1", "first test sample; -1 means the last fifth"),
    "K": Key(_nonneg(int), "5", "unrolled stages"),
    "strategy": Key(_choice("shared", "non-shared"), "non-shared", "stage parameter sharing"),
    "ern": Key(_choice(*(k.value for k in Kind)), "tiny-cnn", "edge module kind"),
    "idn": Key(_choice(*(k.value for k in Kind)), "tiny-cnn", "image module kind"),
    "threshold": Key(_positive(float), "0.05", "shrinkage threshold"),
    "edge": Key(_bool, "true", "joint edge optimization on/off"),
    "epochs": Key(_positive(int), "150", "training epochs"),
    "batch": Key(_positive(int), "2", "batch size"),
    "lr0": Key(_positive(float), "0.01", "initial learning rate"),
    "gamma1": Key(_nonneg(float), "1", "image loss weight"),
    "gamma2": Key(_nonneg(float), "0.1", "map loss weight"),
    "study": Key(_choice("all", "edge", "modules", "strategy"), "all", "ablation study"),
    "Rs": Key(_floats, "2,4,6,8,10", "accelerations for the edge study"),
    "Ks": Key(_ints, "1,2,3,4,5,6,7", "stage counts for the strategy study"),
}

COMMANDS = {
    "generate": ("out", "samples", "shape", "coils", "scheme", "R", "acs", "noise_std", "phase", "seed"),
    "train": (
        "data", "out", "split", "K", "strategy", "ern", "idn", "threshold", "edge",
        "epochs", "batch", "lr0", "gamma1", "gamma2", "seed",
    ),
    "reconstruct": ("data", "checkpoint", "out", "split", "seed"),
    "ablate": (
        "data", "out", "split", "study", "Rs", "Ks", "scheme", "R", "acs", "noise_std", "K", "strategy",
        "epochs", "batch", "lr0", "gamma1", "gamma2", "seed",
    ),
}
REQUIRED = {"generate": ("out",), "train": ("data", "out"), "reconstruct": ("data", "checkpoint", "out"),
            "ablate": ("data", "out")}


def read_config_file(path: str) -> "dict[str, str]":
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def resolve(command: str, file_values: "dict[str, str]", flag_values: "dict[str, str]") -> dict:
    """Merge defaults, file values and flags, then parse every key."""
    allowed = COMMANDS[command]
    unknown = sorted(set(file_values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    raw = {k: KEYS[k].default for k in allowed}
    raw.update(file_values)
    raw.update({k: v for k, v in flag_values.items() if v is not None})
    cfg = {}
    for k in allowed:
        if raw[k] is None:
            if k in REQUIRED[command]:
                raise ConfigError(f"missing required key '{k}'")
            cfg[k] = None
            continue
        try:
            cfg[k] = KEYS[k].parse(raw[k])
        except ValueError as exc:
            raise ConfigError(f"bad value for '{k}': {raw[k]!r} ({exc})") from None
    return cfg


def format_value(key: str, v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if key == "shape":
        return f"{v[0]}x{v[1]}"
    if isinstance(v, tuple):
        return ",".join(metrics.fmt(t) for t in v)
    if v is None:
        return "auto"
    return metrics.fmt(v)


def config_text(command: str, cfg: dict) -> str:
    # header lines are comments so the file can be fed back via --config
    lines = [f"# jeo-mri version {__version__}", f"# command: {command}"]
    lines += [f"{k} = {format_value(k, cfg[k])}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


# --- small I/O helpers ------------------------------------------------------------------


def write_png16(path: Path, img: np.ndarray) -> None:
    """Save values in [0, 1] as a 16-bit grayscale PNG."""
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def read_png16(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.uint16)


def _out_dir(cfg) -> Path:
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _split_index(cfg, n: int) -> int:
    s = cfg["split"]
    if s < 0:
        s = n - max(1, n // 5)
    if not 0 <= s <= n:
        raise ConfigError(f"split {s} outside [0, {n}]")
    return s


def _load(cfg):
    try:
        return read_dataset(cfg["data"])
    except ValueError as exc:
        raise OSError(f"cannot read dataset {cfg['data']}: {exc}") from exc


# --- commands -----------------------------------------------------------------------------


def cmd_generate(cfg: dict) -> None:
    gts = experiments.phantoms(cfg["samples"], cfg["shape"], cfg["phase"], cfg["seed"])
    try:
        samples = experiments.acquire(gts, cfg["coils"], cfg["scheme"], cfg["R"], cfg["acs"], cfg["noise_std"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, samples)
    Path(str(out) + ".config.txt").write_text(config_text("generate", cfg))
    frac = float(samples[0].coils.mask.mean())
    print(f"wrote {len(samples)} samples to {out} (sampled fraction {frac:.4f})")


def cmd_train(cfg: dict) -> None:
    samples = _load(cfg)
    s = _split_index(cfg, len(samples))
    if s == 0:
        raise ConfigError("training split is empty")
    out = _out_dir(cfg)
    plan = make_plan(
        K=cfg["K"], strategy=cfg["strategy"], ern=cfg["ern"], idn=cfg["idn"], edge=cfg["edge"],
        seed=cfg["seed"], threshold=cfg["threshold"],
    )
    res = train(
        samples[:s], plan, cfg["epochs"], cfg["batch"], cfg["lr0"], cfg["seed"], cfg["gamma1"], cfg["gamma2"],
        on_epoch=lambda r: log.info("epoch %d lr %.4g loss %.6g", r["epoch"], r["lr"], r["loss"]),
    )
    rows = ["epoch,lr,loss"] + [f"{r['epoch']},{metrics.fmt(r['lr'])},{metrics.fmt(r['loss'])}" for r in res.history]
    save_plan(out / "checkpoint.bin", plan)
    (out / "loss.csv").write_text("\n".join(rows) + "\n")
    (out / "config.txt").write_text(config_text("train", cfg))
    print(f"trained K={plan.K} {plan.strategy.value} plan on {s} samples; final loss {metrics.fmt(res.history[-1]['loss'])}")


def cmd_reconstruct(cfg: dict) -> None:
    samples = _load(cfg)
    try:
        plan = load_plan(cfg["checkpoint"])
    except ValueError as exc:
        raise OSError(f"cannot read checkpoint {cfg['checkpoint']}: {exc}") from exc
    s = _split_index(cfg, len(samples))
    test = samples[s:]
    if not test:
        raise ConfigError("test split is empty")
    out = _out_dir(cfg)
    method = "joint-edge" if plan.edge else "no-edge"
    scheme, R = describe_mask(test[0].coils.mask)
    per_sample = [",".join(("index",) + metrics.CSV_FIELDS)]
    zf_reps, reps = [], []
    for j, smp in enumerate(test):
        idx = s + j
        final, _ = reconstruct(smp.coils, plan)
        x = np.asarray(final.x)
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"non-finite reconstruction for sample {idx}")
        peak = float(np.abs(smp.gt).max()) or 1.0
        write_png16(out / f"sample_{idx:03d}_recon.png", np.abs(x) / peak)
        write_png16(out / f"sample_{idx:03d}_error.png", metrics.error_map(np.abs(x), np.abs(smp.gt)) / (ERROR_SCALE * peak))
        write_png16(out / f"sample_{idx:03d}_pne.png", visualize(np.asarray(final.pne)))
        zf = metrics.report(zero_filled_init(smp.coils), smp.gt, "zero-filled", scheme, R, IDENTICAL_TOL)
        rep = metrics.report(x, smp.gt, method, scheme, R, IDENTICAL_TOL)
        zf_reps.append(zf)
        reps.append(rep)
        for r in (zf, rep):
            per_sample.append(f"{idx}," + metrics.csv_row(r, cfg["seed"]))
    lines = [",".join(metrics.CSV_FIELDS)]
    lines += [metrics.csv_row(metrics.mean_report(rs), cfg["seed"]) for rs in (zf_reps, reps)]
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    (out / "per_sample.csv").write_text("\n".join(per_sample) + "\n")
    (out / "config.txt").write_text(
        config_text("reconstruct", cfg) + f"# error maps: [0, {metrics.fmt(ERROR_SCALE)} * peak(gt)] -> [0, 65535]\n"
    )
    print("\n".join(lines))


def cmd_ablate(cfg: dict) -> None:
    samples = _load(cfg)
    s = _split_index(cfg, len(samples))
    if s == 0 or s == len(samples):
        raise ConfigError("ablation needs non-empty training and test splits")
    desk = DeskConfig(
        samples=len(samples), train_samples=s, shape=samples[0].gt.shape, coils=samples[0].coils.n,
        scheme=cfg["scheme"], R=cfg["R"], acs=cfg["acs"], noise_std=cfg["noise_std"], data_seed=cfg["seed"],
        K=cfg["K"], strategy=cfg["strategy"], epochs=cfg["epochs"], batch=cfg["batch"], lr0=cfg["lr0"],
        gamma1=cfg["gamma1"], gamma2=cfg["gamma2"], seed=cfg["seed"],
    )
    studies = ("edge", "modules", "strategy") if cfg["study"] == "all" else (cfg["study"],)
    out = _out_dir(cfg)
    (out / "config.txt").write_text(config_text("ablate", cfg))
    names = {"edge": "edge_vs_noedge", "modules": "modules", "strategy": "strategy"}
    for study in studies:
        try:
            variants = experiments.study_variants(study, desk, cfg["Rs"], cfg["Ks"])
            results = experiments.run_variants(variants, desk, samples)
        except ValueError as exc:
            if isinstance(exc, NumericalFailure):
                raise
            raise ConfigError(str(exc)) from None
        rows = [",".join(metrics.CSV_FIELDS)] + [metrics.csv_row(r.report, cfg["seed"]) for r in results]
        (out / f"{names[study]}.csv").write_text("\n".join(rows) + "\n")
        table = experiments.summary_table(results)
        (out / f"{names[study]}.txt").write_text(table)
        print(f"[{study}]\n{table}")


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "reconstruct": cmd_reconstruct, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jeo-mri", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="file of 'key = value' lines")
        p.add_argument("-v", "--verbose", action="store_true")
        for k in keys:
            p.add_argument(f"--{k}", dest=k, default=None, help=f"{KEYS[k].help} (default {KEYS[k].default})")
    return parser


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, {k: getattr(args, k) for k in COMMANDS[args.command]})
        HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"jeo-mri: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"jeo-mri: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"jeo-mri: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
