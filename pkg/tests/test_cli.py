import subprocess
import sys

import numpy as np
import pytest

from jeo_mri import __version__
from jeo_mri.cli import main, read_png16
from jeo_mri.mri_model import read_dataset
from jeo_mri.pipeline import load_plan, make_plan, save_plan


def run(*argv):
    return main([str(a) for a in argv])


def same_output(a, b):
    """Byte equality, except that config echoes differ in their own ``out`` line."""
    if a.name == "config.txt":
        strip = lambda p: [ln for ln in p.read_text().splitlines() if not ln.startswith("out = ")]
        return strip(a) == strip(b)
    return a.read_bytes() == b.read_bytes()


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds")
    path = d / "ds.bin"
    assert run("generate", "--out", path, "--samples", 5, "--shape", "16x16", "--coils", 2, "--R", 2, "--seed", 3) == 0
    return path


def test_generate_is_deterministic(tmp_path, small_ds):
    again = tmp_path / "again.bin"
    assert run("generate", "--out", again, "--samples", 5, "--shape", "16x16", "--coils", 2, "--R", 2, "--seed", 3) == 0
    assert again.read_bytes() == small_ds.read_bytes()
    other = tmp_path / "other.bin"
    run("generate", "--out", other, "--samples", 5, "--shape", "16x16", "--coils", 2, "--R", 2, "--seed", 4)
    assert other.read_bytes() != small_ds.read_bytes()


def test_generate_single_coil_and_fraction(tmp_path):
    path = tmp_path / "one.bin"
    assert run("generate", "--out", path, "--samples", 2, "--shape", "32x32", "--coils", 1, "--R", 4) == 0
    samples = read_dataset(path)
    assert samples[0].coils.sens.shape == (1, 32, 32)
    np.testing.assert_allclose(samples[0].coils.sens, 1.0)
    assert abs(samples[0].coils.mask.mean() - 0.25) <= 0.02


@pytest.mark.parametrize("scheme", ["cartesian", "equidistant"])
def test_generate_line_schemes(tmp_path, scheme):
    path = tmp_path / "lines.bin"
    assert run("generate", "--out", path, "--samples", 1, "--shape", "32x64", "--scheme", scheme, "--R", 4, "--acs", 0) == 0
    assert abs(read_dataset(path)[0].coils.mask.mean() - 0.25) <= 0.02


def test_generate_rejects_impossible_acs(tmp_path, capsys):
    code = run("generate", "--out", tmp_path / "x.bin", "--shape", "16x64", "--scheme", "cartesian", "--R", 32, "--acs", 8)
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_train_outputs_and_determinism(tmp_path, small_ds):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("train", "--data", small_ds, "--out", out, "--K", 2, "--epochs", 2, "--seed", 7) == 0
        outs.append(out)
    for f in ("checkpoint.bin", "loss.csv", "config.txt"):
        assert same_output(outs[0] / f, outs[1] / f)
    rows = (outs[0] / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,lr,loss"
    assert rows[1].split(",")[:2] == ["0", "0.01"]
    assert len(rows) == 3
    cfg = (outs[0] / "config.txt").read_text()
    assert __version__ in cfg and "K = 2" in cfg


@pytest.mark.parametrize("strategy,K,blocks", [("shared", 3, 1), ("non-shared", 5, 5)])
def test_train_strategy_block_count(tmp_path, small_ds, strategy, K, blocks):
    out = tmp_path / "run"
    assert run("train", "--data", small_ds, "--out", out, "--K", K, "--strategy", strategy, "--epochs", 1) == 0
    plan = load_plan(out / "checkpoint.bin")
    assert len(plan.blocks) == blocks and plan.K == K


def test_config_file_and_flag_precedence(tmp_path, small_ds):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# training setup\ndata = {small_ds}\nK = 3\nepochs = 1\nstrategy = shared\n")
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", out, "--K", 2) == 0
    plan = load_plan(out / "checkpoint.bin")
    assert plan.K == 2 and plan.strategy.value == "shared"
    # the echoed config reproduces the run
    out2 = tmp_path / "rerun"
    assert run("train", "--config", out / "config.txt", "--out", out2) == 0
    assert (out2 / "checkpoint.bin").read_bytes() == (out / "checkpoint.bin").read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--data", "x.bin", "--out", "o", "--K", "-1"],
        ["train", "--data", "x.bin", "--out", "o", "--strategy", "mixed"],
        ["train", "--out", "o"],
        ["generate", "--out", "o.bin", "--shape", "64"],
        ["generate", "--out", "o.bin", "--scheme", "spiral"],
    ],
)
def test_config_errors_exit_2(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == 2


def test_unknown_config_key_and_flag(tmp_path, small_ds):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("learning_rate = 0.1\n")
    assert run("train", "--config", cfg, "--data", small_ds, "--out", tmp_path / "o") == 2
    with pytest.raises(SystemExit) as exc:
        run("train", "--data", small_ds, "--out", tmp_path / "o", "--learning_rate", "0.1")
    assert exc.value.code == 2


def test_io_errors_exit_4(tmp_path):
    assert run("train", "--data", tmp_path / "missing.bin", "--out", tmp_path / "o") == 4
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a dataset")
    assert run("train", "--data", junk, "--out", tmp_path / "o") == 4


def test_numeric_failure_exit_3(tmp_path, small_ds, capsys):
    code = run("train", "--data", small_ds, "--out", tmp_path / "o", "--K", 2, "--epochs", 3, "--lr0", "1e300")
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_reconstruct_outputs(tmp_path, small_ds):
    ckpt = tmp_path / "train"
    run("train", "--data", small_ds, "--out", ckpt, "--K", 2, "--epochs", 1)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert run("reconstruct", "--data", small_ds, "--checkpoint", ckpt / "checkpoint.bin", "--out", out, "--split", 3) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    for idx in (3, 4):
        for kind in ("recon", "error", "pne"):
            assert f"sample_{idx:03d}_{kind}.png" in names
    for name in names:
        assert same_output(outs[0] / name, outs[1] / name)
    img = read_png16(outs[0] / "sample_003_recon.png")
    assert img.dtype == np.uint16 and img.shape == (16, 16) and img.max() > 255
    rows = (outs[0] / "metrics.csv").read_text().splitlines()
    assert rows[0] == "method,scheme,R,seed,psnr_db,ssim,mse"
    assert rows[1].startswith("zero-filled,random-pointwise,2,")
    assert rows[2].startswith("joint-edge,")


def test_reconstruct_exact_recovery_reports_inf(tmp_path):
    data = tmp_path / "full.bin"
    assert run("generate", "--out", data, "--samples", 2, "--shape", "32x32", "--R", 1, "--noise_std", 0) == 0
    ckpt = tmp_path / "id.bin"
    save_plan(ckpt, make_plan(K=1, ern="identity", idn="identity", init={"rho": 0.0, "beta": 0.0, "s": 1.0}))
    out = tmp_path / "rec"
    assert run("reconstruct", "--data", data, "--checkpoint", ckpt, "--out", out, "--split", 0) == 0
    rows = [r.split(",") for r in (out / "metrics.csv").read_text().splitlines()[1:]]
    assert [r[0] for r in rows] == ["zero-filled", "no-edge"]
    assert rows[1][1] == "full" and rows[1][4] == "inf"


def test_reconstruct_bad_checkpoint(tmp_path, small_ds):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x01")
    assert run("reconstruct", "--data", small_ds, "--checkpoint", bad, "--out", tmp_path / "o") == 4


def test_ablate_small(tmp_path, small_ds):
    out = tmp_path / "abl"
    code = run(
        "ablate", "--data", small_ds, "--out", out, "--study", "edge", "--Rs", "2,4",
        "--K", 1, "--epochs", 1, "--split", 3, "--R", 2,
    )
    assert code == 0
    rows = (out / "edge_vs_noedge.csv").read_text().splitlines()
    assert len(rows) == 1 + 4
    assert [r.split(",")[0] for r in rows[1:]] == ["joint-edge", "no-edge"] * 2
    assert (out / "edge_vs_noedge.txt").exists() and __version__ in (out / "config.txt").read_text()

    assert run("ablate", "--data", small_ds, "--out", out, "--study", "modules", "--K", 1, "--epochs", 1, "--R", 2) == 0
    rows = (out / "modules.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["neither", "ern-only", "idn-only", "both"]


def test_entry_point_version():
    res = subprocess.run([sys.executable, "-m", "jeo_mri.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
