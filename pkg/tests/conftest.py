import numpy as np
import pytest

from jeo_mri import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def numeric_grad(f, arrays, idx, h=1e-6):
    """Central-difference gradient of scalar ``f(*arrays)`` w.r.t. ``arrays[idx]``.

    Complex entries are perturbed along the real and imaginary axes and the
    result is packed as ``d/dre + i d/dim``.
    """
    base = [np.array(a, copy=True) for a in arrays]
    x = base[idx]
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        dirs = (1.0, 1j) if np.iscomplexobj(x) else (1.0,)
        for d in dirs:
            xp = [a.copy() for a in base]
            xm = [a.copy() for a in base]
            xp[idx][i] += d * h
            xm[idx][i] -= d * h
            slope = (float(f(*xp)) - float(f(*xm))) / (2 * h)
            out[i] += slope * (1.0 if d == 1.0 else 1j)
    return out


def tape_grads(f, arrays):
    """Analytic gradients of scalar ``f`` for every input, via a fresh tape."""
    tape = ad.Tape()
    vs = [tape.var(np.array(a, copy=True)) for a in arrays]
    out = f(*vs)
    tape.backward(out)
    return [v.grad if v.grad is not None else np.zeros_like(v.value) for v in vs]


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300))


# --- acceptance summary ----------------------------------------------------------------

ACCEPTANCE: "dict[str, tuple[bool, str]]" = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
