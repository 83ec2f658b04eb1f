import numpy as np
import pytest

from jeo_mri.numerics import dot, norm
from jeo_mri.wavelet import (
    minmax_normalize,
    swt_approx,
    swt_approx_adjoint,
    swt_detail,
    swt_detail_adjoint,
)

from conftest import crandn


def direct_circular_conv(x, h_rows, h_cols):
    """Brute-force separable circular convolution, one output pixel at a time."""
    H, W = x.shape
    out = np.zeros_like(x)
    for i in range(H):
        for j in range(W):
            acc = 0.0
            for a, hr in enumerate(h_rows):
                for b, hc in enumerate(h_cols):
                    acc += hr * hc * x[(i - a) % H, (j - b) % W]
            out[i, j] = acc
    return out


LOW = [0.5, 0.5]
HIGH = [0.5, -0.5]


def test_matches_brute_force_convolution(rng):
    x = crandn(rng, 5, 6)
    c = swt_detail(x)
    # subband letters: first = width-axis filter, second = height-axis filter
    np.testing.assert_allclose(c[0], direct_circular_conv(x, HIGH, LOW), atol=1e-14)
    np.testing.assert_allclose(c[1], direct_circular_conv(x, LOW, HIGH), atol=1e-14)
    np.testing.assert_allclose(c[2], direct_circular_conv(x, HIGH, HIGH), atol=1e-14)


def test_constant_image_has_exactly_zero_details():
    c = swt_detail(np.full((8, 8), 3.7 + 1.1j))
    assert c.shape == (3, 8, 8)
    assert np.all(c == 0)


def test_column_step_image():
    x = np.zeros((4, 4))
    x[:, 2:] = 1.0
    c = swt_detail(x)
    assert np.all(c[0] == 0) and np.all(c[2] == 0)
    hl = c[1]
    nonzero_cols = sorted(set(np.nonzero(hl)[1]))
    assert nonzero_cols == [0, 2]  # the step and its circular wrap
    np.testing.assert_allclose(hl[:, 2], 0.5)
    np.testing.assert_allclose(hl[:, 0], -0.5)


def test_linearity(rng):
    x, y = crandn(rng, 8, 8), crandn(rng, 8, 8)
    a, b = 0.3 - 2j, 1.7
    np.testing.assert_allclose(swt_detail(a * x + b * y), a * swt_detail(x) + b * swt_detail(y), atol=1e-12)


@pytest.mark.parametrize("shape", [(4, 4), (8, 8), (16, 12)])
def test_adjoint_dot_test(rng, shape):
    worst = 0.0
    for _ in range(100):
        x = crandn(rng, *shape)
        c = crandn(rng, 3, *shape)
        err = abs(dot(swt_detail(x), c) - dot(x, swt_detail_adjoint(c))) / (norm(x) * norm(c))
        worst = max(worst, err)
    assert worst < 1e-12


def test_zero_coefficients_give_zero_image():
    assert np.all(swt_detail_adjoint(np.zeros((3, 6, 6), complex)) == 0)


def test_tight_frame_identity(rng):
    for shape in [(4, 4), (8, 8), (16, 12), (5, 7)]:
        x = crandn(rng, *shape)
        back = swt_detail_adjoint(swt_detail(x)) + swt_approx_adjoint(swt_approx(x))
        np.testing.assert_allclose(back, x, atol=1e-12)


def test_batched_input(rng):
    x = crandn(rng, 2, 6, 6)
    c = swt_detail(x)
    assert c.shape == (2, 3, 6, 6)
    np.testing.assert_array_equal(c[1], swt_detail(x[1]))


def test_too_small_image():
    with pytest.raises(ValueError):
        swt_detail(np.zeros((1, 4)))


def test_adjoint_shape_mismatch():
    with pytest.raises(ValueError):
        swt_detail_adjoint(np.zeros((2, 4, 4)))


def test_minmax_normalize():
    mag = np.zeros((3, 2, 2))
    mag[0, 0, 0] = 5.0
    mag[1, 1, 1] = 2.5
    out = minmax_normalize(mag)
    assert out.min() == 0.0 and out.max() == 1.0
    assert out[1, 1, 1] == 0.5

    vals = np.array([0.0, 1.0, 4.0]).reshape(3, 1, 1)
    np.testing.assert_allclose(minmax_normalize(vals).ravel(), [0.0, 0.25, 1.0])

    assert np.all(minmax_normalize(np.zeros((3, 4, 4))) == 0)
    assert np.all(minmax_normalize(np.full((3, 4, 4), 2.0)) == 0)


def test_minmax_is_global_over_subbands(rng):
    mag = np.abs(rng.standard_normal((3, 5, 5)))
    mag[2] *= 10
    out = minmax_normalize(mag)
    assert out[0].max() < 0.5  # subband 0 is not stretched on its own
    assert out.min() >= 0 and out.max() <= 1


def test_minmax_per_sample_in_batch(rng):
    mag = np.abs(rng.standard_normal((2, 3, 4, 4)))
    mag[1] *= 100
    out = minmax_normalize(mag)
    np.testing.assert_allclose(out[0], minmax_normalize(mag[0]))
    np.testing.assert_allclose(out[1], minmax_normalize(mag[1]))
