import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laud.errors import GeometryError
from laud.pyramid import DETAIL_KERNEL, LaplacianPyramid, detail_target, lp_decompose, lp_reconstruct
from laud.resample import ResampleKernel, bicubic_matrix, burt_taps

from images import natural_images

BURT = ResampleKernel("burt5")
BICUBIC = ResampleKernel("bicubic")


# --- brute-force Burt-Adelson oracle (explicit loops, independent of the matrix path)


def _refl(i, n):
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def _reduce_1d(x):
    w = burt_taps()
    n = len(x)
    return np.array([sum(w[m + 2] * x[_refl(2 * i + m, n)] for m in range(-2, 3)) for i in range(n // 2)])


def _expand_1d(y):
    w = burt_taps()
    n = 2 * len(y)
    z = np.zeros(n)
    z[::2] = y
    return np.array([2 * sum(w[m + 2] * z[_refl(i + m, n)] for m in range(-2, 3)) for i in range(n)])


def _apply_rows_cols(img, f):
    rows = np.array([f(r) for r in img])
    return np.array([f(c) for c in rows.T]).T


def test_impulse_detail_matches_loop_oracle():
    img = np.zeros((8, 8))
    img[3, 5] = 1.0
    small = _apply_rows_cols(img, _reduce_1d)
    expected = img - _apply_rows_cols(small, _expand_1d)
    pyr = lp_decompose(img, 1, BURT, 2)
    np.testing.assert_allclose(pyr.base, small, atol=1e-12)
    np.testing.assert_allclose(pyr.details[0], expected, atol=1e-12)


def test_constant_image_has_no_detail():
    img = np.full((3, 16, 16), 0.37)
    for kernel in (BURT, BICUBIC):
        pyr = lp_decompose(img, 1, kernel, 2)
        np.testing.assert_allclose(pyr.details[0], 0.0, atol=1e-12)
        np.testing.assert_allclose(pyr.base, 0.37, atol=1e-12)
        np.testing.assert_allclose(lp_reconstruct(pyr), img, atol=1e-12)


def test_level_sizes():
    pyr = lp_decompose(np.random.default_rng(0).random((3, 32, 64)), 3, BURT, 2)
    assert [d.shape for d in pyr.details] == [(3, 32, 64), (3, 16, 32), (3, 8, 16)]
    assert pyr.base.shape == (3, 4, 8)


def test_natural_image_round_trip_single_precision():
    for img in natural_images()[:5]:
        img = img[:, :128, :128].astype(np.float32)
        out = lp_reconstruct(lp_decompose(img, 3, BURT, 2))
        assert out.dtype == np.float32
        assert np.max(np.abs(out - img)) <= 1e-5


def test_random_round_trip_single_precision():
    rng = np.random.default_rng(7)
    for _ in range(20):
        img = rng.random((64, 64)).astype(np.float32)
        assert np.max(np.abs(lp_reconstruct(lp_decompose(img, 3, BURT, 2)) - img)) <= 1e-5


def test_zeroed_detail_gives_blurred_approximation(rng):
    img = rng.random((3, 32, 32))
    pyr = lp_decompose(img, 1, BURT, 2)
    pyr.details[0] = np.zeros_like(pyr.details[0])
    np.testing.assert_allclose(lp_reconstruct(pyr), BURT.upsample(pyr.base, 2), atol=1e-14)


@pytest.mark.parametrize("kernel", [BURT, BICUBIC], ids=["burt5", "bicubic"])
@pytest.mark.parametrize("factor", [2, 4])
@pytest.mark.parametrize("levels", [1, 2, 3, 4])
def test_perfect_reconstruction_grid(kernel, factor, levels):
    rng = np.random.default_rng(levels * 10 + factor)
    size = factor**levels * 2
    img = rng.random((2, size, size))
    assert np.max(np.abs(lp_reconstruct(lp_decompose(img, levels, kernel, factor)) - img)) <= 1e-10
    img32 = img.astype(np.float32)
    assert np.max(np.abs(lp_reconstruct(lp_decompose(img32, levels, kernel, factor)) - img32)) <= 1e-5


@settings(max_examples=25, deadline=None)
@given(
    alpha=st.floats(-3, 3),
    beta=st.floats(-3, 3),
    seed=st.integers(0, 2**16),
    kind=st.sampled_from(["burt5", "bicubic"]),
)
def test_linearity(alpha, beta, seed, kind):
    rng = np.random.default_rng(seed)
    kernel = ResampleKernel(kind)
    i, j = rng.random((16, 16)), rng.random((16, 16))
    combo = lp_decompose(alpha * i + beta * j, 2, kernel, 2)
    pi, pj = lp_decompose(i, 2, kernel, 2), lp_decompose(j, 2, kernel, 2)
    for a, b, c in zip(combo.details + [combo.base], pi.details + [pi.base], pj.details + [pj.base]):
        np.testing.assert_allclose(a, alpha * b + beta * c, atol=1e-12)


def test_non_divisible_raises():
    with pytest.raises(GeometryError):
        lp_decompose(np.zeros((30, 32)), 2, BURT, 2)
    with pytest.raises(GeometryError):
        detail_target(np.zeros((3, 15, 16)), 2)


def test_malformed_pyramid_raises():
    bad = LaplacianPyramid([np.zeros((10, 10))], np.zeros((4, 4)), 2, BURT)
    with pytest.raises(GeometryError):
        lp_reconstruct(bad)


class TestDetailTarget:
    def test_constant_gives_zero(self):
        np.testing.assert_allclose(detail_target(np.full((3, 8, 8), 0.8), 2), 0.0, atol=1e-12)

    @pytest.mark.parametrize("scale", [2, 4])
    def test_mean_is_near_zero(self, scale):
        for img in natural_images()[:3]:
            img = img[:, : img.shape[1] // 4 * 4, : img.shape[2] // 4 * 4]
            d = detail_target(img, scale)
            assert abs(d.mean()) < 1e-3 * (img.max() - img.min())

    def test_complements_blur(self, rng):
        img = rng.random((3, 24, 24))
        blur = DETAIL_KERNEL.upsample(DETAIL_KERNEL.downsample(img, 2), 2)
        np.testing.assert_allclose(detail_target(img, 2) + blur, img, atol=1e-14)

    def test_is_one_level_pyramid_at_sr_scale(self, rng):
        img = rng.random((3, 16, 16))
        pyr = lp_decompose(img, 1, DETAIL_KERNEL, 4)
        np.testing.assert_array_equal(detail_target(img, 4), pyr.details[0])

    def test_blurred_fixed_point(self):
        # constants are the fixed points of up(down(.)) under both kernels
        img = np.full((3, 12, 12), 0.25)
        assert np.all(np.abs(detail_target(img, 2)) < 1e-14)
        assert np.all(np.abs(detail_target(img, 2, BURT)) < 1e-14)


class TestKernels:
    def test_burt_taps_sum_to_one(self):
        for a in (0.3, 0.375, 0.4, 0.5):
            taps = ResampleKernel("burt5", a).taps()
            assert taps.sum() == pytest.approx(1.0)
            np.testing.assert_allclose(taps, [0.25 - a / 2, 0.25, a, 0.25, 0.25 - a / 2])

    @pytest.mark.parametrize("n_in,n_out", [(16, 8), (16, 4), (8, 16), (5, 17), (32, 4), (7, 7)])
    def test_bicubic_rows_sum_to_one(self, n_in, n_out):
        m = bicubic_matrix(n_in, n_out, -0.5, True)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)

    def test_defaults(self):
        assert ResampleKernel("burt5").a == 0.375
        assert ResampleKernel("bicubic").a == -0.5

    def test_burt_needs_power_of_two(self):
        with pytest.raises(GeometryError):
            BURT.down_matrix(24, 3)
