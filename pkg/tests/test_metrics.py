import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from raincascade.metrics import SsimParams, gaussian_window, mse_image, psnr, ssim, ssim_map
from raincascade.tensorcore import ContractViolation, Tensor


def ssim_brute_force(x, y, params):
    """Direct 2-D windowed evaluation of luminance/contrast/structure terms."""
    g = gaussian_window(params.window_size, params.window_sigma)
    w2 = np.outer(g, g)
    n = params.window_size
    c1, c2, c3 = params.c1, params.c2, params.c3
    values = []
    for ch in range(x.shape[0]):
        for i in range(x.shape[1] - n + 1):
            for j in range(x.shape[2] - n + 1):
                a, b = x[ch, i:i + n, j:j + n], y[ch, i:i + n, j:j + n]
                mx, my = (w2 * a).sum(), (w2 * b).sum()
                vx, vy = (w2 * (a - mx) ** 2).sum(), (w2 * (b - my) ** 2).sum()
                cov = (w2 * (a - mx) * (b - my)).sum()
                sx, sy = math.sqrt(vx), math.sqrt(vy)
                lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
                con = (2 * sx * sy + c2) / (vx + vy + c2)
                st_ = (cov + c3) / (sx * sy + c3)
                values.append((ch, lum ** params.alpha * con ** params.beta * st_ ** params.gamma))
    per_channel = [np.mean([v for c, v in values if c == ch]) for ch in range(x.shape[0])]
    return float(np.mean(per_channel))


class TestMse:
    def test_identical(self, rng):
        x = rng.random((3, 8, 8))
        assert mse_image(x, x) == 0

    def test_unit_difference(self, rng):
        x = rng.random((3, 8, 8))
        assert mse_image(x, x + 1) == pytest.approx(1.0)

    def test_eight_bit_extremes(self):
        assert mse_image(np.zeros((3, 4, 4)), np.full((3, 4, 4), 255.0)) == 65025

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            mse_image(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))

    def test_accepts_tensor(self, rng):
        x = rng.random((1, 3, 4, 4)).astype(np.float32)
        assert mse_image(Tensor(x), x) == 0


class TestPsnr:
    def test_identical_is_inf(self, rng):
        x = rng.random((3, 8, 8))
        assert psnr(x, x) == math.inf

    def test_unit_mse_at_255(self):
        x = np.zeros((3, 4, 4))
        assert psnr(x, x + 1, 255.0) == pytest.approx(48.1308, abs=1e-4)

    def test_extremes_zero_db(self):
        assert psnr(np.zeros((3, 4, 4)), np.full((3, 4, 4), 255.0), 255.0) == 0.0

    def test_scale_invariance(self, rng):
        x, y = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        assert psnr(x, y, 1.0) == pytest.approx(psnr(255 * x, 255 * y, 255.0), abs=1e-9)

    def test_monotone_in_error(self, rng):
        x = rng.random((3, 16, 16))
        noise = rng.standard_normal(x.shape)
        values = [psnr(x, x + s * noise) for s in (0.01, 0.02, 0.05, 0.1, 0.3)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_bad_peak(self):
        with pytest.raises(ContractViolation):
            psnr(np.zeros((1, 2, 2)), np.ones((1, 2, 2)), 0.0)


class TestSsim:
    def test_defaults(self):
        p = SsimParams()
        assert (p.k1, p.k2, p.window_size, p.window_sigma) == (0.01, 0.03, 11, 1.5)
        assert p.c3 == p.c2 / 2

    def test_identical_is_one(self, rng):
        x = rng.random((3, 20, 20))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_constant_images(self):
        params = SsimParams(dynamic_range=255.0)
        value = ssim(np.full((3, 16, 16), 100.0), np.full((3, 16, 16), 150.0), params)
        assert value == pytest.approx(0.9231, abs=1e-3)
        assert value == pytest.approx(30006.5025 / 32506.5025, abs=1e-9)

    def test_symmetry_bit_exact(self, rng):
        for _ in range(5):
            x, y = rng.random((3, 16, 16)), rng.random((3, 16, 16))
            assert ssim(x, y) == ssim(y, x)

    def test_matches_brute_force(self, rng):
        x = rng.random((2, 14, 13))
        y = np.clip(x + 0.2 * rng.standard_normal(x.shape), 0, 1)
        assert ssim(x, y) == pytest.approx(ssim_brute_force(x, y, SsimParams()), abs=1e-10)

    def test_general_exponents_match_brute_force(self, rng):
        x = rng.random((1, 12, 12))
        y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        params = SsimParams(alpha=2.0, beta=1.0, gamma=1.0)
        assert ssim(x, y, params) == pytest.approx(ssim_brute_force(x, y, params), abs=1e-10)

    def test_matches_scikit_image(self, rng):
        x = rng.random((3, 32, 32))
        y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        ref = structural_similarity(x, y, channel_axis=0, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=1.0)
        assert ssim(x, y) == pytest.approx(ref, abs=1e-6)

    def test_image_smaller_than_window(self):
        with pytest.raises(ContractViolation):
            ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))

    @given(st.integers(0, 10 ** 6), st.floats(0.01, 0.5))
    @settings(max_examples=20, deadline=None)
    def test_range_for_nonnegative_images(self, seed, scale):
        r = np.random.default_rng(seed)
        x = r.random((3, 12, 12))
        y = np.clip(x + scale * r.standard_normal(x.shape), 0, None)
        value = ssim(x, y)
        assert 0 < value <= 1

    def test_map_shape_is_valid_positions(self, rng):
        x = rng.random((3, 20, 17))
        assert ssim_map(x, x).shape == (3, 10, 7)

    def test_deterministic(self, rng):
        x, y = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        assert ssim(x, y) == ssim(x, y)
