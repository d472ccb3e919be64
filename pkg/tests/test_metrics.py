"""PSNR, MS-SSIM and BD-rate against independent reference computations."""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from glc.metrics import bd_rate, ms_ssim, psnr, rate_at_quality


# -- independent MS-SSIM oracle (torch conv path, canonical constants) -------


def _torch_window(size=11, sigma=1.5):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    win = torch.outer(g, g)
    return (win / win.sum()).reshape(1, 1, size, size)


def oracle_ms_ssim(a: np.ndarray, b: np.ndarray, data_range=1.0, scales=5) -> float:
    """Reference MS-SSIM built on torch convolutions and avg-pool downsampling."""
    weights = torch.tensor([0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
                           dtype=torch.float64)[:scales]
    weights = weights / weights.sum()
    win = _torch_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    xa = torch.tensor(a, dtype=torch.float64).unsqueeze(1)  # [C,1,H,W]
    xb = torch.tensor(b, dtype=torch.float64).unsqueeze(1)
    mcs, final = [], None
    for s in range(scales):
        mu_a = F.conv2d(xa, win)
        mu_b = F.conv2d(xb, win)
        var_a = F.conv2d(xa * xa, win) - mu_a ** 2
        var_b = F.conv2d(xb * xb, win) - mu_b ** 2
        cov = F.conv2d(xa * xb, win) - mu_a * mu_b
        cs = (2 * cov + c2) / (var_a + var_b + c2)
        ssim = ((2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)) * cs
        if s == scales - 1:
            final = ssim.mean(dim=(1, 2, 3))
        else:
            mcs.append(cs.mean(dim=(1, 2, 3)))
            xa = F.avg_pool2d(xa, 2)
            xb = F.avg_pool2d(xb, 2)
    terms = torch.stack(mcs + [final])  # [scales, C]
    terms = terms.clamp(min=0)
    per_channel = torch.prod(terms ** weights.unsqueeze(1), dim=0)
    return float(per_channel.mean())


class TestPsnr:
    def test_identical_images_infinite(self):
        x = np.random.default_rng(0).random((3, 16, 16))
        assert psnr(x, x) == math.inf

    def test_constant_offset_closed_form(self):
        x = np.full((3, 32, 32), 0.4)
        y = x + 0.1
        assert psnr(x, y) == pytest.approx(20.0, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestMsSsim:
    def test_identical_is_one(self):
        x = np.random.default_rng(1).random((3, 64, 64))
        assert ms_ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_matches_reference_within_1e4(self):
        rng = np.random.default_rng(2)
        base = rng.random((3, 256, 256))
        noisy = np.clip(base + rng.normal(0, 0.05, base.shape), 0, 1)
        mine = ms_ssim(base, noisy)
        ref = oracle_ms_ssim(base, noisy)
        assert mine == pytest.approx(ref, abs=1e-4)

    def test_matches_reference_structured(self):
        rng = np.random.default_rng(3)
        ys, xs = np.mgrid[0:256, 0:256] / 256
        base = np.stack([np.sin(8 * xs + i) * 0.4 + 0.5 + 0.1 * ys for i in range(3)])
        blurred = base.copy()
        blurred[:, 1:-1, 1:-1] = (
            base[:, :-2, 1:-1] + base[:, 2:, 1:-1]
            + base[:, 1:-1, :-2] + base[:, 1:-1, 2:]
        ) / 4
        blurred = np.clip(blurred + rng.normal(0, 0.01, base.shape), 0, 1)
        assert ms_ssim(base, blurred) == pytest.approx(
            oracle_ms_ssim(base, blurred), abs=1e-4
        )

    def test_small_image_truncates_scales(self):
        rng = np.random.default_rng(4)
        a = rng.random((3, 64, 64))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        mine = ms_ssim(a, b)  # 64 -> 3 scales fit
        ref = oracle_ms_ssim(a, b, scales=3)
        assert mine == pytest.approx(ref, abs=1e-4)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ms_ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


# -- independent BD-rate oracle ----------------------------------------------


def oracle_bd_rate(anchor_rate, anchor_q, test_rate, test_q) -> float:
    """Reference: cubic Polynomial.fit + adaptive quadrature integration."""
    from numpy.polynomial import Polynomial
    from scipy.integrate import quad

    pa = Polynomial.fit(anchor_q, np.log(anchor_rate), min(3, len(anchor_q) - 1))
    pt = Polynomial.fit(test_q, np.log(test_rate), min(3, len(test_q) - 1))
    lo = max(min(anchor_q), min(test_q))
    hi = min(max(anchor_q), max(test_q))
    ia, _ = quad(pa, lo, hi)
    it, _ = quad(pt, lo, hi)
    return (math.exp((it - ia) / (hi - lo)) - 1) * 100


class TestBdRate:
    def test_identical_curves_zero(self):
        r = [0.1, 0.2, 0.4, 0.8]
        q = [30.0, 33.0, 36.0, 39.0]
        assert bd_rate(r, q, r, q) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_half_rate_minus_fifty(self):
        r = np.array([0.1, 0.2, 0.4, 0.8])
        q = np.array([30.0, 33.0, 36.0, 39.0])
        assert bd_rate(r, q, r / 2, q) == pytest.approx(-50.0, abs=1e-6)

    def test_matches_reference_on_synthetic_curves(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            qa = np.sort(rng.uniform(28, 42, size=4))
            qt = np.sort(rng.uniform(28, 42, size=4))
            ra = np.sort(rng.uniform(0.05, 2.0, size=4))
            rt = np.sort(rng.uniform(0.05, 2.0, size=4))
            mine = bd_rate(ra, qa, rt, qt)
            ref = oracle_bd_rate(ra, qa, rt, qt)
            assert mine == pytest.approx(ref, abs=0.1)

    def test_non_overlapping_rejected(self):
        with pytest.raises(ValueError):
            bd_rate([0.1, 0.2], [30, 31], [0.1, 0.2], [35, 36])

    def test_rate_at_quality_interpolates(self):
        r = [0.1, 0.2, 0.4, 0.8]
        q = [30.0, 33.0, 36.0, 39.0]
        # log-linear curve: every fitted value sits on the line
        assert rate_at_quality(r, q, 31.5) == pytest.approx(
            math.exp(np.interp(31.5, q, np.log(r))), rel=1e-6
        )
        with pytest.raises(ValueError):
            rate_at_quality(r, q, 50.0)


class TestPatchGrid:
    def test_counts_match_protocol(self):
        from glc.metrics import patch_grid

        img = np.zeros((3, 512, 768))
        patches = patch_grid(img)
        # floor(512/256)*floor(768/256) + (2-1)*(3-1) shifted
        assert len(patches) == 2 * 3 + 1 * 2
        assert all(p.shape == (3, 256, 256) for p in patches)

    def test_small_images_yield_nothing(self):
        from glc.metrics import patch_grid

        assert patch_grid(np.zeros((3, 128, 128))) == []
