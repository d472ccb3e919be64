"""Quality metrics and rate-distortion curve comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import convolve2d

# optional perceptual metrics (DISTS/LPIPS/FID/KID style) plug in here;
# nothing is registered by default.
PERCEPTUAL_PLUGINS: dict[str, Callable] = {}


def register_perceptual(name: str, fn: Callable) -> None:
    PERCEPTUAL_PLUGINS[name] = fn


def patch_grid(image, patch: int = 256, shift: int = 128) -> list:
    """Overlapping patch protocol for set-level perceptual metrics.

    An HxW image yields floor(H/p)*floor(W/p) aligned patches plus a second
    grid shifted by ``shift`` in both dimensions, as used when feeding
    FID/KID-style evaluators. Only exercised when such a plugin is
    registered; nothing in the core pipeline depends on it.
    """
    a = _to_array(image)
    h, w = a.shape[-2:]
    out = []
    for y0 in range(0, h - patch + 1, patch):
        for x0 in range(0, w - patch + 1, patch):
            out.append(a[..., y0 : y0 + patch, x0 : x0 + patch])
    for y0 in range(shift, h - patch + 1, patch):
        for x0 in range(shift, w - patch + 1, patch):
            out.append(a[..., y0 : y0 + patch, x0 : x0 + patch])
    return out


@dataclass
class RdPoint:
    bpp: float
    psnr_db: float
    ms_ssim: float
    extras: dict = field(default_factory=dict)


def _to_array(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(orig, recon, data_range: float = 1.0) -> float:
    a = _to_array(orig)
    b = _to_array(recon)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()

_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _ssim_channel(a: np.ndarray, b: np.ndarray, data_range: float) -> tuple[float, float]:
    """Mean SSIM and mean contrast-sensitivity for one 2-D channel."""
    win = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    aa = convolve2d(a * a, win, mode="valid") - mu_a ** 2
    bb = convolve2d(b * b, win, mode="valid") - mu_b ** 2
    ab = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    cs_map = (2.0 * ab + c2) / (aa + bb + c2)
    ssim_map = ((2.0 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)) * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    x = x[: h // 2 * 2, : w // 2 * 2]
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4.0


def ms_ssim(orig, recon, data_range: float = 1.0, scales: int = 5) -> float:
    """Multi-scale SSIM, averaged over channels.

    Weights follow the standard 5-scale profile and are renormalized when
    fewer scales fit the image.
    """
    a = _to_array(orig)
    b = _to_array(recon)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    min_side = min(a.shape[-2:])
    max_scales = 0
    side = min_side
    while side >= 11 and max_scales < scales:
        max_scales += 1
        side //= 2
    if max_scales < 1:
        raise ValueError(f"image side {min_side} too small for an 11-tap window")
    weights = np.array(_SSIM_WEIGHTS[:max_scales])
    weights = weights / weights.sum()

    per_channel = []
    for ch in range(a.shape[0]):
        xa, xb = a[ch], b[ch]
        mcs = []
        value = None
        for s in range(max_scales):
            ssim_mean, cs_mean = _ssim_channel(xa, xb, data_range)
            if s == max_scales - 1:
                value = ssim_mean
            else:
                mcs.append(cs_mean)
                xa = _downsample2(xa)
                xb = _downsample2(xb)
        terms = np.array(mcs + [value])
        # negative terms can appear on pathological inputs; clamp like the
        # common implementations do
        terms = np.maximum(terms, 0.0)
        per_channel.append(float(np.prod(terms ** weights)))
    return float(np.mean(per_channel))


def compute_metrics(orig, recon, total_bits: int, num_pixels: int) -> RdPoint:
    point = RdPoint(
        bpp=total_bits / num_pixels,
        psnr_db=psnr(orig, recon),
        ms_ssim=ms_ssim(orig, recon),
    )
    for name, fn in PERCEPTUAL_PLUGINS.items():
        point.extras[name] = float(fn(orig, recon))
    return point


# -- Bjontegaard delta rate -------------------------------------------------


def _check_curve(rate, quality) -> tuple[np.ndarray, np.ndarray]:
    r = np.asarray(rate, dtype=np.float64)
    q = np.asarray(quality, dtype=np.float64)
    if r.ndim != 1 or q.ndim != 1 or r.size != q.size:
        raise ValueError("rate and quality must be 1-D and equally sized")
    if r.size < 2:
        raise ValueError("need at least two rate-distortion points")
    if (r <= 0).any():
        raise ValueError("rates must be positive")
    order = np.argsort(q)
    return r[order], q[order]


def bd_rate(anchor_rate, anchor_quality, test_rate, test_quality) -> float:
    """Average percent rate difference of test vs anchor at equal quality.

    Polynomial fit of log-rate over quality (cubic when four or more points
    are available), integrated over the overlapping quality interval.
    Negative means the test codec saves bits.
    """
    ra, qa = _check_curve(anchor_rate, anchor_quality)
    rt, qt = _check_curve(test_rate, test_quality)
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if hi <= lo:
        raise ValueError("rate-distortion curves do not overlap in quality")
    deg_a = min(3, qa.size - 1)
    deg_t = min(3, qt.size - 1)
    pa = np.polyfit(qa, np.log(ra), deg_a)
    pt = np.polyfit(qt, np.log(rt), deg_t)
    ia = np.polyval(np.polyint(pa), hi) - np.polyval(np.polyint(pa), lo)
    it = np.polyval(np.polyint(pt), hi) - np.polyval(np.polyint(pt), lo)
    avg_diff = (it - ia) / (hi - lo)
    return float((math.exp(avg_diff) - 1.0) * 100.0)


def rate_at_quality(rate, quality, target_quality: float) -> float:
    """Fitted log-rate evaluated at one quality level (degenerate BD-rate)."""
    r, q = _check_curve(rate, quality)
    if not (q.min() <= target_quality <= q.max()):
        raise ValueError("target quality outside the fitted curve")
    p = np.polyfit(q, np.log(r), min(3, q.size - 1))
    return float(math.exp(np.polyval(p, target_quality)))
