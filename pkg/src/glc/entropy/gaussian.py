"""Gaussian probability modeling for quantized transform codes.

Symbols are the mean-offset residuals ``round(y - mu)``, modeled as a
zero-mean Gaussian with predicted scale. For actual coding every scale is
snapped to a fixed log-spaced table; the quantized CDF for each table entry
covers ``[-ceil(8*sigma), +ceil(8*sigma)]`` plus the escape slot, so every
representable symbol keeps nonzero probability. Tables are module-level
constants: both coder sides share them by construction.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import torch

from .rangecoder import QuantizedCdf, pmf_to_cdf

SIGMA_MIN = 0.11
SIGMA_MAX = 256.0
NUM_SCALES = 64

_LOG_MIN = math.log(SIGMA_MIN)
_LOG_MAX = math.log(SIGMA_MAX)

SCALE_TABLE = np.exp(np.linspace(_LOG_MIN, _LOG_MAX, NUM_SCALES))
_LOG_TABLE = np.log(SCALE_TABLE)


def _std_normal_cdf(x: np.ndarray) -> np.ndarray:
    from scipy.special import ndtr

    return ndtr(x)


@lru_cache(maxsize=None)
def _table_for_scale_index(i: int) -> QuantizedCdf:
    sigma = float(SCALE_TABLE[i])
    radius = int(math.ceil(8.0 * sigma))
    values = np.arange(-radius, radius + 1, dtype=np.float64)
    upper = _std_normal_cdf((values + 0.5) / sigma)
    lower = _std_normal_cdf((values - 0.5) / sigma)
    pmf = upper - lower
    escape = max(1.0 - pmf.sum(), 0.0)
    full = np.concatenate([pmf, [escape]])
    return QuantizedCdf(cdf=pmf_to_cdf(full), offset=-radius)


def cdf_tables() -> list[QuantizedCdf]:
    """All per-scale quantized CDF tables, in scale-table order."""
    return [_table_for_scale_index(i) for i in range(NUM_SCALES)]


def scale_indexes(sigma: torch.Tensor | np.ndarray) -> np.ndarray:
    """Snap scales to the nearest table entry in log space."""
    if isinstance(sigma, torch.Tensor):
        sigma = sigma.detach().cpu().numpy()
    s = np.clip(np.asarray(sigma, dtype=np.float64), SIGMA_MIN, SIGMA_MAX)
    pos = (np.log(s) - _LOG_MIN) / (_LOG_MAX - _LOG_MIN) * (NUM_SCALES - 1)
    return np.clip(np.rint(pos).astype(np.int64), 0, NUM_SCALES - 1)


def likelihood(
    residual: torch.Tensor, sigma: torch.Tensor, min_likelihood: float = 1e-9
) -> torch.Tensor:
    """Probability mass of the unit bin around each residual.

    ``residual`` is ``y_hat - mu`` (integers at inference, noisy reals during
    training). Differentiable in both arguments.
    """
    sigma = torch.clamp(sigma, min=SIGMA_MIN)
    inv = 1.0 / (sigma * math.sqrt(2.0))
    upper = torch.special.erf((residual + 0.5) * inv)
    lower = torch.special.erf((residual - 0.5) * inv)
    return torch.clamp(0.5 * (upper - lower), min=min_likelihood)


def rate_bits(residual: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Total information content in bits under the Gaussian model."""
    return -torch.log2(likelihood(residual, sigma)).sum()
