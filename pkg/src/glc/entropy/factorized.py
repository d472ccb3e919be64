"""Learned factorized prior over quantized hyper codes (ablation baseline).

Per-channel non-parametric cumulative model built from monotone affine
layers with tanh gates. Used only by the factorized-hyper ablation; the
shipping configuration codes hyper information with the categorical
codebook instead.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .rangecoder import QuantizedCdf, pmf_to_cdf

_MAX_SUPPORT = 64  # channel support is searched within [-64, 64]


class FactorizedDensity(nn.Module):
    """Monotone CDF ``c(x)`` per channel; bin mass is ``c(x+.5) - c(x-.5)``."""

    def __init__(self, channels: int, widths: tuple[int, ...] = (3, 3, 3),
                 init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + widths + (1,)
        self._matrices = nn.ParameterList()
        self._biases = nn.ParameterList()
        self._factors = nn.ParameterList()
        scale = init_scale ** (1.0 / (len(dims) - 1))
        for k in range(len(dims) - 1):
            init = np.log(np.expm1(1.0 / scale / dims[k + 1]))
            self._matrices.append(
                nn.Parameter(torch.full((channels, dims[k + 1], dims[k]), float(init)))
            )
            self._biases.append(
                nn.Parameter(torch.empty(channels, dims[k + 1], 1).uniform_(-0.5, 0.5))
            )
            if k < len(dims) - 2:
                self._factors.append(
                    nn.Parameter(torch.zeros(channels, dims[k + 1], 1))
                )

    def _logits(self, x: torch.Tensor) -> torch.Tensor:
        # x: [C, n] -> logits of the cumulative, same shape
        v = x.unsqueeze(1)  # [C, 1, n]
        for k, matrix in enumerate(self._matrices):
            v = torch.bmm(F.softplus(matrix), v) + self._biases[k]
            if k < len(self._factors):
                v = v + torch.tanh(self._factors[k]) * torch.tanh(v)
        return v.squeeze(1)

    def bin_likelihood(self, x: torch.Tensor, min_likelihood: float = 1e-9) -> torch.Tensor:
        """Mass of the unit bin around ``x``; ``x`` shaped [C, ...]."""
        c = x.shape[0]
        flat = x.reshape(c, -1)
        upper = torch.sigmoid(self._logits(flat + 0.5))
        lower = torch.sigmoid(self._logits(flat - 0.5))
        lik = torch.clamp(upper - lower, min=min_likelihood)
        return lik.reshape(x.shape)

    def rate_bits(self, x: torch.Tensor) -> torch.Tensor:
        return -torch.log2(self.bin_likelihood(x)).sum()

    @torch.no_grad()
    def quantized_tables(self) -> list[QuantizedCdf]:
        """One coder table per channel over the trained support."""
        grid = torch.arange(-_MAX_SUPPORT, _MAX_SUPPORT + 1, dtype=torch.float32)
        x = grid.repeat(self.channels, 1)
        upper = torch.sigmoid(self._logits(x + 0.5))
        lower = torch.sigmoid(self._logits(x - 0.5))
        pmf = (upper - lower).double().cpu().numpy()
        tables = []
        for ch in range(self.channels):
            p = pmf[ch]
            escape = max(1.0 - p.sum(), 0.0)
            tables.append(
                QuantizedCdf(
                    cdf=pmf_to_cdf(np.concatenate([p, [escape]])),
                    offset=-_MAX_SUPPORT,
                )
            )
        return tables
