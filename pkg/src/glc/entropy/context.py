"""Spatial context schedule and conditional parameter prediction.

The coded tensor is partitioned by a 2x2 tiling into four decoding steps;
step ``k`` covers offset ``(k mod 2, k div 2)`` within each 2x2 cell. The
parameter net sees the hyper prior, the symbols decoded in earlier steps
(zeroed elsewhere) and the visibility mask, so the prediction for a step
can never depend on symbols that are not decoded yet.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

NUM_STEPS = 4


def context_schedule(h: int, w: int) -> list[np.ndarray]:
    """Boolean position masks for the four decoding steps.

    Disjoint and exhaustive for any grid size, including odd dims.
    """
    if h < 1 or w < 1:
        raise ValueError(f"invalid grid dims {h}x{w}")
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    masks = []
    for k in range(NUM_STEPS):
        col_off = k % 2
        row_off = k // 2
        masks.append((rows % 2 == row_off) & (cols % 2 == col_off))
    return masks


class SpatialContextModel(nn.Module):
    """Predicts Gaussian params from the hyper prior and visible symbols."""

    def __init__(self, code_channels: int, width: int = 96,
                 sigma_min: float = 0.11, sigma_max: float = 256.0):
        super().__init__()
        self.code_channels = code_channels
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        in_ch = 3 * code_channels + 1  # prior (2C) + visible symbols (C) + mask
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, width, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, width, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, 2 * code_channels, 3, padding=1),
        )

    def forward(
        self, prior: torch.Tensor, visible: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Params for every position given symbols visible so far.

        ``visible`` must already be zeroed outside ``mask``; the mask is fed
        as an extra channel so zero symbols are distinguishable from hidden
        positions.
        """
        if prior.shape[-2:] != visible.shape[-2:]:
            raise ValueError(
                f"prior dims {tuple(prior.shape[-2:])} != code dims {tuple(visible.shape[-2:])}"
            )
        if mask.shape[0] != prior.shape[0]:
            mask = mask.expand(prior.shape[0], -1, -1, -1)
        x = torch.cat([prior, visible, mask], dim=-3)
        out = self.net(x)
        mu, log_sigma = out.chunk(2, dim=-3)
        sigma = torch.exp(torch.clamp(log_sigma, math.log(1e-4), math.log(1e4)))
        sigma = torch.clamp(sigma, self.sigma_min, self.sigma_max)
        return mu, sigma


def masked_step_inputs(
    y_hat: torch.Tensor, step_masks: list[torch.Tensor], step: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Visible-symbol tensor and mask channel for decoding step ``step``."""
    prev = torch.zeros_like(step_masks[0])
    for k in range(step):
        prev = prev + step_masks[k]
    visible = y_hat * prev
    return visible, prev


def step_masks_tensor(h: int, w: int, device=None) -> list[torch.Tensor]:
    """Schedule masks as [1, 1, h, w] float tensors."""
    return [
        torch.from_numpy(m.astype(np.float32))[None, None].to(device or "cpu")
        for m in context_schedule(h, w)
    ]
