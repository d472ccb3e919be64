"""Shared convolutional building blocks."""

from __future__ import annotations

import torch
from torch import nn


def _groups(channels: int) -> int:
    g = 8
    while channels % g:
        g //= 2
    return max(g, 1)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(channels), channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(channels), channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x):
        h = self.conv1(self.act(self.norm1(x)))
        h = self.conv2(self.act(self.norm2(h)))
        return x + h


class Downsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x):
        x = torch.nn.functional.interpolate(x, scale_factor=2.0, mode="nearest")
        return self.conv(x)


class DepthwiseBlock(nn.Module):
    """Residual depth-wise conv block used by the latent transforms."""

    def __init__(self, channels: int, expand: int = 2):
        super().__init__()
        mid = channels * expand
        self.pw1 = nn.Conv2d(channels, mid, 1)
        self.dw = nn.Conv2d(mid, mid, 3, padding=1, groups=mid)
        self.act = nn.SiLU()
        self.pw2 = nn.Conv2d(mid, channels, 1)

    def forward(self, x):
        return x + self.pw2(self.act(self.dw(self.pw1(x))))
