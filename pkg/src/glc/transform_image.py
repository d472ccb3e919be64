"""Latent-space transform coding: analysis/synthesis nets, scalar
quantization and the rate-variable channel scalers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .layers import DepthwiseBlock


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    """Round halves away from zero (platform-stable, unlike bankers')."""
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def quantize(y: torch.Tensor, mean: torch.Tensor) -> torch.Tensor:
    """Mean-offset scalar quantization: ``round(y - mean) + mean``."""
    if y.shape != mean.shape:
        raise ValueError(f"shape mismatch {tuple(y.shape)} vs {tuple(mean.shape)}")
    return round_half_away(y - mean) + mean


def quantize_train(y: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """Additive-uniform-noise relaxation of the quantizer (training only)."""
    noise = torch.rand(y.shape, generator=generator, device=y.device) - 0.5
    return y + noise


def geometric_scale(s_min: float, s_max: float, q: float, num_rates: int) -> float:
    """Geometric interpolation between scale endpoints at anchor ``q``."""
    if num_rates < 2:
        return s_min
    t = q / (num_rates - 1)
    return s_min * (s_max / s_min) ** t


@dataclass
class RateScalers:
    q_index: int
    enc_scale: torch.Tensor  # [C], strictly positive
    dec_scale: torch.Tensor  # [C], strictly positive


class ChannelScalers(nn.Module):
    """Learned per-channel scale endpoints with geometric interpolation.

    The decoder-side endpoints start at the reciprocal of the encoder's and
    are trained jointly afterwards.
    """

    def __init__(self, channels: int, num_rates: int = 4,
                 init_min: float = 0.5, init_max: float = 2.0):
        super().__init__()
        self.num_rates = num_rates
        self.log_enc_min = nn.Parameter(torch.full((channels,), math.log(init_min)))
        self.log_enc_max = nn.Parameter(torch.full((channels,), math.log(init_max)))
        self.log_dec_min = nn.Parameter(torch.full((channels,), -math.log(init_min)))
        self.log_dec_max = nn.Parameter(torch.full((channels,), -math.log(init_max)))

    def interp(self, q: float) -> tuple[torch.Tensor, torch.Tensor]:
        """Scales at a (possibly fractional) anchor position."""
        t = q / (self.num_rates - 1) if self.num_rates > 1 else 0.0
        enc = torch.exp(self.log_enc_min + t * (self.log_enc_max - self.log_enc_min))
        dec = torch.exp(self.log_dec_min + t * (self.log_dec_max - self.log_dec_min))
        return enc, dec

    def get_scalers(self, q_index: int) -> RateScalers:
        if not 0 <= q_index < self.num_rates:
            raise ValueError(f"q_index {q_index} out of range [0, {self.num_rates})")
        enc, dec = self.interp(float(q_index))
        return RateScalers(q_index=q_index, enc_scale=enc, dec_scale=dec)


class AnalysisTransform(nn.Module):
    """Latent -> code, with the encoder-side scaler applied at the output."""

    def __init__(self, cfg: ModelConfig, in_channels: int | None = None):
        super().__init__()
        in_ch = in_channels if in_channels is not None else cfg.latent_channels
        self.proj = nn.Conv2d(in_ch, cfg.code_channels, 1)
        self.blocks = nn.Sequential(
            *[DepthwiseBlock(cfg.code_channels) for _ in range(cfg.transform_blocks)]
        )

    def forward(self, latent: torch.Tensor, enc_scale: torch.Tensor) -> torch.Tensor:
        y = self.blocks(self.proj(latent))
        return y * enc_scale.view(1, -1, 1, 1)


class SynthesisTransform(nn.Module):
    """Code -> latent, with the decoder-side scaler applied at the input."""

    def __init__(self, cfg: ModelConfig, extra_channels: int = 0):
        super().__init__()
        self.blocks = nn.Sequential(
            *[DepthwiseBlock(cfg.code_channels) for _ in range(cfg.transform_blocks)]
        )
        self.proj_in = nn.Conv2d(cfg.code_channels + extra_channels, cfg.code_channels, 1)
        self.proj_out = nn.Conv2d(cfg.code_channels, cfg.latent_channels, 1)

    def forward(
        self,
        code: torch.Tensor,
        dec_scale: torch.Tensor,
        extra: torch.Tensor | None = None,
    ) -> torch.Tensor:
        x = code * dec_scale.view(1, -1, 1, 1)
        if extra is not None:
            x = torch.cat([x, extra], dim=-3)
        return self.proj_out(self.blocks(self.proj_in(x)))
