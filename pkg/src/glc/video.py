"""Conditional latent coding for video: temporal context extraction and
context-conditioned transforms."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .layers import DepthwiseBlock
from .transform_image import AnalysisTransform, SynthesisTransform


@dataclass
class GopState:
    """Sequence bookkeeping shared by encoder and decoder."""

    prev_latent: torch.Tensor | None = None
    frame_index: int = 0

    def is_intra(self, intra_period: int) -> bool:
        if self.frame_index == 0 or self.prev_latent is None:
            return True
        return intra_period > 0 and self.frame_index % intra_period == 0


class ContextExtractor(nn.Module):
    """Single-scale temporal context from the previous decoded latent."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Conv2d(cfg.latent_channels, cfg.context_channels, 1)
        self.blocks = nn.Sequential(
            *[DepthwiseBlock(cfg.context_channels) for _ in range(cfg.context_blocks)]
        )

    def forward(self, prev_latent: torch.Tensor) -> torch.Tensor:
        return self.blocks(self.proj(prev_latent))


class ConditionalTransforms(nn.Module):
    """Analysis/synthesis pair with the context concatenated at entry."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.analysis = AnalysisTransform(
            cfg, in_channels=cfg.latent_channels + cfg.context_channels
        )
        self.synthesis = SynthesisTransform(cfg, extra_channels=cfg.context_channels)

    def cond_analysis(
        self, latent: torch.Tensor, context: torch.Tensor, enc_scale: torch.Tensor
    ) -> torch.Tensor:
        if latent.shape[-2:] != context.shape[-2:]:
            raise ValueError(
                f"context dims {tuple(context.shape[-2:])} != latent dims {tuple(latent.shape[-2:])}"
            )
        return self.analysis(torch.cat([latent, context], dim=-3), enc_scale)

    def cond_synthesis(
        self, code: torch.Tensor, context: torch.Tensor, dec_scale: torch.Tensor
    ) -> torch.Tensor:
        if code.shape[-2:] != context.shape[-2:]:
            raise ValueError(
                f"context dims {tuple(context.shape[-2:])} != code dims {tuple(code.shape[-2:])}"
            )
        return self.synthesis(code, dec_scale, extra=context)
