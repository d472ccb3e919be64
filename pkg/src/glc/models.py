"""Full codec models assembled from the building blocks."""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import ModelConfig
from .entropy.context import SpatialContextModel
from .hyper_spatial import FactorizedHyper, SpatialCategoricalHyper
from .hyper_st import SpatioTemporalHyper
from .transform_image import AnalysisTransform, ChannelScalers, SynthesisTransform
from .video import ConditionalTransforms, ContextExtractor
from .vqvae import VqVae


def _sinusoidal_positions(n: int, dim: int, device=None) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32, device=device).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=torch.float32, device=device)
    freq = torch.exp(-math.log(10000.0) * half / dim)
    angles = pos * freq
    pe = torch.zeros(n, dim, device=device)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return pe


class CodePredictor(nn.Module):
    """Sequence model over latent positions plus a codebook-index classifier.

    Auxiliary supervision only; the inference call graph never touches it.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(cfg.latent_channels, cfg.cp_width)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.cp_width,
            nhead=cfg.cp_heads,
            dim_feedforward=2 * cfg.cp_width,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            layer, num_layers=cfg.cp_layers, enable_nested_tensor=False
        )
        self.head = nn.Linear(cfg.cp_width, cfg.codebook_size)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        """[B, M, h, w] -> class logits [B, h*w, N]."""
        b, m, h, w = latent.shape
        seq = latent.reshape(b, m, h * w).transpose(1, 2)
        x = self.proj(seq)
        x = x + _sinusoidal_positions(h * w, x.shape[-1], device=latent.device)
        return self.head(self.encoder(x))


def make_image_hyper(cfg: ModelConfig):
    if cfg.hyper_kind == "factorized":
        return FactorizedHyper(cfg)
    return SpatialCategoricalHyper(cfg)


class ImageModel(nn.Module):
    """Image codec: latent auto-encoder + transform coding + hyper + context."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.vqvae = VqVae(cfg)
        self.analysis = AnalysisTransform(cfg)
        self.synthesis = SynthesisTransform(cfg)
        self.scalers = ChannelScalers(
            cfg.code_channels, cfg.num_rates, cfg.scale_init_min, cfg.scale_init_max
        )
        self.hyper = make_image_hyper(cfg)
        self.context_model = SpatialContextModel(
            cfg.code_channels, cfg.context_width, cfg.sigma_min, cfg.sigma_max
        )
        self.code_predictor = CodePredictor(cfg)

    def get_scalers(self, q_index: int):
        return self.scalers.get_scalers(q_index)


class VideoModel(nn.Module):
    """Video codec: an embedded image codec for intra frames plus the
    conditional path for predicted frames."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.image = ImageModel(cfg)
        self.context_extractor = ContextExtractor(cfg)
        self.cond = ConditionalTransforms(cfg)
        self.cond_scalers = ChannelScalers(
            cfg.code_channels, cfg.num_rates, cfg.scale_init_min, cfg.scale_init_max
        )
        if cfg.video_hyper == "spatiotemporal":
            self.video_hyper = SpatioTemporalHyper(cfg)
        else:
            self.video_hyper = SpatialCategoricalHyper(cfg)
        self.video_context_model = SpatialContextModel(
            cfg.code_channels, cfg.context_width, cfg.sigma_min, cfg.sigma_max
        )

    @property
    def vqvae(self) -> VqVae:
        return self.image.vqvae

    def extract_context(self, prev_latent: torch.Tensor) -> torch.Tensor:
        if not self.cfg.conditional:
            # ablation switch: unconditional coding with zeroed context input
            b, _, h, w = prev_latent.shape
            return prev_latent.new_zeros(b, self.cfg.context_channels, h, w)
        return self.context_extractor(prev_latent)
