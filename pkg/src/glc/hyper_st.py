"""Spatio-temporal categorical hyper module for video coding.

Global semantic dynamics are pooled into K tokens under predicted attention
maps, the tokens are snapped to the hyper codebook and transmitted as
fixed-length indices, and the decoder restores a spatial hyper prior by
fusing the tokens back under the same (decoder-derivable) attention maps.

Attention maps are predicted from the temporal context only, so the decoder
reproduces them bit-exactly; the refined maps, which additionally see the
encoder-side hyper information, are used solely while generating tokens.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .config import ModelConfig
from .layers import DepthwiseBlock
from .vqvae import Codebook, nearest_indices


def normalize_maps(logits: torch.Tensor) -> torch.Tensor:
    """Spatial softmax per map; input/output [B, K, N_h, h, w]."""
    b, k, g, h, w = logits.shape
    flat = logits.reshape(b, k, g, h * w)
    return torch.softmax(flat, dim=-1).reshape(b, k, g, h, w)


class AttentionPredictor(nn.Module):
    """K*N_h normalized attention maps from the temporal context alone."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.num_tokens = cfg.num_tokens
        self.maps_per_token = cfg.maps_per_token
        out = cfg.num_tokens * cfg.maps_per_token
        self.net = nn.Sequential(
            nn.Conv2d(cfg.context_channels, cfg.hyper_info_channels, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(cfg.hyper_info_channels, out, 3, padding=1),
        )

    def forward(self, context: torch.Tensor) -> torch.Tensor:
        b, _, h, w = context.shape
        logits = self.net(context).reshape(
            b, self.num_tokens, self.maps_per_token, h, w
        )
        return normalize_maps(logits)


class SpatioTemporalHyper(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        k, g = cfg.num_tokens, cfg.maps_per_token
        ci = cfg.hyper_info_channels
        if ci % g:
            raise ValueError(f"hyper_info_channels {ci} not divisible by {g} groups")
        self.attention = AttentionPredictor(cfg)
        self.info_net = nn.Sequential(
            nn.Conv2d(cfg.code_channels + cfg.context_channels, ci, 3, padding=1),
            DepthwiseBlock(ci),
        )
        self.feature_net = nn.Conv2d(ci, ci, 3, padding=1)
        self.refine_net = nn.Conv2d(ci, k * g, 3, padding=1)
        # one projection per token
        self.proj_weight = nn.Parameter(torch.empty(k, cfg.hyper_dim, ci))
        self.proj_bias = nn.Parameter(torch.zeros(k, cfg.hyper_dim))
        nn.init.xavier_uniform_(self.proj_weight)
        self.codebook = Codebook(cfg.hyper_codebook_size, cfg.hyper_dim, min_size=1)
        self.fuse_proj = nn.Linear(cfg.hyper_dim, ci)
        self.fuse_refine = nn.Sequential(
            nn.Conv2d(ci, ci, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(ci, ci, 3, padding=1),
        )
        self.hyper_decoder = nn.Sequential(
            nn.Conv2d(ci + cfg.context_channels, ci, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(ci, 2 * cfg.code_channels, 3, padding=1),
        )

    # -- encoder side --------------------------------------------------

    def hyper_info(self, y: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        return self.info_net(torch.cat([y, context], dim=-3))

    def refine_attention(self, maps: torch.Tensor, info: torch.Tensor) -> torch.Tensor:
        """Fuse encoder-side features into the maps, renormalized."""
        b, k, g, h, w = maps.shape
        delta = self.refine_net(info).reshape(b, k, g, h, w)
        return normalize_maps(torch.log(maps + 1e-9) + delta)

    def grouped_features(self, info: torch.Tensor) -> torch.Tensor:
        """Features split into N_h groups: [B, N_h, C/N_h, h, w]."""
        b, _, h, w = info.shape
        feats = self.feature_net(info)
        g = self.cfg.maps_per_token
        return feats.reshape(b, g, -1, h, w)

    def token_generation(
        self, grouped: torch.Tensor, maps: torch.Tensor
    ) -> torch.Tensor:
        """Attention-weighted pooling then per-token projection.

        ``grouped``: [B, N_h, Cg, h, w]; ``maps``: [B, K, N_h, h, w] with the
        channels of each group sharing their group's map. Returns [B, K, d].
        """
        if grouped.shape[1] != maps.shape[2]:
            raise ValueError(
                f"group count mismatch: features {grouped.shape[1]} vs maps {maps.shape[2]}"
            )
        pooled = torch.einsum("bgchw,bkghw->bkgc", grouped, maps)
        pooled = pooled.reshape(pooled.shape[0], pooled.shape[1], -1)
        return torch.einsum("bkf,kdf->bkd", pooled, self.proj_weight) + self.proj_bias

    def token_vq(self, tokens: torch.Tensor) -> tuple[np.ndarray, torch.Tensor]:
        """Nearest lookup of [K, d] tokens; returns indices and rows."""
        idx = nearest_indices(tokens, self.codebook.entries)
        return idx.cpu().numpy(), self.codebook.lookup(idx)

    # -- both sides ----------------------------------------------------

    def token_fusion(self, tokens: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
        """Approximate inverse of token generation: [B, K, d] -> [B, C_I, h, w]."""
        b, k, g, h, w = maps.shape
        if tokens.shape[1] != k:
            raise ValueError(f"token count {tokens.shape[1]} != map count {k}")
        proj = self.fuse_proj(tokens)  # [B, K, C_I]
        grouped = proj.reshape(b, k, g, -1)  # [B, K, N_h, Cg]
        fused = grouped[..., None, None] * maps[:, :, :, None]  # [B,K,N_h,Cg,h,w]
        fused = fused.mean(dim=1).reshape(b, -1, h, w)
        return self.fuse_refine(fused)

    def prior_from_tokens(
        self, tokens: torch.Tensor, maps: torch.Tensor, context: torch.Tensor
    ) -> torch.Tensor:
        """Hyper prior for entropy coding, decoder-derivable."""
        info_hat = self.token_fusion(tokens, maps)
        return self.hyper_decoder(torch.cat([info_hat, context], dim=-3))

    # -- full paths ------------------------------------------------------

    def encode(self, y: torch.Tensor, context: torch.Tensor):
        """Returns (token indices [K], prior, quantized tokens [1, K, d])."""
        maps = self.attention(context)
        info = self.hyper_info(y, context)
        refined = self.refine_attention(maps, info)
        tokens = self.token_generation(self.grouped_features(info), refined)
        indices, rows = self.token_vq(tokens.squeeze(0))
        tokens_hat = rows.unsqueeze(0)
        prior = self.prior_from_tokens(tokens_hat, maps, context)
        return indices, prior, tokens_hat

    def decode(self, indices: np.ndarray, context: torch.Tensor) -> torch.Tensor:
        maps = self.attention(context)
        idx = torch.from_numpy(np.asarray(indices, dtype=np.int64))
        tokens_hat = self.codebook.lookup(idx).unsqueeze(0)
        return self.prior_from_tokens(tokens_hat, maps, context)

    def segment_bits(self) -> int:
        from .hyper_spatial import bits_per_index

        return self.cfg.num_tokens * bits_per_index(self.cfg.hyper_codebook_size)
