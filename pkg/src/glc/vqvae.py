"""Generative latent auto-encoder and codebook machinery.

The encoder maps frames to a latent grid at 1/f resolution; the decoder
generates pixels back from (possibly coded) latents. A learned codebook
provides the discrete bottleneck used during auto-encoder training and the
index-map ablation codec.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .config import ModelConfig
from .layers import Downsample, ResBlock, Upsample


def validate_frame(pixels: torch.Tensor) -> None:
    if pixels.dim() not in (3, 4) or pixels.shape[-3] != 3:
        raise ValueError(f"expected [3,H,W] or [B,3,H,W] pixels, got {tuple(pixels.shape)}")
    if not torch.isfinite(pixels).all():
        raise ValueError("frame contains non-finite pixel values")
    if pixels.min() < 0 or pixels.max() > 1:
        raise ValueError("pixel values must lie in [0, 1]")


def pad_to_multiple(pixels: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int, int]:
    """Reflect-pad bottom/right so H and W divide ``multiple``."""
    h, w = pixels.shape[-2:]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h or pad_w:
        if pad_h >= h or pad_w >= w:
            raise ValueError(
                f"frame {h}x{w} too small to reflect-pad to a multiple of {multiple}"
            )
        pixels = F.pad(pixels, (0, pad_w, 0, pad_h), mode="reflect")
    return pixels, pad_h, pad_w


def unpad(pixels: torch.Tensor, pad_h: int, pad_w: int) -> torch.Tensor:
    h, w = pixels.shape[-2:]
    return pixels[..., : h - pad_h, : w - pad_w]


class Codebook(nn.Module):
    """Ordered table of embedding vectors with deterministic nearest lookup."""

    def __init__(self, size: int, dim: int, min_size: int = 2):
        super().__init__()
        if size < min_size:
            raise ValueError(f"codebook needs at least {min_size} entries, got {size}")
        self.size = size
        self.dim = dim
        entries = torch.empty(size, dim).uniform_(-1.0 / size, 1.0 / size)
        self.entries = nn.Parameter(entries)

    @property
    def bits_per_index(self) -> int:
        return max(int(math.ceil(math.log2(self.size))), 0)

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        return F.embedding(indices, self.entries)


def nearest_indices(vectors: torch.Tensor, entries: torch.Tensor) -> torch.Tensor:
    """Exhaustive nearest-neighbor indices under squared L2.

    Computed in float64 with the explicit difference formula so results
    agree exactly with a brute-force scan; ties resolve to the lowest index.
    """
    if entries.numel() == 0:
        raise ValueError("empty codebook")
    v = vectors.detach().to(torch.float64)
    e = entries.detach().to(torch.float64)
    d = v.unsqueeze(-2) - e.unsqueeze(0)  # [n, N, dim]
    dist = (d * d).sum(-1)
    return dist.argmin(dim=-1)


def nearest_vq(latent: torch.Tensor, codebook: Codebook) -> tuple[torch.Tensor, torch.Tensor]:
    """Quantize a [M, h, w] latent against the codebook.

    Returns integer indices [h, w] and the quantized latent assembled from
    codebook rows.
    """
    m, h, w = latent.shape
    if m != codebook.dim:
        raise ValueError(f"latent channels {m} != codebook dim {codebook.dim}")
    flat = latent.permute(1, 2, 0).reshape(-1, m)
    idx = nearest_indices(flat, codebook.entries)
    quant = codebook.lookup(idx).reshape(h, w, m).permute(2, 0, 1)
    return idx.reshape(h, w), quant


def squared_l2(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-vector squared L2 distance, averaged over spatial positions.

    Vectors live on the channel axis (dim -3 for [..., M, h, w] tensors); a
    plain 1-D input is treated as a single vector.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    sq = (a - b).pow(2)
    if sq.dim() >= 3:
        return sq.sum(dim=-3).mean()
    return sq.sum()


def codebook_loss(latent: torch.Tensor, quantized: torch.Tensor, beta: float = 0.25) -> torch.Tensor:
    """``||sg(l) - l_q||^2 + beta * ||sg(l_q) - l||^2`` with squared L2."""
    embed = squared_l2(latent.detach(), quantized)
    commit = squared_l2(quantized.detach(), latent)
    return embed + beta * commit


class _StraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, latent, quantized):
        return quantized

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def straight_through(latent: torch.Tensor, quantized: torch.Tensor) -> torch.Tensor:
    """Forward value of ``quantized`` exactly, identity gradient onto ``latent``.

    Implemented as a custom autograd function rather than the usual
    ``l + (q - l).detach()`` so the forward value is bit-identical to the
    quantized input.
    """
    if latent.shape != quantized.shape:
        raise ValueError(f"shape mismatch {tuple(latent.shape)} vs {tuple(quantized.shape)}")
    return _StraightThrough.apply(latent, quantized)


class LatentEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        levels = int(round(math.log2(cfg.downsample)))
        widths = [min(cfg.base_width * 2 ** i, cfg.latent_channels * 2) for i in range(levels)]
        layers: list[nn.Module] = [nn.Conv2d(3, widths[0], 3, padding=1)]
        ch = widths[0]
        for i in range(levels):
            out = widths[min(i + 1, levels - 1)]
            for _ in range(cfg.num_res_blocks):
                layers.append(ResBlock(ch))
            layers.append(Downsample(ch, out))
            ch = out
        layers.append(ResBlock(ch))
        layers.append(nn.GroupNorm(8, ch))
        layers.append(nn.SiLU())
        layers.append(nn.Conv2d(ch, cfg.latent_channels, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class LatentDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        levels = int(round(math.log2(cfg.downsample)))
        widths = [min(cfg.base_width * 2 ** i, cfg.latent_channels * 2) for i in range(levels)]
        widths = widths[::-1]
        layers: list[nn.Module] = [nn.Conv2d(cfg.latent_channels, widths[0], 3, padding=1)]
        layers.append(ResBlock(widths[0]))
        ch = widths[0]
        for i in range(levels):
            out = widths[min(i + 1, levels - 1)]
            layers.append(Upsample(ch, out))
            for _ in range(cfg.num_res_blocks):
                layers.append(ResBlock(out))
            ch = out
        layers.append(nn.GroupNorm(8, ch))
        layers.append(nn.SiLU())
        layers.append(nn.Conv2d(ch, 3, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class VqVae(nn.Module):
    """Latent auto-encoder with the main codebook."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = LatentEncoder(cfg)
        self.decoder = LatentDecoder(cfg)
        self.codebook = Codebook(cfg.codebook_size, cfg.latent_channels)

    def encode_latent(self, pixels: torch.Tensor) -> tuple[torch.Tensor, int, int]:
        """Frame [3,H,W] in [0,1] -> latent [M, H*f, W*f] plus padding record."""
        validate_frame(pixels)
        batched = pixels.dim() == 4
        x, pad_h, pad_w = pad_to_multiple(pixels, self.cfg.downsample)
        if not batched:
            x = x.unsqueeze(0)
        latent = self.encoder(x)
        if not batched:
            latent = latent.squeeze(0)
        return latent, pad_h, pad_w

    def decode_latent(self, latent: torch.Tensor, pad_h: int = 0, pad_w: int = 0) -> torch.Tensor:
        """Latent -> frame in [0,1] with padding removed."""
        expect = self.cfg.latent_channels
        if latent.shape[-3] != expect:
            raise ValueError(f"expected {expect} latent channels, got {latent.shape[-3]}")
        batched = latent.dim() == 4
        x = latent if batched else latent.unsqueeze(0)
        pixels = self.decoder(x)
        if not batched:
            pixels = pixels.squeeze(0)
        pixels = unpad(pixels, pad_h, pad_w)
        return pixels.clamp(0.0, 1.0)

    def decode_latent_raw(self, latent: torch.Tensor) -> torch.Tensor:
        """Unclamped decoder output, for training losses."""
        return self.decoder(latent)


def indices_map_codec(
    latent: torch.Tensor, codebook: Codebook
) -> tuple[int, torch.Tensor]:
    """Fixed-length coding of the latent's VQ index map (ablation baseline)."""
    _, h, w = latent.shape
    indices, quant = nearest_vq(latent, codebook)
    bits = h * w * codebook.bits_per_index
    return bits, quant


def used_index_fraction(indices: torch.Tensor, codebook_size: int) -> float:
    distinct = int(torch.unique(indices.reshape(-1)).numel())
    return distinct / codebook_size


def reseed_dead_entries(
    codebook: Codebook, usage_counts: torch.Tensor, latents: torch.Tensor, rng: np.random.Generator
) -> int:
    """Re-seed entries not used in the last epoch from random batch latents."""
    dead = torch.nonzero(usage_counts == 0).flatten()
    if dead.numel() == 0:
        return 0
    flat = latents.detach().reshape(-1, codebook.dim)
    picks = rng.integers(0, flat.shape[0], size=dead.numel())
    with torch.no_grad():
        codebook.entries[dead] = flat[torch.from_numpy(picks)]
    return int(dead.numel())
