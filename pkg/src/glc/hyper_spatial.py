"""Spatial categorical hyper module for image coding.

The hyper analysis transform downsamples the code tensor by 2x, each hyper
vector is snapped to the hyper codebook, and the indices travel as
fixed-length codes. A learned factorized prior over the continuous hyper
codes is kept as an ablation baseline.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .entropy.factorized import FactorizedDensity
from .vqvae import Codebook, nearest_vq
from .transform_image import round_half_away


def bits_per_index(size: int) -> int:
    if size < 1:
        raise ValueError("codebook size must be positive")
    return max(int(math.ceil(math.log2(size))), 0)


def pack_indices(indices, size: int) -> bytes:
    """Fixed-length big-endian bit packing, zero-padded to a byte boundary."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ValueError(f"index out of range for codebook of size {size}")
    nbits = bits_per_index(size)
    if nbits == 0 or idx.size == 0:
        return b""
    acc = 0
    acc_bits = 0
    out = bytearray()
    for v in idx:
        acc = (acc << nbits) | int(v)
        acc_bits += nbits
        while acc_bits >= 8:
            acc_bits -= 8
            out.append((acc >> acc_bits) & 0xFF)
    if acc_bits:
        out.append((acc << (8 - acc_bits)) & 0xFF)
    return bytes(out)


def unpack_indices(data: bytes, count: int, size: int) -> np.ndarray:
    """Inverse of :func:`pack_indices`."""
    nbits = bits_per_index(size)
    if nbits == 0 or count == 0:
        return np.zeros(count, dtype=np.int64)
    need = (count * nbits + 7) // 8
    if len(data) < need:
        raise ValueError(f"hyper segment truncated: need {need} bytes, have {len(data)}")
    out = np.empty(count, dtype=np.int64)
    acc = 0
    acc_bits = 0
    pos = 0
    for i in range(count):
        while acc_bits < nbits:
            acc = (acc << 8) | data[pos]
            pos += 1
            acc_bits += 8
        acc_bits -= nbits
        v = (acc >> acc_bits) & ((1 << nbits) - 1)
        if v >= size:
            raise ValueError(f"decoded index {v} out of range for codebook of size {size}")
        out[i] = v
    return out


class HyperAnalysis(nn.Module):
    """Code tensor -> hyper grid at half resolution."""

    def __init__(self, cfg: ModelConfig, in_channels: int | None = None):
        super().__init__()
        in_ch = in_channels if in_channels is not None else cfg.code_channels
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, cfg.code_channels, 3, padding=1),
            nn.LeakyReLU(inplace=True),
            nn.Conv2d(cfg.code_channels, cfg.hyper_dim, 3, stride=2, padding=1),
        )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.net(y)


class HyperSynthesis(nn.Module):
    """Quantized hyper grid -> prior tensor carrying mean/scale seeds."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.conv1 = nn.Conv2d(cfg.hyper_dim, cfg.code_channels, 3, padding=1)
        self.act = nn.LeakyReLU(inplace=True)
        self.conv2 = nn.Conv2d(cfg.code_channels, 2 * cfg.code_channels, 3, padding=1)

    def forward(self, z_hat: torch.Tensor, out_hw: tuple[int, int]) -> torch.Tensor:
        x = self.act(self.conv1(z_hat))
        x = torch.nn.functional.interpolate(x, scale_factor=2.0, mode="nearest")
        x = x[..., : out_hw[0], : out_hw[1]]
        return self.conv2(x)


class SpatialCategoricalHyper(nn.Module):
    """Hyper transforms plus the hyper codebook."""

    def __init__(self, cfg: ModelConfig, in_channels: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.analysis = HyperAnalysis(cfg, in_channels)
        self.synthesis = HyperSynthesis(cfg)
        self.codebook = Codebook(cfg.hyper_codebook_size, cfg.hyper_dim, min_size=1)

    def hyper_vq(self, z: torch.Tensor) -> tuple[np.ndarray, torch.Tensor]:
        """Per-position nearest lookup; returns flat indices and the grid."""
        idx, quant = nearest_vq(z, self.codebook)
        return idx.reshape(-1).cpu().numpy(), quant

    def encode(self, y: torch.Tensor) -> tuple[np.ndarray, torch.Tensor, tuple[int, int]]:
        """y [1, C, h, w] -> (indices, prior [1, 2C, h, w], hyper dims)."""
        z = self.analysis(y)
        indices, z_hat = self.hyper_vq(z.squeeze(0))
        prior = self.synthesis(z_hat.unsqueeze(0), y.shape[-2:])
        return indices, prior, z.shape[-2:]

    def decode(self, indices: np.ndarray, hyper_hw: tuple[int, int],
               out_hw: tuple[int, int]) -> torch.Tensor:
        idx = torch.from_numpy(np.asarray(indices, dtype=np.int64))
        z_hat = self.codebook.lookup(idx).reshape(*hyper_hw, -1).permute(2, 0, 1)
        return self.synthesis(z_hat.unsqueeze(0), out_hw)

    def segment_bits(self, hyper_hw: tuple[int, int]) -> int:
        return hyper_hw[0] * hyper_hw[1] * bits_per_index(self.cfg.hyper_codebook_size)


class FactorizedHyper(nn.Module):
    """Transform-coding hyper path with a learned factorized prior (ablation)."""

    def __init__(self, cfg: ModelConfig, in_channels: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.analysis = HyperAnalysis(cfg, in_channels)
        self.synthesis = HyperSynthesis(cfg)
        self.density = FactorizedDensity(cfg.hyper_dim)

    def rate_estimate(self, z_noisy: torch.Tensor) -> torch.Tensor:
        # density works per channel: fold batch into the trailing dims
        z = z_noisy.movedim(-3, 0).reshape(z_noisy.shape[-3], -1)
        return self.density.rate_bits(z)

    def encode(self, y: torch.Tensor):
        """y -> (z_hat symbols, prior, hyper dims). Symbols are plain ints."""
        z = self.analysis(y).squeeze(0)
        z_hat = round_half_away(z)
        prior = self.synthesis(z_hat.unsqueeze(0), y.shape[-2:])
        symbols = z_hat.detach().cpu().numpy().astype(np.int64)
        return symbols, prior, z.shape[-2:]

    def decode(self, symbols: np.ndarray, hyper_hw: tuple[int, int],
               out_hw: tuple[int, int]) -> torch.Tensor:
        z_hat = torch.from_numpy(symbols.astype(np.float32)).reshape(
            self.cfg.hyper_dim, *hyper_hw
        )
        return self.synthesis(z_hat.unsqueeze(0), out_hw)
