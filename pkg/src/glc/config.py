"""Codec and training configuration with desk/paper profiles.

Configs are plain dataclasses. They can be loaded from an INI file with
sections ``[model]``, ``[train]`` and ``[data]``; every key maps onto a
dataclass field of the same name.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ModelConfig:
    # latent auto-encoder
    downsample: int = 8            # spatial reduction of the latent space (1/f)
    latent_channels: int = 64      # M
    codebook_size: int = 512       # N, main codebook
    base_width: int = 32           # width of the first encoder level
    num_res_blocks: int = 1

    # transform coding
    code_channels: int = 64        # channels of the coded tensor y
    transform_blocks: int = 4      # depth-wise blocks per transform
    num_rates: int = 4             # Q_n discrete rate anchors
    scale_init_min: float = 0.5
    scale_init_max: float = 2.0

    # hyper module
    hyper_dim: int = 32            # d_h, hyper codebook embedding dim
    hyper_codebook_size: int = 1024  # N_b, power of two
    hyper_kind: str = "categorical"  # "categorical" | "factorized"
    latent_codec: str = "transform"  # "transform" | "indices_map"

    # entropy model
    context_width: int = 96
    sigma_min: float = 0.11
    sigma_max: float = 256.0

    # video
    context_channels: int = 64     # M_c, temporal context channels
    context_blocks: int = 3
    conditional: bool = True
    video_hyper: str = "spatiotemporal"  # "spatiotemporal" | "spatial"
    num_tokens: int = 16           # K
    maps_per_token: int = 4        # N_h attention-map groups
    hyper_info_channels: int = 64  # C_I

    # code predictor (training only)
    cp_layers: int = 3
    cp_width: int = 128
    cp_heads: int = 4

    def __post_init__(self):
        if self.hyper_codebook_size < 1 or (
            self.hyper_codebook_size & (self.hyper_codebook_size - 1)
        ):
            raise ValueError(
                f"hyper_codebook_size must be a power of two, got {self.hyper_codebook_size}"
            )
        if self.hyper_kind not in ("categorical", "factorized"):
            raise ValueError(f"unknown hyper_kind {self.hyper_kind!r}")
        if self.latent_codec not in ("transform", "indices_map"):
            raise ValueError(f"unknown latent_codec {self.latent_codec!r}")
        if self.video_hyper not in ("spatiotemporal", "spatial"):
            raise ValueError(f"unknown video_hyper {self.video_hyper!r}")


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    crop_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4

    steps_stage1: int = 2000
    steps_stage2: int = 5000
    steps_stage3: int = 2000

    # loss weights
    beta: float = 0.25            # commitment weight in the codebook loss
    alpha: float = 0.5            # cross-entropy weight in the code-prediction loss
    w_adv: float = 0.8            # adversarial weight, stage I
    lambda_adv: float = 0.8       # adversarial weight, stage III
    lambda_code: float = 0.05     # code-prediction weight, stage III
    lambda_min: float = 0.08      # rate-distortion trade-off range (image)
    lambda_max: float = 0.32
    disc_start_frac: float = 0.25  # fraction of stage-I/III steps before the GAN kicks in

    code_pred_supervision: bool = True
    joint_stage3: bool = True

    # video: a training clip is 1 intra reference + `unroll` predicted frames
    unroll: int = 3
    video_crop: int = 32
    video_lambda_min: float = 0.12
    video_lambda_max: float = 1.6

    checkpoint_every: int = 100

    def lambda_anchors(self, video: bool = False) -> list[float]:
        """Log-spaced rate-distortion weights bound to the q anchors."""
        import math

        lo, hi = (
            (self.video_lambda_min, self.video_lambda_max)
            if video
            else (self.lambda_min, self.lambda_max)
        )
        n = 4
        return [lo * (hi / lo) ** (i / (n - 1)) for i in range(n)]


@dataclass
class DataConfig:
    kind: str = "synthetic"        # "synthetic" | "images" | "frames"
    path: str = ""
    num_train: int = 200
    num_val: int = 20
    image_size: int = 64
    video_frames: int = 16
    seed: int = 1234


DESK = ModelConfig()

PAPER = ModelConfig(
    downsample=16,
    latent_channels=256,
    codebook_size=16384,
    base_width=128,
    code_channels=256,
    context_channels=256,
    cp_layers=9,
)

PROFILES = {"desk": DESK, "paper": PAPER}


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


def _coerce(value: str, typ):
    if typ is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    return value


def _fill(dc, section) -> None:
    fields = {f.name: f.type for f in dataclasses.fields(dc)}
    types = {f.name: type(getattr(dc, f.name)) for f in dataclasses.fields(dc)}
    for key, value in section.items():
        if key not in fields:
            raise KeyError(f"unknown config key {key!r} in section [{section.name}]")
        setattr(dc, key, _coerce(value, types[key]))


def load_config(path: str | Path) -> Config:
    """Load a sectioned key-value config file."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(path)

    cfg = Config()
    profile = None
    if parser.has_section("profile"):
        profile = parser["profile"].get("name")
    elif parser.has_option("DEFAULT", "profile"):
        profile = parser["DEFAULT"]["profile"]
    if profile:
        if profile not in PROFILES:
            raise KeyError(f"unknown profile {profile!r}")
        cfg.model = dataclasses.replace(PROFILES[profile])

    if parser.has_section("model"):
        _fill(cfg.model, parser["model"])
        cfg.model.__post_init__()
    if parser.has_section("train"):
        _fill(cfg.train, parser["train"])
    if parser.has_section("data"):
        _fill(cfg.data, parser["data"])
    return cfg
