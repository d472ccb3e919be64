"""Shared fixtures: toy datasets and trained toy models.

Training fixtures are cached on disk under ``tests/_cache`` keyed by their
configuration, so repeated test runs skip the toy training schedule. Delete
the cache directory after changing training code.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from glc.ablate import build_video_model
from glc.config import Config, ModelConfig
from glc.data import toy_images, toy_videos
from glc.models import ImageModel, VideoModel
from glc.train import train_stage1, train_stage2_image, train_stage3_image, train_video

CACHE = Path(__file__).parent / "_cache"
# bump when training semantics change so stale cached runs are discarded
CODE_SALT = "toy-v3"

TOY_MODEL = dict(
    latent_channels=32, base_width=16, codebook_size=128,
    code_channels=32, transform_blocks=2, hyper_dim=16,
    hyper_codebook_size=1024, context_width=48,
    context_channels=32, hyper_info_channels=32,
    num_tokens=16, maps_per_token=4, cp_layers=2, cp_width=64,
)

STAGE1_STEPS = 2000
STAGE2_STEPS = 2500
STAGE3_STEPS = 800
VIDEO_STAGE2_STEPS = 2000
VIDEO_STAGE3_STEPS = 200

# rate-distortion weight range per stage (defaults; kept explicit so toy
# schedules can be re-tuned in one place)
STAGE2_LAMBDA = (0.08, 0.32)
STAGE3_LAMBDA = (0.08, 0.32)


def toy_config() -> Config:
    cfg = Config()
    cfg.model = ModelConfig(**TOY_MODEL)
    cfg.train.lr = 2e-4
    cfg.train.disc_start_frac = 0.75
    cfg.train.checkpoint_every = 200
    cfg.train.video_crop = 48
    cfg.data.num_train = 200
    cfg.data.num_val = 20
    cfg.data.image_size = 64
    return cfg


def _key(tag: str, cfg: Config, steps) -> str:
    blob = json.dumps(
        [CODE_SALT, tag, dataclasses.asdict(cfg.model),
         dataclasses.asdict(cfg.train), steps],
        sort_keys=True, default=str,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cached_run(tag: str, cfg: Config, steps, builder):
    """Load a trained model + history from cache or train and store it."""
    CACHE.mkdir(exist_ok=True)
    path = CACHE / f"{tag}-{_key(tag, cfg, steps)}.pt"
    if path.is_file():
        payload = torch.load(path, map_location="cpu", weights_only=False)
        model = payload["builder_kind"]
        model = (VideoModel if model == "video" else ImageModel)(ModelConfig(**payload["config"]))
        model.load_state_dict(payload["state"])
        model.eval()
        return model, payload["history"]
    model, history = builder()
    torch.save({
        "state": model.state_dict(),
        "config": model.cfg.__dict__,
        "builder_kind": "video" if isinstance(model, VideoModel) else "image",
        "history": history,
    }, path)
    return model, history


# ---------------------------------------------------------------------------
# data fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def toy_cfg() -> Config:
    return toy_config()


@pytest.fixture(scope="session")
def train_images(toy_cfg):
    return toy_images(toy_cfg.data.num_train, toy_cfg.data.image_size, 1234)


@pytest.fixture(scope="session")
def eval_images(toy_cfg):
    return toy_images(toy_cfg.data.num_val, toy_cfg.data.image_size, 4321)


@pytest.fixture(scope="session")
def train_videos():
    return toy_videos(32, 16, 96, 777)


@pytest.fixture(scope="session")
def eval_videos():
    return toy_videos(4, 12, 96, 888)


# ---------------------------------------------------------------------------
# trained model fixtures (cached)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def stage1_run(toy_cfg, train_images):
    # the validation trace uses a larger held-out set than the 20-image
    # rate-monotonicity set to keep per-checkpoint noise down
    mse_val = toy_images(50, toy_cfg.data.image_size, 4321)

    def build():
        torch.manual_seed(toy_cfg.train.seed)
        model = ImageModel(toy_cfg.model)
        hist = train_stage1(model, train_images, mse_val, toy_cfg,
                            steps=STAGE1_STEPS)
        return model, {"val_mse": hist.val_mse, "losses": hist.losses[-50:]}

    return cached_run("stage1", toy_cfg, STAGE1_STEPS, build)


@pytest.fixture(scope="session")
def stage1_model(stage1_run):
    return stage1_run[0]


def _stage2_cfg(toy_cfg) -> Config:
    cfg = copy.deepcopy(toy_cfg)
    cfg.train.lr = 1e-3
    cfg.train.lambda_min, cfg.train.lambda_max = STAGE2_LAMBDA
    return cfg


@pytest.fixture(scope="session")
def stage2_run(toy_cfg, stage1_model, train_images):
    cfg = _stage2_cfg(toy_cfg)

    def build():
        model = copy.deepcopy(stage1_model)
        hist = train_stage2_image(model, train_images, cfg, steps=STAGE2_STEPS)
        return model, {"losses": hist.losses[-50:]}

    return cached_run("stage2", cfg, STAGE2_STEPS, build)


@pytest.fixture(scope="session")
def stage2_model(stage2_run):
    return stage2_run[0]


@pytest.fixture(scope="session")
def stage3_run(toy_cfg, stage2_model, train_images):
    cfg = copy.deepcopy(toy_cfg)
    cfg.train.lr = 1e-3
    cfg.train.lambda_min, cfg.train.lambda_max = STAGE3_LAMBDA

    def build():
        model = copy.deepcopy(stage2_model)
        hist = train_stage3_image(model, train_images, cfg, steps=STAGE3_STEPS)
        return model, {"losses": hist.losses[-50:]}

    return cached_run("stage3", cfg, STAGE3_STEPS, build)


@pytest.fixture(scope="session")
def stage3_model(stage3_run):
    return stage3_run[0]


@pytest.fixture(scope="session")
def stage2_nopred_run(toy_cfg, stage1_model, train_images):
    """Stage-II arm trained without the code-prediction loss term."""
    cfg = _stage2_cfg(toy_cfg)
    cfg.train.code_pred_supervision = False

    def build():
        model = copy.deepcopy(stage1_model)
        hist = train_stage2_image(model, train_images, cfg, steps=STAGE2_STEPS)
        return model, {"losses": hist.losses[-50:]}

    return cached_run("stage2-nopred", cfg, STAGE2_STEPS, build)


@pytest.fixture(scope="session")
def stage2_factorized_run(toy_cfg, stage1_model, train_images):
    """Stage-II arm with the factorized hyper instead of the categorical one."""
    from glc.ablate import clone_with

    cfg = _stage2_cfg(toy_cfg)

    def build():
        model = clone_with(stage1_model, cfg, hyper_kind="factorized")
        hist = train_stage2_image(model, train_images, cfg, steps=STAGE2_STEPS)
        return model, {"losses": hist.losses[-50:]}

    return cached_run("stage2-factorized", cfg, STAGE2_STEPS, build)


def _video_cfg(toy_cfg) -> Config:
    cfg = copy.deepcopy(toy_cfg)
    cfg.train.lr = 1e-3
    return cfg


def _video_arm(tag, toy_cfg, image_model, videos, stage3=False, **overrides):
    cfg = _video_cfg(toy_cfg)

    def build():
        video = build_video_model(cfg, image_model, **overrides)
        hist = train_video(video, videos, cfg, stage=2, steps=VIDEO_STAGE2_STEPS)
        history = {"stage2_losses": hist.losses[-50:]}
        if stage3:
            h3 = train_video(video, videos, cfg, stage=3, steps=VIDEO_STAGE3_STEPS)
            history["stage3_losses"] = h3.losses[-50:]
        return video, history

    steps = [VIDEO_STAGE2_STEPS, VIDEO_STAGE3_STEPS if stage3 else 0, overrides]
    return cached_run(tag, cfg, steps, build)


@pytest.fixture(scope="session")
def video_st_run(toy_cfg, stage2_model, train_videos):
    return _video_arm("video-st", toy_cfg, stage2_model, train_videos)


@pytest.fixture(scope="session")
def video_spatial_run(toy_cfg, stage2_model, train_videos):
    return _video_arm("video-spatial", toy_cfg, stage2_model, train_videos,
                      video_hyper="spatial")


@pytest.fixture(scope="session")
def video_joint_run(toy_cfg, stage2_model, train_videos):
    return _video_arm("video-joint", toy_cfg, stage2_model, train_videos,
                      stage3=True)
