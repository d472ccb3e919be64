"""Rate-variable image and video compression in the latent space of a
generative VQ-VAE."""

from .config import Config, DataConfig, ModelConfig, TrainConfig, load_config
from .models import ImageModel, VideoModel
from .codec import ImageCodec, VideoCodec, make_codec
from .checkpoint import load_checkpoint, model_hash, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Config",
    "DataConfig",
    "ModelConfig",
    "TrainConfig",
    "load_config",
    "ImageModel",
    "VideoModel",
    "ImageCodec",
    "VideoCodec",
    "make_codec",
    "load_checkpoint",
    "model_hash",
    "save_checkpoint",
    "__version__",
]
