"""Checkpoint files: network weights plus a content hash that bitstream
headers embed so decode always runs against the right model."""

from __future__ import annotations

import hashlib
from pathlib import Path

import torch

from .config import ModelConfig
from .models import ImageModel, VideoModel


def state_dict_hash(state: dict) -> int:
    """First 8 bytes of SHA-256 over a canonical serialization of tensors."""
    h = hashlib.sha256()
    for name in sorted(state.keys()):
        h.update(name.encode())
        t = state[name]
        if isinstance(t, torch.Tensor):
            h.update(str(t.dtype).encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        else:
            h.update(repr(t).encode())
    return int.from_bytes(h.digest()[:8], "big")


def model_hash(model: torch.nn.Module) -> int:
    return state_dict_hash(model.state_dict())


def save_checkpoint(model, path: str | Path, extra: dict | None = None) -> int:
    kind = "video" if isinstance(model, VideoModel) else "image"
    payload = {
        "kind": kind,
        "config": model.cfg.__dict__,
        "state": model.state_dict(),
        "hash": model_hash(model),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)
    return payload["hash"]


def load_checkpoint(path: str | Path):
    """Returns (model, content_hash, extra). Verifies the stored hash."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ModelConfig(**payload["config"])
    model = VideoModel(cfg) if payload["kind"] == "video" else ImageModel(cfg)
    model.load_state_dict(payload["state"])
    model.eval()
    actual = model_hash(model)
    if actual != payload["hash"]:
        raise ValueError(
            f"checkpoint content hash mismatch: stored {payload['hash']:#x}, "
            f"recomputed {actual:#x}"
        )
    return model, actual, payload.get("extra", {})
