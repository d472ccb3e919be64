"""Dataset ingestion and deterministic synthetic toy data.

Toy scenes are smooth gradients plus moving geometric shapes; videos add
global background panning so temporal context and global-dynamics tokens
have real structure to learn.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image


def _gradient(size: int, rng: np.random.Generator, phase: float = 0.0) -> np.ndarray:
    theta = rng.uniform(0, 2 * np.pi)
    c0 = rng.uniform(0.05, 0.95, size=3)
    c1 = rng.uniform(0.05, 0.95, size=3)
    ys, xs = np.mgrid[0:size, 0:size] / size
    t = (np.cos(theta) * xs + np.sin(theta) * ys + phase) % 1.0
    return c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]


def _draw_rect(img: np.ndarray, cx: float, cy: float, hw: float, hh: float,
               color: np.ndarray) -> None:
    size = img.shape[-1]
    x0 = int(np.clip((cx - hw) * size, 0, size))
    x1 = int(np.clip((cx + hw) * size, 0, size))
    y0 = int(np.clip((cy - hh) * size, 0, size))
    y1 = int(np.clip((cy + hh) * size, 0, size))
    img[:, y0:y1, x0:x1] = color[:, None, None]


def _draw_circle(img: np.ndarray, cx: float, cy: float, r: float,
                 color: np.ndarray) -> None:
    size = img.shape[-1]
    ys, xs = np.mgrid[0:size, 0:size] / size
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r ** 2
    img[:, mask] = color[:, None]


def _scene_params(rng: np.random.Generator) -> dict:
    shapes = []
    for _ in range(rng.integers(2, 6)):
        shapes.append({
            "kind": ("rect", "circle", "stripe")[rng.integers(0, 3)],
            "cx": rng.uniform(0.05, 0.95),
            "cy": rng.uniform(0.05, 0.95),
            "w": rng.uniform(0.06, 0.35),
            "h": rng.uniform(0.06, 0.35),
            "angle": rng.uniform(0, np.pi),
            "color": rng.uniform(0.0, 1.0, size=3),
            "vx": rng.uniform(-0.01, 0.01),
            "vy": rng.uniform(-0.01, 0.01),
        })
    texture = None
    if rng.uniform() < 0.7:
        texture = {
            "freq": rng.uniform(4.0, 24.0),
            "angle": rng.uniform(0, np.pi),
            "amp": rng.uniform(0.03, 0.15),
            "phase": rng.uniform(0, 2 * np.pi),
            "channel_mix": rng.uniform(0.3, 1.0, size=3),
        }
    return {
        "shapes": shapes,
        "texture": texture,
        "pan": rng.uniform(-0.012, 0.012),
        "grad_seed": rng.integers(0, 2 ** 31),
    }


def _draw_stripe(img: np.ndarray, cx: float, cy: float, hw: float, angle: float,
                 color: np.ndarray) -> None:
    size = img.shape[-1]
    ys, xs = np.mgrid[0:size, 0:size] / size
    d = np.abs(np.cos(angle) * (xs - cx) + np.sin(angle) * (ys - cy))
    img[:, d <= hw / 2] = color[:, None]


def _render(params: dict, size: int, t: int = 0) -> np.ndarray:
    grng = np.random.default_rng(params["grad_seed"])
    img = _gradient(size, grng, phase=params["pan"] * t)
    tex = params.get("texture")
    if tex is not None:
        ys, xs = np.mgrid[0:size, 0:size] / size
        wave = np.sin(
            tex["freq"] * (np.cos(tex["angle"]) * xs + np.sin(tex["angle"]) * ys)
            + tex["phase"] + params["pan"] * t * tex["freq"]
        )
        img = img + tex["amp"] * tex["channel_mix"][:, None, None] * wave[None]
    for s in params["shapes"]:
        cx = (s["cx"] + s["vx"] * t) % 1.0
        cy = (s["cy"] + s["vy"] * t) % 1.0
        if s["kind"] == "rect":
            _draw_rect(img, cx, cy, s["w"] / 2, s["h"] / 2, s["color"])
        elif s["kind"] == "circle":
            _draw_circle(img, cx, cy, s["w"] / 2, s["color"])
        else:
            _draw_stripe(img, cx, cy, s["w"] / 4, s["angle"], s["color"])
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def toy_images(n: int, size: int = 64, seed: int = 1234) -> np.ndarray:
    """[n, 3, size, size] float32 in [0, 1], reproducible for a seed."""
    rng = np.random.default_rng(seed)
    return np.stack([_render(_scene_params(rng), size) for _ in range(n)])


def toy_video(frames: int, size: int = 64, seed: int = 1234) -> np.ndarray:
    """[frames, 3, size, size] with moving shapes over a panning background."""
    rng = np.random.default_rng(seed)
    params = _scene_params(rng)
    return np.stack([_render(params, size, t) for t in range(frames)])


def toy_videos(n: int, frames: int, size: int = 64, seed: int = 1234) -> list[np.ndarray]:
    return [toy_video(frames, size, seed + 1000 * i) for i in range(n)]


# -- file ingestion -----------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(pixels, path: str | Path) -> None:
    arr = np.asarray(pixels.detach().cpu() if hasattr(pixels, "detach") else pixels)
    arr = np.clip(arr, 0.0, 1.0)
    img = (arr.transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(img).save(path)


_FRAME_RE = re.compile(r"(\d+)")


def list_frames(directory: str | Path) -> list[Path]:
    """Image files in a directory, sorted by their embedded frame number."""
    directory = Path(directory)
    files = [
        p for p in directory.iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    ]

    def key(p: Path):
        m = _FRAME_RE.findall(p.stem)
        return (int(m[-1]) if m else 0, p.name)

    return sorted(files, key=key)


def load_frames(directory: str | Path) -> np.ndarray:
    files = list_frames(directory)
    if not files:
        raise FileNotFoundError(f"no frames found in {directory}")
    return np.stack([load_image(p) for p in files])


def save_frames(frames, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        save_image(f, directory / f"frame_{i:04d}.png")


def random_crop(rng: np.random.Generator, image: np.ndarray, size: int) -> np.ndarray:
    _, h, w = image.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than crop {size}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return image[:, y : y + size, x : x + size]
