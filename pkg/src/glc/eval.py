"""Rate-distortion evaluation: tables, curves and plots.

Reported bpp always comes from serialized container bytes, never from model
rate estimates.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import torch

from .bitstream import write_container
from .codec import ImageCodec, VideoCodec
from .metrics import ms_ssim, psnr
from .vqvae import nearest_indices


def _container_bytes(result) -> int:
    buf = io.BytesIO()
    return write_container(buf, result.header, result.segments)


def semantic_agreement(x, x_hat, vqvae) -> float:
    """Fraction of latent positions whose codebook index survives coding.

    Uses the model's latent encoder and main codebook as the semantic
    reference vocabulary.
    """
    with torch.no_grad():
        la = vqvae.encoder(x.unsqueeze(0))
        lb = vqvae.encoder(x_hat.unsqueeze(0))
        m = la.shape[1]
        ia = nearest_indices(la.permute(0, 2, 3, 1).reshape(-1, m), vqvae.codebook.entries)
        ib = nearest_indices(lb.permute(0, 2, 3, 1).reshape(-1, m), vqvae.codebook.entries)
        return float((ia == ib).float().mean())


def evaluate_image_rd(
    codec: ImageCodec, images: np.ndarray, q_list, with_agreement: bool = False
) -> list[dict]:
    rows = []
    for q in q_list:
        for i, img in enumerate(images):
            x = torch.from_numpy(np.asarray(img, dtype=np.float32))
            result = codec.encode(x, q)
            nbytes = _container_bytes(result)
            x_hat = codec.decode(result.header, result.segments)
            row = {
                "item": i,
                "q": q,
                "bpp": nbytes * 8 / (x.shape[-1] * x.shape[-2]),
                "psnr": psnr(x, x_hat),
                "ms_ssim": ms_ssim(x, x_hat),
            }
            if with_agreement:
                row["agreement"] = semantic_agreement(x, x_hat, codec.model.vqvae)
            rows.append(row)
    return rows


def evaluate_video_rd(
    codec: VideoCodec, videos: list[np.ndarray], q_list, intra_period: int = -1
) -> list[dict]:
    rows = []
    for q in q_list:
        for i, vid in enumerate(videos):
            frames = [torch.from_numpy(np.asarray(f, dtype=np.float32)) for f in vid]
            result = codec.encode(frames, q, intra_period)
            nbytes = _container_bytes(result)
            decoded = codec.decode(result.header, result.segments)
            pix = frames[0].shape[-1] * frames[0].shape[-2] * len(frames)
            rows.append({
                "item": i,
                "q": q,
                "bpp": nbytes * 8 / pix,
                "psnr": float(np.mean([psnr(a, b) for a, b in zip(frames, decoded)])),
                "ms_ssim": float(np.mean([ms_ssim(a, b) for a, b in zip(frames, decoded)])),
            })
    return rows


def curve_from_rows(rows: list[dict], quality_key: str = "psnr"):
    """Average rate/quality per q anchor -> (rates, qualities) arrays."""
    qs = sorted({r["q"] for r in rows})
    rates, quals = [], []
    for q in qs:
        sel = [r for r in rows if r["q"] == q]
        rates.append(float(np.mean([r["bpp"] for r in sel])))
        quals.append(float(np.mean([r[quality_key] for r in sel])))
    return np.array(rates), np.array(quals)


def write_table(rows: list[dict], path: str | Path) -> None:
    """Deterministically formatted CSV (byte-identical across runs)."""
    if not rows:
        raise ValueError("no rows to write")
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for r in rows:
        cells = []
        for k in keys:
            v = r[k]
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def plot_rd(curves: dict[str, tuple], path: str | Path, quality_key: str = "psnr") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, (rates, quals) in curves.items():
        ax.plot(rates, quals, marker="o", label=name)
    ax.set_xlabel("bpp")
    ax.set_ylabel(quality_key)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
