"""Command-line interface: encode, decode, eval, train, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage error. The checkpoint
directory can be set once via the ``GLC_CHECKPOINTS`` environment variable;
bare checkpoint names are resolved against it.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as datamod
from .bitstream import BitstreamError
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import ImageCodec, VideoCodec
from .config import Config, load_config
from .eval import curve_from_rows, evaluate_image_rd, evaluate_video_rd, plot_rd, write_table
from .models import ImageModel, VideoModel


def _resolve_checkpoint(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    root = os.environ.get("GLC_CHECKPOINTS")
    if root:
        candidate = Path(root) / name
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"checkpoint {name!r} not found")


def _load_codec(name: str):
    model, chash, _ = load_checkpoint(_resolve_checkpoint(name))
    if isinstance(model, VideoModel):
        return VideoCodec(model, chash)
    return ImageCodec(model, chash)


def cmd_encode(args, parser) -> int:
    codec = _load_codec(args.checkpoint)
    if not 0 <= args.q < codec.cfg.num_rates:
        parser.error(f"--q must be in [0, {codec.cfg.num_rates})")
    in_path = Path(args.input)
    mode = args.mode
    if mode == "auto":
        mode = "video" if in_path.is_dir() else "image"
    if mode == "video":
        if not isinstance(codec, VideoCodec):
            raise ValueError("video input needs a video checkpoint")
        frames_np = datamod.load_frames(in_path)
        frames = [torch.from_numpy(f) for f in frames_np]
        result = codec.encode_file(frames, args.q, args.output, args.intra_period)
        pixels = frames[0].shape[-1] * frames[0].shape[-2] * len(frames)
    else:
        img = torch.from_numpy(datamod.load_image(in_path))
        image_codec = codec.image_codec if isinstance(codec, VideoCodec) else codec
        result = image_codec.encode_file(img, args.q, args.output)
        pixels = img.shape[-1] * img.shape[-2]
    nbytes = Path(args.output).stat().st_size
    print(f"{args.output}: {nbytes} bytes, {nbytes * 8 / pixels:.6f} bpp, "
          f"{len(result.segments)} frame(s)")
    return 0


def cmd_decode(args, parser) -> int:
    codec = _load_codec(args.checkpoint)
    from .bitstream import MODE_VIDEO, read_container

    reader_codec = codec if isinstance(codec, VideoCodec) else codec
    header, segments = read_container(args.bitstream, reader_codec.hyper_bytes_for_count)
    if header.mode == MODE_VIDEO:
        if not isinstance(codec, VideoCodec):
            raise ValueError("video stream needs a video checkpoint")
        frames = codec.decode(header, segments)
        datamod.save_frames(frames, args.output)
        print(f"decoded {len(frames)} frames into {args.output}")
    else:
        image_codec = codec.image_codec if isinstance(codec, VideoCodec) else codec
        pixels = image_codec.decode(header, segments)
        datamod.save_image(pixels, args.output)
        print(f"decoded image into {args.output}")
    return 0


def _load_eval_data(args):
    if args.data == "synthetic":
        images = datamod.toy_images(args.num_items, args.size, args.seed)
        videos = datamod.toy_videos(max(args.num_items // 4, 1), args.frames,
                                    args.size, args.seed)
        return images, videos
    path = Path(args.data)
    if not path.exists():
        raise FileNotFoundError(path)
    subdirs = [p for p in sorted(path.iterdir()) if p.is_dir()]
    if subdirs:
        videos = [datamod.load_frames(d) for d in subdirs]
        return None, videos
    images = np.stack([datamod.load_image(p) for p in datamod.list_frames(path)])
    return images, None


def cmd_eval(args, parser) -> int:
    codec = _load_codec(args.checkpoint)
    q_list = [int(q) for q in args.q_list.split(",")]
    for q in q_list:
        if not 0 <= q < codec.cfg.num_rates:
            parser.error(f"q {q} out of range [0, {codec.cfg.num_rates})")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    images, videos = _load_eval_data(args)
    if isinstance(codec, VideoCodec):
        rows = evaluate_video_rd(codec, videos, q_list, args.intra_period)
    else:
        rows = evaluate_image_rd(codec, images, q_list)
    write_table(rows, out / "rd_table.csv")
    curves = {"model": curve_from_rows(rows)}
    plot_rd(curves, out / "rd_psnr.png", "psnr")
    curves_ms = {"model": curve_from_rows(rows, "ms_ssim")}
    plot_rd(curves_ms, out / "rd_msssim.png", "ms_ssim")
    print(f"wrote {out / 'rd_table.csv'} ({len(rows)} rows)")
    return 0


def cmd_train(args, parser) -> int:
    from .train import train_stage1, train_stage2_image, train_stage3_image, train_video

    cfg = load_config(args.config) if args.config else Config()
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.data.kind == "synthetic":
        images = datamod.toy_images(cfg.data.num_train, cfg.data.image_size, cfg.data.seed)
        val = datamod.toy_images(cfg.data.num_val, cfg.data.image_size, cfg.data.seed + 1)
        videos = datamod.toy_videos(max(cfg.data.num_train // 20, 4),
                                    cfg.data.video_frames, cfg.data.image_size,
                                    cfg.data.seed + 2)
    else:
        root = Path(cfg.data.path)
        images = np.stack([datamod.load_image(p) for p in datamod.list_frames(root)])
        val = images[: max(len(images) // 10, 1)]
        videos = [images]

    if args.init:
        model, _, _ = load_checkpoint(_resolve_checkpoint(args.init))
    else:
        torch.manual_seed(cfg.train.seed)
        model = ImageModel(cfg.model)

    stage = args.stage
    if args.video:
        if isinstance(model, ImageModel):
            video = VideoModel(cfg.model)
            video.image.load_state_dict(model.state_dict())
            model = video
        train_video(model, videos, cfg, stage=stage)
    elif stage == 1:
        train_stage1(model, images, val, cfg)
    elif stage == 2:
        train_stage2_image(model, images, cfg)
    elif stage == 3:
        train_stage3_image(model, images, cfg)
    else:
        parser.error("--stage must be 1, 2 or 3")
    path = out / f"stage{stage}{'_video' if args.video else ''}.pt"
    chash = save_checkpoint(model, path)
    print(f"saved {path} (hash {chash:#018x})")
    return 0


def cmd_ablate(args, parser) -> int:
    from .ablate import ABLATIONS, run_toy_ablation

    if args.name not in ABLATIONS:
        parser.error(f"unknown ablation {args.name!r}; choose from {', '.join(ABLATIONS)}")
    cfg = load_config(args.config) if args.config else Config()
    result = run_toy_ablation(args.name, cfg)
    sign = "improves" if result.improved else "regresses"
    print(f"{result.name}: BD-rate {result.bd_rate_pct:+.2f}% ({sign})")
    if args.output:
        import json

        Path(args.output).write_text(json.dumps(
            {"name": result.name, "bd_rate_pct": result.bd_rate_pct,
             "detail": result.detail}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glc",
                                     description="latent-space generative codec")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("encode", help="encode an image or frame directory")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--q", type=int, default=0, help="rate anchor index")
    p.add_argument("--mode", choices=("auto", "image", "video"), default="auto")
    p.add_argument("--intra-period", type=int, default=-1)

    p = sub.add_parser("decode", help="decode a bitstream")
    p.add_argument("bitstream")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="rate-distortion evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synthetic")
    p.add_argument("--q-list", default="0,1,2,3")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--intra-period", type=int, default=-1)
    p.add_argument("--num-items", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--seed", type=int, default=1234)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--config")
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--video", action="store_true")
    p.add_argument("--init", help="checkpoint to continue from")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("ablate", help="run a paired toy ablation")
    p.add_argument("name")
    p.add_argument("--config")
    p.add_argument("-o", "--output")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "encode": cmd_encode,
        "decode": cmd_decode,
        "eval": cmd_eval,
        "train": cmd_train,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.cmd](args, parser)
    except (BitstreamError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
