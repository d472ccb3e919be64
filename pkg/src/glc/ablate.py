"""Paired ablation runs on toy data.

Each runner trains matched codec variants from a shared starting point and
reports the Bjontegaard delta rate of the full configuration against the
ablated one (negative: the full configuration saves bits).
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .codec import ImageCodec, VideoCodec
from .config import Config
from .checkpoint import model_hash
from .data import toy_images, toy_videos
from .eval import curve_from_rows, evaluate_image_rd, evaluate_video_rd
from .metrics import bd_rate, rate_at_quality
from .models import ImageModel, VideoModel
from .train import train_stage1, train_stage2_image, train_stage3_image, train_video


@dataclass
class AblationResult:
    name: str
    bd_rate_pct: float  # full configuration vs ablated anchor
    detail: dict

    @property
    def improved(self) -> bool:
        return self.bd_rate_pct < 0


def build_image_model(cfg: Config) -> ImageModel:
    torch.manual_seed(cfg.train.seed)
    return ImageModel(cfg.model)


def clone_with(model: ImageModel, cfg: Config, **model_overrides) -> ImageModel:
    """Fresh model with altered config, inheriting all matching weights."""
    new_cfg = dataclasses.replace(cfg.model, **model_overrides)
    torch.manual_seed(cfg.train.seed)
    clone = ImageModel(new_cfg)
    src = model.state_dict()
    dst = clone.state_dict()
    for k, v in src.items():
        if k in dst and dst[k].shape == v.shape:
            dst[k] = v.clone()
    clone.load_state_dict(dst)
    return clone


def build_video_model(cfg: Config, image_model: ImageModel, **model_overrides) -> VideoModel:
    new_cfg = dataclasses.replace(cfg.model, **model_overrides)
    torch.manual_seed(cfg.train.seed)
    video = VideoModel(new_cfg)
    video.image.load_state_dict(image_model.state_dict())
    return video


def codec_for(model) -> ImageCodec | VideoCodec:
    if isinstance(model, VideoModel):
        return VideoCodec(model, model_hash(model))
    return ImageCodec(model, model_hash(model))


def _q_anchors(cfg: Config):
    return list(range(cfg.model.num_rates))


def pareto_filter(rates, qualities) -> tuple[np.ndarray, np.ndarray]:
    """Drop rate-distortion points dominated by another point of the curve.

    Measured toy curves can be locally non-monotone; the Bjontegaard fit
    needs a clean quality-vs-log-rate relation, so points that another
    point beats in both axes are removed (standard curve-cleaning practice).
    """
    r = np.asarray(rates, dtype=np.float64)
    q = np.asarray(qualities, dtype=np.float64)
    order = np.argsort(q)
    r, q = r[order], q[order]
    keep = []
    for i in range(len(r)):
        dominated = any(
            j != i and q[j] >= q[i] and r[j] <= r[i] and (q[j] > q[i] or r[j] < r[i])
            for j in range(len(r))
        )
        if not dominated:
            keep.append(i)
    if len(keep) < 2:
        return r, q
    return r[keep], q[keep]


def compare_rd(anchor_rate, anchor_quality, test_rate, test_quality) -> float:
    """BD-rate of test vs anchor over Pareto-cleaned curves.

    When the quality ranges do not overlap the Bjontegaard integral is
    undefined; if one curve then strictly dominates the other (better
    quality at no more rate) a +/-100 sentinel carries the sign.
    """
    ar, aq = pareto_filter(anchor_rate, anchor_quality)
    tr, tq = pareto_filter(test_rate, test_quality)
    try:
        return bd_rate(ar, aq, tr, tq)
    except ValueError:
        if tq.min() > aq.max() and tr.max() <= ar.max():
            return -100.0
        if aq.min() > tq.max() and ar.max() <= tr.max():
            return 100.0
        raise


# ---------------------------------------------------------------------------
# Image ablations
# ---------------------------------------------------------------------------


def ablate_transform_vs_indices_map(
    model: ImageModel, cfg: Config, eval_images: np.ndarray
) -> AblationResult:
    """Transform coding vs fixed-length coding of the VQ index map.

    Both arms are coded through the container so the rates compare on equal
    footing. The index map yields a single rate-distortion point, so the
    BD-rate degenerates to the transform codec's fitted rate at that
    quality; when the anchor quality sits below the curve the lowest-anchor
    rate is used, which only under-reports the transform's advantage.
    """
    codec = codec_for(model)
    rows = evaluate_image_rd(codec, eval_images, _q_anchors(cfg))
    rates, quals = curve_from_rows(rows)

    vq_codec = codec_for(clone_with(model, cfg, latent_codec="indices_map"))
    vq_rows = evaluate_image_rd(vq_codec, eval_images, [0])
    anchor_rate = float(np.mean([r["bpp"] for r in vq_rows]))
    anchor_quality = float(np.mean([r["psnr"] for r in vq_rows]))

    target = float(np.clip(anchor_quality, quals.min(), quals.max()))
    transform_rate = rate_at_quality(rates, quals, target)
    pct = (transform_rate / anchor_rate - 1.0) * 100.0
    return AblationResult(
        "transform_vs_indices_map",
        float(pct),
        {
            "indices_map": {"bpp": anchor_rate, "psnr": anchor_quality},
            "transform_curve": {"bpp": rates.tolist(), "psnr": quals.tolist()},
            "matched_quality": target,
            "transform_bpp_at_match": transform_rate,
        },
    )


def _train_stage2_arm(base: ImageModel, cfg: Config, images, steps, **overrides):
    arm_cfg = copy.deepcopy(cfg)
    for k, v in overrides.pop("train_overrides", {}).items():
        setattr(arm_cfg.train, k, v)
    arm = clone_with(base, arm_cfg, **overrides)
    train_stage2_image(arm, images, arm_cfg, steps=steps)
    return arm


def ablate_categorical_vs_factorized(
    base: ImageModel, cfg: Config, train_images, eval_images, steps: int
) -> AblationResult:
    """Categorical hyper vs factorized hyper, trained from the same stage-I net."""
    cat = _train_stage2_arm(base, cfg, train_images, steps)
    fac = _train_stage2_arm(base, cfg, train_images, steps, hyper_kind="factorized")
    rows_c = evaluate_image_rd(codec_for(cat), eval_images, _q_anchors(cfg))
    rows_f = evaluate_image_rd(codec_for(fac), eval_images, _q_anchors(cfg))
    rc, qc = curve_from_rows(rows_c)
    rf, qf = curve_from_rows(rows_f)
    pct = compare_rd(rf, qf, rc, qc)
    return AblationResult(
        "categorical_vs_factorized",
        pct,
        {"categorical": (rc.tolist(), qc.tolist()), "factorized": (rf.tolist(), qf.tolist())},
    )


def ablate_code_pred_supervision(
    base: ImageModel, cfg: Config, train_images, eval_images, steps: int
) -> AblationResult:
    """With vs without the code-prediction loss term.

    Quality axis: codebook-index agreement between original and coded
    reconstructions, the semantic-fidelity proxy this supervision targets.
    """
    with_cp = _train_stage2_arm(base, cfg, train_images, steps)
    without = _train_stage2_arm(
        base, cfg, train_images, steps,
        train_overrides={"code_pred_supervision": False},
    )
    rows_w = evaluate_image_rd(codec_for(with_cp), eval_images, _q_anchors(cfg),
                               with_agreement=True)
    rows_o = evaluate_image_rd(codec_for(without), eval_images, _q_anchors(cfg),
                               with_agreement=True)
    rw, qw = curve_from_rows(rows_w, quality_key="agreement")
    ro, qo = curve_from_rows(rows_o, quality_key="agreement")
    pct = compare_rd(ro, qo, rw, qw)
    return AblationResult(
        "code_pred_supervision",
        pct,
        {"with": (rw.tolist(), qw.tolist()), "without": (ro.tolist(), qo.tolist())},
    )


# ---------------------------------------------------------------------------
# Video ablations
# ---------------------------------------------------------------------------


def train_video_arm(
    image_model: ImageModel, cfg: Config, videos, steps: int,
    stage3_steps: int = 0, **overrides,
) -> VideoModel:
    arm_cfg = copy.deepcopy(cfg)
    for k, v in overrides.pop("train_overrides", {}).items():
        setattr(arm_cfg.train, k, v)
    video = build_video_model(arm_cfg, image_model, **overrides)
    train_video(video, videos, arm_cfg, stage=2, steps=steps)
    if stage3_steps:
        train_video(video, videos, arm_cfg, stage=3, steps=stage3_steps)
    return video


def _video_curves(model: VideoModel, cfg: Config, eval_videos):
    rows = evaluate_video_rd(codec_for(model), eval_videos, _q_anchors(cfg))
    return curve_from_rows(rows)


def ablate_conditional_coding(
    cond_arm: VideoModel, cfg: Config, eval_videos
) -> AblationResult:
    """Conditional coding vs coding every frame intra.

    Same trained checkpoint, two GOP settings: the conditional run keeps a
    single intra frame, the ablated run refreshes every frame, so the
    comparison isolates the temporal conditioning exactly.
    """
    codec = codec_for(cond_arm)
    rows_c = evaluate_video_rd(codec, eval_videos, _q_anchors(cfg), intra_period=-1)
    rows_i = evaluate_video_rd(codec, eval_videos, _q_anchors(cfg), intra_period=1)
    rc, qc = curve_from_rows(rows_c)
    ri, qi = curve_from_rows(rows_i)
    pct = compare_rd(ri, qi, rc, qc)
    return AblationResult(
        "conditional_coding",
        pct,
        {"conditional": (rc.tolist(), qc.tolist()), "intra_only": (ri.tolist(), qi.tolist())},
    )


def ablate_st_vs_spatial_hyper(
    st_arm: VideoModel, spatial_arm: VideoModel, cfg: Config, eval_videos
) -> AblationResult:
    """Spatio-temporal token hyper vs per-frame spatial categorical hyper."""
    rs, qs = _video_curves(st_arm, cfg, eval_videos)
    rp, qp = _video_curves(spatial_arm, cfg, eval_videos)
    pct = compare_rd(rp, qp, rs, qs)
    return AblationResult(
        "st_vs_spatial_hyper",
        pct,
        {"spatiotemporal": (rs.tolist(), qs.tolist()), "spatial": (rp.tolist(), qp.tolist())},
    )


def ablate_joint_training(
    stage2_arm: VideoModel, cfg: Config, videos, eval_videos, stage3_steps: int
) -> AblationResult:
    """Stage-III joint fine-tuning vs stopping after stage II."""
    joint = copy.deepcopy(stage2_arm)
    train_video(joint, videos, cfg, stage=3, steps=stage3_steps)
    r2, q2 = _video_curves(stage2_arm, cfg, eval_videos)
    r3, q3 = _video_curves(joint, cfg, eval_videos)
    pct = compare_rd(r2, q2, r3, q3)
    return AblationResult(
        "joint_training",
        pct,
        {"stage2_only": (r2.tolist(), q2.tolist()), "joint": (r3.tolist(), q3.tolist())},
    )


# ---------------------------------------------------------------------------
# One-call toy pipeline used by the CLI
# ---------------------------------------------------------------------------


def run_toy_ablation(name: str, cfg: Config, steps: dict | None = None) -> AblationResult:
    steps = steps or {}
    s1 = steps.get("stage1", 600)
    s2 = steps.get("stage2", 400)
    s3 = steps.get("stage3", 200)
    dc = cfg.data
    images = toy_images(dc.num_train, dc.image_size, dc.seed)
    val = toy_images(dc.num_val, dc.image_size, dc.seed + 1)

    base = build_image_model(cfg)
    train_stage1(base, images, val, cfg, steps=s1)

    if name == "transform_vs_indices_map":
        arm = _train_stage2_arm(base, cfg, images, s2)
        train_stage3_image(arm, images, cfg, steps=s3)
        return ablate_transform_vs_indices_map(arm, cfg, val)
    if name == "categorical_vs_factorized":
        return ablate_categorical_vs_factorized(base, cfg, images, val, s2)
    if name == "code_pred_supervision":
        return ablate_code_pred_supervision(base, cfg, images, val, s2)

    videos = toy_videos(max(dc.num_train // 20, 4), dc.video_frames, dc.image_size, dc.seed + 2)
    eval_videos = toy_videos(2, dc.video_frames, dc.image_size, dc.seed + 3)
    image_arm = _train_stage2_arm(base, cfg, images, s2)
    if name == "conditional_coding":
        cond = train_video_arm(image_arm, cfg, videos, s2, video_hyper="spatial")
        return ablate_conditional_coding(cond, cfg, eval_videos)
    if name == "st_vs_spatial_hyper":
        st = train_video_arm(image_arm, cfg, videos, s2)
        spatial = train_video_arm(image_arm, cfg, videos, s2, video_hyper="spatial")
        return ablate_st_vs_spatial_hyper(st, spatial, cfg, eval_videos)
    if name == "joint_training":
        st = train_video_arm(image_arm, cfg, videos, s2)
        return ablate_joint_training(st, cfg, videos, eval_videos, s3)
    raise ValueError(f"unknown ablation {name!r}")


ABLATIONS = (
    "transform_vs_indices_map",
    "categorical_vs_factorized",
    "code_pred_supervision",
    "conditional_coding",
    "st_vs_spatial_hyper",
    "joint_training",
)
