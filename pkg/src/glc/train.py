"""Progressive training: auto-encoder learning, transform-coding learning
and joint fine-tuning, for both the image and the video codec."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .config import Config
from .data import random_crop
from .entropy import gaussian
from .entropy.context import step_masks_tensor
from .hyper_spatial import FactorizedHyper, SpatialCategoricalHyper, bits_per_index
from .hyper_st import SpatioTemporalHyper
from .losses import (
    PatchDiscriminator,
    PerceptualNet,
    adaptive_adv_weight,
    code_pred_loss,
    hinge_d_loss,
    hinge_g_loss,
)
from .models import ImageModel, VideoModel
from .transform_image import quantize_train
from .vqvae import codebook_loss, nearest_indices, reseed_dead_entries, straight_through


@dataclass
class History:
    losses: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def _batched_nearest(latent: torch.Tensor, codebook) -> tuple[torch.Tensor, torch.Tensor]:
    b, m, h, w = latent.shape
    flat = latent.permute(0, 2, 3, 1).reshape(-1, m)
    idx = nearest_indices(flat, codebook.entries)
    quant = codebook.lookup(idx).reshape(b, h, w, m).permute(0, 3, 1, 2)
    return idx.reshape(b, h, w), quant


def context_rate_train(y_noisy: torch.Tensor, prior: torch.Tensor, ctx_model) -> torch.Tensor:
    """Differentiable total bits under the step-wise context schedule."""
    h, w = y_noisy.shape[-2:]
    masks = step_masks_tensor(h, w, y_noisy.device)
    bits = y_noisy.new_zeros(())
    visible = torch.zeros_like(masks[0])
    for mask in masks:
        mu, sigma = ctx_model(prior, y_noisy * visible, visible)
        residual = (y_noisy - mu) * mask
        lik = gaussian.likelihood(residual, sigma)
        bits = bits - (torch.log2(lik) * mask).sum()
        visible = visible + mask
    return bits


def _sample_lambda(rng: np.random.Generator, cfg: Config, video: bool) -> tuple[float, float]:
    """Draw a rate point: returns (lambda, fractional q position)."""
    lo = cfg.train.video_lambda_min if video else cfg.train.lambda_min
    hi = cfg.train.video_lambda_max if video else cfg.train.lambda_max
    q = float(rng.uniform(0.0, cfg.model.num_rates - 1))
    t = q / (cfg.model.num_rates - 1)
    return lo * (hi / lo) ** t, q


def _batch(rng: np.random.Generator, images: np.ndarray, n: int, crop: int) -> torch.Tensor:
    picks = rng.integers(0, len(images), size=n)
    crops = [random_crop(rng, images[i], crop) for i in picks]
    return torch.from_numpy(np.stack(crops))


def _set_requires_grad(module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def _cosine_lr(opt, base_lr: float, step: int, total: int, floor: float = 0.05) -> None:
    t = step / max(total - 1, 1)
    scale = floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * t))
    for group in opt.param_groups:
        group["lr"] = base_lr * scale


def _adv_ramp(step: int, disc_start: int, total: int) -> float:
    """Linear warm-up of the adversarial weight after the GAN kicks in."""
    if step < disc_start:
        return 0.0
    span = max(int(0.5 * total), 1)
    return min((step - disc_start + 1) / span, 1.0)


def _val_mse(model: ImageModel, val_images: np.ndarray) -> float:
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(val_images)
        latent = model.vqvae.encoder(x)
        _, quant = _batched_nearest(latent, model.vqvae.codebook)
        recon = model.vqvae.decoder(quant).clamp(0, 1)
        mse = float(F.mse_loss(recon, x))
    model.train()
    return mse


# ---------------------------------------------------------------------------
# Stage I: auto-encoder learning
# ---------------------------------------------------------------------------


def train_stage1(
    model: ImageModel,
    images: np.ndarray,
    val_images: np.ndarray,
    cfg: Config,
    steps: int | None = None,
) -> History:
    tc = cfg.train
    steps = steps if steps is not None else tc.steps_stage1
    rng = np.random.default_rng(tc.seed)
    torch.manual_seed(tc.seed)

    vq = model.vqvae
    disc = PatchDiscriminator(3)
    perceptual = PerceptualNet()
    opt_g = torch.optim.AdamW(vq.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    opt_d = torch.optim.AdamW(disc.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    disc_start = int(steps * tc.disc_start_frac)

    hist = History()
    usage = torch.zeros(vq.codebook.size, dtype=torch.long)
    steps_per_epoch = max(len(images) // tc.batch_size, 1)
    model.train()

    for step in range(steps):
        _cosine_lr(opt_g, tc.lr, step, steps)
        x = _batch(rng, images, tc.batch_size, tc.crop_size)
        latent = vq.encoder(x)
        idx, quant = _batched_nearest(latent, vq.codebook)
        usage += torch.bincount(idx.reshape(-1), minlength=vq.codebook.size)
        cb_loss = codebook_loss(latent, quant, tc.beta)
        recon = vq.decoder(straight_through(latent, quant))

        rec_loss = (x - recon).abs().mean() + perceptual(x, recon)
        if step >= disc_start:
            g_loss = hinge_g_loss(disc(recon))
            last = vq.decoder.net[-1].weight
            w = adaptive_adv_weight(rec_loss, g_loss, last)
            ramp = _adv_ramp(step, disc_start, steps)
            loss = rec_loss + tc.w_adv * ramp * w * g_loss + cb_loss
        else:
            loss = rec_loss + cb_loss
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite stage-I loss at step {step}: {loss}")
        opt_g.zero_grad(set_to_none=True)
        loss.backward()
        opt_g.step()

        if step >= disc_start:
            d_loss = hinge_d_loss(disc(x), disc(recon.detach()))
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

        hist.losses.append(float(loss.detach()))
        if (step + 1) % steps_per_epoch == 0:
            reseed_dead_entries(vq.codebook, usage, latent, rng)
            usage.zero_()
        if (step + 1) % tc.checkpoint_every == 0 or step == steps - 1:
            hist.val_mse.append(_val_mse(model, val_images))

    model.eval()
    return hist


# ---------------------------------------------------------------------------
# Stage II: transform-coding learning (image)
# ---------------------------------------------------------------------------


def _hyper_forward_train(hyper, y_noisy: torch.Tensor, gen: torch.Generator):
    """Hyper path during training: (prior, side bits, codebook penalty)."""
    if isinstance(hyper, FactorizedHyper):
        z = hyper.analysis(y_noisy)
        z_noisy = quantize_train(z, gen)
        prior = hyper.synthesis(z_noisy, y_noisy.shape[-2:])
        bits = hyper.rate_estimate(z_noisy)
        return prior, bits, y_noisy.new_zeros(())
    if isinstance(hyper, (SpatialCategoricalHyper, SpatioTemporalHyper)):
        raise TypeError("categorical hypers use their dedicated train paths")
    raise TypeError(f"unknown hyper module {type(hyper)!r}")


def _categorical_hyper_train(hyper: SpatialCategoricalHyper, y_noisy, beta: float):
    z = hyper.analysis(y_noisy)
    b, c, hz, wz = z.shape
    flat = z.permute(0, 2, 3, 1).reshape(-1, c)
    idx = nearest_indices(flat, hyper.codebook.entries)
    quant = hyper.codebook.lookup(idx).reshape(b, hz, wz, c).permute(0, 3, 1, 2)
    cb = codebook_loss(z, quant, beta)
    prior = hyper.synthesis(straight_through(z, quant), y_noisy.shape[-2:])
    bits = y_noisy.new_tensor(
        float(b * hz * wz * bits_per_index(hyper.codebook.size))
    )
    return prior, bits, cb


def stage2_image_step(
    model: ImageModel, x: torch.Tensor, lam: float, q: float,
    cfg: Config, gen: torch.Generator,
) -> tuple[torch.Tensor, dict]:
    tc = cfg.train
    with torch.no_grad():
        latent = model.vqvae.encoder(x)
    enc_scale, dec_scale = model.scalers.interp(q)
    y = model.analysis(latent, enc_scale)
    y_noisy = quantize_train(y, gen)

    if isinstance(model.hyper, SpatialCategoricalHyper):
        prior, z_bits, cb = _categorical_hyper_train(model.hyper, y_noisy, tc.beta)
    else:
        prior, z_bits, cb = _hyper_forward_train(model.hyper, y_noisy, gen)

    y_bits = context_rate_train(y_noisy, prior, model.context_model)
    l_hat = model.synthesis(y_noisy, dec_scale)
    d_code, parts = code_pred_loss(
        latent, l_hat, model.vqvae.codebook, model.code_predictor,
        tc.alpha, use_ce=tc.code_pred_supervision,
    )
    pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
    bpp = (y_bits + z_bits) / pixels
    loss = bpp + lam * d_code + cb
    parts.update(bpp=float(bpp.detach()), d_code=float(d_code.detach()))
    return loss, parts


def train_stage2_image(
    model: ImageModel, images: np.ndarray, cfg: Config, steps: int | None = None
) -> History:
    tc = cfg.train
    steps = steps if steps is not None else tc.steps_stage2
    rng = np.random.default_rng(tc.seed + 1)
    gen = torch.Generator().manual_seed(tc.seed + 1)
    torch.manual_seed(tc.seed + 1)

    _set_requires_grad(model.vqvae, False)
    trainable = [
        *model.analysis.parameters(),
        *model.synthesis.parameters(),
        *model.scalers.parameters(),
        *model.hyper.parameters(),
        *model.context_model.parameters(),
        *model.code_predictor.parameters(),
    ]
    opt = torch.optim.AdamW(trainable, lr=tc.lr, weight_decay=tc.weight_decay)
    hist = History()
    model.train()
    for step in range(steps):
        _cosine_lr(opt, tc.lr, step, steps)
        x = _batch(rng, images, tc.batch_size, tc.crop_size)
        lam, q = _sample_lambda(rng, cfg, video=False)
        loss, parts = stage2_image_step(model, x, lam, q, cfg, gen)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite stage-II loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        hist.losses.append(float(loss.detach()))
    _set_requires_grad(model.vqvae, True)
    model.eval()
    return hist


# ---------------------------------------------------------------------------
# Stage III: joint fine-tuning (image)
# ---------------------------------------------------------------------------


def train_stage3_image(
    model: ImageModel, images: np.ndarray, cfg: Config, steps: int | None = None
) -> History:
    tc = cfg.train
    steps = steps if steps is not None else tc.steps_stage3
    rng = np.random.default_rng(tc.seed + 2)
    gen = torch.Generator().manual_seed(tc.seed + 2)
    torch.manual_seed(tc.seed + 2)

    frozen_encoder = copy.deepcopy(model.vqvae.encoder)
    _set_requires_grad(frozen_encoder, False)
    frozen_encoder.eval()

    disc = PatchDiscriminator(3)
    perceptual = PerceptualNet()
    # the main codebook stays out of the optimizer: it is unused at inference
    trainable = [
        *model.vqvae.encoder.parameters(),
        *model.vqvae.decoder.parameters(),
        *model.analysis.parameters(),
        *model.synthesis.parameters(),
        *model.scalers.parameters(),
        *model.hyper.parameters(),
        *model.context_model.parameters(),
        *model.code_predictor.parameters(),
    ]
    opt = torch.optim.AdamW(trainable, lr=tc.lr * 0.5, weight_decay=tc.weight_decay)
    opt_d = torch.optim.AdamW(disc.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    disc_start = int(steps * tc.disc_start_frac)

    hist = History()
    model.train()
    for step in range(steps):
        _cosine_lr(opt, tc.lr * 0.5, step, steps)
        x = _batch(rng, images, tc.batch_size, tc.crop_size)
        lam, q = _sample_lambda(rng, cfg, video=False)

        latent = model.vqvae.encoder(x)
        enc_scale, dec_scale = model.scalers.interp(q)
        y = model.analysis(latent, enc_scale)
        y_noisy = quantize_train(y, gen)
        if isinstance(model.hyper, SpatialCategoricalHyper):
            prior, z_bits, cb = _categorical_hyper_train(model.hyper, y_noisy, tc.beta)
        else:
            prior, z_bits, cb = _hyper_forward_train(model.hyper, y_noisy, gen)
        y_bits = context_rate_train(y_noisy, prior, model.context_model)
        l_hat = model.synthesis(y_noisy, dec_scale)
        x_hat = model.vqvae.decoder(l_hat)

        rec = (x - x_hat).abs().mean() + perceptual(x, x_hat)
        if tc.lambda_code > 0:
            d_code, _ = code_pred_loss(
                frozen_encoder(x), frozen_encoder(x_hat),
                model.vqvae.codebook, model.code_predictor,
                tc.alpha, use_ce=tc.code_pred_supervision,
            )
        else:
            d_code = x.new_zeros(())
        distortion = rec + tc.lambda_code * d_code
        if step >= disc_start:
            g_loss = hinge_g_loss(disc(x_hat))
            last = model.vqvae.decoder.net[-1].weight
            w = adaptive_adv_weight(rec, g_loss, last)
            ramp = _adv_ramp(step, disc_start, steps)
            distortion = distortion + tc.lambda_adv * ramp * w * g_loss

        pixels = x.shape[0] * x.shape[-2] * x.shape[-1]
        loss = (y_bits + z_bits) / pixels + lam * distortion + cb
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite stage-III loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

        if step >= disc_start:
            d_loss = hinge_d_loss(disc(x), disc(x_hat.detach()))
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()
        hist.losses.append(float(loss.detach()))

    hist.extras["frozen_encoder_state"] = {
        k: v.clone() for k, v in frozen_encoder.state_dict().items()
    }
    model.eval()
    return hist


# ---------------------------------------------------------------------------
# Video training (stages II and III over unrolled sequences)
# ---------------------------------------------------------------------------


def _video_batch(
    rng: np.random.Generator, videos: list[np.ndarray], n: int, crop: int, clip_len: int
) -> torch.Tensor:
    """[B, T, 3, crop, crop] clips with consistent spatial crops per clip."""
    clips = []
    for _ in range(n):
        v = videos[int(rng.integers(0, len(videos)))]
        t0 = int(rng.integers(0, max(len(v) - clip_len, 0) + 1))
        clip = v[t0 : t0 + clip_len]
        _, _, h, w = clip.shape
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        clips.append(clip[:, :, y : y + crop, x : x + crop])
    return torch.from_numpy(np.stack(clips))


def _video_hyper_train(model: VideoModel, y_noisy, context, beta: float):
    hyper = model.video_hyper
    if isinstance(hyper, SpatioTemporalHyper):
        maps = hyper.attention(context)
        info = hyper.hyper_info(y_noisy, context)
        refined = hyper.refine_attention(maps, info)
        tokens = hyper.token_generation(hyper.grouped_features(info), refined)
        b, k, d = tokens.shape
        flat = tokens.reshape(-1, d)
        idx = nearest_indices(flat, hyper.codebook.entries)
        quant = hyper.codebook.lookup(idx).reshape(b, k, d)
        # tokens are [B, K, d]; the codebook loss wants vectors on dim -3
        cb = codebook_loss(tokens.permute(2, 0, 1), quant.permute(2, 0, 1), beta)
        tokens_ste = straight_through(tokens, quant)
        prior = hyper.prior_from_tokens(tokens_ste, maps, context)
        bits = y_noisy.new_tensor(float(b * hyper.segment_bits()))
        return prior, bits, cb
    return _categorical_hyper_train(hyper, y_noisy, beta)


def _frame0_latent(model: VideoModel, x0: torch.Tensor, q: float,
                   gen: torch.Generator) -> torch.Tensor:
    """Decoded latent of the intra frame, via the image path (no grads)."""
    with torch.no_grad():
        img = model.image
        latent = img.vqvae.encoder(x0)
        enc_scale, dec_scale = img.scalers.interp(q)
        y = img.analysis(latent, enc_scale)
        y_noisy = quantize_train(y, gen)
        return img.synthesis(y_noisy, dec_scale)


def train_video(
    model: VideoModel,
    videos: list[np.ndarray],
    cfg: Config,
    stage: int = 2,
    steps: int | None = None,
) -> History:
    """Unrolled conditional training. Stage 2 freezes the latent auto-encoder
    and the intra path; stage 3 fine-tunes everything but the frozen
    stage-I encoder snapshot used for pixel supervision."""
    if stage not in (2, 3):
        raise ValueError("video training covers stages 2 and 3")
    tc = cfg.train
    steps = steps if steps is not None else (tc.steps_stage2 if stage == 2 else tc.steps_stage3)
    rng = np.random.default_rng(tc.seed + 10 * stage)
    gen = torch.Generator().manual_seed(tc.seed + 10 * stage)
    torch.manual_seed(tc.seed + 10 * stage)

    cond_params = [
        *model.context_extractor.parameters(),
        *model.cond.parameters(),
        *model.cond_scalers.parameters(),
        *model.video_hyper.parameters(),
        *model.video_context_model.parameters(),
        *model.image.code_predictor.parameters(),
    ]
    frozen_encoder = None
    disc = perceptual = None
    if stage == 2:
        _set_requires_grad(model.image, False)
        _set_requires_grad(model.image.code_predictor, True)
        trainable = cond_params
    else:
        frozen_encoder = copy.deepcopy(model.vqvae.encoder)
        _set_requires_grad(frozen_encoder, False)
        frozen_encoder.eval()
        disc = PatchDiscriminator(6)
        perceptual = PerceptualNet()
        opt_d = torch.optim.AdamW(disc.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
        _set_requires_grad(model, True)
        trainable = [
            *cond_params,
            *model.vqvae.encoder.parameters(),
            *model.vqvae.decoder.parameters(),
            *model.image.analysis.parameters(),
            *model.image.synthesis.parameters(),
            *model.image.scalers.parameters(),
            *model.image.hyper.parameters(),
            *model.image.context_model.parameters(),
        ]
    opt = torch.optim.AdamW(trainable, lr=tc.lr * (0.25 if stage == 3 else 1.0),
                            weight_decay=tc.weight_decay)
    disc_start = int(steps * tc.disc_start_frac)

    hist = History()
    model.train()
    for step in range(steps):
        _cosine_lr(opt, tc.lr * (0.25 if stage == 3 else 1.0), step, steps)
        # a clip is one intra reference plus `unroll` predicted frames
        clips = _video_batch(
            rng, videos, tc.batch_size, tc.video_crop, tc.unroll + 1
        )
        lam, q = _sample_lambda(rng, cfg, video=True)
        enc_scale, dec_scale = model.cond_scalers.interp(q)

        prev_latent = _frame0_latent(model, clips[:, 0], q, gen)
        loss = clips.new_zeros(())
        pixels = clips.shape[0] * clips.shape[-2] * clips.shape[-1]
        prev_xhat = None
        recent_xhat: list[torch.Tensor] = []
        for t in range(1, clips.shape[1]):
            x = clips[:, t]
            if stage == 2:
                with torch.no_grad():
                    latent = model.vqvae.encoder(x)
            else:
                latent = model.vqvae.encoder(x)
            context = model.extract_context(prev_latent)
            y = model.cond.cond_analysis(latent, context, enc_scale)
            y_noisy = quantize_train(y, gen)
            prior, z_bits, cb = _video_hyper_train(model, y_noisy, context, tc.beta)
            y_bits = context_rate_train(y_noisy, prior, model.video_context_model)
            l_hat = model.cond.cond_synthesis(y_noisy, context, dec_scale)

            if stage == 2:
                d_code, _ = code_pred_loss(
                    latent, l_hat, model.vqvae.codebook, model.image.code_predictor,
                    tc.alpha, use_ce=tc.code_pred_supervision,
                )
                loss = loss + (y_bits + z_bits) / pixels + lam * d_code + cb
            else:
                x_hat = model.vqvae.decoder(l_hat)
                rec = (x - x_hat).abs().mean() + perceptual(x, x_hat)
                if tc.lambda_code > 0:
                    d_code, _ = code_pred_loss(
                        frozen_encoder(x), frozen_encoder(x_hat),
                        model.vqvae.codebook, model.image.code_predictor,
                        tc.alpha, use_ce=tc.code_pred_supervision,
                    )
                else:
                    d_code = x.new_zeros(())
                distortion = rec + tc.lambda_code * d_code
                if step >= disc_start and prev_xhat is not None:
                    pair_fake = torch.cat([prev_xhat, x_hat], dim=1)
                    g_loss = hinge_g_loss(disc(pair_fake))
                    last = model.vqvae.decoder.net[-1].weight
                    w = adaptive_adv_weight(rec, g_loss, last)
                    ramp = _adv_ramp(step, disc_start, steps)
                    distortion = distortion + tc.lambda_adv * ramp * w * g_loss
                loss = loss + (y_bits + z_bits) / pixels + lam * distortion + cb
                prev_xhat = x_hat
                recent_xhat.append(x_hat.detach())
            prev_latent = l_hat

        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite video loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

        if stage == 3 and step >= disc_start and len(recent_xhat) >= 2:
            real_pair = torch.cat([clips[:, -2], clips[:, -1]], dim=1)
            fake_pair = torch.cat([recent_xhat[-2], recent_xhat[-1]], dim=1)
            d_loss = hinge_d_loss(disc(real_pair), disc(fake_pair))
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

        hist.losses.append(float(loss.detach()))

    if stage == 2:
        _set_requires_grad(model.image, True)
    if frozen_encoder is not None:
        hist.extras["frozen_encoder_state"] = {
            k: v.clone() for k, v in frozen_encoder.state_dict().items()
        }
    model.eval()
    return hist
