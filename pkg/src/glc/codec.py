"""End-to-end image and video coding against trained models.

The encoder runs the exact decoder-side reconstruction path (same modules,
same integer symbols), so encoder and decoder latent states can never
drift; every frame record carries a hash of the decoded latent and decode
verifies the chain.
"""

from __future__ import annotations

import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import torch

from .bitstream import (
    FRAME_INTRA,
    FRAME_PREDICTED,
    MODE_IMAGE,
    MODE_VIDEO,
    ContainerHeader,
    FrameSegment,
    ModelHashError,
    StateDesyncError,
    read_container,
    write_container,
)
from .entropy import gaussian, make_decoder, make_encoder
from .entropy.context import step_masks_tensor
from .hyper_spatial import (
    FactorizedHyper,
    SpatialCategoricalHyper,
    bits_per_index,
    pack_indices,
    unpack_indices,
)
from .hyper_st import SpatioTemporalHyper
from .models import ImageModel, VideoModel
from .transform_image import round_half_away
from .video import GopState
from .vqvae import nearest_vq, pad_to_multiple, validate_frame


@contextmanager
def single_threaded():
    """Pin torch to one thread while coding, for reproducible float paths."""
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(n)


def latent_crc(latent: torch.Tensor) -> int:
    arr = latent.detach().cpu().contiguous().to(torch.float32).numpy()
    return zlib.crc32(arr.tobytes()) & 0xFFFFFFFF


@dataclass
class FrameStats:
    frame_type: int
    hyper_bits: int
    main_bits: int
    rate_estimate_bits: float

    @property
    def total_bits(self) -> int:
        return self.hyper_bits + self.main_bits


@dataclass
class CodingResult:
    header: ContainerHeader
    segments: list[FrameSegment]
    stats: list[FrameStats] = field(default_factory=list)


def _code_tensor_encode(y, prior, ctx_model, encoder, tables):
    """Progressively quantize and range-code one code tensor.

    Returns the reconstructed (quantized) tensor and the model rate estimate
    in bits for the integer symbols actually coded.
    """
    h, w = y.shape[-2:]
    masks = step_masks_tensor(h, w, y.device)
    y_hat = torch.zeros_like(y)
    visible = torch.zeros_like(masks[0])
    est_bits = 0.0
    for mask in masks:
        mu, sigma = ctx_model(prior, y_hat, visible)
        sel = mask[0, 0].bool()
        residual = round_half_away(y - mu)
        sym = residual[..., sel].reshape(-1)
        sig = sigma[..., sel].reshape(-1)
        ids = gaussian.scale_indexes(sig)
        encoder.encode_values(sym.detach().cpu().numpy().astype(np.int64), ids, tables)
        est_bits += float(gaussian.rate_bits(sym, sig))
        y_hat = y_hat + (residual + mu) * mask
        visible = visible + mask
    return y_hat, est_bits


def _code_tensor_decode(shape, prior, ctx_model, decoder, tables, device=None):
    _, c, h, w = shape
    masks = step_masks_tensor(h, w, device)
    y_hat = torch.zeros(shape, device=device)
    visible = torch.zeros_like(masks[0])
    for mask in masks:
        mu, sigma = ctx_model(prior, y_hat, visible)
        sel = mask[0, 0].bool()
        sig = sigma[..., sel].reshape(-1)
        ids = gaussian.scale_indexes(sig)
        values = decoder.decode_values(ids, tables)
        residual = torch.from_numpy(
            np.asarray(values, dtype=np.float32)
        ).reshape(1, c, -1)
        step = torch.zeros_like(y_hat)
        step[..., sel] = residual + mu[..., sel]
        y_hat = y_hat + step * mask
        visible = visible + mask
    return y_hat


class ImageCodec:
    """Codes single frames with a trained :class:`ImageModel`."""

    def __init__(self, model: ImageModel, content_hash: int):
        self.model = model
        self.hash = content_hash
        self.tables = gaussian.cdf_tables()
        # optional per-frame instrumentation: when set to a list, every coded
        # frame appends {y_hat, hyper, latent_crc} for state-chain audits
        self.trace: list | None = None
        model.eval()

    def _record(self, y_hat, hyper, crc) -> None:
        if self.trace is not None:
            self.trace.append({
                "y_hat": None if y_hat is None else y_hat.detach().clone(),
                "hyper": np.asarray(hyper).copy(),
                "latent_crc": crc,
            })

    @property
    def cfg(self):
        return self.model.cfg

    # -- hyper segment byte accounting ---------------------------------

    def hyper_bytes_for_count(self, frame_type: int, count: int) -> int:
        if self.cfg.latent_codec == "indices_map":
            return 0
        if isinstance(self.model.hyper, FactorizedHyper):
            return count  # count carries the byte length for coded hyper data
        bits = bits_per_index(self.cfg.hyper_codebook_size)
        return (count * bits + 7) // 8

    # -- frame paths ----------------------------------------------------

    @torch.no_grad()
    def encode_frame(self, padded: torch.Tensor, q_index: int):
        """Padded frame [3, H', W'] -> (segment, decoded latent, stats)."""
        m = self.model
        latent = m.vqvae.encoder(padded.unsqueeze(0))

        if self.cfg.latent_codec == "indices_map":
            idx, quant = nearest_vq(latent.squeeze(0), m.vqvae.codebook)
            payload = pack_indices(idx.reshape(-1).cpu().numpy(), self.cfg.codebook_size)
            l_hat = quant.unsqueeze(0)
            seg = FrameSegment(FRAME_INTRA, 0, b"", payload, latent_crc(l_hat))
            self._record(None, idx.reshape(-1).cpu().numpy(), seg.latent_hash)
            bits = idx.numel() * m.vqvae.codebook.bits_per_index
            return seg, l_hat, FrameStats(FRAME_INTRA, 0, len(payload) * 8, float(bits))

        rs = m.get_scalers(q_index)
        y = m.analysis(latent, rs.enc_scale)

        if isinstance(m.hyper, FactorizedHyper):
            symbols, prior, z_hw = m.hyper.encode(y)
            z_enc = make_encoder()
            z_tables = m.hyper.density.quantized_tables()
            flat = symbols.reshape(self.cfg.hyper_dim, -1)
            ids = np.repeat(np.arange(self.cfg.hyper_dim, dtype=np.int64), flat.shape[1])
            z_enc.encode_values(flat.reshape(-1), ids, z_tables)
            hyper_data = z_enc.flush()
            hyper_count = len(hyper_data)
        else:
            indices, prior, z_hw = m.hyper.encode(y)
            hyper_data = pack_indices(indices, self.cfg.hyper_codebook_size)
            hyper_count = len(indices)

        encoder = make_encoder()
        y_hat, est_bits = _code_tensor_encode(
            y, prior, m.context_model, encoder, self.tables
        )
        main = encoder.flush()
        l_hat = m.synthesis(y_hat, rs.dec_scale)
        seg = FrameSegment(FRAME_INTRA, hyper_count, hyper_data, main, latent_crc(l_hat))
        self._record(y_hat, indices if not isinstance(m.hyper, FactorizedHyper)
                     else symbols, seg.latent_hash)
        stats = FrameStats(FRAME_INTRA, len(hyper_data) * 8, len(main) * 8, est_bits)
        return seg, l_hat, stats

    @torch.no_grad()
    def decode_frame(self, seg: FrameSegment, padded_hw: tuple[int, int], q_index: int):
        """Segment -> decoded latent (call vqvae.decode_latent afterwards)."""
        m = self.model
        h = padded_hw[0] // self.cfg.downsample
        w = padded_hw[1] // self.cfg.downsample

        if self.cfg.latent_codec == "indices_map":
            idx = unpack_indices(seg.main_data, h * w, self.cfg.codebook_size)
            rows = m.vqvae.codebook.lookup(torch.from_numpy(idx))
            l_hat = rows.reshape(h, w, -1).permute(2, 0, 1).unsqueeze(0)
            self._check_latent(seg, l_hat)
            self._record(None, idx, latent_crc(l_hat))
            return l_hat

        rs = m.get_scalers(q_index)
        z_hw = ((h + 1) // 2, (w + 1) // 2)
        if isinstance(m.hyper, FactorizedHyper):
            z_tables = m.hyper.density.quantized_tables()
            n = self.cfg.hyper_dim * z_hw[0] * z_hw[1]
            ids = np.repeat(
                np.arange(self.cfg.hyper_dim, dtype=np.int64), z_hw[0] * z_hw[1]
            )
            z_dec = make_decoder(seg.hyper_data)
            symbols = np.asarray(z_dec.decode_values(ids, z_tables)).reshape(
                self.cfg.hyper_dim, z_hw[0], z_hw[1]
            )
            prior = m.hyper.decode(symbols, z_hw, (h, w))
        else:
            indices = unpack_indices(
                seg.hyper_data, seg.hyper_count, self.cfg.hyper_codebook_size
            )
            prior = m.hyper.decode(indices, z_hw, (h, w))

        decoder = make_decoder(seg.main_data)
        shape = (1, self.cfg.code_channels, h, w)
        y_hat = _code_tensor_decode(shape, prior, m.context_model, decoder, self.tables)
        l_hat = m.synthesis(y_hat, rs.dec_scale)
        self._check_latent(seg, l_hat)
        self._record(y_hat, indices if not isinstance(m.hyper, FactorizedHyper)
                     else symbols, latent_crc(l_hat))
        return l_hat

    def _check_latent(self, seg: FrameSegment, l_hat: torch.Tensor) -> None:
        actual = latent_crc(l_hat)
        if actual != seg.latent_hash:
            raise StateDesyncError(
                f"decoded latent hash {actual:#010x} != recorded {seg.latent_hash:#010x}"
            )

    # -- whole-container paths -------------------------------------------

    def encode(self, pixels: torch.Tensor, q_index: int) -> CodingResult:
        validate_frame(pixels)
        if not 0 <= q_index < self.cfg.num_rates:
            raise ValueError(f"q_index {q_index} out of range [0, {self.cfg.num_rates})")
        with single_threaded():
            padded, pad_h, pad_w = pad_to_multiple(pixels, self.cfg.downsample)
            seg, _, stats = self.encode_frame(padded, q_index)
        header = ContainerHeader(
            MODE_IMAGE, pixels.shape[-1], pixels.shape[-2], pad_h, pad_w,
            q_index, self.hash,
        )
        return CodingResult(header, [seg], [stats])

    def decode(self, header: ContainerHeader, segments: list[FrameSegment]) -> torch.Tensor:
        self._check_hash(header)
        padded_hw = (header.height + header.pad_h, header.width + header.pad_w)
        with single_threaded():
            l_hat = self.decode_frame(segments[0], padded_hw, header.q_index)
            pixels = self.model.vqvae.decode_latent(
                l_hat.squeeze(0), header.pad_h, header.pad_w
            )
        return pixels

    def _check_hash(self, header: ContainerHeader) -> None:
        if header.model_hash != self.hash:
            raise ModelHashError(
                f"stream was produced by model {header.model_hash:#018x}, "
                f"loaded model is {self.hash:#018x}"
            )

    # -- file helpers ------------------------------------------------------

    def encode_file(self, pixels: torch.Tensor, q_index: int, path) -> CodingResult:
        result = self.encode(pixels, q_index)
        write_container(path, result.header, result.segments)
        return result

    def decode_file(self, path) -> torch.Tensor:
        header, segments = read_container(path, self.hyper_bytes_for_count)
        if header.mode != MODE_IMAGE:
            raise ValueError("not an image stream; use the video codec")
        return self.decode(header, segments)


class VideoCodec:
    """Codes frame sequences with a trained :class:`VideoModel`.

    Intra frames run through the embedded image codec; predicted frames use
    the conditional path with temporal context from the previous decoded
    latent. Encoder and decoder both track the decoded-latent state.
    """

    def __init__(self, model: VideoModel, content_hash: int):
        self.model = model
        self.hash = content_hash
        self.image_codec = ImageCodec(model.image, content_hash)
        self.tables = gaussian.cdf_tables()
        self.trace: list | None = None
        model.eval()

    def _record(self, y_hat, hyper, crc) -> None:
        if self.trace is not None:
            self.trace.append({
                "y_hat": None if y_hat is None else y_hat.detach().clone(),
                "hyper": np.asarray(hyper).copy(),
                "latent_crc": crc,
            })

    @property
    def cfg(self):
        return self.model.cfg

    def hyper_bytes_for_count(self, frame_type: int, count: int) -> int:
        if frame_type == FRAME_INTRA:
            return self.image_codec.hyper_bytes_for_count(frame_type, count)
        bits = bits_per_index(self.cfg.hyper_codebook_size)
        return (count * bits + 7) // 8

    @torch.no_grad()
    def _encode_p(self, padded: torch.Tensor, prev_latent: torch.Tensor, q_index: int):
        m = self.model
        latent = m.vqvae.encoder(padded.unsqueeze(0))
        context = m.extract_context(prev_latent)
        rs = m.cond_scalers.get_scalers(q_index)
        y = m.cond.cond_analysis(latent, context, rs.enc_scale)

        if isinstance(m.video_hyper, SpatioTemporalHyper):
            indices, prior, _ = m.video_hyper.encode(y, context)
        else:
            indices, prior, _ = m.video_hyper.encode(y)
        hyper_data = pack_indices(indices, self.cfg.hyper_codebook_size)

        encoder = make_encoder()
        y_hat, est_bits = _code_tensor_encode(
            y, prior, m.video_context_model, encoder, self.tables
        )
        main = encoder.flush()
        l_hat = m.cond.cond_synthesis(y_hat, context, rs.dec_scale)
        seg = FrameSegment(
            FRAME_PREDICTED, len(indices), hyper_data, main, latent_crc(l_hat)
        )
        self._record(y_hat, indices, seg.latent_hash)
        stats = FrameStats(FRAME_PREDICTED, len(hyper_data) * 8, len(main) * 8, est_bits)
        return seg, l_hat, stats

    @torch.no_grad()
    def _decode_p(self, seg: FrameSegment, prev_latent: torch.Tensor,
                  padded_hw: tuple[int, int], q_index: int):
        m = self.model
        h = padded_hw[0] // self.cfg.downsample
        w = padded_hw[1] // self.cfg.downsample
        context = m.extract_context(prev_latent)
        rs = m.cond_scalers.get_scalers(q_index)

        indices = unpack_indices(
            seg.hyper_data, seg.hyper_count, self.cfg.hyper_codebook_size
        )
        if isinstance(m.video_hyper, SpatioTemporalHyper):
            prior = m.video_hyper.decode(indices, context)
        else:
            prior = m.video_hyper.decode(indices, ((h + 1) // 2, (w + 1) // 2), (h, w))

        decoder = make_decoder(seg.main_data)
        shape = (1, self.cfg.code_channels, h, w)
        y_hat = _code_tensor_decode(
            shape, prior, m.video_context_model, decoder, self.tables
        )
        l_hat = m.cond.cond_synthesis(y_hat, context, rs.dec_scale)
        self.image_codec._check_latent(seg, l_hat)
        self._record(y_hat, indices, latent_crc(l_hat))
        return l_hat

    def code_frame(self, padded: torch.Tensor, state: GopState, q_index: int,
                   intra_period: int = -1):
        """One frame through the encoder; returns (segment, stats, new state)."""
        if state.is_intra(intra_period):
            seg, l_hat, stats = self.image_codec.encode_frame(padded, q_index)
        else:
            seg, l_hat, stats = self._encode_p(padded, state.prev_latent, q_index)
        new_state = GopState(prev_latent=l_hat, frame_index=state.frame_index + 1)
        return seg, stats, new_state

    def encode(self, frames: list[torch.Tensor], q_index: int,
               intra_period: int = -1) -> CodingResult:
        if not frames:
            raise ValueError("empty frame sequence")
        for f in frames:
            validate_frame(f)
            if f.shape != frames[0].shape:
                raise ValueError("all frames must share the same dimensions")
        if not 0 <= q_index < self.cfg.num_rates:
            raise ValueError(f"q_index {q_index} out of range [0, {self.cfg.num_rates})")
        segments: list[FrameSegment] = []
        stats: list[FrameStats] = []
        self.image_codec.trace = self.trace
        with single_threaded():
            state = GopState()
            pad_h = pad_w = 0
            for f in frames:
                padded, pad_h, pad_w = pad_to_multiple(f, self.cfg.downsample)
                seg, st, state = self.code_frame(padded, state, q_index, intra_period)
                segments.append(seg)
                stats.append(st)
        header = ContainerHeader(
            MODE_VIDEO, frames[0].shape[-1], frames[0].shape[-2], pad_h, pad_w,
            q_index, self.hash, len(frames),
        )
        return CodingResult(header, segments, stats)

    def decode(self, header: ContainerHeader, segments: list[FrameSegment]) -> list[torch.Tensor]:
        self.image_codec._check_hash(header)
        padded_hw = (header.height + header.pad_h, header.width + header.pad_w)
        frames = []
        self.image_codec.trace = self.trace
        with single_threaded():
            prev = None
            for seg in segments:
                if seg.frame_type == FRAME_INTRA:
                    l_hat = self.image_codec.decode_frame(seg, padded_hw, header.q_index)
                else:
                    if prev is None:
                        raise StateDesyncError("predicted frame without a reference")
                    l_hat = self._decode_p(seg, prev, padded_hw, header.q_index)
                prev = l_hat
                frames.append(
                    self.model.vqvae.decode_latent(
                        l_hat.squeeze(0), header.pad_h, header.pad_w
                    )
                )
        return frames

    def encode_file(self, frames, q_index: int, path, intra_period: int = -1) -> CodingResult:
        result = self.encode(frames, q_index, intra_period)
        write_container(path, result.header, result.segments)
        return result

    def decode_file(self, path) -> list[torch.Tensor]:
        header, segments = read_container(path, self.hyper_bytes_for_count)
        if header.mode != MODE_VIDEO:
            raise ValueError("not a video stream; use the image codec")
        return self.decode(header, segments)


def make_codec(model, content_hash: int):
    if isinstance(model, VideoModel):
        return VideoCodec(model, content_hash)
    return ImageCodec(model, content_hash)
