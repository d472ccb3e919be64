"""Acceptance suite: every criterion runs at its stated tolerance and
prints one pass/fail line.

Training-dependent criteria consume the cached toy fixtures from conftest;
the first run trains the full toy schedule (stages I-III plus video arms).
"""

import time

import numpy as np
import pytest
import torch

from glc.ablate import (
    ablate_st_vs_spatial_hyper,
    ablate_transform_vs_indices_map,
    codec_for,
    compare_rd,
)
from glc.checkpoint import model_hash
from glc.codec import ImageCodec, VideoCodec
from glc.config import ModelConfig
from glc.entropy import gaussian
from glc.entropy.rangecoder import QuantizedCdf, RangeDecoder, RangeEncoder, pmf_to_cdf
from glc.eval import curve_from_rows, evaluate_image_rd, evaluate_video_rd
from glc.hyper_st import normalize_maps
from glc.hyper_spatial import bits_per_index
from glc.metrics import bd_rate, ms_ssim
from glc.models import VideoModel
from glc.transform_image import quantize_train
from glc.vqvae import nearest_indices, squared_l2, straight_through


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name} failed: {detail}"


# ---------------------------------------------------------------------------
# Entropy fidelity
# ---------------------------------------------------------------------------


class TestEntropyFidelity:
    def test_million_symbol_rate_bound_and_fuzzed_roundtrips(self):
        start = time.time()
        rng = np.random.default_rng(2024)
        tables = gaussian.cdf_tables()

        n = 1_000_000
        sigmas = np.exp(rng.uniform(np.log(0.11), np.log(16.0), size=n))
        ids = gaussian.scale_indexes(sigmas)
        symbols = np.rint(rng.normal(0.0, sigmas)).astype(np.int64)
        est = float(gaussian.rate_bits(
            torch.from_numpy(symbols.astype(np.float64)), torch.from_numpy(sigmas)
        ))
        enc = RangeEncoder()
        enc.encode_values(symbols, ids, tables)
        data = enc.flush()
        bound = (est / 8 + 32) * 1.02
        out = RangeDecoder(data).decode_values(ids, tables)
        lossless = bool(np.array_equal(out, symbols))

        failures = 0
        for _ in range(1000):
            m = int(rng.integers(1, 300))
            sig = np.exp(rng.uniform(np.log(0.11), np.log(64.0), size=m))
            tid = gaussian.scale_indexes(sig)
            sym = np.rint(rng.normal(0.0, sig)).astype(np.int64)
            # sprinkle escape-range outliers
            if m > 10:
                sym[rng.integers(0, m, size=2)] = rng.integers(-10**6, 10**6, size=2)
            e = RangeEncoder()
            e.encode_values(sym, tid, tables)
            got = RangeDecoder(e.flush()).decode_values(tid, tables)
            failures += 0 if np.array_equal(got, sym) else 1

        elapsed = time.time() - start
        report(
            "entropy fidelity",
            len(data) <= bound and lossless and failures == 0 and elapsed < 120,
            f"{len(data)} bytes vs bound {bound:.0f}, est {est/8:.0f}B, "
            f"{failures} fuzz failures, {elapsed:.1f}s",
        )


# ---------------------------------------------------------------------------
# Determinism and drift-freedom over a 96-frame sequence
# ---------------------------------------------------------------------------


class TestDeterminismDrift:
    def test_96_frame_bit_exact_state_chain(self, video_st_run):
        from glc.data import toy_video

        start = time.time()
        model, _ = video_st_run
        codec = VideoCodec(model, model_hash(model))
        frames_np = toy_video(96, 64, 31415)
        frames = [torch.from_numpy(f) for f in frames_np]

        enc_trace: list = []
        codec.trace = enc_trace
        result = codec.encode(frames, 1, intra_period=-1)
        intra = sum(1 for s in result.segments if s.frame_type == 0)

        dec_trace: list = []
        codec.trace = dec_trace
        decoded = codec.decode(result.header, result.segments)

        same_y = all(
            torch.equal(a["y_hat"], b["y_hat"]) for a, b in zip(enc_trace, dec_trace)
        )
        same_z = all(
            np.array_equal(a["hyper"], b["hyper"]) for a, b in zip(enc_trace, dec_trace)
        )
        same_latent_hash = all(
            a["latent_crc"] == b["latent_crc"] for a, b in zip(enc_trace, dec_trace)
        )
        elapsed = time.time() - start
        report(
            "determinism & drift-freedom",
            len(enc_trace) == 96 and len(dec_trace) == 96 and same_y and same_z
            and same_latent_hash and intra == 1 and len(decoded) == 96
            and elapsed < 600,
            f"96 frames, 1 intra, y/z bit-exact={same_y and same_z}, "
            f"hash chain ok={same_latent_hash}, {elapsed:.0f}s",
        )


# ---------------------------------------------------------------------------
# VQ oracle
# ---------------------------------------------------------------------------


class TestVqOracle:
    def test_matches_exhaustive_argmin_10k(self):
        start = time.time()
        rng = np.random.default_rng(7)
        mismatches = 0
        for _ in range(20):
            n_entries = int(rng.integers(2, 512))
            dim = int(rng.integers(1, 16))
            entries = rng.normal(size=(n_entries, dim))
            vectors = rng.normal(size=(500, dim))
            mine = nearest_indices(
                torch.from_numpy(vectors), torch.from_numpy(entries)
            ).numpy()
            # independent oracle: exhaustive scan with first-minimum tie-break
            d = ((vectors[:, None, :] - entries[None, :, :]) ** 2).sum(-1)
            oracle = d.argmin(axis=1)
            mismatches += int((mine != oracle).sum())
        # forced ties resolve to the lowest index
        entries = np.array([[1.0], [0.5], [0.5], [2.0]])
        tie = nearest_indices(torch.tensor([[0.5]]), torch.from_numpy(entries)).item()
        elapsed = time.time() - start
        report(
            "VQ oracle",
            mismatches == 0 and tie == 1 and elapsed < 60,
            f"10000 cases, {mismatches} mismatches, tie->index {tie}, {elapsed:.1f}s",
        )


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------


def finite_diff(f, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    g = torch.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.numel()):
        xp = flat.clone(); xp[i] += eps
        xm = flat.clone(); xm[i] -= eps
        g.reshape(-1)[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * eps)
    return g


class TestGradientChecks:
    def test_all_paths_match_finite_differences(self):
        torch.manual_seed(11)
        ok = True
        details = []

        # straight-through identity path
        x0 = torch.randn(8, dtype=torch.float64)
        w = torch.randn(8, dtype=torch.float64)
        base = x0.clone()

        def f_ste(x):
            q = torch.round(base) + (x - base)
            return float((straight_through(x, q) * w).pow(2).sum())

        x = x0.clone().requires_grad_(True)
        q = torch.round(base) + (x - base)
        (straight_through(x, q) * w).pow(2).sum().backward()
        fd = finite_diff(f_ste, x0)
        err = float((fd - x.grad).abs().max() / x.grad.abs().max())
        ok &= err < 1e-4
        details.append(f"ste {err:.2e}")

        # additive-noise quantizer with frozen noise
        state = torch.Generator().manual_seed(3).get_state()

        def f_qt(x):
            g = torch.Generator(); g.set_state(state)
            return float(quantize_train(x, g).pow(2).sum())

        x = torch.randn(8, dtype=torch.float64, requires_grad=True)
        g = torch.Generator(); g.set_state(state)
        quantize_train(x, g).pow(2).sum().backward()
        fd = finite_diff(f_qt, x.detach())
        err = float((fd - x.grad).abs().max() / x.grad.abs().max())
        ok &= err < 1e-4
        details.append(f"quantize_train {err:.2e}")

        # squared-L2 term of the code-prediction distortion
        target = torch.randn(1, 8, 2, 2, dtype=torch.float64)

        def f_l2(x):
            return float(squared_l2(target, x))

        x = torch.randn(1, 8, 2, 2, dtype=torch.float64, requires_grad=True)
        squared_l2(target, x).backward()
        fd = finite_diff(f_l2, x.detach())
        err = float((fd - x.grad).abs().max() / x.grad.abs().max())
        ok &= err < 1e-4
        details.append(f"latent-l2 {err:.2e}")

        report("gradient checks", ok, ", ".join(details))


# ---------------------------------------------------------------------------
# Token algebra
# ---------------------------------------------------------------------------


class TestTokenAlgebra:
    def test_pooling_identities_and_loop_oracle(self):
        torch.manual_seed(5)
        cfg = ModelConfig(code_channels=16, context_channels=16, hyper_dim=8,
                          hyper_info_channels=16, num_tokens=4, maps_per_token=4,
                          latent_channels=16, base_width=8, codebook_size=32,
                          hyper_codebook_size=64)
        from glc.hyper_st import SpatioTemporalHyper

        mod = SpatioTemporalHyper(cfg).eval().double()
        h = w = 8
        grouped = torch.randn(1, 4, 4, h, w, dtype=torch.float64)

        # uniform maps == group-wise global average pooling
        uniform = torch.full((1, 4, 4, h, w), 1.0 / (h * w), dtype=torch.float64)
        tokens = mod.token_generation(grouped, uniform)
        pooled = grouped.mean(dim=(-1, -2)).reshape(1, -1)
        expected = torch.einsum("bf,kdf->bkd", pooled, mod.proj_weight) + mod.proj_bias
        err_uniform = float((tokens - expected).abs().max())

        # one-hot maps select single positions
        onehot = torch.zeros(1, 4, 4, h, w, dtype=torch.float64)
        onehot[..., 3, 5] = 1.0
        tokens = mod.token_generation(grouped, onehot)
        sel = grouped[..., 3, 5].reshape(1, -1)
        expected = torch.einsum("bf,kdf->bkd", sel, mod.proj_weight) + mod.proj_bias
        err_onehot = float((tokens - expected).abs().max())

        # loop oracle for generation
        maps = normalize_maps(torch.randn(1, 4, 4, h, w, dtype=torch.float64))
        tokens = mod.token_generation(grouped, maps)
        pooled_loop = torch.zeros(1, 4, 4, grouped.shape[2], dtype=torch.float64)
        for k in range(4):
            for g in range(4):
                for i in range(h):
                    for j in range(w):
                        pooled_loop[0, k, g] += grouped[0, g, :, i, j] * maps[0, k, g, i, j]
        expected = torch.einsum(
            "bkf,kdf->bkd", pooled_loop.reshape(1, 4, -1), mod.proj_weight
        ) + mod.proj_bias
        err_gen = float((tokens - expected).abs().max())

        # loop oracle for fusion (pre-conv aggregation)
        z = torch.randn(1, 4, 8, dtype=torch.float64)
        proj = mod.fuse_proj(z).reshape(1, 4, 4, -1)
        fused = (proj[..., None, None] * maps[:, :, :, None]).mean(1).reshape(1, -1, h, w)
        fused_loop = torch.zeros_like(fused)
        cg = proj.shape[-1]
        for g in range(4):
            for c in range(cg):
                for i in range(h):
                    for j in range(w):
                        acc = 0.0
                        for k in range(4):
                            acc += float(proj[0, k, g, c]) * float(maps[0, k, g, i, j])
                        fused_loop[0, g * cg + c, i, j] = acc / 4
        err_fuse = float((fused - fused_loop).abs().max())

        ok = max(err_uniform, err_onehot, err_gen, err_fuse) < 1e-6
        report(
            "token algebra",
            ok,
            f"uniform {err_uniform:.1e}, one-hot {err_onehot:.1e}, "
            f"gen-oracle {err_gen:.1e}, fuse-oracle {err_fuse:.1e}",
        )


# ---------------------------------------------------------------------------
# Rate monotonicity after the toy schedule
# ---------------------------------------------------------------------------


class TestRateMonotonicity:
    def test_bpp_non_increasing_toward_low_rate_anchor(self, stage3_model, eval_images):
        codec = ImageCodec(stage3_model, model_hash(stage3_model))
        rows = evaluate_image_rd(codec, eval_images, [0, 1, 2, 3])
        rates, quals = curve_from_rows(rows)
        diffs = np.diff(rates)
        ok = bool(np.all(diffs >= -0.02 * rates[:-1]))
        report(
            "rate monotonicity",
            ok,
            "bpp " + " ".join(f"{r:.4f}" for r in rates)
            + " | psnr " + " ".join(f"{q:.2f}" for q in quals),
        )


# ---------------------------------------------------------------------------
# Ablation sign matches
# ---------------------------------------------------------------------------


class TestAblationSigns:
    def test_transform_beats_indices_map(self, stage3_model, toy_cfg, eval_images):
        res = ablate_transform_vs_indices_map(stage3_model, toy_cfg, eval_images)
        report("ablation: transform < indices-map", res.improved,
               f"rate delta {res.bd_rate_pct:+.1f}%")

    def test_categorical_beats_factorized(self, stage2_run, stage2_factorized_run,
                                          toy_cfg, eval_images):
        cat, _ = stage2_run
        fac, _ = stage2_factorized_run
        rows_c = evaluate_image_rd(codec_for(cat), eval_images, [0, 1, 2, 3])
        rows_f = evaluate_image_rd(codec_for(fac), eval_images, [0, 1, 2, 3])
        rc, qc = curve_from_rows(rows_c)
        rf, qf = curve_from_rows(rows_f)
        pct = compare_rd(rf, qf, rc, qc)
        report("ablation: categorical < factorized hyper", pct < 0,
               f"BD-rate {pct:+.1f}%")

    def test_conditional_beats_intra_only(self, video_spatial_run, toy_cfg,
                                          eval_videos):
        from glc.ablate import ablate_conditional_coding

        cond, _ = video_spatial_run
        res = ablate_conditional_coding(cond, toy_cfg, eval_videos)
        report("ablation: conditional < intra-only", res.improved,
               f"BD-rate {res.bd_rate_pct:+.1f}%")

    def test_st_hyper_beats_spatial(self, video_st_run, video_spatial_run,
                                    toy_cfg, eval_videos):
        st, _ = video_st_run
        spatial, _ = video_spatial_run
        res = ablate_st_vs_spatial_hyper(st, spatial, toy_cfg, eval_videos)
        report("ablation: spatio-temporal < spatial hyper", res.improved,
               f"BD-rate {res.bd_rate_pct:+.1f}%")

    def test_code_pred_supervision_helps(self, stage2_run, stage2_nopred_run,
                                         toy_cfg, eval_images):
        with_cp, _ = stage2_run
        without, _ = stage2_nopred_run
        rows_w = evaluate_image_rd(codec_for(with_cp), eval_images, [0, 1, 2, 3],
                                   with_agreement=True)
        rows_o = evaluate_image_rd(codec_for(without), eval_images, [0, 1, 2, 3],
                                   with_agreement=True)
        rw, qw = curve_from_rows(rows_w, "agreement")
        ro, qo = curve_from_rows(rows_o, "agreement")
        pct = compare_rd(ro, qo, rw, qw)
        report("ablation: code-pred supervision helps", pct < 0,
               f"BD-rate {pct:+.1f}% (semantic-agreement axis)")

    def test_joint_training_beats_stage2_only(self, video_st_run, video_joint_run,
                                              toy_cfg, eval_videos):
        stage2_arm, _ = video_st_run
        joint, _ = video_joint_run
        r2, q2 = curve_from_rows(
            evaluate_video_rd(codec_for(stage2_arm), eval_videos, [0, 1, 2, 3])
        )
        r3, q3 = curve_from_rows(
            evaluate_video_rd(codec_for(joint), eval_videos, [0, 1, 2, 3])
        )
        pct = compare_rd(r2, q2, r3, q3)
        report("ablation: stage-III joint < stage-II only", pct < 0,
               f"BD-rate {pct:+.1f}%")


# ---------------------------------------------------------------------------
# Fixed-length hyper bits
# ---------------------------------------------------------------------------


class TestFixedLengthHyperBits:
    def test_image_hyper_segment_exact(self, stage2_model, eval_images):
        codec = ImageCodec(stage2_model, model_hash(stage2_model))
        x = torch.from_numpy(eval_images[0])
        result = codec.encode(x, 0)
        seg = result.segments[0]
        h = w = 64 // stage2_model.cfg.downsample
        hz, wz = (h + 1) // 2, (w + 1) // 2
        bits = hz * wz * bits_per_index(stage2_model.cfg.hyper_codebook_size)
        ok = seg.hyper_count == hz * wz and len(seg.hyper_data) == (bits + 7) // 8
        report("fixed-length image hyper bits", ok,
               f"{seg.hyper_count} indices, {len(seg.hyper_data)} bytes for {bits} bits")

    def test_video_token_segment_160_bits_at_desk_config(self):
        torch.manual_seed(0)
        model = VideoModel(ModelConfig()).eval()  # desk defaults: K=16, N_b=1024
        codec = VideoCodec(model, model_hash(model))
        frames = [torch.rand(3, 32, 32) for _ in range(2)]
        result = codec.encode(frames, 0)
        p_seg = result.segments[1]
        bits = 16 * 10
        ok = p_seg.hyper_count == 16 and len(p_seg.hyper_data) * 8 == bits == 160
        report("fixed-length video token bits", ok,
               f"{p_seg.hyper_count} tokens, {len(p_seg.hyper_data) * 8} bits")


# ---------------------------------------------------------------------------
# Reference-implementation cross checks
# ---------------------------------------------------------------------------


class TestReferenceCrossChecks:
    def test_bd_rate_and_ms_ssim_match_references(self):
        from test_metrics import oracle_bd_rate, oracle_ms_ssim

        rng = np.random.default_rng(17)
        max_bd_err = 0.0
        for _ in range(5):
            qa = np.sort(rng.uniform(28, 40, size=4))
            qt = np.sort(rng.uniform(28, 40, size=4))
            ra = np.sort(rng.uniform(0.05, 1.0, size=4))
            rt = np.sort(rng.uniform(0.05, 1.0, size=4))
            max_bd_err = max(
                max_bd_err,
                abs(bd_rate(ra, qa, rt, qt) - oracle_bd_rate(ra, qa, rt, qt)),
            )
        base = rng.random((3, 256, 256))
        noisy = np.clip(base + rng.normal(0, 0.03, base.shape), 0, 1)
        ms_err = abs(ms_ssim(base, noisy) - oracle_ms_ssim(base, noisy))
        ok = max_bd_err <= 0.1 and ms_err <= 1e-4
        report("BD-rate & MS-SSIM cross-check", ok,
               f"bd err {max_bd_err:.3f}%, ms-ssim err {ms_err:.2e}")


# ---------------------------------------------------------------------------
# Secondary: native coder kernel
# ---------------------------------------------------------------------------


class TestSecondaryKernel:
    @pytest.fixture(autouse=True)
    def _require_kernel(self):
        from glc.entropy import kernel

        if not kernel.kernel_available():
            pytest.skip("native kernel not built")

    def test_byte_identical_on_1000_fuzzed_streams(self):
        from glc.entropy import kernel

        rng = np.random.default_rng(99)
        mismatches = 0
        for _ in range(1000):
            n_tables = int(rng.integers(1, 5))
            tables = []
            for _ in range(n_tables):
                size = int(rng.integers(2, 120))
                pmf = rng.random(size) + 1e-9
                tables.append(QuantizedCdf(cdf=pmf_to_cdf(pmf),
                                           offset=int(rng.integers(-30, 30))))
            n = int(rng.integers(0, 200))
            ids = rng.integers(0, n_tables, size=n)
            values = np.array([
                int(rng.integers(tables[t].offset - 3,
                                 tables[t].offset + tables[t].n_symbols + 3))
                for t in ids
            ], dtype=np.int64)
            ref = RangeEncoder()
            ref.encode_values(values, ids, tables)
            ken = kernel.KernelEncoder()
            ken.encode_values(values, ids, tables)
            if ref.flush() != ken.flush():
                mismatches += 1
        report("kernel byte-identity (1000 streams)", mismatches == 0,
               f"{mismatches} mismatching streams")

    def test_throughput_at_least_5x(self):
        from glc.entropy import kernel

        rng = np.random.default_rng(101)
        tables = gaussian.cdf_tables()
        n = 10_000_000
        sigmas = np.exp(rng.uniform(np.log(0.2), np.log(8.0), size=n))
        ids = gaussian.scale_indexes(sigmas)
        symbols = np.rint(rng.normal(0, sigmas)).astype(np.int64)

        t0 = time.time()
        ken = kernel.KernelEncoder()
        ken.encode_values(symbols, ids, tables)
        k_bytes = ken.flush()
        k_time = time.time() - t0

        m = 1_000_000  # reference measured on a slice, throughput extrapolates
        t0 = time.time()
        ref = RangeEncoder()
        ref.encode_values(symbols[:m], ids[:m], tables)
        ref.flush()
        ref_time_scaled = (time.time() - t0) * (n / m)

        speedup = ref_time_scaled / k_time
        report("kernel throughput >= 5x", speedup >= 5.0,
               f"{speedup:.1f}x ({n / k_time / 1e6:.1f} Msym/s native, "
               f"{len(k_bytes)} bytes)")

    def test_primary_paths_work_without_kernel(self, monkeypatch):
        """Fallback: the reference coder serves the codec when disabled."""
        from glc.entropy import kernel as kmod

        monkeypatch.setattr(kmod, "_lib", None)
        monkeypatch.setattr(kmod, "_lib_checked", True)
        from glc.entropy import make_decoder, make_encoder

        enc = make_encoder()
        assert isinstance(enc, RangeEncoder)
        t = QuantizedCdf(cdf=pmf_to_cdf(np.full(8, 1 / 8)), offset=0)
        enc.encode_values(np.array([1, 2, 3]), np.zeros(3, dtype=np.int64), [t])
        data = enc.flush()
        dec = make_decoder(data)
        assert isinstance(dec, RangeDecoder)
        out = dec.decode_values(np.zeros(3, dtype=np.int64), [t])
        report("kernel-absent fallback", bool(np.array_equal(out, [1, 2, 3])))
