"""Spatio-temporal hyper module: attention maps, tokens, fusion."""

import numpy as np
import pytest
import torch

from glc.config import ModelConfig
from glc.hyper_st import SpatioTemporalHyper, normalize_maps


def make_module(**over):
    torch.manual_seed(0)
    kwargs = dict(code_channels=16, context_channels=16, hyper_dim=8,
                  hyper_info_channels=16, num_tokens=4, maps_per_token=4,
                  latent_channels=16, base_width=8, codebook_size=32,
                  hyper_codebook_size=64)
    kwargs.update(over)
    cfg = ModelConfig(**kwargs)
    return SpatioTemporalHyper(cfg).eval(), cfg


def loop_token_generation(grouped, maps, weight, bias):
    """Oracle: explicit double loop over spatial positions."""
    b, g, cg, h, w = grouped.shape
    k = maps.shape[1]
    pooled = np.zeros((b, k, g, cg))
    for bi in range(b):
        for ki in range(k):
            for gi in range(g):
                for i in range(h):
                    for j in range(w):
                        pooled[bi, ki, gi] += (
                            grouped[bi, gi, :, i, j] * maps[bi, ki, gi, i, j]
                        )
    flat = pooled.reshape(b, k, g * cg)
    out = np.einsum("bkf,kdf->bkd", flat, weight) + bias
    return out


def loop_token_fusion(proj, maps):
    """Oracle for the pre-conv fused map: per-position accumulation."""
    b, k, g, cg = proj.shape
    _, _, _, h, w = maps.shape
    fused = np.zeros((b, g, cg, h, w))
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                acc = np.zeros((g, cg))
                for ki in range(k):
                    for gi in range(g):
                        acc[gi] += proj[bi, ki, gi] * maps[bi, ki, gi, i, j]
                fused[bi, :, :, i, j] = acc / k
    return fused.reshape(b, g * cg, h, w)


class TestAttentionMaps:
    def test_normalized_and_counted(self):
        mod, cfg = make_module(num_tokens=16)
        context = torch.randn(1, 16, 5, 5)
        maps = mod.attention(context)
        assert maps.shape == (1, 16, 4, 5, 5)
        assert 16 * 4 == 64  # K * N_h at desk config
        sums = maps.sum(dim=(-1, -2))
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)
        assert (maps >= 0).all()

    def test_deterministic_given_context(self):
        mod, _ = make_module()
        context = torch.randn(1, 16, 4, 4)
        assert torch.equal(mod.attention(context), mod.attention(context.clone()))

    def test_refine_preserves_normalization(self):
        mod, _ = make_module()
        context = torch.randn(1, 16, 4, 4)
        maps = mod.attention(context)
        info = torch.randn(1, 16, 4, 4)
        refined = mod.refine_attention(maps, info)
        sums = refined.sum(dim=(-1, -2))
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)

    def test_refine_with_zero_info_still_normalized(self):
        mod, _ = make_module()
        maps = mod.attention(torch.randn(1, 16, 4, 4))
        refined = mod.refine_attention(maps, torch.zeros(1, 16, 4, 4))
        sums = refined.sum(dim=(-1, -2))
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)
        again = mod.refine_attention(maps, torch.zeros(1, 16, 4, 4))
        assert torch.equal(refined, again)


class TestTokenGeneration:
    def test_uniform_maps_reduce_to_average_pooling(self):
        mod, cfg = make_module()
        h = w = 6
        grouped = torch.randn(1, 4, 4, h, w)
        uniform = torch.full((1, cfg.num_tokens, 4, h, w), 1.0 / (h * w))
        tokens = mod.token_generation(grouped, uniform)
        pooled_mean = grouped.mean(dim=(-1, -2)).reshape(1, -1)
        expected = (
            torch.einsum("bf,kdf->bkd", pooled_mean, mod.proj_weight) + mod.proj_bias
        )
        assert torch.allclose(tokens, expected, atol=1e-6)

    def test_one_hot_map_selects_single_position(self):
        mod, cfg = make_module()
        grouped = torch.randn(1, 4, 4, 3, 3)
        maps = torch.zeros(1, cfg.num_tokens, 4, 3, 3)
        maps[..., 1, 2] = 1.0
        tokens = mod.token_generation(grouped, maps)
        sel = grouped[..., 1, 2].reshape(1, -1)
        expected = torch.einsum("bf,kdf->bkd", sel, mod.proj_weight) + mod.proj_bias
        assert torch.allclose(tokens, expected, atol=1e-6)

    def test_matches_loop_oracle_8x8(self):
        mod, cfg = make_module()
        torch.manual_seed(3)
        grouped = torch.randn(2, 4, 4, 8, 8, dtype=torch.float64)
        logits = torch.randn(2, cfg.num_tokens, 4, 8, 8, dtype=torch.float64)
        maps = normalize_maps(logits)
        w64 = mod.proj_weight.double()
        b64 = mod.proj_bias.double()
        mine = torch.einsum(
            "bgchw,bkghw->bkgc", grouped, maps
        ).reshape(2, cfg.num_tokens, -1)
        mine = torch.einsum("bkf,kdf->bkd", mine, w64) + b64
        oracle = loop_token_generation(
            grouped.numpy(), maps.numpy(), w64.detach().numpy(), b64.detach().numpy()
        )
        np.testing.assert_allclose(mine.detach().numpy(), oracle, atol=1e-6)

    def test_group_mismatch_raises(self):
        mod, cfg = make_module()
        with pytest.raises(ValueError):
            mod.token_generation(torch.randn(1, 2, 8, 4, 4),
                                 torch.randn(1, cfg.num_tokens, 4, 4, 4))


class TestTokenVq:
    def test_bit_cost_constant(self):
        mod, cfg = make_module(num_tokens=16, hyper_codebook_size=1024)
        assert mod.segment_bits() == 16 * 10 == 160

    def test_lookup_contract(self):
        mod, cfg = make_module()
        tokens = mod.codebook.entries[:cfg.num_tokens].detach().clone()
        idx, rows = mod.token_vq(tokens)
        np.testing.assert_array_equal(idx, np.arange(cfg.num_tokens))
        assert torch.equal(rows, tokens)


class TestTokenFusion:
    def test_single_token_uniform_map_constant(self):
        mod, _ = make_module(num_tokens=1)
        tokens = torch.randn(1, 1, 8)
        maps = torch.full((1, 1, 4, 5, 5), 1.0 / 25)
        proj = mod.fuse_proj(tokens).reshape(1, 1, 4, -1)
        fused = (proj[..., None, None] * maps[:, :, :, None]).mean(1).reshape(1, -1, 5, 5)
        flat = fused.reshape(fused.shape[1], -1)
        assert torch.allclose(flat, flat[:, :1].expand_as(flat), atol=1e-7)

    def test_permutation_invariance(self):
        mod, cfg = make_module()
        tokens = torch.randn(1, cfg.num_tokens, 8)
        maps = normalize_maps(torch.randn(1, cfg.num_tokens, 4, 4, 4))
        out = mod.token_fusion(tokens, maps)
        perm = torch.randperm(cfg.num_tokens)
        out_p = mod.token_fusion(tokens[:, perm], maps[:, perm])
        assert torch.allclose(out, out_p, atol=1e-6)

    def test_matches_loop_oracle(self):
        mod, cfg = make_module()
        torch.manual_seed(1)
        tokens = torch.randn(1, cfg.num_tokens, 8)
        maps = normalize_maps(torch.randn(1, cfg.num_tokens, 4, 8, 8))
        proj = mod.fuse_proj(tokens).reshape(1, cfg.num_tokens, 4, -1)
        mine = (proj[..., None, None] * maps[:, :, :, None]).mean(1)
        mine = mine.reshape(1, -1, 8, 8)
        oracle = loop_token_fusion(proj.detach().numpy(), maps.numpy())
        np.testing.assert_allclose(mine.detach().numpy(), oracle, atol=1e-6)

    def test_token_count_mismatch(self):
        mod, cfg = make_module()
        with pytest.raises(ValueError):
            mod.token_fusion(torch.randn(1, 2, 8),
                             normalize_maps(torch.randn(1, cfg.num_tokens, 4, 4, 4)))


class TestPriorDecodability:
    def test_decoder_reproduces_encoder_prior(self):
        mod, cfg = make_module()
        y = torch.randn(1, 16, 6, 6)
        context = torch.randn(1, 16, 6, 6)
        indices, prior, tokens_hat = mod.encode(y, context)
        rebuilt = mod.decode(indices, context)
        assert torch.equal(prior, rebuilt)

    def test_prior_shape(self):
        mod, cfg = make_module()
        y = torch.randn(1, 16, 5, 7)
        context = torch.randn(1, 16, 5, 7)
        _, prior, _ = mod.encode(y, context)
        assert prior.shape == (1, 32, 5, 7)

    def test_determinism(self):
        mod, _ = make_module()
        y = torch.randn(1, 16, 4, 4)
        c = torch.randn(1, 16, 4, 4)
        a = mod.encode(y, c)
        b = mod.encode(y.clone(), c.clone())
        np.testing.assert_array_equal(a[0], b[0])
        assert torch.equal(a[1], b[1])
